"""Run configuration: one flat key/value TOML file plus command-line overrides.

Resolution order: preset defaults, then the config file, then ``--set``
overrides, then dedicated flags such as ``--seed``.  The resolved
configuration is written into every output directory.
"""
import json
import sys
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError, ContractError
from .model import ModelConfig
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

PRESETS = {
    "desk": dict(d=32, heads=4, n=8, s=12, vocab_size=64),
    "large": dict(d=512, heads=8, n=96, s=64, vocab_size=5000),
}


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    # model
    d: int = 32
    s: int = 12
    n: int = 8
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 1
    ff_dim: int = 0
    dropout: float = 0.2
    vocab_size: int = 64
    cnn_channels: int = 8
    head_channels: int = 16
    capsule_dim: int = 8
    recon_hidden: int = 64
    pe_base: float = 10000.0
    age_cap_hours: float = 336.0
    ablation: str = "full"
    # training
    lr0: float = 0.001
    weight_decay: float = 0.001
    batch: int = 64
    epochs: int = 30
    # preprocessing
    entropy_threshold: float = 0.5
    top_k: int = 500
    min_tokens: int = 5
    lookback_days: int = 14
    threshold: float = 0.0075
    stopwords: str = ""  # empty: bundled list
    name_vectors: str = ""  # empty: hashed fallback vectors
    # synthetic data
    samples: int = 2000
    signal: float = 1.0
    channels: str = "text,price"
    # paths
    data: str = ""
    checkpoint: str = ""
    # gradient check
    gradcheck_eps: float = 1e-5
    gradcheck_tol: float = 1e-4

    def model_config(self):
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def train_config(self):
        return TrainConfig(lr0=self.lr0, weight_decay=self.weight_decay, batch=self.batch,
                           epochs=self.epochs, seed=self.seed)

    def channel_list(self):
        return tuple(c.strip() for c in self.channels.split(",") if c.strip())

    def to_toml(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_toml_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return json.dumps(v, ensure_ascii=False)


def _coerce(key, value):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    want = _TYPES[key]
    if isinstance(value, (dict, list)):
        raise ConfigError(f"config key {key!r} must be a scalar (the file is flat)")
    if want in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return value
    if want in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
    return value


def read_config_file(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {k: _coerce(k, v) for k, v in raw.items()}


def parse_override(text):
    """``key=value`` with a TOML value; bare words are taken as strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, _coerce(key, value)


def resolve(file_values=None, overrides=(), **flags):
    """Combine preset, file values, ``key=value`` overrides and explicit flags."""
    values = {k: _coerce(k, v) for k, v in (file_values or {}).items()}
    for text in overrides:
        k, v = parse_override(text)
        values[k] = v
    for k, v in flags.items():
        if v is not None:
            values[k] = _coerce(k, v)
    preset = values.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {preset!r}")
    cfg = replace(RunConfig(), **PRESETS[preset])
    cfg = replace(cfg, **values)
    cfg.model_config()  # validates model fields
    try:
        cfg.train_config().validate()
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    if not cfg.channel_list() or any(c not in ("text", "price") for c in cfg.channel_list()):
        raise ConfigError(f"channels must name text and/or price, got {cfg.channels!r}")
    return cfg


def write_config(path, cfg):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_toml())
