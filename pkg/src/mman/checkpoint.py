"""Single-file parameter checkpoints with a bit-exact float64 payload.

Layout: 8-byte magic, little-endian u32 version, u64 header length, a
UTF-8 JSON header listing each tensor's path, shape and byte offset, then
the concatenated little-endian float64 data.
"""
import json
import struct

import numpy as np

from .autodiff import Tensor
from .errors import DataError

MAGIC = b"MMANCKPT"
VERSION = 1


def save_checkpoint(path, params, meta=None):
    entries, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(np.asarray(params[name].data, dtype="<f8"))
        entries.append({"path": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Returns ``(params, meta)``; params are fresh trainable tensors."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    if raw[:8] != MAGIC or len(raw) < 20:
        raise DataError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    payload = memoryview(raw)[20 + hlen:]
    params = {}
    for ent in header["tensors"]:
        count = int(np.prod(ent["shape"], dtype=np.int64))
        start = ent["offset"]
        if start + 8 * count > len(payload):
            raise DataError(f"{path}: truncated payload for {ent['path']}")
        arr = np.frombuffer(payload[start:start + 8 * count], dtype="<f8").astype(np.float64)
        params[ent["path"]] = Tensor(arr.reshape(ent["shape"]), requires_grad=True, name=ent["path"])
    return params, header["meta"]
