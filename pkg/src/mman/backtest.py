"""Virtual trading on predicted movements, with per-industry profit reports.

Money is handled as :class:`decimal.Decimal` and rounded to cents, so
totals are exact sums of per-trade profits.  Day 1 of a trade is the
first trading day after the prediction date; positions open at its open.
"""
import io
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

from .data import HORIZON
from .errors import ContractError

log = logging.getLogger(__name__)

NOTIONAL = Decimal("10000")
TAKE_PROFIT = Decimal("0.02")
COVER = Decimal("0.01")
CENT = Decimal("0.01")
OTHER = "Other"


def money(x):
    return Decimal(x).quantize(CENT, rounding=ROUND_HALF_EVEN)


def _dec(x):
    return Decimal(repr(float(x)))


@dataclass(frozen=True)
class TradePlan:
    stock: str
    direction: str  # "long" or "short"
    prediction_date: object  # datetime.date
    horizon: int = HORIZON
    notional: Decimal = NOTIONAL

    def __post_init__(self):
        if self.direction not in ("long", "short"):
            raise ContractError(f"direction must be long or short, got {self.direction!r}")
        if self.horizon < 1:
            raise ContractError("horizon must be at least 1 day")


@dataclass(frozen=True)
class TradeResult:
    stock: str
    direction: str
    prediction_date: object
    entry_date: object
    exit_date: object
    entry_price: Decimal
    exit_price: Decimal
    exit_reason: str  # TakeProfit, Cover or HorizonClose
    profit: Decimal


def _window(plan, bars):
    after = [b for b in bars if b.date > plan.prediction_date]
    if len(after) < plan.horizon:
        return None
    return after[:plan.horizon]


def _result(plan, days, exit_day, exit_price, reason):
    entry = _dec(days[0].open)
    if plan.direction == "long":
        profit = plan.notional * (exit_price - entry) / entry
    else:
        profit = plan.notional * (entry - exit_price) / entry
    return TradeResult(plan.stock, plan.direction, plan.prediction_date, days[0].date,
                       days[exit_day].date, entry, exit_price, reason, money(profit))


def simulate_long(plan, bars):
    """Buy at the day-1 open; sell at +2% on the first day the high reaches it, else the last close.

    Returns ``None`` when fewer than ``plan.horizon`` bars follow the prediction date.
    """
    days = _window(plan, bars)
    if days is None:
        return None
    entry = _dec(days[0].open)
    target = entry * (1 + TAKE_PROFIT)
    for i, bar in enumerate(days):
        if _dec(bar.high) >= target:
            return _result(plan, days, i, target, "TakeProfit")
    return _result(plan, days, len(days) - 1, _dec(days[-1].close), "HorizonClose")


def simulate_short(plan, bars):
    """Short at the day-1 open; cover at -1% on the first day the low reaches it, else the last close."""
    days = _window(plan, bars)
    if days is None:
        return None
    entry = _dec(days[0].open)
    target = entry * (1 - COVER)
    for i, bar in enumerate(days):
        if _dec(bar.low) <= target:
            return _result(plan, days, i, target, "Cover")
    return _result(plan, days, len(days) - 1, _dec(days[-1].close), "HorizonClose")


@dataclass
class IndustryReport:
    industry: str
    market: Decimal
    strategy: Decimal
    trades: int
    stocks: int


@dataclass
class BacktestResult:
    trades: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # (stock, date, reason)

    @property
    def total(self):
        return sum((t.profit for t in self.trades), Decimal("0.00"))


def _close_on_or_before(bars, date):
    best = None
    for b in bars:
        if b.date <= date:
            best = b
        else:
            break
    return best


def run_backtest(predictions, prices, industry_map=None, notional=NOTIONAL):
    """Trade every prediction and aggregate profits per industry.

    ``predictions`` are ``(date, stock, direction, confidence)`` rows with
    direction ``rise`` (long) or ``fall`` (short).  Stocks without an
    industry go to ``"Other"``.  The market baseline of an industry is the
    mean over its traded stocks of ``notional * (close_end / close_start - 1)``
    where the window runs from the earliest prediction date to the latest
    trade exit.
    """
    industry_map = industry_map or {}
    result = BacktestResult()
    ordered = sorted(predictions, key=lambda p: (p[1], p[0], p[2]))
    for date, stock, direction, _conf in ordered:
        bars = prices.get(stock)
        if not bars:
            result.skipped.append((stock, date, "no_prices"))
            log.warning("skipping %s on %s: no price data", stock, date)
            continue
        side = "long" if direction == "rise" else "short"
        plan = TradePlan(stock, side, date, notional=notional)
        trade = simulate_long(plan, bars) if side == "long" else simulate_short(plan, bars)
        if trade is None:
            result.skipped.append((stock, date, "missing_bars"))
            log.warning("skipping %s on %s: fewer than %d bars after the prediction", stock, date,
                        plan.horizon)
            continue
        result.trades.append(trade)
    if not result.trades:
        return result

    start = min(t.prediction_date for t in result.trades)
    end = max(t.exit_date for t in result.trades)
    groups = {}
    for t in result.trades:
        groups.setdefault(industry_map.get(t.stock, OTHER) or OTHER, []).append(t)
    for industry in sorted(groups):
        trades = groups[industry]
        stocks = sorted({t.stock for t in trades})
        changes = []
        for st in stocks:
            b0 = _close_on_or_before(prices[st], start)
            b1 = _close_on_or_before(prices[st], end)
            if b0 is None:
                b0 = prices[st][0]
            changes.append(notional * (_dec(b1.close) / _dec(b0.close) - 1))
        market = money(sum(changes, Decimal(0)) / len(changes))
        strategy = sum((t.profit for t in trades), Decimal("0.00"))
        result.reports.append(IndustryReport(industry, market, strategy, len(trades), len(stocks)))
    return result


def trades_csv(result):
    buf = io.StringIO()
    buf.write("stock,direction,prediction_date,entry_date,exit_date,entry_price,exit_price,"
              "exit_reason,profit\n")
    for t in result.trades:
        buf.write(f"{t.stock},{t.direction},{t.prediction_date.isoformat()},{t.entry_date.isoformat()},"
                  f"{t.exit_date.isoformat()},{t.entry_price},{t.exit_price},{t.exit_reason},"
                  f"{t.profit}\n")
    return buf.getvalue()


def report_text(result):
    rows = [(r.industry, f"{r.market:,.2f}", f"{r.strategy:,.2f}") for r in result.reports]
    w0 = max([len("Industry")] + [len(r[0]) for r in rows])
    w1 = max([len("Market")] + [len(r[1]) for r in rows])
    w2 = max([len("Strategy")] + [len(r[2]) for r in rows])
    lines = [f"{'Industry':<{w0}}  {'Market':>{w1}}  {'Strategy':>{w2}}"]
    for a, b, c in rows:
        lines.append(f"{a:<{w0}}  {b:>{w1}}  {c:>{w2}}")
    return "\n".join(lines) + "\n"


def report_csv(result):
    buf = io.StringIO()
    buf.write("industry,market,strategy,trades,stocks\n")
    for r in result.reports:
        buf.write(f"{r.industry},{r.market},{r.strategy},{r.trades},{r.stocks}\n")
    return buf.getvalue()
