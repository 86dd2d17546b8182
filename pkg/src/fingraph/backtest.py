"""Long-only weekly backtest of Rise/Fall signals and its performance metrics.

A Rise signal on day t buys at the close of the next trading day and sells at
the close of the last trading day of the following ISO week. Each week's
portfolio return is the (equal-weighted by default) mean holding return of the
trades that exit in that week, and NAV compounds weekly from 1.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Literal, Mapping, NamedTuple, Sequence

from .errors import CalendarExhaustedError, HolidayGapError, PersistenceError
from .guidance import Signal

logger = logging.getLogger(__name__)

PERIODS_PER_YEAR = 52


@dataclass(frozen=True)
class PriceBar:
    ticker: str
    date: date
    close: float

    def __post_init__(self) -> None:
        if not self.close > 0:
            raise ValueError(f"close for {self.ticker} on {self.date} must be positive")


class PriceTable:
    def __init__(self, bars: Iterable[PriceBar] = ()):
        self._close: dict[tuple[str, date], float] = {}
        for bar in bars:
            key = (bar.ticker, bar.date)
            if key in self._close:
                raise ValueError(f"duplicate price for {bar.ticker} on {bar.date}")
            self._close[key] = bar.close

    @classmethod
    def from_csv(cls, path: str | Path) -> "PriceTable":
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise PersistenceError(f"cannot read prices {path}: {exc}") from exc
        return cls(PriceBar(r["ticker"].strip(), date.fromisoformat(r["date"].strip()), float(r["close"]))
                   for r in rows)

    def close(self, ticker: str, when: date) -> float | None:
        return self._close.get((ticker, when))

    def dates(self) -> list[date]:
        return sorted({d for _, d in self._close})

    def scaled(self, factor: float) -> "PriceTable":
        return PriceTable(PriceBar(t, d, c * factor) for (t, d), c in self._close.items())


class TradingCalendar:
    def __init__(self, dates: Iterable[date]):
        self.dates: tuple[date, ...] = tuple(sorted(set(dates)))

    @classmethod
    def from_prices(cls, prices: PriceTable) -> "TradingCalendar":
        return cls(prices.dates())

    @classmethod
    def from_file(cls, path: str | Path) -> "TradingCalendar":
        """One ISO date per line; a leading ``date`` header is allowed."""
        try:
            lines = Path(path).read_text(encoding="utf-8").split()
        except OSError as exc:
            raise PersistenceError(f"cannot read calendar {path}: {exc}") from exc
        return cls(date.fromisoformat(s.split(",")[0]) for s in lines if s and s.lower() != "date")

    def __len__(self) -> int:
        return len(self.dates)

    def week_of(self, when: date) -> tuple[int, int]:
        iso = when.isocalendar()
        return (iso[0], iso[1])

    def week_days(self, week: tuple[int, int]) -> list[date]:
        monday = date.fromisocalendar(week[0], week[1], 1)
        lo = bisect.bisect_left(self.dates, monday)
        hi = bisect.bisect_left(self.dates, monday + timedelta(days=7))
        return list(self.dates[lo:hi])


def next_trading_day(cal: TradingCalendar, t: date) -> date:
    i = bisect.bisect_right(cal.dates, t)
    if i >= len(cal.dates):
        raise CalendarExhaustedError(f"no trading day after {t}")
    return cal.dates[i]


def week_exit(cal: TradingCalendar, t: date) -> date:
    """Last trading day of the ISO week after the week containing ``t``."""
    following = cal.week_of(t + timedelta(days=7))
    days = cal.week_days(following)
    if not days:
        raise HolidayGapError(f"no trading day in ISO week {following[0]}-W{following[1]:02d}")
    return days[-1]


@dataclass(frozen=True)
class Trade:
    ticker: str
    signal_date: date
    entry_date: date
    entry_price: float
    exit_date: date
    exit_price: float
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not self.entry_date < self.exit_date:
            raise ValueError(f"entry {self.entry_date} must precede exit {self.exit_date}")

    @property
    def holding_return(self) -> float:
        return self.exit_price / self.entry_price - 1.0


@dataclass(frozen=True)
class NavSeries:
    points: tuple[tuple[date, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        for (d0, _), (d1, _) in zip(self.points, self.points[1:]):
            if not d0 < d1:
                raise ValueError("NAV dates must be strictly increasing")
        if any(v <= 0 for _, v in self.points):
            raise ValueError("NAV values must be positive")

    @classmethod
    def from_values(cls, values: Sequence[float], start: date = date(2000, 1, 2)) -> "NavSeries":
        return cls(tuple((start + timedelta(weeks=i), v) for i, v in enumerate(values)))

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.points]

    def weekly_returns(self) -> list[float]:
        v = self.values
        return [b / a - 1.0 for a, b in zip(v, v[1:])]


class Skipped(NamedTuple):
    signal: Signal
    reason: str


class SimulationResult(NamedTuple):
    trades: list[Trade]
    nav: NavSeries
    skipped: list[Skipped]


def dedupe_signals(signals: Iterable[Signal]) -> list[Signal]:
    seen: dict[tuple[str, date], Signal] = {}
    for s in signals:
        key = (s.stock, s.signal_date)
        if key in seen:
            logger.warning("duplicate signal for %s on %s ignored", *key)
            continue
        seen[key] = s
    return [seen[k] for k in sorted(seen)]


def _open_trade(sig: Signal, prices: PriceTable, cal: TradingCalendar) -> Trade | str:
    """Trade for ``sig`` (regardless of label), or the reason it cannot be executed."""
    try:
        entry = next_trading_day(cal, sig.signal_date)
        exit_ = week_exit(cal, sig.signal_date)
    except (CalendarExhaustedError, HolidayGapError) as exc:
        return str(exc)
    if not entry < exit_:
        return f"entry {entry} is not before exit {exit_}"
    p_in, p_out = prices.close(sig.stock, entry), prices.close(sig.stock, exit_)
    if p_in is None:
        return f"no price for {sig.stock} on entry date {entry}"
    if p_out is None:
        return f"no price for {sig.stock} on exit date {exit_}"
    return Trade(sig.stock, sig.signal_date, entry, p_in, exit_, p_out, sig.confidence)


def simulate(signals: Iterable[Signal], prices: PriceTable, cal: TradingCalendar,
             weighting: Literal["equal", "confidence"] = "equal") -> SimulationResult:
    trades: list[Trade] = []
    skipped: list[Skipped] = []
    for sig in dedupe_signals(signals):
        if sig.label != "Rise":
            continue
        result = _open_trade(sig, prices, cal)
        if isinstance(result, str):
            logger.warning("skipping %s %s: %s", sig.stock, sig.signal_date, result)
            skipped.append(Skipped(sig, result))
        else:
            trades.append(result)
    trades.sort(key=lambda t: (t.exit_date, t.ticker, t.signal_date))
    return SimulationResult(trades, build_nav(trades, cal, weighting), skipped)


def weekly_portfolio_returns(trades: Sequence[Trade], cal: TradingCalendar,
                             weighting: str = "equal") -> list[tuple[tuple[int, int], float]]:
    """(ISO week, return) for every trading week from the first entry to the last exit."""
    if not trades:
        return []
    by_week: dict[tuple[int, int], list[Trade]] = {}
    for t in trades:
        by_week.setdefault(cal.week_of(t.exit_date), []).append(t)
    first = min(t.entry_date for t in trades)
    last = max(t.exit_date for t in trades)
    weeks = sorted({cal.week_of(d) for d in cal.dates if cal.week_of(first) <= cal.week_of(d) <= cal.week_of(last)})
    out = []
    for w in weeks:
        exiting = by_week.get(w, [])
        if not exiting:
            out.append((w, 0.0))
            continue
        if weighting == "confidence" and sum(t.confidence for t in exiting) > 0:
            total = sum(t.confidence for t in exiting)
            out.append((w, sum(t.confidence * t.holding_return for t in exiting) / total))
        else:
            out.append((w, sum(t.holding_return for t in exiting) / len(exiting)))
    return out


def build_nav(trades: Sequence[Trade], cal: TradingCalendar, weighting: str = "equal") -> NavSeries:
    weekly = weekly_portfolio_returns(trades, cal, weighting)
    if not weekly:
        return NavSeries()
    first_day = cal.week_days(weekly[0][0])[0]
    i = bisect.bisect_left(cal.dates, first_day)
    start = cal.dates[i - 1] if i > 0 else first_day - timedelta(days=1)
    points = [(start, 1.0)]
    nav = 1.0
    for w, r in weekly:
        nav *= 1.0 + r
        points.append((cal.week_days(w)[-1], nav))
    return NavSeries(tuple(points))


class Outcome(NamedTuple):
    signal: Signal
    realized_return: float

    @property
    def realized_label(self) -> str:
        return "Rise" if self.realized_return > 0 else "Fall"

    @property
    def correct(self) -> bool:
        return self.signal.label == self.realized_label


def directional_outcomes(signals: Iterable[Signal], prices: PriceTable, cal: TradingCalendar) -> list[Outcome]:
    """Realized entry-to-exit return for every signal with computable prices; Fall signals included."""
    out = []
    for sig in dedupe_signals(signals):
        result = _open_trade(sig, prices, cal)
        if not isinstance(result, str):
            out.append(Outcome(sig, result.holding_return))
    return out


@dataclass(frozen=True)
class MetricsReport:
    arr: float
    vol: float | None
    sr: float | None
    mdd: float
    cr: float | None
    acc: float | None
    weeks: int
    trades: int

    def to_json(self) -> dict:
        return {"arr": self.arr, "vol": self.vol, "sr": self.sr, "mdd": self.mdd, "cr": self.cr,
                "acc": self.acc, "weeks": self.weeks, "trades": self.trades}


def annualized_return(nav_values: Sequence[float], periods_per_year: int = PERIODS_PER_YEAR) -> float:
    weeks = len(nav_values) - 1
    if weeks < 1:
        return 0.0
    return (nav_values[-1] / nav_values[0]) ** (periods_per_year / weeks) - 1.0


def annualized_volatility(returns: Sequence[float], periods_per_year: int = PERIODS_PER_YEAR) -> float | None:
    if len(returns) < 2:
        return None
    return statistics.stdev(returns) * math.sqrt(periods_per_year)


def max_drawdown(nav_values: Sequence[float]) -> float:
    peak, worst = -math.inf, 0.0
    for v in nav_values:
        peak = max(peak, v)
        worst = max(worst, (peak - v) / peak)
    return worst


def sharpe_ratio(arr: float, vol: float | None) -> float | None:
    """Annualized return over annualized volatility, zero risk-free rate."""
    return arr / vol if vol else None


def calmar_ratio(arr: float, mdd: float) -> float | None:
    return arr / abs(mdd) if mdd else None


def compute_metrics(nav: NavSeries, trades: Sequence[Trade], outcomes: Sequence[Outcome] = (),
                    periods_per_year: int = PERIODS_PER_YEAR) -> MetricsReport:
    values = nav.values or [1.0]
    returns = nav.weekly_returns()
    arr = annualized_return(values, periods_per_year)
    vol = annualized_volatility(returns, periods_per_year)
    mdd = max_drawdown(values)
    acc = sum(o.correct for o in outcomes) / len(outcomes) if outcomes else None
    return MetricsReport(arr, vol, sharpe_ratio(arr, vol), mdd, calmar_ratio(arr, mdd), acc,
                         len(returns), len(trades))


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_report(metrics: MetricsReport, nav: NavSeries, trades: Sequence[Trade], out_dir: str | Path,
                industries: Mapping[str, str] | None = None, figures: bool = True) -> list[Path]:
    """Write nav.csv, trades.csv, metrics.json (plus industry counts and figures); return the paths."""
    out = Path(out_dir)
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "nav.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["week_end", "nav"])
            w.writerows([d.isoformat(), _fmt(v)] for d, v in nav.points)
        written.append(out / "nav.csv")

        with open(out / "trades.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ticker", "signal_date", "entry_date", "entry_price", "exit_date", "exit_price",
                        "holding_return"])
            for t in trades:
                w.writerow([t.ticker, t.signal_date.isoformat(), t.entry_date.isoformat(), _fmt(t.entry_price),
                            t.exit_date.isoformat(), _fmt(t.exit_price), _fmt(t.holding_return)])
        written.append(out / "trades.csv")

        (out / "metrics.json").write_text(json.dumps(metrics.to_json(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
        written.append(out / "metrics.json")

        counts: dict[str, int] = {}
        if industries is not None:
            for t in trades:
                industry = industries.get(t.ticker, "Unknown")
                counts[industry] = counts.get(industry, 0) + 1
            with open(out / "industry_counts.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["industry", "trades"])
                w.writerows(sorted(counts.items()))
            written.append(out / "industry_counts.csv")
    except OSError as exc:
        raise PersistenceError(f"cannot write report to {out}: {exc}") from exc

    if figures:
        from . import plotting

        written.append(plotting.plot_nav(nav, out / "nav.png"))
        if industries is not None:
            written.append(plotting.plot_industry_counts(counts, out / "industry_counts.png"))
    return written
