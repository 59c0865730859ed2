"""Canonical level-1 event stream and the book-state primitives.

The CSV wire format is ``ts_ns,etype,size,bid_px,ask_px,bid_vol,ask_vol``
with etype one of MB, MS, LB, LS, CB, CS.  Prices are integer ticks and
the volume columns are snapshots of the best queues *after* the event has
been applied to the book.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Iterable, Sequence

__all__ = [
    "OrderType",
    "L1Event",
    "BookState",
    "ReducedState",
    "StreamFormatError",
    "CSV_HEADER",
    "SESSION_TRIM_NS",
    "parse_stream",
    "serialize",
    "filter_session",
    "normalize_volumes",
    "imbalance",
    "discretize",
    "reduce_state",
]

SESSION_TRIM_NS = 30 * 60 * 1_000_000_000

CSV_HEADER = "ts_ns,etype,size,bid_px,ask_px,bid_vol,ask_vol"


class OrderType(IntEnum):
    """The six order types observable at the best quotes."""

    MB = 0
    MS = 1
    LB = 2
    LS = 3
    CB = 4
    CS = 5

    @property
    def is_buy(self) -> bool:
        return self in (OrderType.MB, OrderType.LB, OrderType.CB)

    @property
    def is_market(self) -> bool:
        return self in (OrderType.MB, OrderType.MS)

    @property
    def is_limit(self) -> bool:
        return self in (OrderType.LB, OrderType.LS)

    @property
    def is_cancel(self) -> bool:
        return self in (OrderType.CB, OrderType.CS)

    def mirror(self) -> "OrderType":
        """Swap the buy/sell role of the type (MB<->MS, LB<->LS, CB<->CS)."""
        return _MIRROR[self]


_MIRROR = {
    OrderType.MB: OrderType.MS,
    OrderType.MS: OrderType.MB,
    OrderType.LB: OrderType.LS,
    OrderType.LS: OrderType.LB,
    OrderType.CB: OrderType.CS,
    OrderType.CS: OrderType.CB,
}

BUY_TYPES = frozenset({OrderType.MB, OrderType.LB, OrderType.CB})
SELL_TYPES = frozenset({OrderType.MS, OrderType.LS, OrderType.CS})


class StreamFormatError(ValueError):
    """Malformed row, unknown event code or non-monotone timestamps."""


@dataclass(frozen=True, slots=True)
class L1Event:
    """One time-stamped book event plus the post-event best-quote snapshot."""

    ts_ns: int
    etype: OrderType
    size: int
    bid_px: int
    ask_px: int
    bid_vol: int
    ask_vol: int

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError(f"event size must be positive, got {self.size}")
        if self.ask_px <= self.bid_px:
            raise ValueError(
                f"ask_px must exceed bid_px, got bid={self.bid_px} ask={self.ask_px}"
            )
        if self.bid_vol < 0 or self.ask_vol < 0:
            raise ValueError("queue volumes cannot be negative")

    @property
    def spread(self) -> int:
        return self.ask_px - self.bid_px

    @property
    def mid2(self) -> int:
        """Twice the mid-price, so mid comparisons stay in exact integers."""
        return self.bid_px + self.ask_px


@dataclass(frozen=True, slots=True)
class BookState:
    """Normalized best-quote state: both queue sizes plus the last event type."""

    v_bid: int
    v_ask: int
    last: OrderType


@dataclass(frozen=True, slots=True)
class ReducedState:
    """Imbalance bin (1..5) and last event type; 30 distinct values."""

    d: int
    last: OrderType


def parse_stream(text: str) -> list[L1Event]:
    """Parse the canonical CSV format into a list of events.

    Raises :class:`StreamFormatError` naming the offending line for malformed
    rows, unknown event codes, or timestamps that go backwards.
    """
    reader = csv.reader(io.StringIO(text))
    events: list[L1Event] = []
    prev_ts = None
    for lineno, row in enumerate(reader, start=1):
        if lineno == 1:
            if [c.strip() for c in row] != CSV_HEADER.split(","):
                raise StreamFormatError(f"line 1: expected header '{CSV_HEADER}'")
            continue
        if not row:
            continue
        if len(row) != 7:
            raise StreamFormatError(f"line {lineno}: expected 7 fields, got {len(row)}")
        try:
            etype = OrderType[row[1]]
        except KeyError:
            raise StreamFormatError(
                f"line {lineno}: unknown event code {row[1]!r}"
            ) from None
        try:
            ts = int(row[0])
            fields = [int(x) for x in row[2:]]
        except ValueError as exc:
            raise StreamFormatError(f"line {lineno}: {exc}") from None
        if prev_ts is not None and ts < prev_ts:
            raise StreamFormatError(
                f"line {lineno}: timestamp {ts} precedes previous {prev_ts}"
            )
        prev_ts = ts
        try:
            events.append(L1Event(ts, etype, *fields))
        except ValueError as exc:
            raise StreamFormatError(f"line {lineno}: {exc}") from None
    return events


def serialize(events: Iterable[L1Event]) -> str:
    """Inverse of :func:`parse_stream`: UTF-8 CSV, LF line endings, no quoting."""
    lines = [CSV_HEADER]
    for ev in events:
        lines.append(
            f"{ev.ts_ns},{ev.etype.name},{ev.size},{ev.bid_px},{ev.ask_px},"
            f"{ev.bid_vol},{ev.ask_vol}"
        )
    return "\n".join(lines) + "\n"


def filter_session(
    events: Sequence[L1Event],
    open_ns: int,
    close_ns: int,
    trim_ns: int = SESSION_TRIM_NS,
) -> list[L1Event]:
    """Drop activity within ``trim_ns`` of the session open and close."""
    if open_ns >= close_ns:
        raise ValueError("open_ns must precede close_ns")
    lo = open_ns + trim_ns
    hi = close_ns - trim_ns
    return [ev for ev in events if lo <= ev.ts_ns <= hi]


def _round_half_away(x: float) -> int:
    # symmetric rounding: 0.5 -> 1, -0.5 -> -1
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def normalize_volumes(
    events: Sequence[L1Event], k: int
) -> tuple[list[L1Event], float]:
    """Rescale sizes and queue snapshots by the median event size, cap at ``k``.

    Sizes are floored at 1 (an order never normalizes to nothing); queue
    volumes may reach 0.  Returns the rescaled events and the factor used.
    """
    if not events:
        raise ValueError("cannot normalize an empty stream")
    if k < 1:
        raise ValueError("k must be at least 1")
    factor = float(statistics.median(ev.size for ev in events))
    out = []
    for ev in events:
        out.append(
            replace(
                ev,
                size=max(1, min(k, _round_half_away(ev.size / factor))),
                bid_vol=min(k, _round_half_away(ev.bid_vol / factor)),
                ask_vol=min(k, _round_half_away(ev.ask_vol / factor)),
            )
        )
    return out, factor


def imbalance(v_bid: float, v_ask: float) -> float:
    """Signed volume asymmetry (v_bid - v_ask) / (v_bid + v_ask) in [-1, 1]."""
    total = v_bid + v_ask
    if total <= 0:
        raise ValueError("imbalance undefined for an empty book")
    return (v_bid - v_ask) / total


def discretize(i_val: float) -> int:
    """Map imbalance to one of 5 equal bins; right-open edges, last bin closed."""
    if not -1.0 <= i_val <= 1.0:
        raise ValueError(f"imbalance {i_val} outside [-1, 1]")
    if i_val < -0.6:
        return 1
    if i_val < -0.2:
        return 2
    if i_val < 0.2:
        return 3
    if i_val < 0.6:
        return 4
    return 5


def reduce_state(state: BookState) -> ReducedState:
    return ReducedState(discretize(imbalance(state.v_bid, state.v_ask)), state.last)
