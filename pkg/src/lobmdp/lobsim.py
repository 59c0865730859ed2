"""Event-level simulation of the best-quote book under a fitted flow law.

The book holds the two best queues at a unit spread.  Events arrive in
event time from the conditional next-type law; when a queue empties the
mid price moves one tick, both queues redraw from their refill laws, and
the move's sign follows a persistence coin: the first move of a path
takes the sign implied by the depleted side (ask empty pushes the mid up,
bid empty pushes it down) and each later move repeats the previous sign
with probability theta, reversing otherwise.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .events import BookState, L1Event, OrderType

__all__ = [
    "SimEvent",
    "SimPath",
    "step",
    "depletion_refill",
    "simulate",
    "simulate_events",
    "UniformStream",
]

_BLOCK = 8192

_TS_STEP = 1000  # synthetic nanoseconds between events


class UniformStream:
    """Buffered uniforms from a counter-keyed Philox generator.

    Keying by (seed, path index) makes every path's stream independent and
    reproducible regardless of how many draws other paths consume.
    """

    def __init__(self, seed: int, path_index: int = 0):
        self._gen = np.random.Generator(np.random.Philox(key=[seed, path_index]))
        self._buf: list[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(_BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


@dataclass(frozen=True, slots=True)
class SimEvent:
    """One simulated event; depletion fields are set iff the mid moved."""

    etype: OrderType
    size: int
    depleted: str | None = None  # "bid" or "ask"
    direction: int | None = None  # +1 or -1

    def __post_init__(self) -> None:
        if (self.depleted is None) != (self.direction is None):
            raise ValueError("depleted and direction must be set together")


@dataclass
class SimPath:
    """A simulated trajectory: initial state, per-event records, move signs."""

    initial: BookState
    steps: list[tuple[SimEvent, BookState]]
    mid_changes: list[int]


class _Tables:
    """Cumulative sampling tables for one model; cached on the model object."""

    def __init__(self, model):
        model.validate()
        self.k = model.k
        self.p_cum = [
            [list(np.cumsum(model.p[d, e])) for e in range(6)] for d in range(5)
        ]
        self.mo_cum = {
            "bid": [list(np.cumsum(row)) for row in model.mo_size_bid],
            "ask": [list(np.cumsum(row)) for row in model.mo_size_ask],
        }
        self.refill_bid_cum = list(np.cumsum(model.refill_bid))
        self.refill_ask_cum = list(np.cumsum(model.refill_ask))


def _tables(model) -> _Tables:
    tab = getattr(model, "_sim_tables", None)
    if tab is None:
        tab = _Tables(model)
        model._sim_tables = tab
    return tab


def _bin(v_bid: int, v_ask: int) -> int:
    ib = (v_bid - v_ask) / (v_bid + v_ask)
    if ib < -0.6:
        return 1
    if ib < -0.2:
        return 2
    if ib < 0.2:
        return 3
    if ib < 0.6:
        return 4
    return 5


def depletion_refill(
    depleted_side: str,
    prev_direction: int | None,
    model,
    rng,
    last: OrderType,
) -> tuple[int, BookState]:
    """Resolve a queue emptying into a mid move and a fresh book.

    Without a previous move the sign is the one the depleted side implies;
    otherwise a Bernoulli(theta) draw keeps or reverses the previous sign.
    Both queues resample independently; the last-event type is preserved.
    """
    tab = _tables(model)
    if prev_direction is None:
        direction = 1 if depleted_side == "ask" else -1
    else:
        same = rng.random() < model.theta
        direction = prev_direction if same else -prev_direction
    v_bid = bisect_right(tab.refill_bid_cum, rng.random())
    v_ask = bisect_right(tab.refill_ask_cum, rng.random())
    return direction, BookState(v_bid=v_bid, v_ask=v_ask, last=last)


def step(
    state: BookState,
    model,
    rng,
    prev_direction: int | None = None,
    diagnostics: dict | None = None,
) -> tuple[SimEvent, BookState]:
    """Advance the book by one event; resolves any depletion before returning.

    A cancel (or market order) drawn against an empty queue is excluded and
    the remaining type probabilities renormalized; occurrences are counted
    in ``diagnostics`` under "renormalized" when a dict is supplied.
    """
    tab = _tables(model)
    k = tab.k
    vb, va = state.v_bid, state.v_ask
    if vb + va <= 0:
        raise ValueError("cannot step an empty book")
    cum = tab.p_cum[_bin(vb, va) - 1][int(state.last)]
    blocked = []
    if vb == 0:
        blocked += [OrderType.CB, OrderType.MS]
    if va == 0:
        blocked += [OrderType.CS, OrderType.MB]
    if blocked:
        w = np.fromiter((cum[i] - (cum[i - 1] if i else 0.0) for i in range(6)), float)
        w[[int(t) for t in blocked]] = 0.0
        if w.sum() <= 0:
            raise ValueError("event law degenerate after renormalization")
        cum = list(np.cumsum(w / w.sum()))
        if diagnostics is not None:
            diagnostics["renormalized"] = diagnostics.get("renormalized", 0) + 1
    f = OrderType(bisect_right(cum, rng.random()))
    size = 1
    depleted = None
    if f is OrderType.LB:
        vb = min(vb + 1, k)
    elif f is OrderType.LS:
        va = min(va + 1, k)
    elif f is OrderType.CB:
        vb -= 1
        if vb == 0:
            depleted = "bid"
    elif f is OrderType.CS:
        va -= 1
        if va == 0:
            depleted = "ask"
    elif f is OrderType.MB:
        size = bisect_right(tab.mo_cum["ask"][va], rng.random())
        va -= size
        if va == 0:
            depleted = "ask"
    else:  # MS
        size = bisect_right(tab.mo_cum["bid"][vb], rng.random())
        vb -= size
        if vb == 0:
            depleted = "bid"
    if depleted is None:
        return SimEvent(f, size), BookState(v_bid=vb, v_ask=va, last=f)
    direction, nxt = depletion_refill(depleted, prev_direction, model, rng, last=f)
    return SimEvent(f, size, depleted, direction), nxt


def simulate(
    model, n_mid_changes: int, seed: int = 0, path_index: int = 0,
    start_etype: OrderType = OrderType.LB,
) -> SimPath:
    """Run one path until the n-th mid-price move; deterministic in the seed."""
    if n_mid_changes < 1:
        raise ValueError("n_mid_changes must be at least 1")
    rng = UniformStream(seed, path_index)
    tab = _tables(model)
    initial = BookState(
        v_bid=bisect_right(tab.refill_bid_cum, rng.random()),
        v_ask=bisect_right(tab.refill_ask_cum, rng.random()),
        last=start_etype,
    )
    state = initial
    prev = None
    steps: list[tuple[SimEvent, BookState]] = []
    changes: list[int] = []
    while len(changes) < n_mid_changes:
        ev, state = step(state, model, rng, prev_direction=prev)
        steps.append((ev, state))
        if ev.direction is not None:
            changes.append(ev.direction)
            prev = ev.direction
    return SimPath(initial=initial, steps=steps, mid_changes=changes)


def simulate_events(
    model,
    n_events: int | None = None,
    n_changes: int | None = None,
    seed: int = 0,
    path_index: int = 0,
    start_bid_px: int = 1000,
    start_etype: OrderType = OrderType.LB,
) -> list[L1Event]:
    """Produce a canonical event stream (synthetic unit-spaced timestamps).

    Exactly one of ``n_events`` and ``n_changes`` must be given.  Depleting
    rows carry the post-refill snapshot and the post-move prices, so flow
    estimation on the output sees exactly what the simulator drew.
    """
    if (n_events is None) == (n_changes is None):
        raise ValueError("specify exactly one of n_events or n_changes")
    rng = UniformStream(seed, path_index)
    tab = _tables(model)
    state = BookState(
        v_bid=bisect_right(tab.refill_bid_cum, rng.random()),
        v_ask=bisect_right(tab.refill_ask_cum, rng.random()),
        last=start_etype,
    )
    bid_px = start_bid_px
    ts = 0
    prev = None
    seen = 0
    out: list[L1Event] = []
    while (len(out) < n_events) if n_events is not None else (seen < n_changes):
        ev, state = step(state, model, rng, prev_direction=prev)
        ts += _TS_STEP
        if ev.direction is not None:
            bid_px += ev.direction
            prev = ev.direction
            seen += 1
        out.append(
            L1Event(
                ts_ns=ts,
                etype=ev.etype,
                size=ev.size,
                bid_px=bid_px,
                ask_px=bid_px + 1,
                bid_vol=state.v_bid,
                ask_vol=state.v_ask,
            )
        )
    return out
