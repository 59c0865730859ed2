"""Signal-decay analysis of queue imbalance around mid-price moves.

Quantifies how much the imbalance observed at three moments of a
between-moves window (right after the previous refill, at a uniformly
random interior event, right before the depleting event) says about the
direction of later mid-price moves, via intercept-free logistic models
and their out-of-sample accuracy.  Also provides spread transition and
duration statistics and the mid-move continuation table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import L1Event, OrderType, imbalance
from .lobsim import SimPath

__all__ = [
    "ANCHORS",
    "HORIZONS",
    "SpreadStats",
    "PredictorSample",
    "LogisticModel",
    "PerfectSeparationError",
    "spread_stats",
    "continuation_table",
    "sample_predictors",
    "fit_logistic",
    "accuracy_matrix",
    "accuracy_to_csv",
    "durations_to_csv",
]

ANCHORS = ("AFTER_PREV", "RANDOM", "BEFORE")
HORIZONS = (1, 2, 3)

_REGIMES = (1, 2, 3)  # spread 1, spread 2, spread >= 3


@dataclass
class SpreadStats:
    """Spread regime transitions and per-regime run durations (nanoseconds).

    ``transitions[i][j]`` is P(next regime j | leaving regime i) over the
    bucketed regimes (1, 2, >=3); None when the regime was never left.
    """

    p_1to2: float | None
    p_2to1: float | None
    transitions: list
    durations: dict[int, list[int]]


@dataclass(frozen=True, slots=True)
class PredictorSample:
    """One (imbalance, later-move-direction) pair from a window anchor."""

    anchor: str
    x: float
    y: int
    horizon: int

    def __post_init__(self) -> None:
        if self.anchor not in ANCHORS:
            raise ValueError(f"unknown anchor {self.anchor!r}")
        if abs(self.x) > 1.0:
            raise ValueError("imbalance predictor outside [-1, 1]")
        if self.y not in (1, -1):
            raise ValueError("response must be +1 or -1")


@dataclass(frozen=True, slots=True)
class LogisticModel:
    """Intercept-free model P(y=+1 | x) = 1 / (1 + exp(-alpha x))."""

    alpha: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        """+1 where the fitted probability is at least one half."""
        return np.where(self.alpha * np.asarray(x) >= 0.0, 1, -1)


class PerfectSeparationError(ValueError):
    """The likelihood has no finite maximizer for this sample."""


def _regime(spread: int) -> int:
    return spread if spread < 3 else 3


def spread_stats(events: Sequence[L1Event]) -> SpreadStats:
    """Regime transition frequencies and run durations from raw prices."""
    if not events:
        raise ValueError("empty stream")
    counts = np.zeros((3, 3))
    durations: dict[int, list[int]] = {1: [], 2: [], 3: []}
    cur = _regime(events[0].spread)
    run_start = events[0].ts_ns
    for ev in events[1:]:
        r = _regime(ev.spread)
        if r != cur:
            counts[cur - 1, r - 1] += 1
            durations[cur].append(ev.ts_ns - run_start)
            cur = r
            run_start = ev.ts_ns
    rows = counts.sum(axis=1)
    transitions = [
        list(counts[i] / rows[i]) if rows[i] > 0 else None for i in range(3)
    ]
    p_1to2 = transitions[0][1] if transitions[0] is not None else None
    p_2to1 = transitions[1][0] if transitions[1] is not None else None
    return SpreadStats(
        p_1to2=p_1to2, p_2to1=p_2to1, transitions=transitions, durations=durations
    )


def continuation_table(directions) -> tuple[np.ndarray, np.ndarray]:
    """(counts, row percentages) of consecutive move-sign pairs.

    ``directions`` is one sequence of +/-1 values or a list of such
    sequences (pairs never straddle two sequences).  Row/column order is
    (+1, -1); each percentage row sums to 100 exactly.
    """
    if len(directions) and np.isscalar(directions[0]):
        directions = [directions]
    counts = np.zeros((2, 2))
    for seq in directions:
        arr = np.asarray(seq)
        if np.any(np.abs(arr) != 1):
            raise ValueError("directions must be +1 or -1")
        for prev, nxt in zip(arr[:-1], arr[1:]):
            counts[(prev < 0).astype(int), (nxt < 0).astype(int)] += 1
    if counts.sum() == 0:
        raise ValueError("need at least two consecutive moves")
    pct = np.zeros((2, 2))
    for i in range(2):
        row = counts[i].sum()
        if row > 0:
            pct[i, 0] = 100.0 * counts[i, 0] / row
            pct[i, 1] = 100.0 - pct[i, 0]
    return counts, pct


def _path_arrays(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """(imbalance per snapshot, change positions, directions) for one input.

    A snapshot sequence has the pre-first-event state at position 0 for
    simulated paths; plain event streams begin at their first row.
    """
    if isinstance(path, SimPath):
        states = [path.initial] + [s for _, s in path.steps]
        imb = np.array([imbalance(s.v_bid, s.v_ask) for s in states])
        pos = np.array(
            [j + 1 for j, (ev, _) in enumerate(path.steps) if ev.direction is not None],
            dtype=int,
        )
        dirs = np.asarray(path.mid_changes, dtype=int)
        first_window = True
    else:
        vb = np.array([e.bid_vol for e in path], dtype=float)
        va = np.array([e.ask_vol for e in path], dtype=float)
        tot = vb + va
        imb = np.where(tot > 0, (vb - va) / np.maximum(tot, 1.0), 0.0)
        mid2 = np.array([e.bid_px + e.ask_px for e in path])
        pos = np.nonzero(np.diff(mid2))[0] + 1
        dirs = np.sign(mid2[pos] - mid2[pos - 1]).astype(int)
        first_window = False
    return imb, pos, dirs, first_window


def sample_predictors(paths, seed: int = 0) -> list[PredictorSample]:
    """Anchor/response pairs for every window with at least one later move.

    Each window closing at move i contributes one sample per anchor and per
    available horizon h (responses are the signs of moves i+1..i+3).  The
    random anchor picks an event strictly between the two moves; windows
    with no interior event fall back to the window-start snapshot so every
    window contributes the same number of samples.
    """
    if isinstance(paths, SimPath) or (len(paths) and isinstance(paths[0], L1Event)):
        paths = [paths]
    rng = np.random.Generator(np.random.Philox(key=[seed, 0x5A11]))
    out: list[PredictorSample] = []
    for path in paths:
        imb, pos, dirs, first_window = _path_arrays(path)
        n = len(pos)
        start_j = 0 if first_window else 1
        for j in range(start_j, n):
            start = 0 if j == 0 else pos[j - 1]
            end = pos[j]
            x_after = imb[start]
            x_before = imb[end - 1]
            if start + 1 <= end - 1:
                x_rand = imb[rng.integers(start + 1, end)]
            else:
                x_rand = x_after
            for h in HORIZONS:
                if j + h >= n:
                    break
                y = int(dirs[j + h])
                out.append(PredictorSample("AFTER_PREV", float(x_after), y, h))
                out.append(PredictorSample("RANDOM", float(x_rand), y, h))
                out.append(PredictorSample("BEFORE", float(x_before), y, h))
    return out


def fit_logistic(samples, tol: float = 1e-10, max_iters: int = 200) -> LogisticModel:
    """Maximum-likelihood alpha by damped one-dimensional Newton steps.

    ``samples`` is a list of PredictorSample or an (x, y) array pair.
    Raises PerfectSeparationError when the likelihood is unbounded (one
    class absent, or all x*y of one sign) and ValueError on degenerate x.
    """
    if isinstance(samples, tuple):
        x, y = (np.asarray(a, dtype=float) for a in samples)
    else:
        x = np.array([s.x for s in samples], dtype=float)
        y = np.array([s.y for s in samples], dtype=float)
    if len(x) == 0:
        raise ValueError("no samples")
    if np.all(x == 0.0):
        raise ValueError("all predictors are zero")
    if np.all(y == 1) or np.all(y == -1):
        raise PerfectSeparationError("only one response class present")
    xy = x * y
    if np.all(xy >= 0) or np.all(xy <= 0):
        raise PerfectSeparationError("responses perfectly separated by sign of x")

    def loglik(a: float) -> float:
        return float(np.sum(-np.logaddexp(0.0, -a * xy)))

    alpha = 0.0
    ll = loglik(alpha)
    for _ in range(max_iters):
        s = 1.0 / (1.0 + np.exp(alpha * xy))  # sigma(-alpha * x * y)
        grad = float(np.sum(xy * s))
        if abs(grad) < tol:
            return LogisticModel(alpha=alpha)
        hess = -float(np.sum(x * x * s * (1.0 - s)))
        step = -grad / hess
        new = alpha + step
        new_ll = loglik(new)
        damp = 0
        while new_ll < ll and damp < 60:
            step *= 0.5
            new = alpha + step
            new_ll = loglik(new)
            damp += 1
        if new == alpha:
            # the step underflowed: alpha is the optimum at float resolution
            return LogisticModel(alpha=alpha)
        alpha, ll = new, new_ll
    s = 1.0 / (1.0 + np.exp(alpha * xy))
    grad = float(np.sum(xy * s))
    if abs(grad) < tol:
        return LogisticModel(alpha=alpha)
    raise RuntimeError(f"logistic fit did not converge, |grad|={abs(grad):.3e}")


def accuracy_matrix(
    paths, split: float = 0.7, seed: int = 0
) -> tuple[np.ndarray, dict[tuple[str, int], LogisticModel]]:
    """Out-of-sample accuracy for the nine (anchor, horizon) models.

    Samples are split chronologically per cell: the first ``split``
    fraction trains, the rest scores.  Returns the 3x3 accuracy array
    (rows = anchors in ANCHORS order, columns = horizons 1..3) and the
    fitted models.
    """
    if not 0.0 < split < 1.0:
        raise ValueError("split must be inside (0, 1)")
    samples = sample_predictors(paths, seed=seed)
    acc = np.full((3, 3), np.nan)
    models: dict[tuple[str, int], LogisticModel] = {}
    for ai, anchor in enumerate(ANCHORS):
        for hi, h in enumerate(HORIZONS):
            cell = [s for s in samples if s.anchor == anchor and s.horizon == h]
            n_train = int(len(cell) * split)
            train, test = cell[:n_train], cell[n_train:]
            if not train or not test:
                raise ValueError(f"too few samples for anchor {anchor}, horizon {h}")
            model = fit_logistic(train)
            models[(anchor, h)] = model
            x = np.array([s.x for s in test])
            y = np.array([s.y for s in test])
            acc[ai, hi] = float(np.mean(model.predict(x) == y))
    return acc, models


def accuracy_to_csv(acc: np.ndarray) -> str:
    lines = ["anchor,h1,h2,h3"]
    for ai, anchor in enumerate(ANCHORS):
        lines.append(anchor + "," + ",".join(f"{v:.4f}" for v in acc[ai]))
    return "\n".join(lines) + "\n"


def durations_to_csv(durations: Sequence[int], n_bins: int = 50) -> str:
    """(bin_edge, count) rows for one regime's duration histogram."""
    arr = np.asarray(list(durations), dtype=float)
    if arr.size == 0:
        return "bin_edge,count\n"
    counts, edges = np.histogram(arr, bins=n_bins)
    lines = ["bin_edge,count"]
    for e, c in zip(edges[:-1], counts):
        lines.append(f"{e:.0f},{c}")
    return "\n".join(lines) + "\n"
