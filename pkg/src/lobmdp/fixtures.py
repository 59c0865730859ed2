"""Synthetic flow models with known parameters, for testing and demos.

The next-type law is a log-linear blend of a side-symmetric base rate, an
imbalance tilt that is exactly antisymmetric under the buy/sell swap, and
a last-type affinity.  By construction the model equals its own mirror,
so estimator and simulator symmetry properties can be checked against it
exactly.
"""

from __future__ import annotations

import numpy as np

from .events import OrderType
from .flow import N_BINS, N_TYPES, FlowModel

__all__ = ["build_fixture_model", "recovery_fixture", "calibration_stream"]

# uniform base mix keeps every (bin, last-type) row comparably populated
_BASE = np.full(6, 1.0 / 6.0)

# imbalance tilt acts on market orders only: a bid-heavy book attracts
# buys and repels sells, feeding depletions without starving any last-type
# row at the extreme bins; opposite-side twins get opposite signs
_TILT = np.array([1.0, -1.0, 0.0, 0.0, 0.0, 0.0])

def _affinity() -> np.ndarray:
    """Last-type effect g[e, f]: repeat bonus plus a same-side bonus."""
    g = np.zeros((N_TYPES, N_TYPES))
    for e in range(N_TYPES):
        for f in range(N_TYPES):
            if e == f:
                g[e, f] += 0.8
            if e % 2 == f % 2:  # even indices are buy types, odd are sell
                g[e, f] += 0.3
    return g


def build_fixture_model(
    k: int = 5,
    theta: float = 0.81,
    imbalance_strength: float = 1.1,
    type_strength: float = 0.9,
    refill_weights: np.ndarray | None = None,
    mo_geom: float = 0.45,
    null: bool = False,
) -> FlowModel:
    """Construct a mirror-symmetric flow model in closed form.

    ``null=True`` zeroes the last-type effect, so within each imbalance bin
    all six conditional rows coincide.  ``refill_weights`` gives the shared
    post-move queue law on sizes 1..k (defaults to a U-shaped law that keeps
    the extreme imbalance bins well populated).
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    x = (np.arange(1, N_BINS + 1) - 3) / 2.0  # bin centers scaled to [-1, 1]
    lam = 0.0 if null else type_strength
    logits = (
        np.log(_BASE)[None, None, :]
        + imbalance_strength * x[:, None, None] * _TILT[None, None, :]
        + lam * _affinity()[None, :, :]
    )
    p = np.exp(logits - logits.max(axis=2, keepdims=True))
    p /= p.sum(axis=2, keepdims=True)

    if refill_weights is None:
        w = np.full(k, 1.0)
        w[0] = w[-1] = 8.0
    else:
        w = np.asarray(refill_weights, dtype=float)
        if w.shape != (k,) or np.any(w < 0) or w.sum() == 0:
            raise ValueError("refill_weights must be k non-negative weights")
    refill = np.zeros(k + 1)
    refill[1:] = w / w.sum()

    mo = np.zeros((k + 1, k + 1))
    for q in range(1, k + 1):
        row = (1.0 - mo_geom) ** np.arange(q)
        mo[q, 1 : q + 1] = row / row.sum()

    model = FlowModel(
        k=k,
        p=p,
        counts=np.zeros((N_BINS, N_TYPES, N_TYPES), dtype=np.int64),
        usable=np.ones((N_BINS, N_TYPES), dtype=bool),
        mo_size_bid=mo,
        mo_size_ask=mo.copy(),
        refill_bid=refill,
        refill_ask=refill.copy(),
        theta=theta,
    )
    model.validate()
    return model


def recovery_fixture() -> FlowModel:
    """Wide-book fixture tuned so every reduced-state row is well populated.

    Heavy refill mass at both queue extremes plus large market orders keep
    all thirty conditional rows visited often enough that half a million
    events pin every probability to within about 0.01.
    """
    w = np.ones(20)
    w[0] = w[-1] = 20.0
    w[1] = w[-2] = 8.0
    w[2] = w[-3] = 3.0
    return build_fixture_model(
        k=20,
        refill_weights=w,
        imbalance_strength=0.35,
        type_strength=0.25,
        mo_geom=0.12,
    )


def calibration_stream(model: FlowModel, n: int, seed: int) -> list:
    """Event stream whose (bin, last-type) process is exactly Markov.

    Bins are drawn independently each step (realized by a fixed
    representative volume pair per bin) and the next event type from the
    bin's conditional law, so transition counts satisfy the sampling
    assumptions behind the chi-square reference of the row-equality test.
    Requires a model whose rows within each bin coincide (a null model);
    book simulation is not used, so no hidden book state leaks into the
    conditioning.
    """
    from .events import L1Event

    if not np.allclose(model.p, model.p[:, :1, :]):
        raise ValueError("calibration_stream needs a null model")
    if model.k < 5:
        raise ValueError("needs k >= 5 to realize all five bins")
    p = model.p[:, 0, :]
    vols = [(1, 5), (1, 2), (1, 1), (2, 1), (5, 1)]  # one per bin
    rng = np.random.default_rng(seed)
    d = rng.integers(0, N_BINS, size=n)
    u = rng.random(n)
    f = np.empty(n, dtype=int)
    f[0] = int(OrderType.LB)
    f[1:] = (u[1:, None] < np.cumsum(p[d[:-1]], axis=1)).argmax(axis=1)
    return [
        L1Event(t, OrderType(int(f[t])), 1, 100, 101, *vols[d[t]])
        for t in range(n)
    ]
