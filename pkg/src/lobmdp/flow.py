"""Order-flow estimation from a level-1 event stream.

Fits the conditional next-event-type law on the 30 reduced states
(imbalance bin x last event type), the market-order size law given the
standing queue, the post-depletion queue refill laws, and the
mid-direction persistence probability.  Also provides the likelihood
ratio test that the last event type carries information beyond the
imbalance bin, and recovery of event-time intensities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np
from scipy.stats import chi2

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from .events import L1Event, OrderType, discretize, imbalance

__all__ = [
    "FlowModel",
    "FlowEstimator",
    "IntensityRecord",
    "GlrtResult",
    "estimate_flow",
    "glrt",
    "recover_intensities",
    "N_BINS",
    "N_TYPES",
    "GLRT_DF",
]

N_BINS = 5
N_TYPES = 6
GLRT_DF = N_BINS * (N_TYPES - 1) * (N_TYPES - 1)

_SCHEMA_VERSION = 1

# consumed-side lookup for market orders: MB eats the ask, MS eats the bid
_MO_SIDE = {OrderType.MB: "ask", OrderType.MS: "bid"}

# index permutation realizing the buy/sell relabeling on type axes
_MIRROR_PERM = np.array([1, 0, 3, 2, 5, 4])


@dataclass
class FlowModel:
    """Fitted flow law for a book with queue sizes in 0..k.

    Attributes:
        k: queue-size cap; all volumes live in 0..k.
        p: (5, 6, 6) array, p[d-1, e, f] = P(next type f | bin d, last e).
        counts: (5, 6, 6) integer transition counts behind ``p``.
        usable: (5, 6) bool mask, True where the conditional row is estimable.
        mo_size_bid: (k+1, k+1), row q = P(MS consumes s shares | bid queue q).
        mo_size_ask: (k+1, k+1), row q = P(MB consumes s shares | ask queue q).
        refill_bid: (k+1,) bid-queue law just after a mid-price change.
        refill_ask: (k+1,) ask-queue law just after a mid-price change.
        theta: P(next mid change has the same sign as the previous one).
        n_changes: number of mid-price changes seen while estimating.
        n_continuations: changes whose sign repeated the previous one.
        factor: volume normalization factor the stream was scaled by, if any.
        smoothing: additive pseudo-count used when forming ``p``.
    """

    k: int
    p: np.ndarray
    counts: np.ndarray
    usable: np.ndarray
    mo_size_bid: np.ndarray
    mo_size_ask: np.ndarray
    refill_bid: np.ndarray
    refill_ask: np.ndarray
    theta: float = 0.5
    n_changes: int = 0
    n_continuations: int = 0
    factor: float = 1.0
    smoothing: float = 0.0

    def mirror(self) -> "FlowModel":
        """The same model with the buy and sell roles exchanged.

        Bin d maps to 6-d (imbalance flips sign), every type maps to its
        opposite-side twin, and the two sides' size/refill laws swap.
        """
        perm = _MIRROR_PERM
        return FlowModel(
            k=self.k,
            p=self.p[::-1][:, perm][:, :, perm].copy(),
            counts=self.counts[::-1][:, perm][:, :, perm].copy(),
            usable=self.usable[::-1][:, perm].copy(),
            mo_size_bid=self.mo_size_ask.copy(),
            mo_size_ask=self.mo_size_bid.copy(),
            refill_bid=self.refill_ask.copy(),
            refill_ask=self.refill_bid.copy(),
            theta=self.theta,
            n_changes=self.n_changes,
            n_continuations=self.n_continuations,
            factor=self.factor,
            smoothing=self.smoothing,
        )

    def to_json(self) -> str:
        payload = {
            "schema_version": _SCHEMA_VERSION,
            "k": self.k,
            "p": self.p.tolist(),
            "counts": self.counts.tolist(),
            "usable": self.usable.tolist(),
            "mo_size_bid": self.mo_size_bid.tolist(),
            "mo_size_ask": self.mo_size_ask.tolist(),
            "refill_bid": self.refill_bid.tolist(),
            "refill_ask": self.refill_ask.tolist(),
            "theta": self.theta,
            "n_changes": self.n_changes,
            "n_continuations": self.n_continuations,
            "factor": self.factor,
            "smoothing": self.smoothing,
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FlowModel":
        payload = json.loads(text)
        _validate_payload(payload)
        if payload["schema_version"] != _SCHEMA_VERSION:
            raise ValueError(
                f"unsupported schema version {payload['schema_version']}"
            )
        return cls(
            k=payload["k"],
            p=np.asarray(payload["p"], dtype=float),
            counts=np.asarray(payload["counts"], dtype=np.int64),
            usable=np.asarray(payload["usable"], dtype=bool),
            mo_size_bid=np.asarray(payload["mo_size_bid"], dtype=float),
            mo_size_ask=np.asarray(payload["mo_size_ask"], dtype=float),
            refill_bid=np.asarray(payload["refill_bid"], dtype=float),
            refill_ask=np.asarray(payload["refill_ask"], dtype=float),
            theta=payload["theta"],
            n_changes=payload["n_changes"],
            n_continuations=payload["n_continuations"],
            factor=payload["factor"],
            smoothing=payload["smoothing"],
        )

    def validate(self) -> None:
        """Check shapes and stochasticity; raise ValueError on violation."""
        if self.p.shape != (N_BINS, N_TYPES, N_TYPES):
            raise ValueError(f"p has shape {self.p.shape}")
        if self.mo_size_bid.shape != (self.k + 1, self.k + 1):
            raise ValueError("mo_size_bid has wrong shape")
        if self.mo_size_ask.shape != (self.k + 1, self.k + 1):
            raise ValueError("mo_size_ask has wrong shape")
        if self.refill_bid.shape != (self.k + 1,):
            raise ValueError("refill_bid has wrong shape")
        if np.any(self.p < 0) or not np.allclose(self.p.sum(axis=2), 1.0):
            raise ValueError("p rows must be probability distributions")
        for name in ("refill_bid", "refill_ask"):
            arr = getattr(self, name)
            if np.any(arr < 0) or not np.isclose(arr.sum(), 1.0):
                raise ValueError(f"{name} must be a probability distribution")
            if arr[0] != 0.0:
                raise ValueError(f"{name} must place no mass at 0")
        for name in ("mo_size_bid", "mo_size_ask"):
            arr = getattr(self, name)
            rows = arr[1:]
            if np.any(rows < 0) or not np.allclose(rows.sum(axis=1), 1.0):
                raise ValueError(f"{name} rows q>=1 must sum to 1")
            for q in range(1, self.k + 1):
                if np.any(arr[q, q + 1 :] != 0.0):
                    raise ValueError(f"{name} row {q} exceeds its support")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")


def _validate_payload(payload: dict) -> None:
    if jsonschema is None:  # pragma: no cover
        return
    schema = json.loads(
        resources.files("lobmdp.schemas").joinpath("flow_model.schema.json").read_text()
    )
    jsonschema.validate(payload, schema)


def _stream_arrays(events: Sequence[L1Event]):
    n = len(events)
    ts = np.fromiter((e.ts_ns for e in events), dtype=np.int64, count=n)
    et = np.fromiter((int(e.etype) for e in events), dtype=np.int64, count=n)
    sz = np.fromiter((e.size for e in events), dtype=np.int64, count=n)
    vb = np.fromiter((e.bid_vol for e in events), dtype=np.int64, count=n)
    va = np.fromiter((e.ask_vol for e in events), dtype=np.int64, count=n)
    mid2 = np.fromiter((e.bid_px + e.ask_px for e in events), dtype=np.int64, count=n)
    return ts, et, sz, vb, va, mid2


def _bins(vb: np.ndarray, va: np.ndarray) -> np.ndarray:
    tot = vb + va
    ib = np.where(tot > 0, (vb - va) / np.maximum(tot, 1), 0.0)
    return np.searchsorted([-0.6, -0.2, 0.2, 0.6], ib, side="right") + 1


def estimate_flow(
    events: Sequence[L1Event],
    k: int,
    smoothing: float = 0.0,
) -> FlowModel:
    """Fit the flow law by conditional maximum likelihood.

    Each consecutive pair of rows contributes one transition: the reduced
    state is read off the earlier row's post-event snapshot and the outcome
    is the later row's event type.  Pairs whose earlier row shows an empty
    book on both sides are skipped.
    """
    if len(events) < 2:
        raise ValueError("need at least two events to estimate transitions")
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    ts, et, sz, vb, va, mid2 = _stream_arrays(events)
    if np.any(vb > k) or np.any(va > k):
        raise ValueError(f"queue volumes exceed cap k={k}")

    valid = (vb[:-1] + va[:-1]) > 0
    d = _bins(vb[:-1], va[:-1])
    counts = np.zeros((N_BINS, N_TYPES, N_TYPES), dtype=np.int64)
    np.add.at(
        counts, (d[valid] - 1, et[:-1][valid], et[1:][valid]), 1
    )

    totals = counts.sum(axis=2)
    usable = (totals > 0) | (smoothing > 0)
    sm = counts.astype(float) + smoothing
    denom = sm.sum(axis=2, keepdims=True)
    p = np.divide(sm, denom, out=np.full_like(sm, 1.0 / N_TYPES), where=denom > 0)

    mo_size_bid = _mo_size_law(et, sz, vb, OrderType.MS, k)
    mo_size_ask = _mo_size_law(et, sz, va, OrderType.MB, k)

    refill_bid, refill_ask, theta, n_changes, n_cont = _refill_and_theta(
        mid2, vb, va, k
    )

    return FlowModel(
        k=k,
        p=p,
        counts=counts,
        usable=usable,
        mo_size_bid=mo_size_bid,
        mo_size_ask=mo_size_ask,
        refill_bid=refill_bid,
        refill_ask=refill_ask,
        theta=theta,
        n_changes=n_changes,
        n_continuations=n_cont,
        smoothing=smoothing,
    )


def _mo_size_law(
    et: np.ndarray, sz: np.ndarray, vol: np.ndarray, mo: OrderType, k: int
) -> np.ndarray:
    """Size law of one market-order type given the queue it consumes.

    Rows with no observations borrow the pooled size law truncated and
    renormalized to 1..q; a fully unobserved side falls back to uniform.
    """
    hit = et[1:] == int(mo)
    q = np.minimum(vol[:-1][hit], k)
    s = np.minimum(sz[1:][hit], np.maximum(q, 1))
    keep = q >= 1
    q, s = q[keep], s[keep]
    table = np.zeros((k + 1, k + 1), dtype=float)
    np.add.at(table, (q, s), 1.0)
    pooled = table.sum(axis=0)
    out = np.zeros_like(table)
    for row in range(1, k + 1):
        src = table[row] if table[row].sum() > 0 else pooled
        trunc = src[: row + 1].copy()
        trunc[0] = 0.0
        if trunc.sum() == 0:
            trunc[1:] = 1.0
        out[row, : row + 1] = trunc / trunc.sum()
    return out


def _refill_and_theta(
    mid2: np.ndarray, vb: np.ndarray, va: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray, float, int, int]:
    """Post-change refill laws and the direction persistence probability."""
    change = np.nonzero(np.diff(mid2))[0] + 1
    direction = np.sign(np.diff(mid2))[change - 1]
    refill_bid = np.zeros(k + 1)
    refill_ask = np.zeros(k + 1)
    # the change row already carries the post-refill snapshot
    good = (vb[change] >= 1) & (va[change] >= 1)
    np.add.at(refill_bid, np.minimum(vb[change[good]], k), 1.0)
    np.add.at(refill_ask, np.minimum(va[change[good]], k), 1.0)
    for arr in (refill_bid, refill_ask):
        arr[0] = 0.0
        if arr.sum() == 0:
            arr[1:] = 1.0
        arr /= arr.sum()
    n_changes = len(direction)
    if n_changes >= 2:
        n_cont = int(np.sum(direction[1:] == direction[:-1]))
        theta = n_cont / (n_changes - 1)
    else:
        n_cont, theta = 0, 0.5
    return refill_bid, refill_ask, theta, n_changes, n_cont


@dataclass(frozen=True, slots=True)
class GlrtResult:
    statistic: float
    df: int
    pvalue: float


def glrt(model: FlowModel) -> GlrtResult:
    """Likelihood ratio test of "next type depends only on the imbalance bin".

    Within each bin the null pools the six conditional rows into one.  The
    statistic is 2 sum N log(p_alt / p_null) with the convention that empty
    cells contribute nothing; it is referred to chi-square with 125 degrees
    of freedom.
    """
    counts = model.counts.astype(float)
    row_tot = counts.sum(axis=2, keepdims=True)
    pool = counts.sum(axis=1, keepdims=True)
    pool_tot = pool.sum(axis=2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_alt = counts / row_tot
        p_null = pool / pool_tot
        terms = counts * (np.log(p_alt) - np.log(p_null))
    stat = float(np.nansum(np.where(counts > 0, terms, 0.0))) * 2.0
    return GlrtResult(stat, GLRT_DF, float(chi2.sf(stat, GLRT_DF)))


@dataclass(frozen=True, slots=True)
class IntensityRecord:
    """Per-state event-time rates and the quantities they factor into."""

    rates: tuple[float, ...]
    holding: float
    probs: tuple[float, ...]
    visits: int


def recover_intensities(
    events: Sequence[L1Event],
) -> dict[tuple[int, int], IntensityRecord]:
    """Event rates per (bid queue, ask queue) state.

    For each state the rate of type f is its count over the total time spent
    in the state.  Rate times mean holding time reproduces the embedded
    transition probability exactly.
    """
    if len(events) < 2:
        raise ValueError("need at least two events")
    acc: dict[tuple[int, int], list] = {}
    for prev, cur in zip(events[:-1], events[1:]):
        key = (prev.bid_vol, prev.ask_vol)
        rec = acc.setdefault(key, [np.zeros(N_TYPES), 0.0, 0])
        rec[0][int(cur.etype)] += 1
        rec[1] += (cur.ts_ns - prev.ts_ns) / 1e9
        rec[2] += 1
    out = {}
    for key, (cnt, total_time, visits) in acc.items():
        if total_time <= 0:
            continue
        n = cnt.sum()
        out[key] = IntensityRecord(
            rates=tuple(cnt / total_time),
            holding=total_time / visits,
            probs=tuple(cnt / n),
            visits=visits,
        )
    return out


try:
    from sklearn.base import BaseEstimator
except ImportError:  # pragma: no cover
    BaseEstimator = object


class FlowEstimator(BaseEstimator):
    """Estimator-style wrapper around :func:`estimate_flow`.

    ``fit`` accepts a sequence of events, stores the fitted ``model_``, and
    ``predict_proba`` returns the next-type law for given (bin, type) pairs.
    """

    def __init__(self, k: int = 10, smoothing: float = 0.0):
        self.k = k
        self.smoothing = smoothing

    def fit(self, X: Sequence[L1Event], y=None) -> "FlowEstimator":
        self.model_ = estimate_flow(X, k=self.k, smoothing=self.smoothing)
        return self

    def predict_proba(self, X: Sequence[tuple[int, int]]) -> np.ndarray:
        """Rows of P(next type | .) for an array of (bin 1..5, type 0..5)."""
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted")
        idx = np.asarray(list(X), dtype=int)
        return self.model_.p[idx[:, 0] - 1, idx[:, 1]]

    def score(self, X: Sequence[L1Event], y=None) -> float:
        """Mean log-likelihood of the observed transitions under the fit."""
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted")
        model = self.model_
        ll, n = 0.0, 0
        for prev, cur in zip(X[:-1], X[1:]):
            if prev.bid_vol + prev.ask_vol == 0:
                continue
            d = discretize(imbalance(prev.bid_vol, prev.ask_vol))
            prob = model.p[d - 1, int(prev.etype), int(cur.etype)]
            ll += np.log(max(prob, 1e-300))
            n += 1
        return ll / max(n, 1)
