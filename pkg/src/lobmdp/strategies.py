"""Strategy comparison: solve action-restricted variants and race them.

Three admissibility regimes are solved on the same flow model (all orders,
no cancels, no market orders) and then simulated on common random numbers:
every path feeds the same counter-based uniform stream to each strategy,
so the comparison differences are driven by the policies rather than by
sampling noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import diags

from .events import OrderType
from .flow import FlowModel
from .lobsim import simulate
from .mdp import (
    DEP_TYPES,
    TERMINAL_REWARDS,
    Action,
    MdpSpec,
    Policy,
    ValueFunction,
    build_mdp,
    dynamic_value_iteration,
    extract_policy,
)

__all__ = [
    "SolvedVariant",
    "SimResult",
    "solve_variant",
    "run_simulation",
    "comparison_table",
    "results_to_json",
]

_T_LO = (0, 1)  # terminal codes counting as a limit-order purchase

_MAX_EPOCHS = 10_000_000


@dataclass
class SolvedVariant:
    spec: MdpSpec
    values: ValueFunction
    policy: Policy


@dataclass(frozen=True, slots=True)
class SimResult:
    """Path-averaged outcome of one strategy on the common random paths."""

    label: str
    mean_reward: float
    std_reward: float
    pct_lo: float
    pct_mo: float
    pct_cancelled: float
    n_paths: int
    seed: int
    expected_value: float

    @property
    def stderr(self) -> float:
        return self.std_reward / np.sqrt(self.n_paths)


def solve_variant(
    model: FlowModel, k: int, m: int, variant: str, tol: float = 1e-9
) -> SolvedVariant:
    """Build and solve one admissibility regime to the given tolerance."""
    spec = build_mdp(model, k=k, m=m, variant=variant)
    vf = dynamic_value_iteration(spec, tol=tol)
    return SolvedVariant(spec=spec, values=vf, policy=extract_policy(spec, vf))


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return x


def _uniforms(seed: int, paths: np.ndarray, epoch: int) -> np.ndarray:
    """Counter-based uniforms: a pure function of (seed, path, epoch).

    Every strategy replays the identical stream for a given path, which is
    what makes the comparison a common-random-numbers experiment.
    """
    mask = (1 << 64) - 1
    x = paths.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    x += np.uint64((epoch * 0xD1B54A32D192ED03) & mask)
    x += np.uint64((seed * 0x8CB92BA72F3D8DD7) & mask)
    x = _mix64(_mix64(x))
    return (x >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def _burn_in_law(model: FlowModel, seed: int, n_changes: int = 400) -> np.ndarray:
    """Empirical law of the depleting event type after a simulator burn-in."""
    path = simulate(model, n_changes, seed=seed, path_index=0xBEEF)
    counts = np.zeros(len(DEP_TYPES))
    pos = {int(e): j for j, e in enumerate(DEP_TYPES)}
    for ev, _ in path.steps:
        if ev.direction is not None:
            counts[pos[int(ev.etype)]] += 1
    return counts / counts.sum()


def _policy_kernel(solved: SolvedVariant):
    """Row-stochastic kernel under the policy, with per-row cumulatives."""
    spec, pol = solved.spec, solved.policy
    n = spec.n_states
    mats = []
    for a in range(4):
        sel = (pol.actions == a).astype(float)
        mats.append(diags(sel) @ spec.p_mats[a])
    kern = sum(mats).tocsr()
    kern.eliminate_zeros()
    kern.sum_duplicates()
    indptr, indices, data = kern.indptr, kern.indices, kern.data
    if np.any(np.diff(indptr) == 0):
        raise RuntimeError("policy kernel has an empty row")
    cum = np.cumsum(data)
    row_base = np.repeat(
        np.concatenate(([0.0], cum[indptr[1:-1] - 1])), np.diff(indptr)
    )
    cum = cum - row_base
    max_nnz = int(np.diff(indptr).max())
    return indptr, indices, cum, max_nnz


def _simulate_one(
    solved: SolvedVariant,
    e0_idx: np.ndarray,
    seed: int,
    label: str,
) -> SimResult:
    spec, pol = solved.spec, solved.policy
    n = spec.n_states
    n_paths = len(e0_idx)
    indptr, indices, cum, max_nnz = _policy_kernel(solved)

    start = np.array(
        [spec.start_index(spec.m_horizon, e, 0) for e in DEP_TYPES], dtype=np.int64
    )
    cur = start[e0_idx]
    # value-function prediction under the empirical opening-type frequencies
    freq = np.bincount(e0_idx, minlength=len(DEP_TYPES)) / n_paths
    expected = float(freq @ solved.values.u[start])
    placed = np.zeros(n_paths, dtype=np.int64)
    cancelled = np.zeros(n_paths, dtype=np.int64)
    path_ids = np.arange(n_paths, dtype=np.uint64)

    epoch = 1
    active = cur < n
    while active.any():
        if epoch > _MAX_EPOCHS:
            raise RuntimeError("paths failed to absorb")
        idx = np.nonzero(active)[0]
        rows = cur[idx]
        acts = pol.actions[rows]
        placed[idx] += acts == Action.PLACE_LO
        cancelled[idx] += acts == Action.CANCEL
        u = _uniforms(seed, path_ids[idx], epoch)
        lo = indptr[rows].astype(np.int64)
        hi = indptr[rows + 1].astype(np.int64) - 1
        ptr = lo.copy()
        for _ in range(max_nnz):
            step = (cum[ptr] <= u) & (ptr < hi)
            if not step.any():
                break
            ptr += step
        cur[idx] = indices[ptr]
        active = cur < n
        epoch += 1

    term = cur - n
    if np.any(term == 5):
        raise RuntimeError("a path reached the inert-holder outcome")
    rewards = np.asarray(TERMINAL_REWARDS)[term]
    is_lo = np.isin(term, _T_LO)
    total_placed = int(placed.sum())
    pct_cancelled = (
        100.0 * cancelled.sum() / total_placed if total_placed else 0.0
    )
    return SimResult(
        label=label,
        mean_reward=float(rewards.mean()),
        std_reward=float(rewards.std(ddof=1)),
        pct_lo=float(100.0 * is_lo.mean()),
        pct_mo=float(100.0 * (~is_lo).mean()),
        pct_cancelled=float(pct_cancelled),
        n_paths=n_paths,
        seed=seed,
        expected_value=expected,
    )


def run_simulation(
    model: FlowModel,
    solved: dict[str, SolvedVariant],
    n_paths: int,
    seed: int = 0,
) -> dict[str, SimResult]:
    """Race all solved strategies on the same paths.

    Each path's opening last-event type is drawn from a burn-in law of
    depleting types; the path then follows each strategy's policy kernel,
    resolving every transition with the shared uniform stream.
    """
    if not solved:
        raise ValueError("no solved strategies supplied")
    horizons = {sv.spec.m_horizon for sv in solved.values()}
    if len(horizons) != 1:
        raise ValueError("strategies solved for different horizons")
    law = _burn_in_law(model, seed)
    path_ids = np.arange(n_paths, dtype=np.uint64)
    u0 = _uniforms(seed, path_ids, 0)
    e0_idx = np.searchsorted(np.cumsum(law), u0, side="right")
    e0_idx = np.minimum(e0_idx, len(DEP_TYPES) - 1)
    return {
        label: _simulate_one(sv, e0_idx, seed, label)
        for label, sv in solved.items()
    }


_COLUMNS = (
    "Strategy,Mean reward,Std reward,Bought with LO %,Bought with MO %,LO cancelled %"
)


def comparison_table(results: dict[str, SimResult]) -> str:
    """CSV table with one row per strategy, columns fixed."""
    if not results:
        raise ValueError("no results to tabulate")
    lines = [_COLUMNS]
    for label, r in results.items():
        lines.append(
            f"{label},{r.mean_reward:.4f},{r.std_reward:.4f},"
            f"{r.pct_lo:.2f},{r.pct_mo:.2f},{r.pct_cancelled:.2f}"
        )
    return "\n".join(lines) + "\n"


def results_to_json(results: dict[str, SimResult]) -> str:
    return json.dumps(
        {
            label: {
                "mean_reward": r.mean_reward,
                "std_reward": r.std_reward,
                "pct_lo": r.pct_lo,
                "pct_mo": r.pct_mo,
                "pct_cancelled": r.pct_cancelled,
                "n_paths": r.n_paths,
                "seed": r.seed,
                "expected_value": r.expected_value,
            }
            for label, r in results.items()
        },
        indent=1,
    )
