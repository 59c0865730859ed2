"""Finite decision process for placing a single buy order at the touch.

The trader must buy one share within M mid-price moves.  Between moves the
book evolves by the fitted flow law with the trader's resting order
embedded in the bid queue; decisions (wait, place, cancel, take) happen
before each market event.  Rewards in ticks realize at the mid move that
follows the purchase, or as a forced market buy at the horizon.  The
process is solved exactly by value iteration, either over all states at
once or stratum by stratum in the periods-remaining index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix

from .events import OrderType, discretize, imbalance
from .flow import FlowModel

__all__ = [
    "Action",
    "MdpSpec",
    "ValueFunction",
    "Policy",
    "ConvergenceError",
    "reward",
    "build_mdp",
    "value_iteration",
    "dynamic_value_iteration",
    "extract_policy",
    "bellman_residual",
    "policy_regions",
    "regions_to_csv",
    "TERMINAL_LABELS",
    "TERMINAL_REWARDS",
    "VARIANTS",
]


class Action(IntEnum):
    """Tie-break order is the enum order: earlier wins on equal value."""

    WAIT = 0
    PLACE_LO = 1
    CANCEL = 2
    MARKET = 3


VARIANTS = ("ALL_ORDERS", "NO_CO", "NO_MO")

# depletion outcomes; rewards realize on entering these absorbing states
TERMINAL_LABELS = ("LO_UP", "LO_DN", "MO_UP", "MO_DN", "FORCED", "DONE")
TERMINAL_REWARDS = (1.5, -0.5, 0.5, -1.5, -0.5, 0.0)
_T_LO_UP, _T_LO_DN, _T_MO_UP, _T_MO_DN, _T_FORCED, _T_DONE = range(6)
N_TERMINALS = 6

# event types able to empty a queue; the refill state's last-event value
DEP_TYPES = (OrderType.MB, OrderType.MS, OrderType.CB, OrderType.CS)

_SCHEMA_VERSION = 1


def reward(fill: str, direction: int) -> float:
    """Payoff in ticks for a purchase, settled at the next mid move.

    ``fill`` is LO, MO or FORCED_MO; ``direction`` is +1 or -1 (ignored for
    the forced case, which always pays -0.5).
    """
    if fill == "FORCED_MO":
        return -0.5
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if fill == "LO":
        return 1.5 if direction == 1 else -0.5
    if fill == "MO":
        return 0.5 if direction == 1 else -1.5
    raise ValueError(f"unknown fill type {fill!r}")


class ConvergenceError(RuntimeError):
    """Value iteration failed to meet tolerance; carries the last residual."""

    def __init__(self, residual: float, iters: int):
        super().__init__(
            f"no convergence after {iters} sweeps, residual {residual:.3e}"
        )
        self.residual = residual
        self.iters = iters


@dataclass
class ValueFunction:
    """Converged values on non-absorbing states plus solver effort counters."""

    u: np.ndarray
    sweeps: int
    state_updates: int
    residual: float
    tol: float


@dataclass
class Policy:
    """One admissible action per non-absorbing state."""

    actions: np.ndarray  # int8 Action codes


@dataclass
class MdpSpec:
    """Enumerated decision process over a flow model.

    Non-absorbing states are ``m_horizon`` copies (strata, periods remaining
    m = 1..M) of one local layout; the six absorbing outcomes sit in extra
    columns N..N+5 of each transition matrix.  Local state tuples:

    - ("start", e, pl): period opening, bid refill about to be drawn
    - ("auxb", e, vb, pl): bid drawn, ask refill about to be drawn
    - ("a", vb, va, e, pl): no resting order
    - ("b", vf, vbh, va, e, pl): order resting, vf in front of and
      including it, vbh behind
    - ("c"/"d", vb, va, e, pl): bought via LO / via MO, payoff pending
    - ("e", vb, va, e, pl): bought in an earlier period, inert
    - pl: 1 once an order has ever been placed (tracked only for NO_CO)
    """

    k: int
    m_horizon: int
    variant: str
    n_placed: int
    local_states: list
    local_index: dict
    n_local: int
    n_states: int
    p_mats: list
    r_mat: np.ndarray
    admissible: np.ndarray

    def global_index(self, m: int, local: int) -> int:
        if not 1 <= m <= self.m_horizon:
            raise ValueError(f"m={m} outside 1..{self.m_horizon}")
        return (m - 1) * self.n_local + local

    def state_tuple(self, g: int):
        """(m, local tuple) for a global non-absorbing state index."""
        m, local = divmod(g, self.n_local)
        return m + 1, self.local_states[local]

    def start_index(self, m: int, e: OrderType, placed: int = 0) -> int:
        return self.global_index(m, self.local_index[("start", int(e), placed)])

    def validate(self) -> None:
        """Row-sum and reachability checks on the constructed kernel."""
        for a in range(4):
            sums = np.asarray(self.p_mats[a].sum(axis=1)).ravel()
            mask = self.admissible[:, a]
            if np.any(np.abs(sums[mask] - 1.0) > 1e-12):
                raise ValueError(f"action {Action(a).name}: row sums off by >1e-12")
            if np.any(sums[~mask] != 0.0):
                raise ValueError(f"action {Action(a).name}: inadmissible rows nonzero")
        if not self.admissible[:, Action.WAIT].all():
            raise ValueError("WAIT must be admissible everywhere")


def _dbin(vb: int, va: int) -> int:
    return discretize(imbalance(vb, va))


def _enumerate_local(k: int, n_placed: int):
    states = []
    for pl in range(n_placed):
        for e in DEP_TYPES:
            states.append(("start", int(e), pl))
        for e in DEP_TYPES:
            for vb in range(1, k + 1):
                states.append(("auxb", int(e), vb, pl))
        for kind in ("a", "c", "d", "e"):
            for e in range(6):
                for vb in range(1, k + 1):
                    for va in range(1, k + 1):
                        states.append((kind, vb, va, e, pl))
        for e in range(6):
            for vf in range(1, k + 1):
                for vbh in range(0, k - vf + 1):
                    for va in range(1, k + 1):
                        states.append(("b", vf, vbh, va, e, pl))
    index = {s: i for i, s in enumerate(states)}
    return states, index


def _admissible_actions(state, variant: str, k: int) -> tuple[Action, ...]:
    kind = state[0]
    if kind == "a":
        _, vb, va, e, pl = state
        acts = [Action.WAIT]
        if vb < k:
            acts.append(Action.PLACE_LO)
        if variant == "ALL_ORDERS" or (variant == "NO_CO" and pl == 0):
            acts.append(Action.MARKET)
        return tuple(acts)
    if kind == "b":
        if variant == "NO_CO":
            return (Action.WAIT,)
        return (Action.WAIT, Action.CANCEL)
    return (Action.WAIT,)


class _Builder:
    """Accumulates one stratum's transition template as flat entry lists."""

    def __init__(self, model: FlowModel, local_index: dict, n_local: int):
        self.model = model
        self.k = model.k
        self.local_index = local_index
        self.n_local = n_local
        # per action: parallel lists (src local, target code, prob, reward)
        self.src = [[] for _ in range(4)]
        self.code = [[] for _ in range(4)]
        self.prob = [[] for _ in range(4)]
        self.rew = [[] for _ in range(4)]

    # target codes: [0, L) same stratum; [L, 2L) stratum below (start states);
    # [2L, 2L+6) absorbing outcomes
    def _loc(self, state) -> int:
        return self.local_index[state]

    def _boundary(self, e_dep: int, pl: int) -> int:
        return self.n_local + self.local_index[("start", e_dep, pl)]

    def _term(self, t: int) -> int:
        return 2 * self.n_local + t

    def add(self, action: int, src: int, code: int, prob: float, rew: float = 0.0):
        if prob <= 0.0:
            return
        self.src[action].append(src)
        self.code[action].append(code)
        self.prob[action].append(prob)
        self.rew[action].append(rew)

    def _deplete_code(self, status: str, side: str, e_dep: int, pl: int):
        """(code, reward) on a queue emptying, by trader status at that moment."""
        up = side == "ask"
        if status in ("a", "b"):
            return self._boundary(e_dep, pl), 0.0
        if status == "c":
            t = _T_LO_UP if up else _T_LO_DN
        elif status == "d":
            t = _T_MO_UP if up else _T_MO_DN
        else:  # inert holder
            t = _T_DONE
        return self._term(t), TERMINAL_REWARDS[t]

    def market_event(
        self, action: int, src: int, status: str, book: tuple, e_now: int, pl: int
    ) -> None:
        """Expand one market event from the post-action configuration.

        ``book`` is (vb, va) for statuses a/c/d/e and (vf, vbh, va) for b.
        Emits one entry per reachable outcome, weighted by the event law.
        """
        k, model = self.k, self.model
        if status == "b":
            vf, vbh, va = book
            vb_total = vf + vbh
        else:
            vb, va = book
            vb_total = vb
        p_row = model.p[_dbin(vb_total, va) - 1, e_now].copy()
        if status == "b" and vf == 1 and vbh == 0:
            # no cancellable non-trader bid order: drop CB mass
            p_row[int(OrderType.CB)] = 0.0
            s = p_row.sum()
            if s <= 0.0:
                raise ValueError("event law degenerate after removing CB")
            p_row /= s

        def emit(pf, new_status, new_book, f):
            if status == "b" and new_status == "b":
                nvf, nvbh, nva = new_book
                self.add(action, src, self._loc(("b", nvf, nvbh, nva, f, pl)), pf)
            else:
                nvb, nva = new_book
                self.add(action, src, self._loc((new_status, nvb, nva, f, pl)), pf)

        def emit_deplete(pf, at_status, side, e_dep):
            code, r = self._deplete_code(at_status, side, e_dep, pl)
            self.add(action, src, code, pf, r)

        for f in range(6):
            pf = float(p_row[f])
            if pf == 0.0:
                continue
            ft = OrderType(f)
            if ft is OrderType.LB:
                if status == "b":
                    nb = (vf, vbh + 1, va) if vb_total < k else (vf, vbh, va)
                    emit(pf, "b", nb, f)
                else:
                    emit(pf, status, (min(vb + 1, k), va), f)
            elif ft is OrderType.LS:
                if status == "b":
                    emit(pf, "b", (vf, vbh, min(va + 1, k)), f)
                else:
                    emit(pf, status, (vb, min(va + 1, k)), f)
            elif ft is OrderType.CB:
                if status == "b":
                    n_nt = vf - 1 + vbh
                    if vf >= 2:
                        emit(pf * (vf - 1) / n_nt, "b", (vf - 1, vbh, va), f)
                    if vbh >= 1:
                        emit(pf * vbh / n_nt, "b", (vf, vbh - 1, va), f)
                elif vb == 1:
                    emit_deplete(pf, status, "bid", f)
                else:
                    emit(pf, status, (vb - 1, va), f)
            elif ft is OrderType.CS:
                if va == 1:
                    emit_deplete(pf, status, "ask", f)
                elif status == "b":
                    emit(pf, "b", (vf, vbh, va - 1), f)
                else:
                    emit(pf, status, (vb, va - 1), f)
            elif ft is OrderType.MB:
                for s in range(1, va + 1):
                    ps = pf * float(model.mo_size_ask[va, s])
                    if ps == 0.0:
                        continue
                    if s == va:
                        emit_deplete(ps, status, "ask", f)
                    elif status == "b":
                        emit(ps, "b", (vf, vbh, va - s), f)
                    else:
                        emit(ps, status, (vb, va - s), f)
            else:  # MS eats the bid from the front
                for s in range(1, vb_total + 1):
                    ps = pf * float(model.mo_size_bid[vb_total, s])
                    if ps == 0.0:
                        continue
                    if status == "b":
                        if s < vf:
                            emit(ps, "b", (vf - s, vbh, va), f)
                        elif s == vb_total:
                            # fill and immediate bid depletion in one event
                            emit_deplete(ps, "c", "bid", f)
                        else:
                            emit(ps, "c", (vb_total - s, va), f)
                    elif s == vb_total:
                        emit_deplete(ps, status, "bid", f)
                    else:
                        emit(ps, status, (vb - s, va), f)


def build_mdp(
    model: FlowModel, k: int | None = None, m: int = 1, variant: str = "ALL_ORDERS"
) -> MdpSpec:
    """Enumerate states and transitions for a horizon of ``m`` mid moves.

    ``k`` defaults to the model's queue cap and must match it when given.
    Fails if any of the 30 conditional event-law rows is not estimable.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if k is None:
        k = model.k
    if k != model.k:
        raise ValueError(f"k={k} does not match the model's cap {model.k}")
    if m < 1:
        raise ValueError("horizon must be at least 1")
    model.validate()
    bad = np.argwhere(~model.usable)
    if bad.size:
        d, e = bad[0]
        raise ValueError(
            f"flow row for bin {d + 1}, last type {OrderType(e).name} is unusable"
        )

    n_placed = 2 if variant == "NO_CO" else 1
    local_states, local_index = _enumerate_local(k, n_placed)
    n_local = len(local_states)
    b = _Builder(model, local_index, n_local)

    for src, state in enumerate(local_states):
        kind = state[0]
        pl = state[-1]
        if kind == "start":
            e = state[1]
            for vb in range(1, k + 1):
                b.add(
                    Action.WAIT, src,
                    local_index[("auxb", e, vb, pl)],
                    float(model.refill_bid[vb]),
                )
            continue
        if kind == "auxb":
            e, vb = state[1], state[2]
            for va in range(1, k + 1):
                b.add(
                    Action.WAIT, src,
                    local_index[("a", vb, va, e, pl)],
                    float(model.refill_ask[va]),
                )
            continue
        for action in _admissible_actions(state, variant, k):
            if kind == "a":
                _, vb, va, e, _ = state
                if action is Action.WAIT:
                    b.market_event(action, src, "a", (vb, va), e, pl)
                elif action is Action.PLACE_LO:
                    pl2 = 1 if n_placed == 2 else pl
                    b.market_event(
                        action, src, "b", (vb + 1, 0, va), int(OrderType.LB), pl2
                    )
                else:  # MARKET: take one share at the ask
                    if va == 1:
                        code, r = b._deplete_code("d", "ask", int(OrderType.MB), pl)
                        b.add(action, src, code, 1.0, r)
                    else:
                        b.market_event(
                            action, src, "d", (vb, va - 1), int(OrderType.MB), pl
                        )
            elif kind == "b":
                _, vf, vbh, va, e, _ = state
                if action is Action.WAIT:
                    b.market_event(action, src, "b", (vf, vbh, va), e, pl)
                else:  # CANCEL
                    if vf == 1 and vbh == 0:
                        code, r = b._deplete_code("a", "bid", int(OrderType.CB), pl)
                        b.add(action, src, code, 1.0, r)
                    else:
                        b.market_event(
                            action, src, "a",
                            (vf - 1 + vbh, va), int(OrderType.CB), pl,
                        )
            else:  # c, d, e: wait out the period
                _, vb, va, e, _ = state
                b.market_event(Action.WAIT, src, kind, (vb, va), e, pl)

    return _assemble(model, k, m, variant, n_placed, local_states, local_index, b)


def _assemble(model, k, m, variant, n_placed, local_states, local_index, b: _Builder):
    n_local = len(local_states)
    n_states = m * n_local
    p_mats = []
    r_mat = np.zeros((n_states, 4))
    admissible = np.zeros((n_states, 4), dtype=bool)

    for a in range(4):
        src = np.asarray(b.src[a], dtype=np.int64)
        code = np.asarray(b.code[a], dtype=np.int64)
        prob = np.asarray(b.prob[a], dtype=float)
        rew = np.asarray(b.rew[a], dtype=float)
        is_local = code < n_local
        is_bound = (code >= n_local) & (code < 2 * n_local)
        is_term = code >= 2 * n_local

        rows_all, cols_all, data_all = [], [], []
        # per-stratum fixed reward and the extra forced-buy charge at m=1
        r_fixed = np.zeros(n_local)
        np.add.at(r_fixed, src, prob * rew)
        bound_mass = np.zeros(n_local)
        np.add.at(bound_mass, src[is_bound], prob[is_bound])
        adm_local = np.zeros(n_local, dtype=bool)
        adm_local[src] = True

        for mm in range(1, m + 1):
            off = (mm - 1) * n_local
            cols = np.empty_like(code)
            cols[is_local] = code[is_local] + off
            cols[is_term] = code[is_term] - 2 * n_local + n_states
            if mm > 1:
                cols[is_bound] = code[is_bound] - n_local + off - n_local
            else:
                cols[is_bound] = n_states + _T_FORCED
            rows_all.append(src + off)
            cols_all.append(cols.copy())
            data_all.append(prob)
            r_mat[off : off + n_local, a] = r_fixed
            if mm == 1:
                r_mat[off : off + n_local, a] += TERMINAL_REWARDS[_T_FORCED] * bound_mass
            admissible[off : off + n_local, a] = adm_local

        if rows_all:
            mat = csr_matrix(
                (np.concatenate(data_all),
                 (np.concatenate(rows_all), np.concatenate(cols_all))),
                shape=(n_states, n_states + N_TERMINALS),
            )
        else:
            mat = csr_matrix((n_states, n_states + N_TERMINALS))
        mat.sum_duplicates()
        p_mats.append(mat)

    spec = MdpSpec(
        k=k,
        m_horizon=m,
        variant=variant,
        n_placed=n_placed,
        local_states=local_states,
        local_index=local_index,
        n_local=n_local,
        n_states=n_states,
        p_mats=p_mats,
        r_mat=r_mat,
        admissible=admissible,
    )
    spec.validate()
    return spec


def _q_values(spec: MdpSpec, u_full: np.ndarray, rows=None) -> np.ndarray:
    """Action values; inadmissible entries are -inf."""
    if rows is None:
        q = np.stack([
            spec.r_mat[:, a] + spec.p_mats[a].dot(u_full) for a in range(4)
        ], axis=1)
        q[~spec.admissible] = -np.inf
    else:
        q = np.stack([
            spec.r_mat[rows, a] + spec.p_mats[a][rows].dot(u_full)
            for a in range(4)
        ], axis=1)
        q[~spec.admissible[rows]] = -np.inf
    return q


def value_iteration(
    spec: MdpSpec, tol: float = 1e-9, max_iters: int = 100_000
) -> ValueFunction:
    """Jacobi value iteration from zero to the unique fixed point.

    Each sweep computes every state's best action value against the frozen
    previous table, then swaps tables; stops when the sup-norm change drops
    below ``tol``.
    """
    n = spec.n_states
    u_full = np.zeros(spec.p_mats[0].shape[1])
    for it in range(1, max_iters + 1):
        new_u = _q_values(spec, u_full).max(axis=1)
        diff = float(np.max(np.abs(new_u - u_full[:n]))) if n else 0.0
        u_full[:n] = new_u
        if diff < tol:
            return ValueFunction(
                u=u_full[:n].copy(), sweeps=it, state_updates=it * n,
                residual=diff, tol=tol,
            )
    raise ConvergenceError(diff, max_iters)


def dynamic_value_iteration(
    spec: MdpSpec, tol: float = 1e-9, max_iters: int = 100_000
) -> ValueFunction:
    """Solve strata m = 1..M in order, each by sweeps over that stratum only.

    A stratum only references its own states, the stratum below, and the
    absorbing outcomes, so freezing solved strata is exact.  Effort counters
    accumulate across strata; ``state_updates`` counts single-state updates
    so runs are comparable with the full-sweep solver.
    """
    n, nl = spec.n_states, spec.n_local
    u_full = np.zeros(spec.p_mats[0].shape[1])
    sweeps = updates = 0
    worst = 0.0
    for mm in range(1, spec.m_horizon + 1):
        rows = np.arange((mm - 1) * nl, mm * nl)
        sub = [spec.p_mats[a][rows] for a in range(4)]
        r_sub = spec.r_mat[rows]
        adm_sub = spec.admissible[rows]
        for it in range(1, max_iters + 1):
            q = np.stack(
                [r_sub[:, a] + sub[a].dot(u_full) for a in range(4)], axis=1
            )
            q[~adm_sub] = -np.inf
            new_u = q.max(axis=1)
            diff = float(np.max(np.abs(new_u - u_full[rows])))
            u_full[rows] = new_u
            sweeps += 1
            updates += nl
            if diff < tol:
                worst = max(worst, diff)
                break
        else:
            raise ConvergenceError(diff, max_iters)
    return ValueFunction(
        u=u_full[:n].copy(), sweeps=sweeps, state_updates=updates,
        residual=worst, tol=tol,
    )


def extract_policy(spec: MdpSpec, vf: ValueFunction) -> Policy:
    """Greedy policy; on ties the earlier action in enum order wins."""
    u_full = np.zeros(spec.p_mats[0].shape[1])
    u_full[: spec.n_states] = vf.u
    q = _q_values(spec, u_full)
    return Policy(actions=q.argmax(axis=1).astype(np.int8))


def bellman_residual(spec: MdpSpec, vf: ValueFunction, policy: Policy) -> float:
    """sup |U(s) - Q(s, policy(s))| over all non-absorbing states."""
    u_full = np.zeros(spec.p_mats[0].shape[1])
    u_full[: spec.n_states] = vf.u
    q = _q_values(spec, u_full)
    q_pi = q[np.arange(spec.n_states), policy.actions]
    return float(np.max(np.abs(vf.u - q_pi)))


def expected_start_value(
    spec: MdpSpec, vf: ValueFunction, m: int | None = None, placed: int = 0
) -> float:
    """Mean value over the four period-opening states at horizon ``m``."""
    if m is None:
        m = spec.m_horizon
    idx = [spec.start_index(m, e, placed) for e in DEP_TYPES]
    return float(np.mean(vf.u[idx]))


def policy_regions(
    spec: MdpSpec,
    policy: Policy,
    m: int,
    e: OrderType,
    i: str = "a",
    v_front: int | None = None,
    placed: int = 0,
) -> tuple[list[int], list[int], list[list[str]]]:
    """Action grid over the two free queue coordinates at a fixed slice.

    For i='a' the axes are (bid volume, ask volume); for i='b' they are
    (volume behind the order, ask volume) at the given ``v_front``.  For
    the inert statuses c/d/e the grid is all WAIT by construction.
    Returns (row labels, column labels, grid of action names).
    """
    k = spec.k
    cols = list(range(1, k + 1))
    grid: list[list[str]] = []
    if i == "a" or i in ("c", "d", "e"):
        rows = list(range(1, k + 1))
        for vb in rows:
            line = []
            for va in cols:
                g = spec.global_index(m, spec.local_index[(i, vb, va, int(e), placed)])
                line.append(Action(policy.actions[g]).name)
            grid.append(line)
    elif i == "b":
        if v_front is None or not 1 <= v_front <= k:
            raise ValueError("i='b' requires v_front in 1..k")
        rows = list(range(0, k - v_front + 1))
        for vbh in rows:
            line = []
            for va in cols:
                key = ("b", v_front, vbh, va, int(e), placed)
                g = spec.global_index(m, spec.local_index[key])
                line.append(Action(policy.actions[g]).name)
            grid.append(line)
    else:
        raise ValueError(f"unknown status {i!r}")
    return rows, cols, grid


def regions_to_csv(rows, cols, grid, row_name: str, col_name: str) -> str:
    out = [f"{row_name}\\{col_name}," + ",".join(str(c) for c in cols)]
    for r, line in zip(rows, grid):
        out.append(f"{r}," + ",".join(line))
    return "\n".join(out) + "\n"


def _packed_key(spec: MdpSpec, g: int) -> str:
    m, st = spec.state_tuple(g)
    return f"m={m}|" + "|".join(str(x) for x in st)


def values_to_json(spec: MdpSpec, vf: ValueFunction) -> str:
    return json.dumps({
        "schema_version": _SCHEMA_VERSION,
        "kind": "values",
        "k": spec.k, "m": spec.m_horizon, "variant": spec.variant,
        "sweeps": vf.sweeps, "state_updates": vf.state_updates,
        "residual": vf.residual, "tol": vf.tol,
        "entries": {
            _packed_key(spec, g): float(vf.u[g]) for g in range(spec.n_states)
        },
    })


def policy_to_json(spec: MdpSpec, policy: Policy) -> str:
    return json.dumps({
        "schema_version": _SCHEMA_VERSION,
        "kind": "policy",
        "k": spec.k, "m": spec.m_horizon, "variant": spec.variant,
        "entries": {
            _packed_key(spec, g): Action(policy.actions[g]).name
            for g in range(spec.n_states)
        },
    })
