"""Command-line pipeline: fixture data, estimation, testing, solving, racing.

Subcommands: fixture, estimate, glrt, solve, regions, simulate, imbalance.
Options resolve with precedence CLI flag > config file (flat key=value
lines, via --config) > built-in default.  All outputs are UTF-8 CSV/JSON
files under --output-dir.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import events as ev
from .events import OrderType
from .imbalance import (
    accuracy_matrix,
    accuracy_to_csv,
    continuation_table,
    durations_to_csv,
    spread_stats,
)
from .fixtures import build_fixture_model
from .flow import FlowModel, estimate_flow, glrt
from .lobsim import simulate, simulate_events
from .mdp import (
    bellman_residual,
    policy_regions,
    policy_to_json,
    regions_to_csv,
    values_to_json,
)
from .strategies import comparison_table, results_to_json, run_simulation, solve_variant

__all__ = ["main", "RunConfig"]


@dataclasses.dataclass
class RunConfig:
    """User-facing knobs shared by the subcommands."""

    input: str | None = None
    output_dir: str = "."
    k: int = 5
    periods: int = 3
    paths: int = 10000
    seed: int = 0
    tol: float = 1e-9
    smoothing: float = 0.0
    variant: str = "ALL_ORDERS"
    null: bool = False
    events: int = 100000
    changes: int = 6
    theta: float = 0.81
    trim_ns: int = ev.SESSION_TRIM_NS

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.periods < 1:
            raise ValueError("periods must be >= 1")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")

    @classmethod
    def resolve(cls, args: argparse.Namespace) -> "RunConfig":
        values: dict = {}
        cfg_path = getattr(args, "config", None)
        if cfg_path:
            values.update(_parse_config_file(cfg_path))
        for f in dataclasses.fields(cls):
            v = getattr(args, f.name, None)
            if v is not None:
                values[f.name] = v
        return cls(**values)

    def to_file_text(self) -> str:
        lines = [
            f"{f.name}={getattr(self, f.name)}"
            for f in dataclasses.fields(self)
            if getattr(self, f.name) is not None
        ]
        return "\n".join(lines) + "\n"


def _parse_config_file(path: str) -> dict:
    casts = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if key not in casts:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if key in ("input", "output_dir", "variant"):
            out[key] = val
        elif key == "null":
            out[key] = val.lower() in ("1", "true", "yes")
        elif key in ("tol", "smoothing", "theta"):
            out[key] = float(val)
        else:
            out[key] = int(val)
    return out


def _out(cfg: RunConfig, name: str, text: str) -> Path:
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    p = d / name
    p.write_text(text, encoding="utf-8")
    return p


def _load_model(cfg: RunConfig) -> FlowModel:
    if not cfg.input:
        raise ValueError("--input (a flow model JSON) is required")
    return FlowModel.from_json(Path(cfg.input).read_text())


def _load_events(cfg: RunConfig) -> list[ev.L1Event]:
    if not cfg.input:
        raise ValueError("--input (an event CSV) is required")
    return ev.parse_stream(Path(cfg.input).read_text())


def _p_table_csv(model: FlowModel) -> str:
    lines = ["d,e," + ",".join(t.name for t in OrderType)]
    for d in range(5):
        for e in range(6):
            row = ",".join(f"{v:.6f}" for v in model.p[d, e])
            lines.append(f"{d + 1},{OrderType(e).name},{row}")
    return "\n".join(lines) + "\n"


def _glrt_csv(model: FlowModel) -> str:
    r = glrt(model)
    return (
        "statistic,df,p_value\n"
        f"{r.statistic:.6f},{r.df},{r.pvalue:.6e}\n"
    )


def cmd_fixture(cfg: RunConfig) -> int:
    model = build_fixture_model(k=cfg.k, theta=cfg.theta, null=cfg.null)
    stream = simulate_events(model, n_events=cfg.events, seed=cfg.seed)
    _out(cfg, "fixture.csv", ev.serialize(stream))
    _out(cfg, "fixture_model.json", model.to_json())
    return 0


def cmd_estimate(cfg: RunConfig) -> int:
    stream = _load_events(cfg)
    model = estimate_flow(stream, k=cfg.k, smoothing=cfg.smoothing)
    _out(cfg, "model.json", model.to_json())
    _out(cfg, "glrt.csv", _glrt_csv(model))
    _out(cfg, "p_table.csv", _p_table_csv(model))
    return 0


def cmd_glrt(cfg: RunConfig) -> int:
    stream = _load_events(cfg)
    model = estimate_flow(stream, k=cfg.k, smoothing=cfg.smoothing)
    text = _glrt_csv(model)
    _out(cfg, "glrt.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_solve(cfg: RunConfig, emit_regions: bool = True) -> int:
    model = _load_model(cfg)
    solved = solve_variant(model, k=model.k, m=cfg.periods, variant=cfg.variant, tol=cfg.tol)
    _out(cfg, "values.json", values_to_json(solved.spec, solved.values))
    _out(cfg, "policy.json", policy_to_json(solved.spec, solved.policy))
    res = bellman_residual(solved.spec, solved.values, solved.policy)
    _out(
        cfg, "residual.csv",
        "max_bellman_residual,sweeps,state_updates\n"
        f"{res:.3e},{solved.values.sweeps},{solved.values.state_updates}\n",
    )
    if emit_regions:
        _emit_regions(cfg, solved)
    return 0


def _emit_regions(cfg: RunConfig, solved) -> None:
    spec, pol = solved.spec, solved.policy
    for m in sorted({1, spec.m_horizon}):
        for e in (OrderType.MB, OrderType.MS):
            rows, cols, grid = policy_regions(spec, pol, m=m, e=e, i="a")
            _out(
                cfg, f"regions_a_m{m}_{e.name}.csv",
                regions_to_csv(rows, cols, grid, "v_bid", "v_ask"),
            )
            for vf in sorted({1, (spec.k + 1) // 2, spec.k}):
                rows, cols, grid = policy_regions(
                    spec, pol, m=m, e=e, i="b", v_front=vf
                )
                _out(
                    cfg, f"regions_b_m{m}_{e.name}_vf{vf}.csv",
                    regions_to_csv(rows, cols, grid, "v_behind", "v_ask"),
                )


def cmd_regions(cfg: RunConfig) -> int:
    return cmd_solve(cfg, emit_regions=True)


def cmd_simulate(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    solved = {
        v: solve_variant(model, k=model.k, m=cfg.periods, variant=v, tol=cfg.tol)
        for v in ("ALL_ORDERS", "NO_CO", "NO_MO")
    }
    results = run_simulation(model, solved, n_paths=cfg.paths, seed=cfg.seed)
    table = comparison_table(results)
    _out(cfg, "comparison.csv", table)
    _out(cfg, "comparison.json", results_to_json(results))
    sys.stdout.write(table)
    return 0


def cmd_imbalance(cfg: RunConfig) -> int:
    if cfg.input and cfg.input.endswith(".json"):
        model = _load_model(cfg)
        data = [
            simulate(model, cfg.changes, seed=cfg.seed, path_index=i)
            for i in range(cfg.paths)
        ]
        dirs = [p.mid_changes for p in data]
    else:
        stream = _load_events(cfg)
        data = stream
        mid2 = np.array([e.bid_px + e.ask_px for e in stream])
        pos = np.nonzero(np.diff(mid2))[0] + 1
        dirs = [np.sign(mid2[pos] - mid2[pos - 1]).astype(int)]
        stats = spread_stats(stream)
        trans = "\n".join(
            f"{i + 1}," + (",".join(f"{p:.6f}" for p in row) if row else ",,")
            for i, row in enumerate(stats.transitions)
        )
        _out(cfg, "spread_transitions.csv", "from,to_1,to_2,to_3plus\n" + trans + "\n")
        for regime, dur in stats.durations.items():
            _out(cfg, f"spread_durations_{regime}.csv", durations_to_csv(dur))
    counts, pct = continuation_table(dirs)
    _out(
        cfg, "continuation.csv",
        "prev,to_up_pct,to_down_pct\n"
        f"+,{pct[0, 0]:.4f},{pct[0, 1]:.4f}\n-,{pct[1, 0]:.4f},{pct[1, 1]:.4f}\n",
    )
    acc, _ = accuracy_matrix(data, seed=cfg.seed)
    _out(cfg, "accuracy.csv", accuracy_to_csv(acc))
    return 0


_COMMANDS = {
    "fixture": cmd_fixture,
    "estimate": cmd_estimate,
    "glrt": cmd_glrt,
    "solve": cmd_solve,
    "regions": cmd_regions,
    "simulate": cmd_simulate,
    "imbalance": cmd_imbalance,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lobmdp",
        description="Order-book flow estimation, placement optimization, simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--input", default=None)
        p.add_argument("--output-dir", dest="output_dir", default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--periods", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--smoothing", type=float, default=None)
        p.add_argument("--variant", default=None, choices=["ALL_ORDERS", "NO_CO", "NO_MO"])
        p.add_argument("--null", action="store_const", const=True, default=None)
        p.add_argument("--events", type=int, default=None)
        p.add_argument("--changes", type=int, default=None)
        p.add_argument("--theta", type=float, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = RunConfig.resolve(args)
        return _COMMANDS[args.command](cfg)
    except Exception as exc:  # surface every failure as a nonzero exit
        print(f"lobmdp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
