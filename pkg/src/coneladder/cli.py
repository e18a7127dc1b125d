"""Command-line front end.

Thread count is taken from CONELADDER_THREADS (default 1, keeping BLAS/FFT
reductions deterministic); it must be applied before numpy loads.
"""

import os

_THREADS = os.environ.get("CONELADDER_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402


def _load(args):
    from .scenario import load_scenario

    return load_scenario(args.scenario)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(scenario, args):
    from dataclasses import replace

    if getattr(args, "window", None):
        scenario = replace(scenario, window_bound=args.window)
    if getattr(args, "seed", None) is not None:
        scenario = replace(scenario, seed=args.seed)
    if getattr(args, "tol", None):
        scenario = replace(
            scenario, tolerances=scenario.tolerances.override({"identity_residual": args.tol})
        )
    return scenario


def cmd_renewal(args) -> int:
    from .engine import ScenarioEngine
    from .suite import _write_renewal_csv, RunReport

    scenario = _apply_overrides(_load(args), args)
    engine = ScenarioEngine(scenario)
    report = RunReport(scenario.name, scenario.seed, [], 0.0)
    base = _out_dir(args) / scenario.name
    base.mkdir(parents=True, exist_ok=True)
    _write_renewal_csv(engine, base, report)
    table = engine.renewal()
    origin = engine.window().origin
    print(f"{scenario.name}: V(e) = {float(table.V.values[origin])!r}, regime = {table.regime}")
    if args.emit:
        src = base / "renewal.csv"
        Path(args.emit).write_text(src.read_text())
        print(f"wrote {args.emit}")
    else:
        print(f"wrote {base / 'renewal.csv'}")
    return 0


def cmd_ratio(args) -> int:
    from .engine import ScenarioEngine
    from .ladder import ratio_vs_V

    scenario = _apply_overrides(_load(args), args)
    engine = ScenarioEngine(scenario)
    target = [int(c) for c in args.start.split(",")]
    reach = scenario.mu.max_step_norm()
    kernel = engine.kernel(max(scenario.window_bound, max(target) + args.horizon * reach))
    rep = ratio_vs_V(kernel, engine.renewal().V, target, args.horizon)
    lines = ["n," + ",".join(f"x{i}" for i in range(scenario.dimension)) + ",f_n,V"]
    coords = ",".join(str(c) for c in target)
    stride = max(1, args.horizon // 200)
    for n in range(0, args.horizon + 1, stride):
        lines.append(f"{n},{coords},{rep.f[n]!r},{rep.V_x!r}")
    out = args.emit or str(_out_dir(args) / scenario.name / "ratio.csv")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text("\n".join(lines) + "\n")
    print(f"{scenario.name}: f_{args.horizon}({tuple(target)}) = {rep.final!r} vs V = {rep.V_x!r}")
    print(f"wrote {out}")
    return 0


def cmd_ladder_mc(args) -> int:
    from .montecarlo import empirical_ladder_law

    scenario = _apply_overrides(_load(args), args)
    start = [int(c) for c in args.start.split(",")]
    est = empirical_ladder_law(
        scenario.mu, scenario.cone, start, args.replicas, args.horizon, scenario.seed
    )
    lines = [",".join(f"y{i}" for i in range(scenario.dimension)) + ",frequency"]
    for key, cnt in sorted((k, v) for k, v in est.counts.items() if k is not None):
        lines.append(",".join(str(c) for c in key) + f",{cnt / est.replicas!r}")
    lines.append("theta," * scenario.dimension + repr(est.counts.get(None, 0) / est.replicas))
    out = args.emit or str(_out_dir(args) / scenario.name / "ladder_mc.csv")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text("\n".join(lines) + "\n")
    print(
        f"{scenario.name}: {est.replicas} replicas, censored {est.censored}; wrote {out}"
    )
    return 0


def cmd_tilt_rate(args) -> int:
    from .engine import ScenarioEngine
    from .tilting import green_decay_rate

    scenario = _apply_overrides(_load(args), args)
    engine = ScenarioEngine(scenario)
    v_dir = [int(c) for c in args.direction.split(",")]
    u_dir = [0] * scenario.dimension
    n_grid = list(range(max(2, args.nmax // 8), args.nmax + 1, max(2, args.nmax // 8)))
    need = args.nmax * max(max(abs(c) for c in v_dir), 1) + scenario.mu.max_step_norm()
    kernel = engine.kernel(max(scenario.window_bound, need))
    rep = green_decay_rate(kernel, u_dir, v_dir, n_grid)
    lines = ["n,log_quantity_over_n,predicted"] + [
        f"{n},{m!r},{rep.predicted!r}" for n, m in zip(rep.n_values, rep.measured)
    ]
    out = args.emit or str(_out_dir(args) / scenario.name / "tilt_rate.csv")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text("\n".join(lines) + "\n")
    print(
        f"{scenario.name}: measured rate {rep.final!r}, predicted {rep.predicted!r}; wrote {out}"
    )
    return 0


def cmd_verify(args) -> int:
    from .suite import run_suite

    scenario = _apply_overrides(_load(args), args)
    names = ["substochastic_PH", "renewal_identity", "regime", "theorem1", "theorem3", "never_exit"]
    report = run_suite(scenario, names, out_dir=args.out_dir, seed=args.seed)
    doc = report.to_dict()
    print(json.dumps(doc, sort_keys=True, indent=1))
    return report.exit_code


def cmd_suite(args) -> int:
    from .suite import run_suite

    scenario = _apply_overrides(_load(args), args)
    checks = args.checks.split(",") if args.checks else None
    report = run_suite(scenario, checks, out_dir=args.out_dir, seed=args.seed)
    for c in report.checks:
        tag = " (expected-fail)" if c.expected_fail else ""
        print(f"[{c.status:>12}] {c.name}{tag}")
    print(f"report: {Path(args.out_dir) / scenario.name / 'report.json'}")
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coneladder",
        description="Ladder heights, renewal functions and harmonic identities "
        "for lattice walks killed outside convex cones.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, start_default=None):
        p.add_argument("--scenario", required=True, help="path to a scenario JSON or a bundled name")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out-dir", default="out", help="directory for emitted artifacts")
        p.add_argument("--window", type=int, default=None, help="override the window bound")
        p.add_argument("--tol", type=float, default=None, help="override the identity tolerance")
        if start_default is not None:
            p.add_argument("--start", default=start_default, help="comma-separated start state")

    p = sub.add_parser("renewal", help="renewal function and exit times on the window")
    common(p)
    p.add_argument("--emit", default=None, help="write the CSV to this path")
    p.set_defaults(fn=cmd_renewal)

    p = sub.add_parser("ratio", help="survival-ratio sequence f_n against V")
    common(p, start_default="1")
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--emit", default=None)
    p.set_defaults(fn=cmd_ratio)

    p = sub.add_parser("ladder-mc", help="sample the first ladder height law")
    common(p, start_default="1")
    p.add_argument("--replicas", type=int, default=20000)
    p.add_argument("--horizon", type=int, default=100000)
    p.add_argument("--emit", default=None)
    p.set_defaults(fn=cmd_ladder_mc)

    p = sub.add_parser("tilt-rate", help="Green decay rate along a direction")
    common(p)
    p.add_argument("--direction", required=True, help="comma-separated lattice direction")
    p.add_argument("--nmax", type=int, default=40)
    p.add_argument("--emit", default=None)
    p.set_defaults(fn=cmd_tilt_rate)

    p = sub.add_parser("verify", help="identity checks, JSON report on stdout")
    common(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("suite", help="run registered checks and persist a report")
    common(p)
    p.add_argument("--checks", default=None, help="comma-separated subset of checks")
    p.set_defaults(fn=cmd_suite)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # surface typed errors with a clean message
        from .errors import ConeLadderError

        if isinstance(exc, ConeLadderError):
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
