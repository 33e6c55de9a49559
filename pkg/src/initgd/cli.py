"""Command-line experiment runner.

Every subcommand builds a problem (synthetic, explicit matrix, or a
sparse data file), runs one of the solvers, and persists CSV artifacts to
the output directory. All randomness flows from ``--seed`` through fixed
stream ids, so a repeated invocation writes byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import deep, experiments, flat, hidden, io, stiefel
from .exceptions import InitgdError
from .iterate import GdConfig, Termination
from .linalg import ProblemInstance, random_problem
from .rng import RngSpec

#: Fixed stream ids: 0 problem generation, 1 initialization, 2 projection
#: basis, 3 trial fan-out.
STREAM_PROBLEM, STREAM_INIT, STREAM_BASIS, STREAM_TRIALS = 0, 1, 2, 3


def _parse_synthetic(spec: str) -> dict:
    out = {"cond": 1.0}
    for item in spec.split(","):
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in ("n", "d", "cond"):
            raise ValueError(f"unknown synthetic key {key!r} (use n, d, cond)")
        out[key] = float(value)
    if "n" not in out or "d" not in out:
        raise ValueError("synthetic spec needs at least n=..,d=..")
    out["n"], out["d"] = int(out["n"]), int(out["d"])
    return out


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def _parse_matrix(text: str) -> np.ndarray:
    return np.array([[float(v) for v in row.split(",")] for row in text.split(";")])


def build_problem(args, base: RngSpec) -> ProblemInstance:
    sources = sum(x is not None for x in (args.synthetic, args.data, args.matrix))
    if sources != 1:
        raise ValueError("specify exactly one of --synthetic, --data, --matrix")
    if args.synthetic is not None:
        spec = _parse_synthetic(args.synthetic)
        return random_problem(spec["n"], spec["d"], spec["cond"],
                              base.substream(STREAM_PROBLEM))
    if args.data is not None:
        return io.load_svmlight(args.data, scale=args.scale)
    if args.rhs is None:
        raise ValueError("--matrix requires --rhs")
    return ProblemInstance(_parse_matrix(args.matrix), _parse_vector(args.rhs))


def build_config(args) -> GdConfig:
    return GdConfig(alpha=args.alpha, max_iters=args.max_iters,
                    tol_residual=args.tol, snapshot_every=args.snapshot_every)


def _comments(args) -> list[str]:
    skip = {"func", "out"}
    parts = [f"{k}={v}" for k, v in sorted(vars(args).items())
             if k not in skip and v is not None]
    return ["initgd " + args.command, "config: " + " ".join(parts)]


def _summary_row(method, p, trace, alpha, h=""):
    last = trace.records[-1]
    return {
        "method": method, "n": p.n, "d": p.d, "h": h, "alpha": alpha,
        "iterations": last.k, "terminated_by": trace.terminated_by.value,
        "residual": last.residual, "dist_theta_star": last.dist_theta_star,
    }


def _finish(args, p, runs) -> int:
    """Write per-method traces plus summary.csv; nonzero exit on divergence."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    failed = False
    for method, trace, alpha, h in runs:
        io.write_trace_csv(out / f"trace_{method}.csv", trace, _comments(args))
        rows.append(_summary_row(method, p, trace, alpha, h))
        failed |= trace.terminated_by is Termination.DIVERGED
    io.write_summary_csv(out / "summary.csv", rows, _comments(args))
    if failed:
        print("error: at least one run diverged", file=sys.stderr)
        return 1
    return 0


def cmd_solve(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    if args.init == "zero":
        y0 = np.zeros(p.d)
    else:
        y0 = base.substream(STREAM_INIT).generator().standard_normal(p.d)
    _, trace = flat.run_gd(y0, p, cfg)
    return _finish(args, p, [("gd", trace, cfg.resolve_alpha(p), "")])


def cmd_control(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    target = _parse_vector(args.target)
    y0 = flat.controlled_init(p, target, cfg)
    y, trace = flat.run_gd(y0, p, cfg)
    trace.method = "control"
    final_err = float(np.linalg.norm(y - target))
    print(f"control: final iterate within {final_err:.3e} of target")
    return _finish(args, p, [("control", trace, cfg.resolve_alpha(p), "")])


def cmd_hidden(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    init_rng = base.substream(STREAM_INIT)
    if args.init == "biopt":
        s0 = hidden.biopt_init(p, init_rng)
    else:
        gen = init_rng.generator()
        s0 = hidden.HiddenPair(W=gen.standard_normal((p.d, p.d)) / np.sqrt(p.d),
                               x=hidden.draw_unit(gen, p.d))
    _, trace = hidden.run_hidden(s0, p, cfg)
    return _finish(args, p, [("hidden", trace, cfg.resolve_alpha(p), 1)])


def cmd_compact1(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    _, trace = hidden.run_compact1(p, cfg, base.substream(STREAM_INIT))
    zz = experiments.detect_zigzag(trace)
    print(f"compact1: zigzag onset={zz.onset} oscillating={zz.oscillating}")
    return _finish(args, p, [("compact1", trace, cfg.resolve_alpha(p), 1)])


def cmd_deep(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    init_rng = base.substream(STREAM_INIT)
    if args.init == "coupled":
        if args.depth != 2:
            raise ValueError("the coupled initializer requires --depth 2")
        s0, _, _ = deep.coupled_init(p, init_rng)
    else:
        s0 = deep.baseline_init(p.d, args.depth, args.init, init_rng)
    _, trace = deep.run_deep(s0, p, cfg)
    return _finish(args, p, [("deep", trace, cfg.resolve_alpha(p), args.depth)])


def cmd_compact2(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    _, trace = deep.run_compact2(p, cfg, base.substream(STREAM_INIT))
    zz = experiments.detect_zigzag(trace)
    print(f"compact2: zigzag onset={zz.onset} oscillating={zz.oscillating}")
    return _finish(args, p, [("compact2", trace, cfg.resolve_alpha(p), 2)])


def cmd_stability(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    run = experiments.run_stability_experiment(
        p, args.depth, cfg, base.substream(STREAM_INIT))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_trace_csv(out / "trace_stability.csv", run.trace, _comments(args))
    if run.trace.terminated_by is Termination.DIVERGED:
        print("error: stability run diverged", file=sys.stderr)
        return 1
    last = run.trace.records[-1]
    io.write_stability_csv(out / "stability.csv", [{
        "h": args.depth, "kernel_drift_max": run.kernel_drift_max,
        "norm_product_bound": run.bound, "dist_theta_star": run.dist_theta_star,
        "residual": last.residual,
    }], _comments(args))
    print(f"stability: kernel drift {run.kernel_drift_max:.3e}, "
          f"bound {run.bound:.6g} vs actual {run.dist_theta_star:.6g}")
    return 0


def cmd_riemann(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    s, trace = stiefel.run_riemannian(p, args.depth, cfg, base.substream(STREAM_INIT))
    defect = max(stiefel.orthogonality_defect(W) for W in s.weights)
    print(f"riemann: final orthogonality defect {defect:.3e}")
    return _finish(args, p, [("riemann", trace,
                              cfg.alpha if cfg.alpha is not None
                              else stiefel.default_riemannian_alpha(p, args.depth),
                              args.depth)])


def cmd_trials(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    cfg = build_config(args)
    h_list = [int(v) for v in args.h.split(",")]
    stats = stiefel.run_trials(p, h_list, args.trials, cfg,
                               base.substream(STREAM_TRIALS))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for h in h_list:
        st = stats[h]
        io.write_histogram_csv(out / f"histogram_{h}.csv", st.histogram[0],
                               st.histogram[1], _comments(args))
        rows.append({"h": h, "p25": st.percentiles[25], "p50": st.percentiles[50],
                     "p75": st.percentiles[75], "variance": st.variance,
                     "frac_within_1e-3": st.frac_within(1e-3),
                     "n_diverged": st.n_diverged})
        print(f"trials h={h}: median={st.percentiles[50]:.6g} "
              f"frac<=1e-3={st.frac_within(1e-3):.4f}")
    io.write_percentiles_csv(out / "percentiles.csv", rows, _comments(args))
    return 0


def cmd_project(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    snap = args.snapshot_every if args.snapshot_every else max(1, args.max_iters // 200)
    cfg = GdConfig(alpha=args.alpha, max_iters=args.max_iters,
                   tol_residual=args.tol, snapshot_every=snap)
    init_rng = base.substream(STREAM_INIT)
    traces = {}
    for method in args.methods.split(","):
        method = method.strip()
        if method == "gd":
            _, traces[method] = flat.run_gd(np.zeros(p.d), p, cfg)
        elif method == "compact1":
            _, traces[method] = hidden.run_compact1(p, cfg, init_rng)
        elif method == "compact2":
            _, traces[method] = deep.run_compact2(p, cfg, init_rng)
        else:
            raise ValueError(f"unknown projection method {method!r}")
    proj = experiments.project_paths(traces, p.d, base.substream(STREAM_BASIS))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for method, pts in proj.points.items():
        io.write_path_csv(out / f"path_{method}.csv", proj.iterations[method],
                          pts, _comments(args))
    if any(t.terminated_by is Termination.DIVERGED for t in traces.values()):
        print("error: at least one projected run diverged", file=sys.stderr)
        return 1
    return 0


def cmd_lrgrid(args) -> int:
    base = RngSpec(args.seed)
    p = build_problem(args, base)
    init_rng = base.substream(STREAM_INIT)
    target = args.target * max(float(np.linalg.norm(p.b)), 1.0)

    def make_trace(alpha: float):
        cfg = GdConfig(alpha=alpha, max_iters=args.max_iters, tol_residual=args.tol)
        if args.method == "gd":
            return flat.run_gd(np.zeros(p.d), p, cfg)[1]
        if args.method == "compact1":
            return hidden.run_compact1(p, cfg, init_rng)[1]
        return deep.run_compact2(p, cfg, init_rng)[1]

    result = experiments.lr_grid_search(make_trace, target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_lrgrid_csv(out / "lrgrid.csv",
                        [e.__dict__ for e in result.entries],
                        result.chosen_alpha, _comments(args))
    print(f"lrgrid[{args.method}]: chosen alpha = {result.chosen_alpha}")
    return 0


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0, help="master seed (u64)")
    sp.add_argument("--alpha", type=float, default=None,
                    help="step size; default 1/||A||^2 (depth-scaled for riemann)")
    sp.add_argument("--max-iters", type=int, default=10_000)
    sp.add_argument("--tol", type=float, default=1e-10,
                    help="relative residual stopping tolerance")
    sp.add_argument("--out", default=".", help="output directory for CSV artifacts")
    sp.add_argument("--snapshot-every", type=int, default=0)
    sp.add_argument("--synthetic", default=None, metavar="n=..,d=..,cond=..")
    sp.add_argument("--data", default=None, help="svmlight/libsvm file")
    sp.add_argument("--scale", type=float, default=None,
                    help="divide loaded A and b by this constant")
    sp.add_argument("--matrix", default=None,
                    help="explicit matrix, rows separated by ';' (e.g. '1,1')")
    sp.add_argument("--rhs", default=None, help="explicit target vector (e.g. '0')")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="initgd",
        description="Initialization-controlled gradient descent experiments "
                    "on underdetermined linear systems.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="plain gradient descent")
    sp.add_argument("--init", choices=["zero", "random"], default="zero")
    sp.set_defaults(func=cmd_solve)
    _add_common(sp)

    sp = sub.add_parser("control", help="steer descent to a chosen interpolant")
    sp.add_argument("--target", required=True, help="comma-separated target vector")
    sp.set_defaults(func=cmd_control)
    _add_common(sp)

    sp = sub.add_parser("hidden", help="one-hidden-layer network, full matrices")
    sp.add_argument("--init", choices=["biopt", "gaussian"], default="biopt")
    sp.set_defaults(func=cmd_hidden)
    _add_common(sp)

    sp = sub.add_parser("compact1", help="collapsed one-hidden-layer iteration")
    sp.set_defaults(func=cmd_compact1)
    _add_common(sp)

    sp = sub.add_parser("deep", help="depth-h linear network")
    sp.add_argument("--depth", type=int, default=2)
    sp.add_argument("--init", choices=["coupled", "xavier", "he", "identity"],
                    default="coupled")
    sp.set_defaults(func=cmd_deep)
    _add_common(sp)

    sp = sub.add_parser("compact2", help="collapsed two-hidden-layer iteration")
    sp.set_defaults(func=cmd_compact2)
    _add_common(sp)

    sp = sub.add_parser("stability", help="kernel-perturbed first layer experiment")
    sp.add_argument("--depth", type=int, default=2)
    sp.set_defaults(func=cmd_stability)
    _add_common(sp)

    sp = sub.add_parser("riemann", help="orthogonal network Riemannian descent")
    sp.add_argument("--depth", type=int, default=1)
    sp.set_defaults(func=cmd_riemann)
    _add_common(sp)

    sp = sub.add_parser("trials", help="batched Riemannian trials per depth")
    sp.add_argument("--h", default="1,3,6", help="comma-separated depths")
    sp.add_argument("--trials", type=int, default=2000)
    sp.set_defaults(func=cmd_trials)
    _add_common(sp)

    sp = sub.add_parser("project", help="project iteration paths to 2d")
    sp.add_argument("--methods", default="gd,compact1,compact2")
    sp.set_defaults(func=cmd_project)
    _add_common(sp)

    sp = sub.add_parser("lrgrid", help="largest power-of-ten step-size search")
    sp.add_argument("--method", choices=["gd", "compact1", "compact2"], default="gd")
    sp.add_argument("--target", type=float, default=1e-3,
                    help="relative residual the chosen rate must reach")
    sp.set_defaults(func=cmd_lrgrid)
    _add_common(sp)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InitgdError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
