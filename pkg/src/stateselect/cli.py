"""Command-line interface.

Subcommands:
  bound       reliability bound on the Monte Carlo repetition count
  qp          cost matrices, tightened rows and QP solution of a linear problem
  select      one-shot state selection from a particle CSV
  synthesize  value-iteration controller construction, saved as JSON+CSV
  simulate    closed-loop experiment from a JSON config

Heavy imports happen inside the handlers to keep startup cheap.
"""

import argparse
import json
import sys


def _matrix_lines(name, M):
    import numpy as np

    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows = ["  [" + ", ".join(f"{v: .6g}" for v in row) + "]" for row in M]
    return [f"{name} ="] + rows


def _cmd_bound(args) -> int:
    from .selection import sample_bound

    bound = sample_bound(args.eps, args.alpha, args.delta, args.L)
    print(bound)
    if args.check is not None:
        ok = args.check >= bound
        print(f"M={args.check} {'satisfies' if ok else 'violates'} the bound {bound}")
        return 0 if ok else 1
    return 0


def _load_linear(args):
    from .catalog import dcdc_problem
    from .config import linear_problem_from_dict
    from .errors import ConfigurationError

    if args.config is not None:
        with open(args.config) as fh:
            return linear_problem_from_dict(json.load(fh))
    if args.model == "dcdc":
        return dcdc_problem()
    raise ConfigurationError("qp needs --config FILE or --model dcdc")


def _cmd_qp(args) -> int:
    import numpy as np

    from .linear import cost_matrices, solve_qp, tighten_constraints

    p = _load_linear(args)
    quad = cost_matrices(p)
    poly = tighten_constraints(p, per_stage=args.per_stage)
    x_star = solve_qp(quad, poly, p.x0_mean)
    if args.json:
        doc = {
            "A1": quad.A1.tolist(),
            "A2": quad.A2.tolist(),
            "rows": [
                {"label": lab, "normal": poly.A[i].tolist(), "offset": float(poly.b[i])}
                for i, lab in enumerate(poly.labels)
            ],
            "x_star": None if x_star is None else x_star.tolist(),
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    for line in _matrix_lines("A1", quad.A1) + _matrix_lines("A2", quad.A2):
        print(line)
    print(f"tightened rows ({poly.A.shape[0]}):")
    for i, lab in enumerate(poly.labels):
        normal = ", ".join(f"{v: .6g}" for v in poly.A[i])
        print(f"  {lab}: [{normal}] . x <= {poly.b[i]:.6g}")
    if x_star is None:
        print("x* = infeasible")
    else:
        print("x* = [" + ", ".join(f"{v:.6g}" for v in np.atleast_1d(x_star)) + "]")
    return 0


def _cmd_select(args) -> int:
    from . import catalog, filtering
    from .errors import ConfigurationError
    from .rng import substream
    from .selection import SelectionConfig, result_to_dict, select_state

    bundle = catalog.get(args.model)
    with open(args.particles) as fh:
        ps = filtering.from_csv(fh.read())
    if args.controller == "kappa1":
        if "kappa1" not in bundle.controllers:
            raise ConfigurationError("kappa1 is only defined for example1")
        ctrl = bundle.controllers["kappa1"]
    elif args.controller == "policy":
        from .synthesis import load_policy

        if args.policy_path is None:
            raise ConfigurationError("--controller policy needs --policy-path")
        ctrl = load_policy(args.policy_path).as_controller()
    else:
        from .models import Controller

        ctrl = Controller.zero(bundle.model.dims.r_u)
    cfg = SelectionConfig(eps=args.eps, alpha=args.alpha, delta=args.delta,
                          horizon=args.horizon, samples=args.samples,
                          seed=args.seed)
    result = select_state(ps, bundle.model, ctrl, bundle.cost,
                          bundle.constraints, cfg,
                          rng=substream(args.seed, 0), workers=args.workers)
    doc = result_to_dict(result)
    if args.out is not None:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if result.chosen is None:
        print("chosen: none (feasible set empty)")
    else:
        print("chosen index:", result.chosen_index)
        print("chosen:", [float(v) for v in result.chosen])
        print("sampled cost:", result.chosen_cost)
    print("feasible candidates:", result.num_feasible, "of", len(result.reports))
    return 0


def _cmd_synthesize(args) -> int:
    import numpy as np

    from . import catalog
    from .errors import ConfigurationError
    from .rng import substream
    from .synthesis import (build_tables, default_region, extract_policy,
                            input_interval_grid, make_value_grid, save_policy,
                            value_iteration)

    bundle = catalog.get(args.model)
    if bundle.avoid_boxes is None:
        raise ConfigurationError(f"model {args.model!r} has no synthesis setup")
    if args.region is not None:
        region = np.asarray(args.region, dtype=float).reshape(2, 2)
    else:
        region = default_region(bundle.init_mean, bundle.init_cov,
                                bundle.avoid_boxes,
                                bundle.model.process_noise.covariance)
    if bundle.input_bounds is None:
        raise ConfigurationError("synthesis needs interval input bounds")
    lo, hi = bundle.input_bounds
    inputs = input_interval_grid(lo, hi, args.input_points)
    grid = make_value_grid(region, args.grid_points, inputs, args.gamma,
                           bundle.model, substream(args.seed, 0),
                           num_draws=args.draws)
    tables = build_tables(grid, bundle.model, bundle.cost, bundle.constraints)
    grid = value_iteration(grid, bundle.model, bundle.cost, bundle.constraints,
                           tol=args.tol, tables=tables)
    policy = extract_policy(grid, bundle.model, bundle.cost, bundle.constraints,
                            resolution=(args.resolution, args.resolution),
                            tables=tables)
    save_policy(policy, args.out)
    print(f"wrote {args.out} ({args.resolution}x{args.resolution} lattice, "
          f"{len(grid.sweep_deltas)} sweeps, last delta {grid.sweep_deltas[-1]:.2e})")
    return 0


def _cmd_simulate(args) -> int:
    import dataclasses

    from . import config as config_mod
    from .harness import emit_run, run_experiment

    cfg = config_mod.load(args.config)
    updates = {}
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.no_svg:
        updates["emit_svg"] = False
    if args.fallback_mean:
        updates["infeasible_policy"] = "fallback-mean"
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    run = run_experiment(cfg)
    paths = emit_run(run)
    print(f"completed {len(run.records)} steps", end="")
    if run.stop_step is not None:
        print(f" (stopped at k={run.stop_step}: {run.stop_reason})", end="")
    print(f"; wrote {paths['steps']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stateselect",
        description="Sampling-based state selection for output-feedback control",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bound", help="Monte Carlo repetition bound")
    b.add_argument("--eps", type=float, required=True)
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--L", type=int, required=True)
    b.add_argument("--check", type=int, default=None,
                   help="also verify this repetition count against the bound")
    b.set_defaults(func=_cmd_bound)

    q = sub.add_parser("qp", help="cost matrices, tightened rows, QP solution")
    q.add_argument("--config", default=None, help="linear problem JSON")
    q.add_argument("--model", default=None, choices=["dcdc"],
                   help="built-in linear problem")
    q.add_argument("--per-stage", action="store_true",
                   help="propagate per-stage covariances instead of the "
                        "one-step-ahead relaxation")
    q.add_argument("--json", action="store_true")
    q.set_defaults(func=_cmd_qp)

    s = sub.add_parser("select", help="one-shot selection from a particle CSV")
    s.add_argument("--particles", required=True)
    s.add_argument("--model", default="example1")
    s.add_argument("--controller", default="kappa1",
                   choices=["kappa1", "policy", "zero"])
    s.add_argument("--policy-path", default=None)
    s.add_argument("--eps", type=float, default=0.3)
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--delta", type=float, default=0.01)
    s.add_argument("--horizon", type=int, default=6)
    s.add_argument("--samples", type=int, default=0, help="0 = from the bound")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default=None, help="write the full report as JSON")
    s.set_defaults(func=_cmd_select)

    y = sub.add_parser("synthesize", help="value-iteration controller")
    y.add_argument("--model", default="example1")
    y.add_argument("--out", required=True, help="policy JSON path")
    y.add_argument("--grid-points", type=int, default=4000)
    y.add_argument("--input-points", type=int, default=50)
    y.add_argument("--gamma", type=float, default=0.9)
    y.add_argument("--draws", type=int, default=64)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--tol", type=float, default=1e-4)
    y.add_argument("--resolution", type=int, default=101)
    y.add_argument("--region", type=float, nargs=4, default=None,
                   metavar=("XLO", "XHI", "YLO", "YHI"))
    y.set_defaults(func=_cmd_synthesize)

    m = sub.add_parser("simulate", help="closed-loop experiment from JSON config")
    m.add_argument("--config", required=True)
    m.add_argument("--out", default=None, help="override output directory")
    m.add_argument("--workers", type=int, default=None)
    m.add_argument("--no-svg", action="store_true")
    m.add_argument("--fallback-mean", action="store_true",
                   help="substitute the estimator mean when selection is "
                        "infeasible instead of stopping")
    m.set_defaults(func=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
