"""Command-line entry point ``bundlediff``.

Exit codes: 0 success (or all verdicts PASS), 1 a verdict failed or was
inconclusive or a numerical failure occurred, 2 usage or configuration
error.  The number of worker threads for Monte Carlo chunks is read from
``BUNDLEDIFF_THREADS``.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import geometry, greens, harness, models, pdecheck, sde
from .errors import BundleDiffError, ConfigError, UnknownModel


def _model_args(p):
    p.add_argument("--model", default="hopf", help="flat, hopf, warped or a JSON model file")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="model parameter (repeatable), e.g. radius=2")


def _build_model(args):
    params = {}
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"bad --param {item!r}, expected KEY=VALUE")
        k, v = item.split("=", 1)
        try:
            params[k] = float(v)
        except ValueError as exc:
            raise ConfigError(f"parameter {k} must be numeric") from exc
    if args.model.endswith(".json"):
        return models.make_model("file", path=args.model)
    try:
        return models.make_model(args.model, **params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _point(text, n):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad point {text!r}") from exc
    if len(vals) != n:
        raise ConfigError(f"point needs {n} coordinates")
    return np.array(vals)


def _emit(obj, path=None):
    text = harness.dumps(obj)
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_geometry_report(args):
    model = _build_model(args)
    Q = _point(args.point, model.n_total) if args.point else np.asarray(
        model.random_sigma_points(1, np.random.default_rng(args.seed))[1][0])
    rep = geometry.geometry_report(model, Q, args.chart, args.derivatives)
    out = {"model": model.name, "chart": args.chart, "point": Q, "scalars": rep.scalars,
           "gamma": rep.gamma, "Phi": rep.Phi, "curvF": rep.curvF, "jI": rep.jI, "jII": rep.jII,
           "projectors": geometry.projector_residuals(rep)}
    _emit(out, args.out)
    return 0


def _sim_config(args, **kw):
    return sde.SimConfig(mu2=args.mu2, kappa=args.kappa, t_b=args.t, n_steps=args.steps,
                         n_paths=args.paths, seed=args.seed, **kw)


def cmd_simulate(args):
    model = _build_model(args)
    ir = model.group.irrep(args.irrep)
    cfg = _sim_config(args)
    sec = harness.default_test_section(model, args.irrep)
    samples, ens = greens.reduced_samples(model, ir, args.kernel, sec, cfg)
    mean = samples.mean(0)
    se = samples.std(0, ddof=1) / np.sqrt(len(samples))
    out = {"model": model.name, "kernel": args.kernel, "irrep": args.irrep, "estimate": mean,
           "stderr": se, "ensemble": ens.summary()}
    if args.dump_paths:
        np.savez(args.dump_paths, chart=ens.chart, Q=ens.Q, M=ens.acc["M"], logW=ens.acc["logW"])
    _emit(out, args.out)
    return 0


def cmd_evolve(args):
    model = _build_model(args)
    ir = model.group.irrep(args.irrep)
    grid = pdecheck.make_grid(model, args.h)
    f = harness._embedding_function(model, args.irrep)
    psi = pdecheck.section_on_grid(grid, ir, f)
    out, diag = pdecheck.evolve(args.operator, model, ir, psi, args.t, args.dt, args.scheme,
                                mu2=args.mu2, kappa=args.kappa)
    res = {"model": model.name, "operator": args.operator, "diagnostics": diag,
           "n_nodes": grid.n_active}
    if args.point:
        Q = _point(args.point, model.n_total)
        res["value_at_point"] = pdecheck.interpolate(out, args.chart, Q[None])[0]
    _emit(res, args.out)
    return 0


def _run_config(args):
    if args.config:
        cfg = harness.RunConfig.from_json(args.config)
    else:
        cfg = harness.RunConfig(model=args.model)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.paths is not None:
        over["n_paths"] = args.paths
    if args.steps is not None:
        over["n_steps"] = args.steps
    if args.config is None and args.model:
        over["model"] = args.model
    return harness.RunConfig.from_dict({**cfg.to_dict(), **over}) if over else cfg


def cmd_verify(args):
    cfg = _run_config(args)
    verdicts = harness.run_suite(args.suite, cfg)
    for v in verdicts:
        print(v.line(), file=sys.stderr)
    rep = harness.report(verdicts, cfg)
    _emit(rep, args.out)
    return 0 if rep["overall"] == harness.PASS else 1


def cmd_sweep(args):
    """Reduced-kernel estimate over a list of step counts or charges."""
    model = _build_model(args)
    values = [int(x) for x in args.values.split(",")]
    rows = []
    for v in values:
        lam = v if args.over == "irrep" else args.irrep
        steps = v if args.over == "steps" else args.steps
        ir = model.group.irrep(lam)
        cfg = sde.SimConfig(mu2=args.mu2, kappa=args.kappa, t_b=args.t, n_steps=steps,
                            n_paths=args.paths, seed=args.seed)
        est = greens.semigroup_apply_mc(model, ir, args.kernel,
                                        harness.default_test_section(model, lam), cfg)
        rows.append({args.over: v, "estimate": est.value, "stderr": est.stderr})
    _emit({"model": model.name, "kernel": args.kernel, "rows": rows}, args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bundlediff", description="Reduced diffusions on principal bundles")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geometry-report", help="geometry tensors at one gauge-surface point")
    _model_args(g)
    g.add_argument("--point", help="comma-separated chart point (default: random)")
    g.add_argument("--chart", type=int, default=0)
    g.add_argument("--derivatives", choices=("analytic", "fd"), default="analytic")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_geometry_report)

    def mc_args(s):
        _model_args(s)
        s.add_argument("--kernel", choices=("F1", "F2", "F3"), default="F2")
        s.add_argument("--irrep", type=int, default=1, help="U(1) charge")
        s.add_argument("--paths", type=int, default=10000)
        s.add_argument("--steps", type=int, default=100)
        s.add_argument("--t", type=float, default=0.5)
        s.add_argument("--mu2", type=float, default=1.0)
        s.add_argument("--kappa", type=float, default=1.0)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out")

    s = sub.add_parser("simulate", help="Monte Carlo estimate of a reduced kernel on a test section")
    mc_args(s)
    s.add_argument("--dump-paths", help="write final ensemble state to this .npz file")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evolve", help="grid evolution of a test section")
    _model_args(e)
    e.add_argument("--operator", choices=pdecheck.LABELS[:-1], default="operator_3_plus_casimir")
    e.add_argument("--irrep", type=int, default=1)
    e.add_argument("--h", type=float, default=0.04)
    e.add_argument("--t", type=float, default=0.5)
    e.add_argument("--dt", type=float, default=0.01)
    e.add_argument("--scheme", choices=("cn", "explicit"), default="cn")
    e.add_argument("--mu2", type=float, default=1.0)
    e.add_argument("--kappa", type=float, default=1.0)
    e.add_argument("--point")
    e.add_argument("--chart", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evolve)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=harness.SUITES)
    v.add_argument("--model", default="hopf")
    v.add_argument("--config", help="JSON run configuration")
    v.add_argument("--seed", type=int)
    v.add_argument("--paths", type=int)
    v.add_argument("--steps", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", help="reduced-kernel estimates over step counts or charges")
    mc_args(w)
    w.add_argument("--over", choices=("steps", "irrep"), default="steps")
    w.add_argument("--values", default="25,50,100")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UnknownModel, json.JSONDecodeError) as exc:
        print(f"bundlediff: error: {exc}", file=sys.stderr)
        return 2
    except BundleDiffError as exc:
        print(f"bundlediff: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
