"""Command-line entry point: ``wsee {solve,sweep,convergence,oracle}``.

Exit codes: 0 success, 2 configuration error, 3 infeasible instance,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace

import jsonschema
import numpy as np

from .. import scenario as sc, sco
from ..solver import InfeasibleError
from . import experiment as ex
from .oracle import OracleTooLarge, brute_force_oracle

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

DBM_HELP = "transmit power caps in dBm; converted as p[W] = 10**((dBm - 30) / 10)"


class ConfigError(Exception):
    pass


def _json_path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def load_instance(path):
    """Parse and validate an instance document; errors carry line or field context."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    try:
        return sc.instance_from_json(doc)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{path}: field {_json_path(exc)}: {exc.message}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_scenario(path) -> sc.ScenarioConfig:
    """Scenario overrides from a JSON object whose keys are ScenarioConfig fields."""
    if path is None:
        return sc.ScenarioConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    known = {f.name for f in fields(sc.ScenarioConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown scenario fields {unknown}")
    for key in ("weights", "extra_mu"):
        if doc.get(key) is not None:
            doc[key] = tuple(doc[key])
    try:
        return replace(sc.ScenarioConfig(), **doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _write_json(path, obj):
    text = json.dumps(obj, indent=2, allow_nan=True)
    if path == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _error(kind, message, **extra):
    json.dump({"error": kind, "message": message, **extra}, sys.stderr)
    sys.stderr.write("\n")


# -- subcommands ---------------------------------------------------------------------


def cmd_solve(args) -> int:
    inst = load_instance(args.config)
    opts = sco.ScoOptions(eps=args.eps, max_iter=args.max_iter, scale=args.scale)
    driver = sco.wsr_maximize if args.scheme == "wsr" else sco.wsee_maximize
    try:
        res = driver(inst, opts)
    except sco.InfeasibleInitialPoint as exc:
        users = sorted({v.user for v in exc.violations})
        _error("InfeasibleInitialPoint", str(exc), users=users,
               violations=[v._asdict() for v in exc.violations])
        return EXIT_INFEASIBLE
    except sco.SubproblemFailure as exc:
        _error("SubproblemFailure", str(exc), iteration=exc.iteration, status=exc.report.status)
        return EXIT_NUMERICAL
    _write_json(args.out, {
        "scheme": args.scheme,
        "p": np.asarray(res.p).tolist(),
        "wsee": res.wsee,
        "wsr": res.wsr,
        "ee": np.asarray(res.ee).tolist(),
        "iterations": res.iterations,
        "converged": res.converged,
        "history": list(res.history),
        "kkt": res.kkt._asdict() if res.kkt is not None else None,
        "message": res.message,
    })
    return EXIT_OK


def _spec(args, schemes, pmax, lambdas) -> ex.ExperimentSpec:
    try:
        return ex.ExperimentSpec(
            scenario=load_scenario(args.scenario), pmax_dbm=pmax, r=ex.parse_list(args.r),
            schemes=schemes, trials=args.trials, lambdas=lambdas, eps=args.eps, seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse(fn, text, what):
    try:
        return fn(text)
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def _workers(args):
    if args.workers is not None:
        return args.workers
    try:
        return ex.worker_count()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_sweep(args) -> int:
    schemes = tuple(s.strip().upper() for s in args.schemes.split(",") if s.strip())
    spec = _spec(args, schemes, _parse(ex.parse_range, args.pmax_dbm, "--pmax-dbm"),
                 _parse(ex.parse_list, args.lam, "--lambda"))
    rows = ex.run_experiment(spec, _workers(args))
    ex.write_csv(rows, args.out)
    summary = args.summary or _sibling(args.out, "_summary")
    ex.write_summary(ex.summarize(rows), summary)
    if args.powers:
        with open(args.powers, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps({
                    "trial": r.trial, "seed": r.seed, "scheme": r.scheme, "pmax_dbm": r.pmax_dbm,
                    "r": r.r, "lambda": r.lam, "p": None if r.p is None else np.asarray(r.p).tolist(),
                }) + "\n")
    failed = sum(not r.converged for r in rows)
    logging.getLogger(__name__).info("%d rows, %d not converged", len(rows), failed)
    return EXIT_OK


def cmd_convergence(args) -> int:
    spec = _spec(args, ("WSEE",), (_parse(float, args.pmax_dbm, "--pmax-dbm"),),
                 _parse(ex.parse_list, args.lam, "--lambda"))
    rows = ex.run_convergence(spec.scenario, spec.pmax_dbm[0], spec.lambdas, spec.trials, spec.seed,
                              spec.r, spec.eps, _workers(args))
    ex.write_convergence(rows, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = load_instance(args.config)
    try:
        res = brute_force_oracle(inst, args.grid, args.refine)
    except OracleTooLarge as exc:
        raise ConfigError(str(exc)) from exc
    if res.p_wsee is None:
        _error("Infeasible", "no grid point satisfies the rate requirements")
        return EXIT_INFEASIBLE
    _write_json(args.out, {
        "p_wsee": res.p_wsee.tolist(), "wsee": res.wsee, "resolution_wsee": res.resolution_wsee,
        "p_wsr": res.p_wsr.tolist(), "wsr": res.wsr, "resolution_wsr": res.resolution_wsr,
        "n_feasible": res.n_feasible,
    })
    return EXIT_OK


def _sibling(path, suffix):
    if path.endswith(".csv"):
        return path[:-4] + suffix + ".csv"
    return path + suffix


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wsee", description="Weighted-sum energy-efficiency power control.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one JSON instance")
    s.add_argument("--config", required=True, help="instance JSON")
    s.add_argument("--out", default="-", help="result JSON path ('-' for stdout)")
    s.add_argument("--scheme", choices=("wsee", "wsr"), default="wsee")
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--scale", type=float, default=1.0, help="initial point scale * p_max")
    s.set_defaults(func=cmd_solve)

    def common(q, trials=200):
        q.add_argument("--trials", type=int, default=trials)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--r", default="0", help="comma list of QoS fractions")
        q.add_argument("--eps", type=float, default=1e-4)
        q.add_argument("--scenario", help="JSON object of scenario overrides")
        q.add_argument("--workers", type=int, help=f"process count (default: ${ex.WORKERS_ENV} or 1)")
        q.add_argument("--out", required=True)

    w = sub.add_parser("sweep", help="Monte Carlo sweep over P_max, r, lambda and schemes")
    w.add_argument("--pmax-dbm", default="0:5:40", help=DBM_HELP + "; A:STEP:B or comma list")
    w.add_argument("--schemes", default="WSEE,WSR", help="subset of " + ",".join(ex.SCHEMES))
    w.add_argument("--lambda", dest="lam", default="1", help="comma list of initial scales")
    w.add_argument("--summary", help="summary CSV path (default: <out>_summary.csv)")
    w.add_argument("--powers", help="optional JSON-lines file with the final power vectors")
    common(w)
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("convergence", help="per-iteration objective traces")
    c.add_argument("--pmax-dbm", default="20", help=DBM_HELP)
    c.add_argument("--lambda", dest="lam", default="0.01,0.1,1")
    common(c, trials=20)
    c.set_defaults(func=cmd_convergence)

    o = sub.add_parser("oracle", help="brute-force optimum of a small instance")
    o.add_argument("--config", required=True)
    o.add_argument("--grid", type=int, default=400)
    o.add_argument("--refine", type=int, default=3)
    o.add_argument("--out", default="-")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        _error("ConfigError", str(exc))
        return EXIT_CONFIG
    except InfeasibleError as exc:
        _error("Infeasible", str(exc))
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
