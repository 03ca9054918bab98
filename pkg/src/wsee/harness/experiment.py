"""Monte Carlo experiment engine: paired trials over (P_max, r, lambda, scheme)."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .. import model, scenario as sc, sco
from ..solver import InfeasibleError

SCHEMES = ("WSEE", "WSR", "WSEE_GENERAL", "WSEE_MULTI_RB")

CSV_HEADER = (
    "trial", "seed", "scheme", "pmax_dbm", "r", "lambda", "wsee_bit_per_joule",
    "wsr_bit_per_s", "iterations", "converged", "kkt_residual", "wall_ms",
)
SUMMARY_HEADER = (
    "scheme", "pmax_dbm", "r", "lambda", "n", "n_converged",
    "wsee_mean", "wsee_median", "wsee_std", "wsr_mean", "wsr_median", "wsr_std",
    "iterations_mean", "iterations_median",
)
CONVERGENCE_HEADER = ("trial", "seed", "scheme", "pmax_dbm", "r", "lambda", "iteration", "objective")

WORKERS_ENV = "WSEE_WORKERS"


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: sc.ScenarioConfig = field(default_factory=sc.ScenarioConfig)
    pmax_dbm: tuple = (20.0,)
    r: tuple = (0.0,)
    schemes: tuple = ("WSEE", "WSR")
    trials: int = 200
    lambdas: tuple = (1.0,)
    eps: float = 1e-4
    seed: int = 0
    max_iter: int = 100

    def __post_init__(self):
        for name in ("pmax_dbm", "r", "schemes", "lambdas"):
            val = tuple(getattr(self, name))
            if not val:
                raise ValueError(f"{name} grid must be non-empty")
            object.__setattr__(self, name, val)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ValueError(f"unknown schemes {bad}; choose from {SCHEMES}")
        if any(not 0 < lam <= 1 for lam in self.lambdas):
            raise ValueError("lambda values must lie in (0, 1]")
        if any(not 0 <= r < 1 for r in self.r):
            raise ValueError("r values must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")


@dataclass
class TrialRecord:
    trial: int
    seed: int
    scheme: str
    pmax_dbm: float
    r: float
    lam: float
    wsee: float
    wsr: float
    iterations: int
    converged: bool
    kkt_residual: float
    wall_ms: float
    p: np.ndarray | None = None
    history: list | None = None
    error: str = ""

    def key(self):
        return (self.trial, SCHEMES.index(self.scheme), self.pmax_dbm, self.r, self.lam)

    def row(self) -> list[str]:
        return [
            str(self.trial), str(self.seed), self.scheme, _fmt(self.pmax_dbm), _fmt(self.r),
            _fmt(self.lam), _fmt(self.wsee), _fmt(self.wsr), str(self.iterations),
            "true" if self.converged else "false", _fmt(self.kkt_residual), _fmt(self.wall_ms),
        ]


def _fmt(x: float) -> str:
    return "%.17g" % x


def parse_range(text: str) -> tuple[float, ...]:
    """``A:STEP:B`` (inclusive) or a comma list or a single number."""
    text = text.strip()
    if ":" in text:
        a, step, b = (float(t) for t in text.split(":"))
        if step <= 0 or b < a:
            raise ValueError(f"bad range {text!r}: need STEP > 0 and B >= A")
        n = int(math.floor((b - a) / step + 1e-9)) + 1
        return tuple(float(a + k * step) for k in range(n))
    return parse_list(text)


def parse_list(text: str) -> tuple[float, ...]:
    items = [t for t in text.replace(" ", "").split(",") if t]
    if not items:
        raise ValueError("empty list")
    return tuple(float(t) for t in items)


# -- single trial -------------------------------------------------------------------


_ERRORS = (sco.InfeasibleInitialPoint, sco.SubproblemFailure, sco.DegenerateRate, InfeasibleError)


def _solve(scheme, cfg, inst, mrb, opts):
    if scheme == "WSEE":
        return sco.wsee_maximize(inst, opts)
    if scheme == "WSR":
        return sco.wsr_maximize(inst, opts)
    if scheme == "WSEE_GENERAL":
        return sco.wsee_maximize_general(inst, sc.general_users(cfg), opts)
    return sco.wsee_maximize_multi_rb(mrb, opts)


def run_trial(spec: ExperimentSpec, trial: int, keep_history: bool = False) -> list[TrialRecord]:
    """All rows of one trial; the channel draw is shared by every grid point."""
    cfg = spec.scenario
    seed = sc.trial_seed(spec.seed, trial)
    pm_check, r_check = min(spec.pmax_dbm), max(spec.r)
    base = mbase = None
    if any(s != "WSEE_MULTI_RB" for s in spec.schemes):
        base = sc.generate_trial(cfg, seed, check_p_max_dbm=pm_check, check_r=r_check).instance
    if "WSEE_MULTI_RB" in spec.schemes:
        mbase = sc.generate_multi_rb(cfg, seed, 0.0, check_p_max_dbm=pm_check, check_r=r_check)
    out = []
    for pm in spec.pmax_dbm:
        watts = float(model.dbm_to_watt(pm))
        for r in spec.r:
            inst = sc.with_qos(base.with_p_max(watts), r) if base is not None else None
            mrb = sc.multi_rb_with_qos(mbase.with_p_max(watts), r) if mbase is not None else None
            for lam in spec.lambdas:
                opts = sco.ScoOptions(eps=spec.eps, max_iter=spec.max_iter, scale=lam)
                for scheme in spec.schemes:
                    t0 = time.perf_counter()
                    try:
                        res = _solve(scheme, cfg, inst, mrb, opts)
                    except _ERRORS as exc:
                        out.append(TrialRecord(
                            trial, seed, scheme, pm, r, lam, math.nan, math.nan, 0, False, math.nan,
                            1e3 * (time.perf_counter() - t0), error=f"{type(exc).__name__}: {exc}",
                        ))
                        continue
                    wsr = res.wsr
                    out.append(TrialRecord(
                        trial, seed, scheme, pm, r, lam, res.wsee, wsr, res.iterations, res.converged,
                        res.kkt.max() if res.kkt is not None else math.nan,
                        1e3 * (time.perf_counter() - t0), p=np.asarray(res.p),
                        history=list(res.history) if keep_history else None, error=res.message,
                    ))
    return out


# -- whole experiments --------------------------------------------------------------


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1")
    return n


def _trial_job(args):
    spec, trial, keep_history = args
    return run_trial(spec, trial, keep_history)


def run_experiment(spec: ExperimentSpec, workers: int | None = None, keep_history: bool = False) -> list[TrialRecord]:
    """Rows for every (trial, scheme, grid point), sorted deterministically."""
    workers = worker_count() if workers is None else workers
    jobs = [(spec, t, keep_history) for t in range(spec.trials)]
    if workers > 1 and spec.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_trial_job, jobs))
    else:
        chunks = [_trial_job(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=TrialRecord.key)
    return rows


def write_csv(records: Iterable[TrialRecord], out) -> None:
    """Write rows to a path or a text stream ('.' decimals, 17 significant digits)."""
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in records:
            w.writerow(rec.row())

    if isinstance(out, (str, os.PathLike)):
        with open(out, "w", newline="", encoding="ascii") as fh:
            _write(fh)
    else:
        _write(out)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="ascii") as fh:
        return list(csv.DictReader(fh))


def summarize(records: Sequence[TrialRecord]) -> list[dict]:
    """Per (scheme, P_max, r, lambda) statistics over the finite rows."""
    groups = defaultdict(list)
    for rec in records:
        groups[(SCHEMES.index(rec.scheme), rec.pmax_dbm, rec.r, rec.lam)].append(rec)
    out = []
    for key in sorted(groups):
        recs = groups[key]
        ok = [r for r in recs if math.isfinite(r.wsee)]
        wsee = np.array([r.wsee for r in ok])
        wsr = np.array([r.wsr for r in ok])
        its = np.array([r.iterations for r in ok], dtype=float)

        def stats(a):
            if a.size == 0:
                return math.nan, math.nan, math.nan
            return float(a.mean()), float(np.median(a)), float(a.std(ddof=1)) if a.size > 1 else 0.0

        row = {
            "scheme": SCHEMES[key[0]], "pmax_dbm": key[1], "r": key[2], "lambda": key[3],
            "n": len(recs), "n_converged": sum(r.converged for r in recs),
        }
        for name, arr in (("wsee", wsee), ("wsr", wsr)):
            row[f"{name}_mean"], row[f"{name}_median"], row[f"{name}_std"] = stats(arr)
        m, med, _ = stats(its)
        row["iterations_mean"], row["iterations_median"] = m, med
        out.append(row)
    return out


def write_summary(rows: Sequence[dict], out) -> None:
    def cell(v):
        return _fmt(v) if isinstance(v, float) else str(v)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for row in rows:
        w.writerow([cell(row[h]) for h in SUMMARY_HEADER])
    with open(out, "w", newline="", encoding="ascii") as fh:
        fh.write(buf.getvalue())


def audit(spec: ExperimentSpec, records: Sequence[TrialRecord], rtol: float = 1e-9) -> list[TrialRecord]:
    """Rows whose wsee/wsr do not recompute from the stored power and the seed."""
    bad = []
    cache = {}
    for rec in records:
        if rec.p is None or not math.isfinite(rec.wsee):
            continue
        cfg = spec.scenario
        k = (rec.trial, rec.scheme == "WSEE_MULTI_RB")
        if k not in cache:
            pm_check, r_check = min(spec.pmax_dbm), max(spec.r)
            if k[1]:
                cache[k] = sc.generate_multi_rb(cfg, rec.seed, 0.0, check_p_max_dbm=pm_check, check_r=r_check)
            else:
                cache[k] = sc.generate_trial(cfg, rec.seed, check_p_max_dbm=pm_check, check_r=r_check).instance
        watts = float(model.dbm_to_watt(rec.pmax_dbm))
        if k[1]:
            mrb = sc.multi_rb_with_qos(cache[k].with_p_max(watts), rec.r)
            wsee = model.wsee_multi_rb(mrb, rec.p)
            wsr = float(mrb.weights @ model.rate_multi_rb(mrb, rec.p))
        else:
            inst = sc.with_qos(cache[k].with_p_max(watts), rec.r)
            if rec.scheme == "WSEE_GENERAL":
                wsee = model.wsee_general(inst, sc.general_users(cfg), rec.p)
            else:
                wsee = model.wsee(inst, rec.p)
            wsr = model.wsr(inst, rec.p)
        if not (math.isclose(wsee, rec.wsee, rel_tol=rtol) and math.isclose(wsr, rec.wsr, rel_tol=rtol)):
            bad.append(rec)
    return bad


# -- convergence traces -------------------------------------------------------------


def convergence_rows(records: Sequence[TrialRecord]) -> list[list[str]]:
    rows = []
    for rec in records:
        for it, f in enumerate(rec.history or []):
            rows.append([
                str(rec.trial), str(rec.seed), rec.scheme, _fmt(rec.pmax_dbm), _fmt(rec.r),
                _fmt(rec.lam), str(it), _fmt(f),
            ])
    return rows


def run_convergence(
    scenario: sc.ScenarioConfig, pmax_dbm: float, lambdas: Sequence[float], trials: int, seed: int,
    r: Sequence[float] = (0.0,), eps: float = 1e-4, workers: int | None = None,
) -> list[TrialRecord]:
    """Algorithm histories per trial and initial scale (WSEE driver)."""
    spec = ExperimentSpec(scenario, (pmax_dbm,), tuple(r), ("WSEE",), trials, tuple(lambdas), eps, seed)
    return run_experiment(spec, workers, keep_history=True)


def write_convergence(records: Sequence[TrialRecord], out) -> None:
    with open(out, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONVERGENCE_HEADER)
        w.writerows(convergence_rows(records))
