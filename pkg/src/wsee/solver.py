"""Log-barrier interior-point solver for concave programs in canonical form.

A canonical function of ``x`` is::

    c . x + c0 - sum_k w_k 2**(a_k . x + b_k) - sum_l v_l log2(sum_r 2**(A_lr . x + b_lr))

with all weights ``w_k, v_l >= 0``, so it is concave.  A program maximizes a
canonical objective subject to canonical constraints ``g(x) >= 0`` and a box.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import nnls

from .model import LN2

log = logging.getLogger(__name__)

EXP_CLAMP = 700.0 / LN2
BOX_SENTINEL = 60.0


class ExpTerm(NamedTuple):
    weight: float
    coef: np.ndarray
    const: float


class LseTerm(NamedTuple):
    weight: float
    coefs: np.ndarray  # (rows, n)
    consts: np.ndarray  # (rows,)


@dataclass(frozen=True)
class CanonicalFunction:
    coef: np.ndarray
    const: float = 0.0
    exp_terms: tuple[ExpTerm, ...] = ()
    lse_terms: tuple[LseTerm, ...] = ()

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        n = coef.shape[0]
        object.__setattr__(self, "coef", coef)
        exps = tuple(
            ExpTerm(float(w), np.asarray(a, dtype=float), float(b)) for w, a, b in self.exp_terms
        )
        lses = tuple(
            LseTerm(float(w), np.atleast_2d(np.asarray(A, dtype=float)), np.atleast_1d(np.asarray(b, dtype=float)))
            for w, A, b in self.lse_terms
        )
        for t in exps:
            if t.weight < 0 or t.coef.shape != (n,):
                raise ValueError("exp terms need weight >= 0 and a length-n coefficient")
        for t in lses:
            if t.weight < 0 or t.coefs.shape[1] != n or t.coefs.shape[0] != t.consts.shape[0]:
                raise ValueError("lse terms need weight >= 0 and (rows, n) coefficients")
        object.__setattr__(self, "exp_terms", exps)
        object.__setattr__(self, "lse_terms", lses)

    @property
    def n(self) -> int:
        return self.coef.shape[0]

    @classmethod
    def affine(cls, coef, const=0.0):
        return cls(np.asarray(coef, dtype=float), const)

    def pad(self, n_extra: int, extra_coef=()) -> "CanonicalFunction":
        """Append ``n_extra`` variables; ``extra_coef`` gives their affine coefficients."""
        ext = np.zeros(n_extra)
        ext[: len(extra_coef)] = extra_coef
        z = np.zeros(n_extra)
        return CanonicalFunction(
            np.concatenate([self.coef, ext]),
            self.const,
            tuple(ExpTerm(t.weight, np.concatenate([t.coef, z]), t.const) for t in self.exp_terms),
            tuple(
                LseTerm(t.weight, np.hstack([t.coefs, np.zeros((t.coefs.shape[0], n_extra))]), t.consts)
                for t in self.lse_terms
            ),
        )

    def __call__(self, x) -> float:
        return evaluate(self, x)[0]


def _lse2(z):
    zmax = np.max(z)
    ex = np.exp2(z - zmax)
    s = ex.sum()
    return zmax + math.log2(s), ex / s


def evaluate(fn: CanonicalFunction, x):
    """Value, gradient and Hessian of a canonical function at ``x``."""
    x = np.asarray(x, dtype=float)
    n = fn.n
    val = float(fn.coef @ x + fn.const)
    grad = fn.coef.copy()
    hess = np.zeros((n, n))
    for w, a, b in fn.exp_terms:
        z = min(max(float(a @ x + b), -EXP_CLAMP), EXP_CLAMP)
        e = w * 2.0 ** z
        val -= e
        grad -= LN2 * e * a
        hess -= LN2 * LN2 * e * np.outer(a, a)
    for w, A, b in fn.lse_terms:
        z = np.clip(A @ x + b, -EXP_CLAMP, EXP_CLAMP)
        lse, s = _lse2(z)
        g = s @ A
        val -= w * lse
        grad -= w * g
        hess -= w * LN2 * ((A.T * s) @ A - np.outer(g, g))
    return val, grad, hess


class _Compiled:
    """Stacked-array form of a list of canonical functions for fast evaluation."""

    def __init__(self, fns: Sequence[CanonicalFunction], n: int):
        m = len(fns)
        self.m, self.n = m, n
        self.C = np.array([f.coef for f in fns]).reshape(m, n)
        self.c0 = np.array([f.const for f in fns], dtype=float)
        ea, eb, ew, eo = [], [], [], []
        ra, rb, rg, lw, lo = [], [], [], [], []
        for i, f in enumerate(fns):
            for w, a, b in f.exp_terms:
                if w > 0:
                    ea.append(a); eb.append(b); ew.append(w); eo.append(i)
            for w, A, b in f.lse_terms:
                if w > 0 and len(b):
                    g = len(lw)
                    lw.append(w); lo.append(i)
                    ra.extend(A); rb.extend(b); rg.extend([g] * len(b))
        self.EA = np.array(ea).reshape(len(ea), n)
        self.Eb = np.array(eb, dtype=float)
        self.Ew = np.array(ew, dtype=float)
        self.Eo = np.array(eo, dtype=int)
        self.Eown = np.zeros((m, len(ew)))
        self.Eown[self.Eo, np.arange(len(ew))] = 1.0
        self.RA = np.array(ra).reshape(len(ra), n)
        self.Rb = np.array(rb, dtype=float)
        self.Rg = np.array(rg, dtype=int)
        self.Lw = np.array(lw, dtype=float)
        self.Lo = np.array(lo, dtype=int)
        nl = len(lw)
        self.starts = np.searchsorted(self.Rg, np.arange(nl)) if nl else np.zeros(0, dtype=int)
        self.Gmem = np.zeros((nl, len(rg)))
        self.Gmem[self.Rg, np.arange(len(rg))] = 1.0
        self.Lown = np.zeros((m, nl))
        self.Lown[self.Lo, np.arange(nl)] = 1.0
        self.clamped = False

    def _clamp(self, z):
        if z.max() > EXP_CLAMP or z.min() < -EXP_CLAMP:
            self.clamped = True
            return np.clip(z, -EXP_CLAMP, EXP_CLAMP)
        return z

    def _exp(self, x):
        return self.Ew * np.exp2(self._clamp(self.EA @ x + self.Eb))

    def _lse(self, x):
        zc = self._clamp(self.RA @ x + self.Rb)
        zmax = np.maximum.reduceat(zc, self.starts)
        ex = np.exp2(zc - zmax[self.Rg])
        tot = np.add.reduceat(ex, self.starts)
        return zmax + np.log2(tot), ex / tot[self.Rg]

    def values(self, x):
        v = self.C @ x + self.c0
        self.clamped = False
        if self.Ew.size:
            v -= self.Eown @ self._exp(x)
        if self.Lw.size:
            lse, _ = self._lse(x)
            v -= self.Lown @ (self.Lw * lse)
        return v

    def full(self, x, hweights=None):
        """Values, gradients (m, n) and ``sum_i w_i Hess g_i``.

        ``hweights`` is an array of the w_i or a callable mapping the values to
        them; with None the Hessian is skipped.
        """
        v = self.C @ x + self.c0
        G = self.C.copy()
        self.clamped = False
        if self.Ew.size:
            e = self._exp(x)
            v -= self.Eown @ e
            G -= self.Eown @ ((LN2 * e)[:, None] * self.EA)
        if self.Lw.size:
            lse, s = self._lse(x)
            v -= self.Lown @ (self.Lw * lse)
            gl = self.Gmem @ (s[:, None] * self.RA)
            G -= self.Lown @ (self.Lw[:, None] * gl)
        if hweights is None:
            return v, G, None
        hw = hweights(v) if callable(hweights) else hweights
        H = np.zeros((self.n, self.n))
        if self.Ew.size:
            d = hw[self.Eo] * e * (LN2 * LN2)
            H -= (self.EA.T * d) @ self.EA
        if self.Lw.size:
            lwh = self.Lw * hw[self.Lo]
            H -= LN2 * ((self.RA.T * (lwh[self.Rg] * s)) @ self.RA - (gl.T * lwh) @ gl)
        return v, G, H


@dataclass(frozen=True)
class ConvexProgram:
    """Maximize ``objective(x)`` subject to ``g(x) >= 0`` and ``lower <= x <= upper``."""

    objective: CanonicalFunction
    constraints: tuple[CanonicalFunction, ...] = ()
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        n = self.objective.n
        object.__setattr__(self, "constraints", tuple(self.constraints))
        lo = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        hi = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if lo.shape != (n,) or hi.shape != (n,) or np.any(lo >= hi):
            raise ValueError("box bounds must have shape (n,) with lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if any(g.n != n for g in self.constraints):
            raise ValueError("all constraints must share the objective's dimension")

    @property
    def n_vars(self) -> int:
        return self.objective.n

    def effective_box(self, sentinel: float = BOX_SENTINEL):
        lo = np.where(np.isfinite(self.lower), self.lower, -sentinel)
        hi = np.where(np.isfinite(self.upper), self.upper, sentinel)
        return lo, hi


@dataclass
class SolverOptions:
    t0: float = 1.0
    t_factor: float = 10.0
    gap_tol: float = 1e-8
    newton_tol: float = 1e-11
    max_newton: int = 100
    max_outer: int = 60
    ls_alpha: float = 0.01
    ls_beta: float = 0.5
    slack_min: float = 1e-8
    kkt_tol: float = 1e-6
    sentinel: float = BOX_SENTINEL
    trace: bool = False


class KKTResidual(NamedTuple):
    stationarity: float
    violation: float
    complementarity: float

    def max(self) -> float:
        return max(self)


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    status: str  # Optimal | MaxIter | Infeasible | NumericalFailure
    kkt: KKTResidual
    outer_iterations: int = 0
    newton_steps: int = 0
    duals: np.ndarray | None = None
    outer_objectives: list = field(default_factory=list)
    sentinel_active: list = field(default_factory=list)
    message: str = ""
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "Optimal"


class InfeasibleError(Exception):
    def __init__(self, msg, slack=None, x=None):
        super().__init__(msg)
        self.slack = slack
        self.x = x


def kkt_residual(prog: ConvexProgram, x, duals, lower_duals=None, upper_duals=None) -> KKTResidual:
    """(stationarity inf-norm, max violation, max |dual * slack|) of the Lagrangian
    ``f0 + sum_i duals_i g_i`` at ``x``; box duals refer to finite bounds only."""
    x = np.asarray(x, dtype=float)
    duals = np.asarray(duals, dtype=float)
    if np.any(duals < 0):
        raise ValueError("duals must be non-negative")
    _, grad, _ = evaluate(prog.objective, x)
    lag = grad.copy()
    viol = 0.0
    comp = 0.0
    for lam, g in zip(duals, prog.constraints):
        gv, gg, _ = evaluate(g, x)
        lag += lam * gg
        viol = max(viol, -gv)
        comp = max(comp, abs(lam * gv))
    n = prog.n_vars
    ld = np.zeros(n) if lower_duals is None else np.asarray(lower_duals, dtype=float)
    ud = np.zeros(n) if upper_duals is None else np.asarray(upper_duals, dtype=float)
    for j in range(n):
        if np.isfinite(prog.lower[j]):
            lag[j] += ld[j]
            viol = max(viol, prog.lower[j] - x[j])
            comp = max(comp, abs(ld[j] * (x[j] - prog.lower[j])))
        if np.isfinite(prog.upper[j]):
            lag[j] -= ud[j]
            viol = max(viol, x[j] - prog.upper[j])
            comp = max(comp, abs(ud[j] * (prog.upper[j] - x[j])))
    return KKTResidual(float(np.max(np.abs(lag))), float(max(viol, 0.0)), float(comp))


class _Barrier:
    """Log-barrier state for one program over the effective (finite) box."""

    def __init__(self, prog: ConvexProgram, opts: SolverOptions):
        self.prog = prog
        self.opts = opts
        self.n = prog.n_vars
        self.m = len(prog.constraints)
        self.lo, self.hi = prog.effective_box(opts.sentinel)
        self.comp = _Compiled((prog.objective,) + prog.constraints, self.n)
        self.newton_steps = 0

    def inside(self, x):
        return bool((x > self.lo).all() and (x < self.hi).all())

    def value(self, x, t):
        if not self.inside(x):
            return -np.inf
        v = self.comp.values(x)
        g = v[1:]
        if g.size and not g.min() > 0 or not np.isfinite(v[0]):
            return -np.inf
        return t * v[0] + np.log(g).sum() + np.log(x - self.lo).sum() + np.log(self.hi - x).sum()

    def derivatives(self, x, t):
        def weights(v):
            w = np.empty_like(v)
            w[0] = t
            w[1:] = 1.0 / v[1:]
            return w

        v, G, H = self.comp.full(x, weights)
        inv = 1.0 / v[1:]
        Gc = G[1:]
        dl = 1.0 / (x - self.lo)
        du = 1.0 / (self.hi - x)
        grad = t * G[0] + Gc.T @ inv + dl - du
        hess = H - (Gc.T * (inv * inv)) @ Gc
        hess[np.diag_indices(self.n)] -= dl * dl + du * du
        return v, grad, hess

    def center(self, x, t, trace=None):
        """Damped Newton maximization of the barrier function at parameter t."""
        o = self.opts
        fx = self.value(x, t)
        for _ in range(o.max_newton):
            v, grad, hess = self.derivatives(x, t)
            try:
                d = np.linalg.solve(-hess, grad)
            except np.linalg.LinAlgError:
                d = np.linalg.lstsq(-hess, grad, rcond=None)[0]
            dec = float(grad @ d)
            self.newton_steps += 1
            if trace is not None:
                trace.append((t, self.newton_steps, float(v[0]), dec))
                if o.trace:
                    log.debug("t=%.3e step=%d obj=%.12g dec=%.3e", t, self.newton_steps, v[0], dec)
            # barrier values grow like t; decrements below their rounding level are noise
            floor = 64 * np.finfo(float).eps * (1.0 + abs(fx))
            if not dec > 0 or dec / 2 <= max(o.newton_tol, floor):
                return x, True
            s = 1.0
            while True:
                xn = x + s * d
                fn = self.value(xn, t)
                if fn >= fx + o.ls_alpha * s * dec:
                    break
                s *= o.ls_beta
                if s < 1e-20:
                    return x, dec / 2 <= 1e3 * floor
            if fn - fx <= floor:
                # no measurable progress: at the precision limit of this t
                return xn, dec / 2 <= 1e3 * floor
            x, fx = xn, fn
        return x, False

    def run(self, x, stop=None, trace=None):
        """Barrier outer loop from a strictly feasible ``x``; returns (x, t, info)."""
        o = self.opts
        m_tot = self.m + 2 * self.n
        t = o.t0
        outer_obj = []
        status = "MaxIter"
        for k in range(o.max_outer):
            x, ok = self.center(x, t, trace)
            outer_obj.append(float(self.comp.values(x)[0]))
            if stop is not None and stop(x):
                return x, t, "Stopped", outer_obj, k + 1
            if m_tot / t <= o.gap_tol:
                status = "Optimal" if ok else "NumericalFailure"
                return x, t, status, outer_obj, k + 1
            t *= o.t_factor
        return x, t, status, outer_obj, o.max_outer


def _strict_slack(prog: ConvexProgram, x, opts: SolverOptions) -> float:
    lo, hi = prog.effective_box(opts.sentinel)
    if not (np.all(x > lo) and np.all(x < hi)):
        return -np.inf
    if not prog.constraints:
        return np.inf
    return float(min(g(x) for g in prog.constraints))


def find_strictly_feasible(prog: ConvexProgram, x0=None, opts: SolverOptions | None = None):
    """Point with every constraint at least ``slack_min`` and strictly inside the box.

    Returns ``x0`` unchanged when it already qualifies; otherwise runs a phase-I
    barrier maximizing the common slack ``s`` in ``g_i(x) - s >= 0``.
    Raises :class:`InfeasibleError` when the best slack is not positive.
    """
    opts = opts or SolverOptions()
    lo, hi = prog.effective_box(opts.sentinel)
    if x0 is None:
        x0 = np.where(
            np.isfinite(prog.lower) & np.isfinite(prog.upper), 0.5 * (lo + hi),
            np.where(np.isfinite(prog.lower), np.minimum(lo + 1.0, 0.5 * (lo + hi)),
                     np.where(np.isfinite(prog.upper), np.maximum(hi - 1.0, 0.5 * (lo + hi)), 0.0)),
        )
    x0 = np.asarray(x0, dtype=float)
    if _strict_slack(prog, x0, opts) >= opts.slack_min:
        return x0
    margin = np.minimum(1e-3, 1e-3 * (hi - lo))
    x = np.clip(x0, lo + margin, hi - margin)
    if not prog.constraints:
        return x
    gmin = min(g(x) for g in prog.constraints)
    if gmin >= opts.slack_min:
        return x
    n = prog.n_vars
    # margins proportional to the violation keep the phase-I barrier well scaled
    width = max(1.0, abs(gmin))
    aug = ConvexProgram(
        CanonicalFunction.affine(np.r_[np.zeros(n), 1.0 / width]),
        tuple(g.pad(1, (-1.0,)) for g in prog.constraints),
        np.r_[lo, gmin - width],
        np.r_[hi, 1.0],
    )
    bar = _Barrier(aug, opts)
    target = opts.slack_min

    def stop(z):
        return z[-1] >= target

    z, _, status, _, _ = bar.run(np.r_[x, gmin - 0.5 * width], stop=stop)
    s = _strict_slack(prog, z[:n], opts)
    if s >= target:
        return z[:n]
    raise InfeasibleError(f"no strictly feasible point: best common slack {z[-1]:.3e}", slack=float(z[-1]), x=z[:n])


def _kkt_from(G, g, x, bar, duals, ld, ud) -> KKTResidual:
    lag = G[0] + G[1:].T @ duals + ld - ud
    viol = max(0.0, float(-g.min())) if g.size else 0.0
    comp = float(max(np.max(np.abs(duals * g), initial=0.0), np.max(ld * (x - bar.lo)), np.max(ud * (bar.hi - x))))
    return KKTResidual(float(np.max(np.abs(lag))), viol, comp)


def _refit_duals(prog, G, g, x, act_tol, path_duals, path_ld, path_ud):
    """Non-negative least-squares multipliers of the active constraints and bounds.

    A constraint counts as active when its value is within ``act_tol`` or its
    central-path multiplier still contributes noticeably to the Lagrangian.
    """
    n = prog.n_vars
    weight = path_duals * np.max(np.abs(G[1:]), axis=1, initial=0.0)
    act = np.nonzero((g <= act_tol) | (weight >= act_tol))[0]
    lo_act = np.nonzero(np.isfinite(prog.lower) & ((x - prog.lower <= act_tol) | (path_ld >= act_tol)))[0]
    hi_act = np.nonzero(np.isfinite(prog.upper) & ((prog.upper - x <= act_tol) | (path_ud >= act_tol)))[0]
    if not (act.size or lo_act.size or hi_act.size):
        return None
    eye = np.eye(n)
    A = np.hstack([G[1:][act].T, eye[:, lo_act], -eye[:, hi_act]])
    lam, _ = nnls(A, -G[0])
    duals = np.zeros(len(g))
    duals[act] = lam[: act.size]
    ld = np.zeros(n)
    ld[lo_act] = lam[act.size : act.size + lo_act.size]
    ud = np.zeros(n)
    ud[hi_act] = lam[act.size + lo_act.size :]
    return duals, ld, ud


def solve(prog: ConvexProgram, warm_start=None, opts: SolverOptions | None = None) -> SolveReport:
    opts = opts or SolverOptions()
    try:
        x = find_strictly_feasible(prog, warm_start, opts)
    except InfeasibleError as exc:
        return SolveReport(
            exc.x, float(prog.objective(exc.x)), "Infeasible",
            KKTResidual(np.inf, max(0.0, -exc.slack), np.inf), message=str(exc),
        )
    bar = _Barrier(prog, opts)
    trace = [] if opts.trace else None
    x, t, status, outer_obj, n_outer = bar.run(x, trace=trace)
    v, G, _ = bar.comp.full(x)
    g = v[1:]
    duals = 1.0 / (t * g)
    ld = 1.0 / (t * (x - bar.lo))
    ud = 1.0 / (t * (bar.hi - x))
    kkt = _kkt_from(G, g, x, bar, duals, ld, ud)
    # central-path duals carry the rounding noise of 1/(t g); refit on the active set
    refit = _refit_duals(prog, G, g, x, opts.kkt_tol, duals, ld, ud)
    if refit is not None:
        kkt2 = _kkt_from(G, g, x, bar, *refit)
        if kkt2.stationarity < kkt.stationarity:
            kkt = kkt2
            duals = refit[0]
    scale = max(1.0, float(np.max(np.abs(G[0]))))
    msg = ""
    if status == "Optimal" and kkt.stationarity > opts.kkt_tol * scale:
        status, msg = "NumericalFailure", f"stationarity {kkt.stationarity:.3e} above tolerance"
    if bar.comp.clamped:
        status, msg = "NumericalFailure", "exponent clamp active at the reported point"
    sentinel = [
        j for j in range(prog.n_vars)
        if (not np.isfinite(prog.lower[j]) and x[j] - bar.lo[j] < 1e-4)
        or (not np.isfinite(prog.upper[j]) and bar.hi[j] - x[j] < 1e-4)
    ]
    if sentinel:
        log.warning("box sentinel active for variables %s", sentinel)
    return SolveReport(
        x, float(v[0]), status, kkt, n_outer, bar.newton_steps, duals,
        outer_obj, sentinel, msg, trace or [],
    )
