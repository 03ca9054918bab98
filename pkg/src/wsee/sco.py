"""Sequential convex optimization drivers and KKT certification.

Each driver repeatedly rebuilds a convex surrogate at the current point,
solves it with :func:`wsee.solver.solve` and moves to its maximizer until the
relative objective change drops below ``eps``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from . import model
from .model import LN2, GeneralPowerUser, MultiRbInstance, NetworkInstance
from .solver import (
    CanonicalFunction,
    ConvexProgram,
    KKTResidual,
    SolveReport,
    SolverOptions,
    find_strictly_feasible,
    solve,
)
from . import surrogate as sg

log = logging.getLogger(__name__)

P_FLOOR = 1e-12


class InfeasibleInitialPoint(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        users = sorted({v.user for v in self.violations})
        super().__init__(f"initial point infeasible for users {users}: {self.violations}")


class SubproblemFailure(RuntimeError):
    def __init__(self, report: SolveReport, iteration: int):
        self.report = report
        self.iteration = iteration
        super().__init__(f"subproblem {iteration} ended with {report.status}: {report.message}")


class DegenerateRate(ValueError):
    pass


@dataclass
class ScoOptions:
    eps: float = 1e-4
    max_iter: int = 100
    p0: np.ndarray | None = None
    scale: float = 1.0
    record_history: bool = True
    keep_reports: bool = False
    feas_tol: float = 1e-9
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.p0 is None and not 0 < self.scale <= 1:
            raise ValueError("initial scale must lie in (0, 1]")


@dataclass
class ScoResult:
    p: np.ndarray
    objective: float
    wsee: float
    wsr: float
    ee: np.ndarray
    iterations: int
    history: list
    converged: bool
    kkt: KKTResidual | None = None
    reports: list = field(default_factory=list)
    message: str = ""


def _initial_power(p_max, opts: ScoOptions) -> np.ndarray:
    p = opts.scale * np.asarray(p_max, dtype=float) if opts.p0 is None else np.asarray(opts.p0, dtype=float)
    return np.maximum(p, P_FLOOR)


def _converged(f_new, f_old, eps):
    if f_old == 0:
        return abs(f_new) < eps
    return abs(f_new - f_old) / abs(f_old) < eps


def _run(build, warm, update, objective, x0_state, opts: ScoOptions, feasible):
    """Shared SCO loop.

    ``build(state)`` -> SurrogateProblem; ``warm(state)`` -> solver warm start;
    ``update(sub, x)`` -> new state; ``objective(state)`` -> f; ``feasible(state)``
    checks the original constraints.
    """
    state = x0_state
    f = objective(state)
    hist = [f]
    reports = []
    converged = False
    msg = ""
    it = 0
    for it in range(1, opts.max_iter + 1):
        sub = build(state)
        rep = solve(sub.program, warm(state, sub), opts.solver)
        if opts.keep_reports:
            reports.append(rep)
        if rep.status == "Infeasible":
            # surrogate set has no interior; the expansion point is its only member
            converged, msg = True, "surrogate feasible set has empty interior"
            it -= 1
            break
        new = update(sub, rep.x)
        if rep.status != "Optimal" and not feasible(new):
            raise SubproblemFailure(rep, it)
        if rep.status != "Optimal":
            log.warning("subproblem %d: %s (%s); point is feasible, continuing", it, rep.status, rep.message)
        f_new = objective(new)
        if f_new < f:
            # below solver accuracy; keep the incumbent
            converged, msg = True, f"stalled at solver accuracy ({(f - f_new) / abs(f):.1e} relative)"
            it -= 1
            break
        state = new
        hist.append(f_new)
        done = _converged(f_new, f, opts.eps)
        f = f_new
        if done:
            converged = True
            break
    return state, hist if opts.record_history else hist[-1:], it, converged, reports, msg


def _check_start(inst, p, tol):
    feas = model.is_feasible(inst, p, tol)
    if not feas.ok:
        raise InfeasibleInitialPoint(feas.violations)


def _result(inst, p, objective, it, hist, converged, reports, kkt, msg):
    return ScoResult(
        p=p, objective=objective, wsee=model.wsee(inst, p), wsr=model.wsr(inst, p),
        ee=model.ee(inst, p), iterations=it, history=hist, converged=converged,
        kkt=kkt, reports=reports, message=msg,
    )


def _interior_warm(x, q_slice, q_cap, v_slice=None, y_slice=None):
    w = np.array(x, dtype=float)
    w[q_slice] = np.minimum(w[q_slice], q_cap - 1e-9)
    if y_slice is not None:
        w[y_slice] -= 1e-3
    if v_slice is not None:
        w[v_slice] -= 2e-3
    return w


def wsee_maximize(inst: NetworkInstance, opts: ScoOptions | None = None) -> ScoResult:
    """Weighted-sum EE maximization from a feasible initial power vector."""
    opts = opts or ScoOptions()
    N = inst.n_users
    p0 = _initial_power(inst.p_max, opts)
    _check_start(inst, p0, opts.feas_tol)
    q_cap = np.log2(inst.p_max)
    ee0 = model.ee(inst, p0)
    state0 = (np.log2(p0), np.log2(ee0))

    def build(s):
        return sg.build_wsee_subproblem(inst, s[0], s[1])

    def warm(s, sub):
        return _interior_warm(np.r_[s[0], s[1]], slice(0, N), q_cap, v_slice=slice(N, 2 * N))

    def update(sub, x):
        return x[:N].copy(), x[N:].copy()

    def objective(s):
        return float(inst.weights @ np.exp2(s[1]))

    def feasible(s):
        return model.is_feasible(inst, np.exp2(s[0]), 1e-8).ok

    (q, v), hist, it, conv, reps, msg = _run(build, warm, update, objective, state0, opts, feasible)
    p = np.exp2(q)
    return _result(inst, p, model.wsee(inst, p), it, hist, conv, reps, certify_kkt(inst, p), msg)


def wsr_maximize(inst: NetworkInstance, opts: ScoOptions | None = None) -> ScoResult:
    """Weighted-sum rate maximization (the baseline) by the same SCO scheme."""
    opts = opts or ScoOptions()
    N = inst.n_users
    p0 = _initial_power(inst.p_max, opts)
    _check_start(inst, p0, opts.feas_tol)
    q_cap = np.log2(inst.p_max)

    def objective(q):
        return model.wsr(inst, np.exp2(q))

    def feasible(q):
        return model.is_feasible(inst, np.exp2(q), 1e-8).ok

    q, hist, it, conv, reps, msg = _run(
        lambda q: sg.build_wsr_subproblem(inst, q),
        lambda q, sub: _interior_warm(q, slice(0, N), q_cap),
        lambda sub, x: x.copy(),
        objective, np.log2(p0), opts, feasible,
    )
    p = np.exp2(q)
    return _result(inst, p, model.wsr(inst, p), it, hist, conv, reps, certify_kkt_wsr(inst, p), msg)


def wsee_maximize_general(
    inst: NetworkInstance, general: Sequence[GeneralPowerUser], opts: ScoOptions | None = None
) -> ScoResult:
    """WSEE maximization under the rate-dependent consumption model."""
    opts = opts or ScoOptions()
    general = list(general)
    if len(general) != inst.n_users:
        raise ValueError("need one GeneralPowerUser per user")
    N = inst.n_users
    p0 = _initial_power(inst.p_max, opts)
    _check_start(inst, p0, opts.feas_tol)
    r0 = model.rate(inst, p0)
    if np.any(r0 <= 0):
        raise DegenerateRate(f"zero initial rate for users {np.nonzero(r0 <= 0)[0].tolist()}")
    psi0 = np.array([model.psi(g, p, r) for g, p, r in zip(general, p0, r0)])
    q_cap = np.log2(inst.p_max)
    state0 = np.r_[np.log2(p0), np.log2(r0), np.log2(psi0)]

    def objective(x):
        return float(inst.weights @ np.exp2(x[2 * N :]))

    def feasible(x):
        return model.is_feasible(inst, np.exp2(x[:N]), 1e-8).ok

    x, hist, it, conv, reps, msg = _run(
        lambda x: sg.build_wsee_general_subproblem(inst, general, x[:N], x[N : 2 * N], x[2 * N :]),
        lambda x, sub: _interior_warm(x, slice(0, N), q_cap, v_slice=slice(2 * N, 3 * N), y_slice=slice(N, 2 * N)),
        lambda sub, x: x.copy(),
        objective, state0, opts, feasible,
    )
    p = np.exp2(x[:N])
    res = _result(inst, p, model.wsee_general(inst, general, p), it, hist, conv, reps,
                  certify_kkt_general(inst, general, p), msg)
    res.wsee = res.objective
    res.ee = model.ee_general(inst, general, p)
    return res


def wsee_maximize_multi_rb(mrb: MultiRbInstance, opts: ScoOptions | None = None) -> ScoResult:
    """WSEE maximization over an (N, K) power matrix with per-user total budgets.

    ``opts.p0`` may be an (N, K) matrix; the scale form splits ``scale * p_max``
    equally across the RBs.
    """
    opts = opts or ScoOptions()
    N, K = mrb.n_users, mrb.n_rb
    if opts.p0 is None:
        P0 = np.repeat((opts.scale * mrb.p_max / K)[:, None], K, axis=1)
    else:
        P0 = np.asarray(opts.p0, dtype=float).reshape(N, K)
    P0 = np.maximum(P0, P_FLOOR)
    feas = model.is_feasible_multi_rb(mrb, P0, opts.feas_tol)
    if not feas.ok:
        raise InfeasibleInitialPoint(feas.violations)
    nq = N * K
    q_cap = np.repeat(np.log2(mrb.p_max), K)
    state0 = np.r_[np.log2(P0).ravel(), np.log2(model.ee_multi_rb(mrb, P0))]

    n = nq + N

    def objective(x):
        return float(mrb.weights @ np.exp2(x[nq:]))

    def feasible(x):
        return model.is_feasible_multi_rb(mrb, np.exp2(x[:nq]).reshape(N, K), 1e-8).ok

    def warm(x, sub):
        w = _interior_warm(x, slice(0, nq), q_cap, v_slice=slice(nq, n))
        if K > 1:
            # strictly inside each user's total budget
            w[:nq] -= 1e-9
        return w

    x, hist, it, conv, reps, msg = _run(
        lambda x: sg.build_wsee_multi_rb_subproblem(mrb, x[:nq].reshape(N, K), x[nq:]),
        warm, lambda sub, x: x.copy(), objective, state0, opts, feasible,
    )
    P = np.exp2(x[:nq]).reshape(N, K)
    return ScoResult(
        p=P, objective=model.wsee_multi_rb(mrb, P), wsee=model.wsee_multi_rb(mrb, P),
        wsr=float(mrb.weights @ model.rate_multi_rb(mrb, P)), ee=model.ee_multi_rb(mrb, P),
        iterations=it, history=hist, converged=conv, kkt=certify_kkt_multi_rb(mrb, P),
        reports=reps, message=msg,
    )


def feasible_start(inst: NetworkInstance, opts: SolverOptions | None = None) -> np.ndarray:
    """A strictly feasible power vector found by maximizing the common QoS slack.

    Raises :class:`wsee.solver.InfeasibleError` when the rate targets cannot be met.
    """
    N = inst.n_users
    qidx = list(range(N))
    cons, names = sg._qos_rows(inst, qidx, N)
    lower, upper = sg._q_box(inst.p_max, N, qidx)
    prog = ConvexProgram(CanonicalFunction.affine(np.zeros(N)), tuple(cons), lower, upper, tuple(names))
    opts = opts or SolverOptions()
    q = find_strictly_feasible(prog, np.log2(inst.p_max) - 1e-3, opts)
    return np.exp2(q)


# -- KKT certification of the transformed problems ----------------------------------


def _kkt(grad_f, values, grads, act_tol) -> KKTResidual:
    """Least-squares non-negative multipliers on the active set; scaled residuals."""
    grad_f = np.asarray(grad_f, dtype=float)
    values = np.asarray(values, dtype=float)
    grads = np.asarray(grads, dtype=float).reshape(len(values), grad_f.size)
    scale = max(float(np.max(np.abs(grad_f))), 1e-300)
    active = values <= act_tol
    lam = np.zeros(len(values))
    if np.any(active):
        A = grads[active]
        lam_a, _ = nnls(A.T / scale, -grad_f / scale)
        lam[active] = lam_a
    r = grad_f + grads.T @ lam
    viol = float(max(0.0, -values.min())) if values.size else 0.0
    comp = float(np.max(np.abs(lam * values), initial=0.0))
    return KKTResidual(float(np.max(np.abs(r))) / scale, viol, comp / scale)


def _interference(omega, phi, noise, p):
    """Interference-plus-noise vector and coefficient matrix ``coef[i, j]``."""
    coef = omega.T.copy()
    np.fill_diagonal(coef, phi)
    return coef @ p + noise, coef


def _theta_parts(inst, p, q_index, n):
    """Values and gradients of the log-form QoS constraints of users with r_min > 0."""
    vals, grads = [], []
    D, coef = _interference(inst.omega, inst.phi, inst.noise, p)
    for i, u in enumerate(inst.users):
        if u.r_min <= 0:
            continue
        gmin = model.gamma_min(u, inst.bandwidth)
        vals.append(math.log2(inst.omega[i, i] * p[i] / (gmin * D[i])))
        g = np.zeros(n)
        g[q_index] -= coef[i] * p / D[i]
        g[q_index[i]] += 1.0
        grads.append(g)
    return vals, grads


def _cap_parts(p, p_max, q_index, n):
    vals, grads = [], []
    for i in range(len(p)):
        vals.append(math.log2(p_max[i]) - math.log2(p[i]))
        g = np.zeros(n)
        g[q_index[i]] = -1.0
        grads.append(g)
    return vals, grads


def certify_kkt(inst: NetworkInstance, p, act_tol: float = 1e-6) -> KKTResidual:
    """KKT residual of the (q, v) reformulation at ``q = log2 p``, ``v = log2 EE(p)``."""
    p = np.asarray(p, dtype=float)
    N = inst.n_users
    n = 2 * N
    qi = np.arange(N)
    e = model.ee(inst, p)
    grad_f = np.zeros(n)
    grad_f[N:] = LN2 * inst.weights * e
    vals, grads = _cap_parts(p, inst.p_max, qi, n)
    tv, tg = _theta_parts(inst, p, qi, n)
    vals += tv
    grads += tg
    J = model.rate_log_jacobian(inst, p)
    R = model.rate(inst, p)
    B = inst.bandwidth
    for i in range(N):
        a = inst.mu[i] * p[i] * e[i]
        b = inst.p_st[i] * e[i]
        vals.append((R[i] - a - b) / B)
        g = np.zeros(n)
        g[:N] = J[i] / B
        g[i] -= LN2 * a / B
        g[N + i] = -LN2 * (a + b) / B
        grads.append(g)
    return _kkt(grad_f, vals, grads, act_tol)


def certify_kkt_wsr(inst: NetworkInstance, p, act_tol: float = 1e-6) -> KKTResidual:
    p = np.asarray(p, dtype=float)
    N = inst.n_users
    qi = np.arange(N)
    grad_f = inst.weights @ model.rate_log_jacobian(inst, p) / inst.bandwidth
    vals, grads = _cap_parts(p, inst.p_max, qi, N)
    tv, tg = _theta_parts(inst, p, qi, N)
    return _kkt(grad_f, vals + tv, grads + tg, act_tol)


def certify_kkt_general(
    inst: NetworkInstance, general: Sequence[GeneralPowerUser], p, act_tol: float = 1e-6
) -> KKTResidual:
    """KKT residual of the (q, y, v) reformulation with y = log2 R(p), v = log2 psi."""
    p = np.asarray(p, dtype=float)
    N = inst.n_users
    n = 3 * N
    qi = np.arange(N)
    R = model.rate(inst, p)
    psi = np.array([model.psi(g, pi, ri) for g, pi, ri in zip(general, p, R)])
    q, y, v = np.log2(p), np.log2(R), np.log2(psi)
    grad_f = np.zeros(n)
    grad_f[2 * N :] = LN2 * inst.weights * psi
    vals, grads = _cap_parts(p, inst.p_max, qi, n)
    tv, tg = _theta_parts(inst, p, qi, n)
    vals += tv
    grads += tg
    J = model.rate_log_jacobian(inst, p)
    B = inst.bandwidth
    for i in range(N):
        vals.append((R[i] - 2.0 ** y[i]) / B)
        g = np.zeros(n)
        g[:N] = J[i] / B
        g[N + i] = -LN2 * 2.0 ** y[i] / B
        grads.append(g)
    for i, u in enumerate(general):
        poly = [(k + 1, m * 2.0 ** ((k + 1) * q[i] + v[i] - y[i])) for k, m in enumerate(u.mu_m) if m > 0]
        rt = u.xi * 2.0 ** (v[i] - (1 - u.delta) * y[i]) if u.xi > 0 else 0.0
        st = u.p_st * 2.0 ** (v[i] - y[i])
        total = sum(t for _, t in poly) + rt + st
        vals.append(1.0 - total)
        g = np.zeros(n)
        g[i] = -LN2 * sum(k * t for k, t in poly)
        g[N + i] = LN2 * (sum(t for _, t in poly) + (1 - u.delta) * rt + st)
        g[2 * N + i] = -LN2 * total
        grads.append(g)
    return _kkt(grad_f, vals, grads, act_tol)


def certify_kkt_multi_rb(mrb: MultiRbInstance, P, act_tol: float = 1e-6) -> KKTResidual:
    P = np.asarray(P, dtype=float)
    N, K = mrb.n_users, mrb.n_rb
    nq = N * K
    n = nq + N
    qidx = np.arange(nq).reshape(N, K)
    e = model.ee_multi_rb(mrb, P)
    grad_f = np.zeros(n)
    grad_f[nq:] = LN2 * mrb.weights * e
    vals, grads = [], []
    tot = P.sum(axis=1)
    for i in range(N):
        vals.append(math.log2(mrb.p_max[i]) - math.log2(tot[i]))
        g = np.zeros(n)
        g[qidx[i]] = -P[i] / tot[i]
        grads.append(g)
    Jk = [model.rate_log_jacobian(mrb.rb(k), P[:, k]) for k in range(K)]
    R = model.rate_multi_rb(mrb, P)
    Bk = mrb.rb_bandwidth
    for i, u in enumerate(mrb.users):
        if u.r_min <= 0:
            continue
        vals.append((R[i] - u.r_min) / Bk)
        g = np.zeros(n)
        for k in range(K):
            g[qidx[:, k]] = Jk[k][i] / Bk
        grads.append(g)
    for i, u in enumerate(mrb.users):
        a = u.mu * tot[i] * e[i]
        b = u.p_st * e[i]
        vals.append((R[i] - a - b) / Bk)
        g = np.zeros(n)
        for k in range(K):
            g[qidx[:, k]] += Jk[k][i] / Bk
        g[qidx[i]] -= LN2 * u.mu * P[i] * e[i] / Bk
        g[nq + i] = -LN2 * (a + b) / Bk
        grads.append(g)
    return _kkt(grad_f, vals, grads, act_tol)
