"""Concave lower bounds and the convex subproblems built from them.

All decision variables live in the log2 domain: ``q = log2 p``, ``v = log2 EE``
and, for the rate-dependent consumption model, ``y = log2 rho``.  Every
constraint is divided by its own magnitude at the expansion point so that
all of them are O(1) even for users driven to negligible power.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .model import (
    LN2,
    GeneralPowerUser,
    MultiRbInstance,
    NetworkInstance,
    gamma_min,
    rate,
    sinr,
    sinr_multi_rb,
)
from .solver import CanonicalFunction, ConvexProgram, ExpTerm, LseTerm


class BoundCoeffs(NamedTuple):
    alpha: float
    beta: float
    expansion_sinr: float


def log_bound_coeffs(gamma_prime: float) -> BoundCoeffs:
    """Tangent ``alpha log2(g) + beta`` under ``log2(1 + g)`` touching at ``gamma_prime``.

    A zero expansion SINR gives ``(0, 0)``: the bound degenerates to
    ``log2(1 + g) >= 0``.
    """
    g = float(gamma_prime)
    if not g >= 0:
        raise ValueError(f"expansion SINR must be >= 0, got {gamma_prime}")
    if g == 0:
        return BoundCoeffs(0.0, 0.0, 0.0)
    if math.isinf(g):
        raise ValueError("expansion SINR must be finite")
    alpha = g / (1.0 + g)
    beta = math.log2(1.0 + g) - alpha * math.log2(g)
    return BoundCoeffs(alpha, beta, g)


def expansion_sinr(inst: NetworkInstance, q) -> np.ndarray:
    """SINR vector at ``p = 2**q``."""
    return sinr(inst, np.exp2(np.asarray(q, dtype=float)))


def _coeff_arrays(gammas) -> tuple[np.ndarray, np.ndarray]:
    c = [log_bound_coeffs(g) for g in np.ravel(gammas)]
    shape = np.shape(gammas)
    return (np.array([x.alpha for x in c]).reshape(shape), np.array([x.beta for x in c]).reshape(shape))


# -- exact and surrogate scalar functions ------------------------------------------


def _interference_log2(omega, phi, noise, q, i):
    """log2 of interference-plus-noise at receiver ``i`` with ``p = 2**q``."""
    p = np.exp2(q)
    d = p @ omega[:, i] - omega[i, i] * p[i] + phi[i] * p[i] + noise[i]
    return math.log2(d)


def theta(inst: NetworkInstance, q, i: int) -> float:
    """QoS constraint in log form; ``theta >= 0`` iff ``R_i(2**q) >= r_min_i``."""
    user = inst.users[i]
    if user.r_min <= 0:
        raise ValueError(f"user {i} has no rate requirement; drop its QoS constraint")
    gmin = gamma_min(user, inst.bandwidth)
    q = np.asarray(q, dtype=float)
    return (
        math.log2(inst.omega[i, i] / gmin) + q[i]
        - _interference_log2(inst.omega, inst.phi, inst.noise, q, i)
    )


def rate_bound(inst: NetworkInstance, q, coeffs: BoundCoeffs, i: int) -> float:
    """Concave lower bound of ``R_i(2**q)`` built from the logarithmic inequality."""
    q = np.asarray(q, dtype=float)
    a, b = coeffs.alpha, coeffs.beta
    if a == 0:
        return inst.bandwidth * b
    log_sinr = math.log2(inst.omega[i, i]) + q[i] - _interference_log2(inst.omega, inst.phi, inst.noise, q, i)
    return inst.bandwidth * (a * log_sinr + b)


def rate_exact(inst: NetworkInstance, q, i: int) -> float:
    return rate(inst, np.exp2(np.asarray(q, dtype=float)), i)


def phi_exact(inst: NetworkInstance, q, v_i: float, i: int) -> float:
    u = inst.users[i]
    q = np.asarray(q, dtype=float)
    return rate_exact(inst, q, i) - u.mu * 2.0 ** (q[i] + v_i) - u.p_st * 2.0 ** v_i


def phi_tilde(inst: NetworkInstance, q, v_i: float, coeffs: BoundCoeffs, i: int) -> float:
    u = inst.users[i]
    q = np.asarray(q, dtype=float)
    return rate_bound(inst, q, coeffs, i) - u.mu * 2.0 ** (q[i] + v_i) - u.p_st * 2.0 ** v_i


def f_and_f_tilde(v, v_prime, weights):
    """Objective ``sum w 2**v`` and its tangent plane at ``v_prime``."""
    v = np.asarray(v, dtype=float)
    vp = np.asarray(v_prime, dtype=float)
    w = np.asarray(weights, dtype=float)
    f = float(w @ np.exp2(v))
    base = w * np.exp2(vp)
    return f, float(base.sum() + LN2 * base @ (v - vp))


def epsilon_constraint(user: GeneralPowerUser, q_i: float, y_i: float, v_i: float) -> float:
    """``<= 0`` iff the general-model EE at (2**q_i, 2**y_i) is at least 2**v_i."""
    out = sum(m * 2.0 ** ((k + 1) * q_i + v_i - y_i) for k, m in enumerate(user.mu_m) if m > 0)
    if user.xi > 0:
        out += user.xi * 2.0 ** (v_i - (1.0 - user.delta) * y_i)
    return out + user.p_st * 2.0 ** (v_i - y_i) - 1.0


def qos_multi_rb_exact(mrb: MultiRbInstance, Q, i: int) -> float:
    """``sum_k log2(1 + gamma_ik) - r_min_i / B_RB`` with ``P = 2**Q``."""
    g = sinr_multi_rb(mrb, np.exp2(np.asarray(Q, dtype=float)))[i]
    return float(np.log2(1.0 + g).sum() - mrb.r_min[i] / mrb.rb_bandwidth)


def qos_multi_rb_surrogate(mrb: MultiRbInstance, Q, alpha, beta, i: int) -> float:
    """Concave surrogate of :func:`qos_multi_rb_exact` with per-RB coefficients of user ``i``."""
    Q = np.asarray(Q, dtype=float)
    out = -mrb.r_min[i] / mrb.rb_bandwidth
    for k in range(mrb.n_rb):
        if alpha[k] == 0:
            out += beta[k]
            continue
        ls = math.log2(mrb.omega[k, i, i]) + Q[i, k] - _interference_log2(
            mrb.omega[k], mrb.phi[k], mrb.noise[k], Q[:, k], i
        )
        out += alpha[k] * ls + beta[k]
    return out


# -- canonical building blocks -----------------------------------------------------


def _unit(n, idx, val=1.0):
    e = np.zeros(n)
    np.add.at(e, idx, val)
    return e


def _interference_lse(omega, phi, noise, i, qidx, n) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``log2(sum_{j!=i} omega_ji 2**q_j + phi_i 2**q_i + N_i)``.

    ``qidx[j]`` is the variable index of user ``j``'s log-power.
    """
    rows, consts = [], []
    for j in range(len(qidx)):
        c = phi[i] if j == i else omega[j, i]
        if c > 0:
            rows.append(_unit(n, qidx[j]))
            consts.append(math.log2(c))
    rows.append(np.zeros(n))
    consts.append(math.log2(noise[i]))
    return np.array(rows), np.array(consts)


def _theta_fn(omega, phi, noise, i, gmin, qidx, n) -> CanonicalFunction:
    A, b = _interference_lse(omega, phi, noise, i, qidx, n)
    return CanonicalFunction(_unit(n, qidx[i]), math.log2(omega[i, i] / gmin), (), (LseTerm(1.0, A, b),))


def _rate_bound_parts(omega, phi, noise, i, alpha, beta, qidx, n):
    """Affine coefficient, constant and lse term of ``rate_bound / B``."""
    coef = _unit(n, qidx[i], alpha)
    const = beta + (alpha * math.log2(omega[i, i]) if alpha > 0 else 0.0)
    lses = ()
    if alpha > 0:
        A, b = _interference_lse(omega, phi, noise, i, qidx, n)
        lses = (LseTerm(alpha, A, b),)
    return coef, const, lses


def _scaled(fn: CanonicalFunction, k: float) -> CanonicalFunction:
    """``k * fn`` for ``k > 0``."""
    return CanonicalFunction(
        k * fn.coef, k * fn.const,
        tuple(ExpTerm(k * t.weight, t.coef, t.const) for t in fn.exp_terms),
        tuple(LseTerm(k * t.weight, t.coefs, t.consts) for t in fn.lse_terms),
    )


def _normalized_objective_weights(weights, v_prime):
    """Coefficients of ``pi(v) = sum w 2**v' v`` divided by their sum."""
    vp = np.asarray(v_prime, dtype=float)
    c = np.asarray(weights, dtype=float) * np.exp2(vp - vp.max())
    tot = c.sum()
    return c / tot if tot > 0 else c


@dataclass(frozen=True)
class SurrogateProblem:
    kind: str  # "wsee" | "wsee_general" | "wsr" | "wsee_multi_rb"
    program: ConvexProgram
    q_prime: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    v_prime: np.ndarray | None = None
    y_prime: np.ndarray | None = None
    n_users: int = 0
    n_rb: int = 1

    def split(self, x) -> dict:
        """Decision vector ``x`` to named blocks (``q`` is (N, K) for multi-RB)."""
        x = np.asarray(x, dtype=float)
        n, k = self.n_users, self.n_rb
        nq = n * k
        out = {"q": x[:nq].reshape(n, k) if self.kind == "wsee_multi_rb" else x[:nq]}
        if self.kind == "wsee_general":
            out["y"] = x[nq : nq + n]
            out["v"] = x[nq + n : nq + 2 * n]
        elif self.kind != "wsr":
            out["v"] = x[nq : nq + n]
        return out

    def expansion_point(self) -> np.ndarray:
        parts = [np.ravel(self.q_prime)]
        if self.y_prime is not None:
            parts.append(self.y_prime)
        if self.v_prime is not None:
            parts.append(self.v_prime)
        return np.concatenate(parts)


def _qos_rows(inst: NetworkInstance, qidx, n):
    rows, names = [], []
    for i, u in enumerate(inst.users):
        if u.r_min > 0:
            gmin = gamma_min(u, inst.bandwidth)
            rows.append(_theta_fn(inst.omega, inst.phi, inst.noise, i, gmin, qidx, n))
            names.append(f"qos[{i}]")
    return rows, names


def _q_box(p_max, n_total, qidx):
    lower = np.full(n_total, -np.inf)
    upper = np.full(n_total, np.inf)
    upper[list(qidx)] = np.log2(p_max)
    return lower, upper


def build_wsee_subproblem(inst: NetworkInstance, q_prime, v_prime) -> SurrogateProblem:
    """Convex surrogate over (q, v): caps, QoS, and the bounded EE constraints."""
    N = inst.n_users
    n = 2 * N
    q_prime = np.asarray(q_prime, dtype=float)
    v_prime = np.asarray(v_prime, dtype=float)
    qidx = list(range(N))
    vidx = list(range(N, 2 * N))
    alpha, beta = _coeff_arrays(expansion_sinr(inst, q_prime))
    cons, names = _qos_rows(inst, qidx, n)
    B = inst.bandwidth
    for i, u in enumerate(inst.users):
        coef, const, lses = _rate_bound_parts(inst.omega, inst.phi, inst.noise, i, alpha[i], beta[i], qidx, n)
        exps = (
            ExpTerm(u.mu / B, _unit(n, [qidx[i], vidx[i]]), 0.0),
            ExpTerm(u.p_st / B, _unit(n, vidx[i]), 0.0),
        )
        scale = (u.mu * 2.0 ** q_prime[i] + u.p_st) * 2.0 ** v_prime[i] / B
        cons.append(_scaled(CanonicalFunction(coef, const, exps, lses), 1.0 / scale))
        names.append(f"ee[{i}]")
    obj = np.zeros(n)
    obj[N:] = _normalized_objective_weights(inst.weights, v_prime)
    lower, upper = _q_box(inst.p_max, n, qidx)
    prog = ConvexProgram(CanonicalFunction.affine(obj), tuple(cons), lower, upper, tuple(names))
    return SurrogateProblem("wsee", prog, q_prime, alpha, beta, v_prime=v_prime, n_users=N)


def build_wsee_general_subproblem(
    inst: NetworkInstance, general: Sequence[GeneralPowerUser], q_prime, y_prime, v_prime
) -> SurrogateProblem:
    """Convex surrogate over (q, y, v) for the rate-dependent consumption model."""
    N = inst.n_users
    n = 3 * N
    q_prime = np.asarray(q_prime, dtype=float)
    qidx = list(range(N))
    yidx = list(range(N, 2 * N))
    vidx = list(range(2 * N, 3 * N))
    alpha, beta = _coeff_arrays(expansion_sinr(inst, q_prime))
    cons, names = _qos_rows(inst, qidx, n)
    log2B = math.log2(inst.bandwidth)
    y_prime = np.asarray(y_prime, dtype=float)
    for i in range(N):
        coef, const, lses = _rate_bound_parts(inst.omega, inst.phi, inst.noise, i, alpha[i], beta[i], qidx, n)
        fn = CanonicalFunction(coef, const, (ExpTerm(1.0, _unit(n, yidx[i]), -log2B),), lses)
        cons.append(_scaled(fn, 2.0 ** (log2B - y_prime[i])))
        names.append(f"rate[{i}]")
    for i, g in enumerate(general):
        exps = [
            ExpTerm(m, _unit(n, [qidx[i], vidx[i], yidx[i]], [k + 1, 1.0, -1.0]), 0.0)
            for k, m in enumerate(g.mu_m) if m > 0
        ]
        if g.xi > 0:
            exps.append(ExpTerm(g.xi, _unit(n, [vidx[i], yidx[i]], [1.0, -(1.0 - g.delta)]), 0.0))
        exps.append(ExpTerm(g.p_st, _unit(n, [vidx[i], yidx[i]], [1.0, -1.0]), 0.0))
        cons.append(CanonicalFunction(np.zeros(n), 1.0, tuple(exps)))
        names.append(f"ee[{i}]")
    obj = np.zeros(n)
    obj[2 * N :] = _normalized_objective_weights(inst.weights, v_prime)
    lower, upper = _q_box(inst.p_max, n, qidx)
    prog = ConvexProgram(CanonicalFunction.affine(obj), tuple(cons), lower, upper, tuple(names))
    return SurrogateProblem(
        "wsee_general", prog, q_prime, alpha, beta,
        v_prime=np.asarray(v_prime, dtype=float), y_prime=y_prime, n_users=N,
    )


def build_wsr_subproblem(inst: NetworkInstance, q_prime) -> SurrogateProblem:
    """Convex surrogate over q: maximize the weighted sum of rate bounds."""
    N = inst.n_users
    q_prime = np.asarray(q_prime, dtype=float)
    qidx = list(range(N))
    alpha, beta = _coeff_arrays(expansion_sinr(inst, q_prime))
    coef = np.zeros(N)
    const = 0.0
    lses = []
    for i, w in enumerate(inst.weights):
        c, k, l = _rate_bound_parts(inst.omega, inst.phi, inst.noise, i, alpha[i], beta[i], qidx, N)
        coef += w * c
        const += w * k
        lses.extend(LseTerm(w * t.weight, t.coefs, t.consts) for t in l if w > 0)
    cons, names = _qos_rows(inst, qidx, N)
    lower, upper = _q_box(inst.p_max, N, qidx)
    prog = ConvexProgram(CanonicalFunction(coef, const, (), tuple(lses)), tuple(cons), lower, upper, tuple(names))
    return SurrogateProblem("wsr", prog, q_prime, alpha, beta, n_users=N)


def build_multi_rb_qos(mrb: MultiRbInstance, Q_prime, qidx=None, n=None):
    """QoS constraint rows over the (N, K) log-power matrix.

    With ``K = 1`` the exact (already concave) log form is emitted; for ``K > 1``
    each RB's rate is replaced by its logarithmic lower bound at ``Q_prime``.
    Users without a rate requirement get no row.  Returns (functions, names).
    """
    N, K = mrb.n_users, mrb.n_rb
    Q_prime = np.asarray(Q_prime, dtype=float)
    if qidx is None:
        qidx = np.arange(N * K).reshape(N, K)
    n = N * K if n is None else n
    rows, names = [], []
    if K == 1:
        inst = mrb.rb(0)
        for i, u in enumerate(mrb.users):
            if u.r_min > 0:
                gmin = gamma_min(u, mrb.rb_bandwidth)
                rows.append(_theta_fn(inst.omega, inst.phi, inst.noise, i, gmin, qidx[:, 0], n))
                names.append(f"qos[{i}]")
        return rows, names
    alpha, beta = _coeff_arrays(sinr_multi_rb(mrb, np.exp2(Q_prime)))
    for i, u in enumerate(mrb.users):
        if u.r_min <= 0:
            continue
        coef = np.zeros(n)
        const = -u.r_min / mrb.rb_bandwidth
        lses = []
        for k in range(K):
            c, b0, l = _rate_bound_parts(mrb.omega[k], mrb.phi[k], mrb.noise[k], i, alpha[i, k], beta[i, k], qidx[:, k], n)
            coef += c
            const += b0
            lses.extend(l)
        rows.append(CanonicalFunction(coef, const, (), tuple(lses)))
        names.append(f"qos[{i}]")
    return rows, names


def build_wsee_multi_rb_subproblem(mrb: MultiRbInstance, Q_prime, v_prime) -> SurrogateProblem:
    """Convex surrogate over (Q, v) with a total power budget per user."""
    N, K = mrb.n_users, mrb.n_rb
    n = N * K + N
    Q_prime = np.asarray(Q_prime, dtype=float).reshape(N, K)
    qidx = np.arange(N * K).reshape(N, K)
    vidx = np.arange(N * K, n)
    alpha, beta = _coeff_arrays(sinr_multi_rb(mrb, np.exp2(Q_prime)))
    cons, names = build_multi_rb_qos(mrb, Q_prime, qidx, n)
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    upper[: N * K] = np.repeat(np.log2(mrb.p_max), K)
    if K > 1:
        for i in range(N):
            A = np.array([_unit(n, qidx[i, k]) for k in range(K)])
            cons.append(CanonicalFunction(np.zeros(n), math.log2(mrb.p_max[i]), (), (LseTerm(1.0, A, np.zeros(K)),)))
            names.append(f"power[{i}]")
    Bk = mrb.rb_bandwidth
    v_prime = np.asarray(v_prime, dtype=float)
    for i, u in enumerate(mrb.users):
        coef = np.zeros(n)
        const = 0.0
        lses = []
        for k in range(K):
            c, b0, l = _rate_bound_parts(mrb.omega[k], mrb.phi[k], mrb.noise[k], i, alpha[i, k], beta[i, k], qidx[:, k], n)
            coef += c
            const += b0
            lses.extend(l)
        exps = [ExpTerm(u.mu / Bk, _unit(n, [qidx[i, k], vidx[i]]), 0.0) for k in range(K)]
        exps.append(ExpTerm(u.p_st / Bk, _unit(n, vidx[i]), 0.0))
        scale = (u.mu * np.exp2(Q_prime[i]).sum() + u.p_st) * 2.0 ** v_prime[i] / Bk
        cons.append(_scaled(CanonicalFunction(coef, const, tuple(exps), tuple(lses)), 1.0 / scale))
        names.append(f"ee[{i}]")
    obj = np.zeros(n)
    obj[N * K :] = _normalized_objective_weights(mrb.weights, v_prime)
    prog = ConvexProgram(CanonicalFunction.affine(obj), tuple(cons), lower, upper, tuple(names))
    return SurrogateProblem(
        "wsee_multi_rb", prog, Q_prime, alpha, beta,
        v_prime=v_prime, n_users=N, n_rb=K,
    )
