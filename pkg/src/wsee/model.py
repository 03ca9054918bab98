"""Exact evaluation of the interference network model.

Conventions: ``omega[j, i]`` is the gain from transmitter ``j`` to receiver
``i``, user indices are 0-based, and every quantity is in SI units (W, Hz,
bit/s, bit/J).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

LN2 = math.log(2.0)


@dataclass(frozen=True)
class UserLink:
    weight: float
    p_max: float
    r_min: float = 0.0
    mu: float = 1.0
    p_st: float = 1.0

    def __post_init__(self):
        if not self.weight >= 0:
            raise ValueError(f"weight must be >= 0, got {self.weight}")
        if not self.p_max > 0:
            raise ValueError(f"p_max must be > 0, got {self.p_max}")
        if not self.r_min >= 0:
            raise ValueError(f"r_min must be >= 0, got {self.r_min}")
        if not self.mu >= 1:
            raise ValueError(f"mu must be >= 1 (mu = 1/eta), got {self.mu}")
        if not self.p_st > 0:
            raise ValueError(f"p_st must be > 0, got {self.p_st}")


@dataclass(frozen=True)
class GeneralPowerUser:
    """Rate-dependent consumption ``sum_m mu_m p^m + xi R^delta + p_st``.

    ``mu_m[0]`` is the linear coefficient (the inverse amplifier efficiency).
    """

    mu_m: tuple[float, ...]
    xi: float = 0.0
    delta: float = 1.0
    p_st: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu_m", tuple(float(m) for m in self.mu_m))
        if not self.mu_m:
            raise ValueError("mu_m needs at least the linear coefficient")
        if any(not m >= 0 for m in self.mu_m) or self.mu_m[0] < 1:
            raise ValueError(f"mu_m must be >= 0 with mu_m[0] >= 1, got {self.mu_m}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.xi >= 0:
            raise ValueError(f"xi must be >= 0, got {self.xi}")
        if not self.p_st > 0:
            raise ValueError(f"p_st must be > 0, got {self.p_st}")

    @classmethod
    def from_link(cls, user: UserLink, extra_mu=(), xi=0.0, delta=1.0):
        return cls((user.mu, *extra_mu), xi=xi, delta=delta, p_st=user.p_st)


def _check_gains(omega, phi, noise, n):
    if omega.shape != (n, n):
        raise ValueError(f"gain matrix must be {n}x{n}, got {omega.shape}")
    if phi.shape != (n,) or noise.shape != (n,):
        raise ValueError("self_interference and noise must have one entry per user")
    if not (np.all(np.isfinite(omega)) and np.all(omega >= 0)):
        raise ValueError("gains must be finite and non-negative")
    if not np.all(np.diag(omega) > 0):
        raise ValueError("direct-link gains omega[i, i] must be > 0")
    if not (np.all(np.isfinite(phi)) and np.all(phi >= 0)):
        raise ValueError("self-interference must be finite and non-negative")
    if not (np.all(np.isfinite(noise)) and np.all(noise > 0)):
        raise ValueError("noise must be finite and > 0")


def _freeze(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkInstance:
    bandwidth: float
    omega: np.ndarray
    phi: np.ndarray
    noise: np.ndarray
    users: tuple[UserLink, ...]

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        for name in ("omega", "phi", "noise"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        if self.n_users < 1:
            raise ValueError("need at least one user")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        _check_gains(self.omega, self.phi, self.noise, self.n_users)
        total = sum(u.weight for u in self.users)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total!r}")

    @property
    def n_users(self) -> int:
        return len(self.users)

    @cached_property
    def weights(self) -> np.ndarray:
        return _freeze([u.weight for u in self.users])

    @cached_property
    def p_max(self) -> np.ndarray:
        return _freeze([u.p_max for u in self.users])

    @cached_property
    def r_min(self) -> np.ndarray:
        return _freeze([u.r_min for u in self.users])

    @cached_property
    def mu(self) -> np.ndarray:
        return _freeze([u.mu for u in self.users])

    @cached_property
    def p_st(self) -> np.ndarray:
        return _freeze([u.p_st for u in self.users])

    @cached_property
    def direct(self) -> np.ndarray:
        return _freeze(np.diag(self.omega))

    def with_users(self, users: Sequence[UserLink]) -> "NetworkInstance":
        return NetworkInstance(self.bandwidth, self.omega, self.phi, self.noise, tuple(users))

    def with_r_min(self, r_min) -> "NetworkInstance":
        return self.with_users(
            [replace(u, r_min=float(r)) for u, r in zip(self.users, r_min)]
        )

    def with_p_max(self, p_max) -> "NetworkInstance":
        p_max = np.broadcast_to(np.asarray(p_max, dtype=float), (self.n_users,))
        return self.with_users(
            [replace(u, p_max=float(pm)) for u, pm in zip(self.users, p_max)]
        )


@dataclass(frozen=True)
class MultiRbInstance:
    """``K`` parallel resource blocks; ``omega[k, j, i]`` is the RB-``k`` gain."""

    rb_bandwidth: float
    omega: np.ndarray
    phi: np.ndarray
    noise: np.ndarray
    users: tuple[UserLink, ...]

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        for name in ("omega", "phi", "noise"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        n = len(self.users)
        if self.omega.ndim != 3 or self.omega.shape[0] < 1:
            raise ValueError("omega must have shape (K, N, N)")
        k = self.omega.shape[0]
        if self.phi.shape != (k, n) or self.noise.shape != (k, n):
            raise ValueError("phi and noise must have shape (K, N)")
        if not self.rb_bandwidth > 0:
            raise ValueError("rb_bandwidth must be > 0")
        for rb in range(k):
            _check_gains(self.omega[rb], self.phi[rb], self.noise[rb], n)
        total = sum(u.weight for u in self.users)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total!r}")

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_rb(self) -> int:
        return self.omega.shape[0]

    def rb(self, k: int) -> NetworkInstance:
        """Single-RB view of block ``k`` (bandwidth ``rb_bandwidth``)."""
        return NetworkInstance(self.rb_bandwidth, self.omega[k], self.phi[k], self.noise[k], self.users)

    @classmethod
    def from_single(cls, inst: NetworkInstance) -> "MultiRbInstance":
        return cls(inst.bandwidth, inst.omega[None], inst.phi[None], inst.noise[None], inst.users)

    def with_users(self, users: Sequence[UserLink]) -> "MultiRbInstance":
        return MultiRbInstance(self.rb_bandwidth, self.omega, self.phi, self.noise, tuple(users))

    def with_r_min(self, r_min) -> "MultiRbInstance":
        return self.with_users([replace(u, r_min=float(r)) for u, r in zip(self.users, r_min)])

    def with_p_max(self, p_max) -> "MultiRbInstance":
        p_max = np.broadcast_to(np.asarray(p_max, dtype=float), (self.n_users,))
        return self.with_users([replace(u, p_max=float(pm)) for u, pm in zip(self.users, p_max)])

    @cached_property
    def weights(self) -> np.ndarray:
        return _freeze([u.weight for u in self.users])

    @cached_property
    def p_max(self) -> np.ndarray:
        return _freeze([u.p_max for u in self.users])

    @cached_property
    def r_min(self) -> np.ndarray:
        return _freeze([u.r_min for u in self.users])

    @cached_property
    def mu(self) -> np.ndarray:
        return _freeze([u.mu for u in self.users])

    @cached_property
    def p_st(self) -> np.ndarray:
        return _freeze([u.p_st for u in self.users])


def _power(p, n) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValueError(f"power vector must have shape ({n},), got {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("powers must be finite and non-negative")
    return p


def _index(i, n):
    if not (isinstance(i, (int, np.integer)) and 0 <= i < n):
        raise IndexError(f"user index {i!r} out of range for {n} users")
    return int(i)


def _sinr_vec(omega, direct, phi, noise, p):
    received = p @ omega  # sum_j omega[j, i] p_j
    signal = direct * p
    return signal / (received - signal + phi * p + noise)


def sinr(inst: NetworkInstance, p, i: int | None = None):
    """SINR of user ``i``, or the whole SINR vector when ``i`` is None."""
    p = _power(p, inst.n_users)
    g = _sinr_vec(inst.omega, inst.direct, inst.phi, inst.noise, p)
    return g if i is None else float(g[_index(i, inst.n_users)])


def rate(inst: NetworkInstance, p, i: int | None = None):
    r = inst.bandwidth * np.log2(1.0 + sinr(inst, p))
    return r if i is None else float(r[_index(i, inst.n_users)])


def power_consumed_linear(user: UserLink, p_i: float) -> float:
    if p_i < 0:
        raise ValueError(f"negative transmit power {p_i}")
    return user.mu * p_i + user.p_st


def power_consumed_general(user: GeneralPowerUser, p_i: float, rate_i: float) -> float:
    if p_i < 0 or rate_i < 0:
        raise ValueError("power and rate must be non-negative")
    poly = sum(m * p_i ** (k + 1) for k, m in enumerate(user.mu_m))
    return poly + user.xi * rate_i ** user.delta + user.p_st


def ee(inst: NetworkInstance, p, i: int | None = None):
    """Energy efficiency R_i / (mu_i p_i + P_st,i) in bit/J."""
    p = _power(p, inst.n_users)
    e = rate(inst, p) / (inst.mu * p + inst.p_st)
    return e if i is None else float(e[_index(i, inst.n_users)])


def psi(user: GeneralPowerUser, p_i: float, rho_i: float) -> float:
    """EE as a function of power and (possibly relaxed) rate under the general model."""
    return rho_i / power_consumed_general(user, p_i, rho_i)


def ee_general(inst: NetworkInstance, general: Sequence[GeneralPowerUser], p, i: int | None = None):
    p = _power(p, inst.n_users)
    r = rate(inst, p)
    e = np.array([psi(u, pi, ri) for u, pi, ri in zip(general, p, r)])
    return e if i is None else float(e[_index(i, inst.n_users)])


def wsee(inst: NetworkInstance, p) -> float:
    return float(inst.weights @ ee(inst, p))


def wsr(inst: NetworkInstance, p) -> float:
    return float(inst.weights @ rate(inst, p))


def wsee_general(inst: NetworkInstance, general: Sequence[GeneralPowerUser], p) -> float:
    return float(inst.weights @ ee_general(inst, general, p))


def gamma_min(user: UserLink, bandwidth: float) -> float:
    return 2.0 ** (user.r_min / bandwidth) - 1.0


def gamma_max(inst: NetworkInstance, i: int) -> float:
    """Limit of the SINR as p_i grows without bound; ``inf`` when phi_i = 0."""
    i = _index(i, inst.n_users)
    if inst.phi[i] == 0:
        return math.inf
    return float(inst.direct[i] / inst.phi[i])


def rate_log_jacobian(inst: NetworkInstance, p) -> np.ndarray:
    """``J[i, j] = d R_i / d q_j`` with ``p = 2**q``."""
    p = _power(p, inst.n_users)
    coef = inst.omega.T * 1.0  # coef[i, j] = omega[j, i]
    np.fill_diagonal(coef, inst.phi)
    terms = coef * p  # interference contributions at receiver i
    denom = terms.sum(axis=1) + inst.noise
    total = denom + inst.direct * p
    own = np.zeros_like(terms)
    np.fill_diagonal(own, inst.direct * p)
    return inst.bandwidth * ((terms + own) / total[:, None] - terms / denom[:, None])


class Violation(NamedTuple):
    kind: str  # "power_lower" | "power_upper" | "rate"
    user: int
    value: float
    limit: float


class Feasibility(NamedTuple):
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


def _feasibility(p, p_max, rates, r_min, tol) -> Feasibility:
    out = []
    for i in range(len(p_max)):
        if p[i] < -tol * p_max[i]:
            out.append(Violation("power_lower", i, float(p[i]), 0.0))
        if p[i] > p_max[i] * (1 + tol):
            out.append(Violation("power_upper", i, float(p[i]), float(p_max[i])))
        if r_min[i] > 0 and rates[i] < r_min[i] * (1 - tol):
            out.append(Violation("rate", i, float(rates[i]), float(r_min[i])))
    return Feasibility(not out, out)


def is_feasible(inst: NetworkInstance, p, tol: float = 1e-9) -> Feasibility:
    """Check ``0 <= p <= p_max`` and ``R_i(p) >= r_min_i`` with relative tolerance."""
    p = np.asarray(p, dtype=float)
    rates = rate(inst, np.maximum(p, 0.0))
    return _feasibility(p, inst.p_max, rates, inst.r_min, tol)


# -- multiple resource blocks -------------------------------------------------


def _rb_powers(mrb: MultiRbInstance, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape != (mrb.n_users, mrb.n_rb):
        raise ValueError(f"power matrix must be {mrb.n_users}x{mrb.n_rb}, got {P.shape}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise ValueError("powers must be finite and non-negative")
    return P


def sinr_multi_rb(mrb: MultiRbInstance, P) -> np.ndarray:
    """Per-RB SINRs, shape (N, K)."""
    P = _rb_powers(mrb, P)
    out = np.empty_like(P)
    for k in range(mrb.n_rb):
        om = mrb.omega[k]
        out[:, k] = _sinr_vec(om, np.diag(om), mrb.phi[k], mrb.noise[k], P[:, k])
    return out


def rate_multi_rb(mrb: MultiRbInstance, P, i: int | None = None):
    r = mrb.rb_bandwidth * np.log2(1.0 + sinr_multi_rb(mrb, P)).sum(axis=1)
    return r if i is None else float(r[_index(i, mrb.n_users)])


def ee_multi_rb(mrb: MultiRbInstance, P, i: int | None = None):
    """Consumption uses the total transmit power of the user across RBs."""
    P = _rb_powers(mrb, P)
    e = rate_multi_rb(mrb, P) / (mrb.mu * P.sum(axis=1) + mrb.p_st)
    return e if i is None else float(e[_index(i, mrb.n_users)])


def wsee_multi_rb(mrb: MultiRbInstance, P) -> float:
    return float(mrb.weights @ ee_multi_rb(mrb, P))


def is_feasible_multi_rb(mrb: MultiRbInstance, P, tol: float = 1e-9) -> Feasibility:
    P = np.asarray(P, dtype=float)
    if np.any(P < -tol * mrb.p_max[:, None]):
        bad = [Violation("power_lower", int(i), float(P[i].min()), 0.0)
               for i in np.nonzero((P < -tol * mrb.p_max[:, None]).any(axis=1))[0]]
        return Feasibility(False, bad)
    rates = rate_multi_rb(mrb, np.maximum(P, 0.0))
    return _feasibility(P.sum(axis=1), mrb.p_max, rates, mrb.r_min, tol)


# -- unit helpers at the configuration boundary --------------------------------


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)
