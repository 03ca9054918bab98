import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from wsee.model import MultiRbInstance, NetworkInstance, UserLink


def make_instance(omega, phi, noise, B=1.0, weights=None, p_max=1.0, r_min=0.0, mu=1.0, p_st=1.0):
    omega = np.asarray(omega, dtype=float)
    n = omega.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    pm, rm, m, ps = (np.broadcast_to(np.asarray(x, dtype=float), (n,)) for x in (p_max, r_min, mu, p_st))
    users = [UserLink(w[i], pm[i], rm[i], m[i], ps[i]) for i in range(n)]
    return NetworkInstance(B, omega, np.broadcast_to(phi, (n,)), np.broadcast_to(noise, (n,)), users)


def random_instance(rng, n=3, phi_scale=0.0, p_max=1.0, mu=5.0, p_st=0.375, B=2e6, noise=1e-3):
    """Random network with cross gains below the direct gains."""
    omega = rng.uniform(0.01, 0.3, size=(n, n))
    np.fill_diagonal(omega, rng.uniform(0.5, 2.0, size=n))
    phi = phi_scale * rng.uniform(0.0, 1.0, size=n)
    w = rng.uniform(0.2, 1.0, size=n)
    return make_instance(omega, phi, noise * rng.uniform(0.5, 2.0, size=n), B=B, weights=w / w.sum(),
                         p_max=p_max, mu=mu, p_st=p_st)


def random_multi_rb(rng, n=2, k=2, p_max=1.0, B=1e6):
    omega = rng.uniform(0.01, 0.3, size=(k, n, n))
    for rb in range(k):
        np.fill_diagonal(omega[rb], rng.uniform(0.5, 2.0, size=n))
    users = [UserLink(1.0 / n, p_max, 0.0, 5.0, 0.375) for _ in range(n)]
    return MultiRbInstance(B, omega, np.zeros((k, n)), np.full((k, n), 1e-3), users)


@pytest.fixture
def hand_instance():
    """Two users: omega[1,1]=2, omega[2,2]=3, unit cross gains and noise."""
    return make_instance([[2.0, 1.0], [1.0, 3.0]], 0.0, 1.0, B=2e6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_canonical(rng, n, n_exp=2, n_lse=2, rows=3, scale=1.0):
    """Random concave canonical function with moderate exponents."""
    from wsee.solver import CanonicalFunction

    exps = [(rng.uniform(0.1, 1.0), scale * rng.uniform(-1, 1, n), rng.uniform(-1, 1)) for _ in range(n_exp)]
    lses = [(rng.uniform(0.1, 1.0), scale * rng.uniform(-1, 1, (rows, n)), rng.uniform(-1, 1, rows))
            for _ in range(n_lse)]
    return CanonicalFunction(rng.uniform(-1, 1, n), rng.uniform(-1, 1), exps, lses)


def planted_program(rng, n=3, n_inactive=2, box=4.0):
    """Program whose maximizer ``x_star`` sits on one active constraint.

    The objective is ``c . x + offset`` with ``c = -lam * grad g(x_star)`` so
    the KKT conditions hold at ``x_star`` with multiplier ``lam``; concavity
    makes it the global maximum.  Returns (program, x_star, optimal value).
    """
    from wsee.solver import CanonicalFunction, ConvexProgram, evaluate

    x_star = rng.uniform(-1, 1, n)
    g = random_canonical(rng, n)
    gv, gg, _ = evaluate(g, x_star)
    active = CanonicalFunction(g.coef, g.const - gv, g.exp_terms, g.lse_terms)
    lam = rng.uniform(0.5, 2.0)
    c = -lam * gg
    offset = 10.0 * rng.uniform(0.5, 1.5)
    cons = [active]
    for _ in range(n_inactive):
        h = random_canonical(rng, n, n_exp=1, n_lse=1)
        hv = evaluate(h, x_star)[0]
        # slack of at least 1 at the optimum
        cons.append(CanonicalFunction(h.coef, h.const - hv + rng.uniform(1.0, 3.0), h.exp_terms, h.lse_terms))
    order = rng.permutation(len(cons))
    prog = ConvexProgram(CanonicalFunction.affine(c, offset), tuple(cons[k] for k in order),
                         np.full(n, -box), np.full(n, box))
    return prog, x_star, float(c @ x_star + offset)


def golden_max(fn, lo, hi):
    """Maximum of a unimodal function of log2 p on [lo, hi] by golden-section search."""
    grid = np.linspace(lo, hi, 201)
    vals = [fn(2.0 ** q) for q in grid]
    k = int(np.argmax(vals))
    if k in (0, len(grid) - 1):
        return 2.0 ** grid[k], vals[k]
    res = minimize_scalar(lambda q: -fn(2.0 ** q), bracket=(grid[k - 1], grid[k], grid[k + 1]),
                          method="golden", options={"xtol": 1e-12})
    return 2.0 ** res.x, -res.fun


def pytest_terminal_summary(terminalreporter):
    import criteria

    if criteria.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(criteria.RESULTS):
            terminalreporter.write_line(criteria.RESULTS[k])
