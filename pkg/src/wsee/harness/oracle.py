"""Exhaustive grid search with local pattern refinement for very small instances."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..model import NetworkInstance

MAX_USERS = 3
GRID_LOW = 1e-6  # grid spans [GRID_LOW * p_max, p_max] per user
STENCIL = 10  # refinement points on each side of the incumbent
CHUNK = 200_000


class OracleTooLarge(ValueError):
    pass


@dataclass
class OracleResult:
    p_wsee: np.ndarray | None
    wsee: float
    p_wsr: np.ndarray | None
    wsr: float
    resolution_wsee: float  # largest objective change across the finest stencil
    resolution_wsr: float
    n_feasible: int


def _evaluate(inst: NetworkInstance, P: np.ndarray, tol: float):
    """WSEE, WSR and QoS feasibility for every row of ``P``."""
    received = P @ inst.omega
    signal = inst.direct * P
    rates = inst.bandwidth * np.log2(1.0 + signal / (received - signal + inst.phi * P + inst.noise))
    ok = np.all((inst.r_min <= 0) | (rates >= inst.r_min * (1 - tol)), axis=1)
    ee = rates / (inst.mu * P + inst.p_st)
    return ee @ inst.weights, rates @ inst.weights, ok


def _grid_search(inst, axes, tol):
    """Best feasible grid point for both objectives, streaming over the first axis."""
    n = inst.n_users
    best = {"wsee": (-math.inf, None), "wsr": (-math.inf, None)}
    count = 0
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), -1).reshape(-1, n - 1) if n > 1 else np.zeros((1, 0))
    per = max(1, CHUNK // len(rest))
    for start in range(0, len(axes[0]), per):
        first = axes[0][start : start + per]
        P = np.hstack([np.repeat(first, len(rest))[:, None], np.tile(rest, (len(first), 1))])
        fe, fr, ok = _evaluate(inst, P, tol)
        count += int(ok.sum())
        for name, f in (("wsee", fe), ("wsr", fr)):
            f = np.where(ok, f, -np.inf)
            k = int(np.argmax(f))
            if f[k] > best[name][0]:
                best[name] = (float(f[k]), P[k].copy())
    return best, count


def _repair(inst, P, iters: int = 200):
    """Raise QoS-violating powers to their minimum feasible level given the others.

    The map is monotone, so iterating it converges to the smallest feasible
    point above ``P`` when one exists; feasible rows are returned unchanged.
    Rows that would need more than ``p_max`` are left infeasible.
    """
    need = inst.r_min > 0
    if not need.any():
        return P
    gmin = np.where(need, np.exp2(inst.r_min / inst.bandwidth) - 1.0, 0.0)
    margin = inst.direct - gmin * inst.phi
    ok_users = ~need | (margin > 0)
    P = P.copy()
    for _ in range(iters):
        interf = P @ inst.omega - inst.direct * P + inst.noise
        floor = np.where(need & ok_users, gmin * interf / np.where(margin > 0, margin, 1.0), 0.0)
        # a hair above the boundary so rounding keeps the point feasible
        floor *= 1.0 + 1e-12
        newP = np.minimum(np.maximum(P, floor), inst.p_max)
        if np.array_equal(newP, P):
            break
        P = newP
    return P


def _directions(n):
    """All 3**n - 1 non-zero vectors with entries in {-1, 0, 1}."""
    d = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n)))
    return d[np.any(d != 0, axis=1)]


def _refine(inst, p, f_best, which, h, rounds, tol, lo, hi):
    """Pattern search on log2(p) along axis and diagonal directions.

    Each trial point is pushed back onto the QoS-feasible set by
    :func:`_repair`, so the search can slide along a constraint boundary that
    is not axis-aligned.  The step shrinks by STENCIL each round.  Returns the improved point, its
    value and the largest objective change to a feasible neighbour of the
    final stencil.
    """
    q = np.log2(p)
    dirs = _directions(inst.n_users)
    mult = np.arange(1, STENCIL + 1)
    moves = (dirs[:, None, :] * mult[None, :, None]).reshape(-1, inst.n_users)
    for k in range(rounds + 1):
        step = h / STENCIL ** k
        for _sweep in range(500):
            cand = np.log2(_repair(inst, np.exp2(np.clip(q + step * moves, lo, hi))))
            vals = _evaluate(inst, np.exp2(cand), tol)
            f = np.where(vals[2], vals[which], -np.inf)
            j = int(np.argmax(f))
            if not f[j] > f_best:
                break
            f_best, q = float(f[j]), cand[j]
    step = h / STENCIL ** rounds
    cand = _repair(inst, np.exp2(np.clip(q + step * dirs, lo, hi)))
    vals = _evaluate(inst, cand, tol)
    diffs = np.abs(vals[which][vals[2]] - f_best)
    return np.exp2(q), f_best, float(diffs.max(initial=0.0))


def brute_force_oracle(inst: NetworkInstance, grid: int = 400, refine: int = 3, tol: float = 1e-9) -> OracleResult:
    """Best WSEE and WSR over a per-user log grid honouring the QoS constraints.

    The grid has ``grid`` points per user between ``1e-6 * p_max`` and
    ``p_max``; ``refine`` rounds of local pattern search follow.
    """
    if inst.n_users > MAX_USERS:
        raise OracleTooLarge(f"brute-force oracle limited to {MAX_USERS} users, got {inst.n_users}")
    if grid < 2:
        raise ValueError("grid needs at least 2 points per dimension")
    lo = np.log2(GRID_LOW * inst.p_max)
    hi = np.log2(inst.p_max)
    axes = [np.exp2(np.linspace(a, b, grid)) for a, b in zip(lo, hi)]
    # make the endpoints exact so p_max itself is on the grid
    for ax, pm in zip(axes, inst.p_max):
        ax[-1] = pm
    best, count = _grid_search(inst, axes, tol)
    h = float(np.max((hi - lo) / (grid - 1)))
    out = {}
    for name, which in (("wsee", 0), ("wsr", 1)):
        f, p = best[name]
        if p is None:
            out[name] = (None, math.nan, math.nan)
            continue
        out[name] = _refine(inst, p, f, which, h, refine, tol, lo, hi)
    return OracleResult(
        out["wsee"][0], out["wsee"][1], out["wsr"][0], out["wsr"][1],
        out["wsee"][2], out["wsr"][2], count,
    )
