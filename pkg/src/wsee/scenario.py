"""Random relay-assisted MIMO instances.

N single-user links share one single-antenna amplify-and-forward relay.
Transmitters split power equally over their antennas and receivers use
maximum-ratio combining; the resulting SINR has the interference-network form
used by :mod:`wsee.model`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import jsonschema
import numpy as np

from . import model
from .model import GeneralPowerUser, MultiRbInstance, NetworkInstance, UserLink

SPEED_OF_LIGHT = 299_792_458.0
MASK64 = (1 << 64) - 1


class DegenerateTarget(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 5
    n_tx_antennas: int = 2
    n_rx_antennas: int = 2
    relay_power_dbm: float = 30.0  # math.inf removes the relay-noise terms
    carrier_hz: float = 2e9
    bandwidth: float = 2e6
    noise_figure_db: float = 3.0
    noise_psd_dbm_hz: float = -174.0
    mu: float = 5.0
    p_st: float = 0.375
    p_max_dbm: float = 20.0
    weights: tuple | None = None
    r: float = 0.0
    d_min: float = 200.0
    d_max: float = 300.0
    d_ref: float = 100.0
    path_loss_exponent: float = 3.5
    shadowing_db: float = 8.0
    seed: int = 0
    # extensions: resource blocks and the rate-dependent consumption model
    n_rb: int = 2
    extra_mu: tuple = ()
    xi: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        if self.n_users < 1 or self.n_tx_antennas < 1 or self.n_rx_antennas < 1:
            raise ValueError("user and antenna counts must be >= 1")
        if not 0 <= self.r:
            raise ValueError("QoS fraction r must be >= 0")
        if not 0 < self.d_min <= self.d_max:
            raise ValueError("need 0 < d_min <= d_max")
        if self.weights is not None and len(self.weights) != self.n_users:
            raise ValueError("one weight per user")

    @property
    def relay_power(self) -> float:
        return math.inf if math.isinf(self.relay_power_dbm) else float(model.dbm_to_watt(self.relay_power_dbm))

    @property
    def p_max(self) -> float:
        return float(model.dbm_to_watt(self.p_max_dbm))

    def noise_power(self, bandwidth: float | None = None) -> float:
        """Thermal noise F * N0 * B in watts."""
        b = self.bandwidth if bandwidth is None else bandwidth
        n0 = model.dbm_to_watt(self.noise_psd_dbm_hz)
        return float(model.db_to_linear(self.noise_figure_db) * n0 * b)

    def user_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n_users, 1.0 / self.n_users)
        return np.asarray(self.weights, dtype=float)

    def reference_loss_db(self) -> float:
        """Free-space loss at the reference distance."""
        return 20.0 * math.log10(4.0 * math.pi * self.d_ref * self.carrier_hz / SPEED_OF_LIGHT)


class ChannelDraw(NamedTuple):
    h: np.ndarray  # (N, L_T) transmitter -> relay
    g: np.ndarray  # (N, L_R) relay -> receiver
    b: np.ndarray  # (N, L_T) beamformers, unit norm
    c: np.ndarray  # (N, L_R) MRC combiners
    gain_h: np.ndarray  # (N,) linear large-scale gains of each hop
    gain_g: np.ndarray


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_seed(seed_base: int, trial: int) -> int:
    return (int(seed_base) ^ splitmix64(int(trial))) & MASK64


def path_gain(cfg: ScenarioConfig, distance, shadow_db=0.0):
    """Linear gain: free-space to d_ref, then the path-loss exponent, plus shadowing."""
    d = np.asarray(distance, dtype=float)
    loss = cfg.reference_loss_db() + 10.0 * cfg.path_loss_exponent * np.log10(d / cfg.d_ref) + shadow_db
    return 10.0 ** (-loss / 10.0)


def draw_large_scale(cfg: ScenarioConfig, rng: np.random.Generator):
    """Per-user (transmitter hop, receiver hop) linear gains with shadowing."""
    n = cfg.n_users
    d = rng.uniform(cfg.d_min, cfg.d_max, size=(2, n))
    x = rng.normal(0.0, cfg.shadowing_db, size=(2, n))
    gains = path_gain(cfg, d, x)
    return gains[0], gains[1]


def _cn(rng, shape, var):
    """Circular complex Gaussian with per-entry variance ``var`` (split evenly)."""
    s = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channels(cfg: ScenarioConfig, rng: np.random.Generator, large_scale=None) -> ChannelDraw:
    gh, gg = draw_large_scale(cfg, rng) if large_scale is None else large_scale
    n, lt, lr = cfg.n_users, cfg.n_tx_antennas, cfg.n_rx_antennas
    h = _cn(rng, (n, lt), gh[:, None])
    g = _cn(rng, (n, lr), gg[:, None])
    b = np.full((n, lt), 1.0 / math.sqrt(lt))
    hb = np.sum(h * b, axis=1)
    c = g * hb[:, None]
    return ChannelDraw(h, g, b, c, np.asarray(gh), np.asarray(gg))


def coefficients(draw: ChannelDraw, sigma2_relay: float, sigma2_rx: float, relay_power: float):
    """(omega, phi, noise) of the SINR model from one channel draw."""
    hb = np.sum(draw.h * draw.b, axis=1)  # (N,) scalar effective first hop
    cg = np.sum(np.conj(draw.c) * draw.g, axis=1)  # c_i^H g_i
    c2 = np.sum(np.abs(draw.c) ** 2, axis=1)  # ||c_i||^2
    amp = 0.0 if math.isinf(relay_power) else sigma2_rx / relay_power
    hb2 = np.abs(hb) ** 2
    # omega[j, i] = |c_i^H g_i h_j b_j|^2 + sigma_i^2 ||c_i||^2 |h_j b_j|^2 / P_r
    omega = np.outer(hb2, np.abs(cg) ** 2) + amp * np.outer(hb2, c2)
    np.fill_diagonal(omega, np.abs(cg * hb) ** 2)
    phi = amp * c2 * hb2
    noise = (np.abs(cg) ** 2 + amp * c2) * sigma2_relay
    return omega, phi, noise


def _users(cfg: ScenarioConfig, p_max: float):
    return tuple(UserLink(float(w), p_max, 0.0, cfg.mu, cfg.p_st) for w in cfg.user_weights())


def derive_instance(cfg: ScenarioConfig, draw: ChannelDraw, bandwidth: float | None = None) -> NetworkInstance:
    """Instance with ``p_max`` from the config and no rate requirements yet."""
    if np.any(np.abs(np.sum(draw.h * draw.b, axis=1)) == 0):
        raise ValueError("degenerate draw: zero effective transmitter channel")
    B = cfg.bandwidth if bandwidth is None else bandwidth
    sigma2 = cfg.noise_power(B)
    omega, phi, noise = coefficients(draw, sigma2, sigma2, cfg.relay_power)
    return NetworkInstance(B, omega, phi, noise, _users(cfg, cfg.p_max))


def benchmark_sinr(inst: NetworkInstance) -> np.ndarray:
    """SINR at equal powers with the equivalent noise set to zero."""
    interf = inst.omega.sum(axis=0) - inst.direct + inst.phi
    if np.any(interf <= 0):
        bad = np.nonzero(interf <= 0)[0].tolist()
        raise DegenerateTarget(f"no interference at users {bad}: benchmark SINR is unbounded")
    return inst.direct / interf


def qos_targets(inst: NetworkInstance, r: float, allow_infeasible_start: bool = False) -> np.ndarray:
    """Minimum rates ``r * B log2(1 + benchmark SINR)``."""
    if r < 0:
        raise ValueError("QoS fraction must be >= 0")
    if r >= 1 and not allow_infeasible_start:
        raise ValueError("r >= 1 makes the full-power initial point infeasible")
    if r == 0:
        return np.zeros(inst.n_users)
    return r * inst.bandwidth * np.log2(1.0 + benchmark_sinr(inst))


def with_qos(inst: NetworkInstance, r: float) -> NetworkInstance:
    return inst.with_r_min(qos_targets(inst, r))


def full_power_feasible(inst: NetworkInstance, p_max: float | None = None, r: float | None = None) -> bool:
    """Is ``p_max * 1`` feasible (optionally after changing p_max and r)?"""
    if p_max is not None:
        inst = inst.with_p_max(p_max)
    if r is not None:
        inst = with_qos(inst, r)
    return model.is_feasible(inst, inst.p_max).ok


class Trial(NamedTuple):
    instance: NetworkInstance  # r_min = 0, p_max from the config
    draw: ChannelDraw
    redraws: int


def generate_trial(
    cfg: ScenarioConfig, seed: int, check_p_max_dbm=None, check_r=None, max_redraws: int = 1000
) -> Trial:
    """Draw until the full-power point is feasible at the most demanding grid point.

    ``check_p_max_dbm`` / ``check_r`` default to the config's own values; the
    returned instance carries no rate requirements (apply :func:`with_qos`).
    """
    rng = np.random.default_rng(seed)
    pm = cfg.p_max if check_p_max_dbm is None else float(model.dbm_to_watt(check_p_max_dbm))
    r = cfg.r if check_r is None else check_r
    for k in range(max_redraws + 1):
        draw = draw_channels(cfg, rng)
        try:
            inst = derive_instance(cfg, draw)
            ok = full_power_feasible(inst, pm, r)
        except (ValueError, DegenerateTarget):
            ok = False
        if ok:
            return Trial(inst, draw, k)
    raise RuntimeError(f"no feasible draw after {max_redraws} redraws")


def generate_instance(cfg: ScenarioConfig, seed: int | None = None) -> NetworkInstance:
    """Ready-to-solve instance at the config's p_max and r."""
    trial = generate_trial(cfg, cfg.seed if seed is None else seed)
    return with_qos(trial.instance, cfg.r)


def general_users(cfg: ScenarioConfig, n: int | None = None) -> list[GeneralPowerUser]:
    n = cfg.n_users if n is None else n
    return [GeneralPowerUser((cfg.mu, *cfg.extra_mu), cfg.xi, cfg.delta, cfg.p_st) for _ in range(n)]


def multi_rb_qos_targets(mrb: MultiRbInstance, r: float) -> np.ndarray:
    """Per-RB benchmark rates summed over the blocks, times ``r``."""
    return sum(qos_targets(mrb.rb(k), r) for k in range(mrb.n_rb))


def multi_rb_with_qos(mrb: MultiRbInstance, r: float) -> MultiRbInstance:
    return mrb.with_r_min(multi_rb_qos_targets(mrb, r))


def generate_multi_rb(
    cfg: ScenarioConfig, seed: int, r: float | None = None, check_p_max_dbm=None,
    check_r=None, max_redraws: int = 1000,
) -> MultiRbInstance:
    """K resource blocks of bandwidth B/K with common large-scale gains and
    independent fading.

    Redraws until the equal split of ``p_max`` over the blocks is feasible at
    the most demanding grid point (``check_p_max_dbm``, ``check_r``).
    """
    rng = np.random.default_rng(seed)
    K = cfg.n_rb
    Bk = cfg.bandwidth / K
    r = cfg.r if r is None else r
    pm = cfg.p_max if check_p_max_dbm is None else float(model.dbm_to_watt(check_p_max_dbm))
    rc = r if check_r is None else check_r
    for _ in range(max_redraws + 1):
        ls = draw_large_scale(cfg, rng)
        try:
            blocks = [derive_instance(cfg, draw_channels(cfg, rng, ls), Bk) for _ in range(K)]
            mrb = MultiRbInstance(
                Bk, np.array([b.omega for b in blocks]), np.array([b.phi for b in blocks]),
                np.array([b.noise for b in blocks]), blocks[0].users,
            )
            check = multi_rb_with_qos(mrb.with_p_max(pm), rc)
        except (ValueError, DegenerateTarget):
            continue
        P0 = np.repeat((check.p_max / K)[:, None], K, axis=1)
        if model.is_feasible_multi_rb(check, P0).ok:
            return multi_rb_with_qos(mrb, r)
    raise RuntimeError(f"no feasible multi-RB draw after {max_redraws} redraws")


# -- JSON interchange ------------------------------------------------------------

INSTANCE_SCHEMA = {
    "type": "object",
    "required": ["n", "B", "omega", "phi", "noise", "users"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "B": {"type": "number", "exclusiveMinimum": 0},
        "omega": {
            "type": "array",
            "items": {"anyOf": [{"type": "number", "minimum": 0},
                                {"type": "array", "items": {"type": "number", "minimum": 0}}]},
        },
        "phi": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "noise": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "users": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["w", "p_max"],
                "properties": {
                    "w": {"type": "number", "minimum": 0},
                    "p_max": {"type": "number", "exclusiveMinimum": 0},
                    "r_min": {"type": "number", "minimum": 0},
                    "mu": {"type": "number", "minimum": 1},
                    "p_st": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
    },
}


def instance_to_json(inst: NetworkInstance) -> dict:
    """``omega`` is row-major with ``omega[j][i]`` the gain from transmitter j to receiver i."""
    return {
        "n": inst.n_users,
        "B": inst.bandwidth,
        "omega": inst.omega.ravel().tolist(),
        "phi": inst.phi.tolist(),
        "noise": inst.noise.tolist(),
        "users": [
            {"w": u.weight, "p_max": u.p_max, "r_min": u.r_min, "mu": u.mu, "p_st": u.p_st}
            for u in inst.users
        ],
    }


def instance_from_json(doc: dict) -> NetworkInstance:
    jsonschema.validate(doc, INSTANCE_SCHEMA)
    n = doc["n"]
    omega = np.array(doc["omega"], dtype=float)
    if omega.size != n * n:
        raise ValueError(f"omega: expected {n * n} entries, got {omega.size}")
    if len(doc["users"]) != n:
        raise ValueError(f"users: expected {n} entries, got {len(doc['users'])}")
    users = tuple(
        UserLink(u["w"], u["p_max"], u.get("r_min", 0.0), u.get("mu", 1.0), u.get("p_st", 1.0))
        for u in doc["users"]
    )
    return NetworkInstance(doc["B"], omega.reshape(n, n), doc["phi"], doc["noise"], users)
