import json
import logging
import math
from dataclasses import replace

import jsonschema
import numpy as np
import pytest
from numpy.testing import assert_allclose

from wsee import model, scenario as sc

from conftest import make_instance

log = logging.getLogger(__name__)


class TestConfig:
    def test_defaults(self):
        cfg = sc.ScenarioConfig()
        assert (cfg.n_users, cfg.n_tx_antennas, cfg.n_rx_antennas) == (5, 2, 2)
        assert cfg.relay_power_dbm == 30.0 and cfg.carrier_hz == 2e9 and cfg.bandwidth == 2e6
        assert cfg.noise_figure_db == 3.0 and cfg.noise_psd_dbm_hz == -174.0
        assert cfg.mu == 5.0 and cfg.p_st == 0.375
        assert (cfg.d_min, cfg.d_max, cfg.d_ref) == (200.0, 300.0, 100.0)
        assert cfg.path_loss_exponent == 3.5 and cfg.shadowing_db == 8.0
        assert_allclose(cfg.user_weights(), 0.2)

    def test_noise_power(self):
        cfg = sc.ScenarioConfig()
        expected = 10 ** 0.3 * 10 ** ((-174 - 30) / 10) * 2e6
        assert_allclose(cfg.noise_power(), expected)

    def test_invalid(self):
        with pytest.raises(ValueError):
            sc.ScenarioConfig(n_users=0)
        with pytest.raises(ValueError):
            sc.ScenarioConfig(d_min=300.0, d_max=200.0)


class TestPathGain:
    def test_free_space_at_reference(self):
        cfg = sc.ScenarioConfig()
        fspl = 20 * math.log10(4 * math.pi * 100 * 2e9 / 299_792_458.0)
        assert_allclose(-10 * math.log10(sc.path_gain(cfg, 100.0)), fspl)
        assert_allclose(fspl, 78.46, atol=0.01)

    def test_exponent(self):
        cfg = sc.ScenarioConfig()
        ratio = sc.path_gain(cfg, 100.0) / sc.path_gain(cfg, 1000.0)
        assert_allclose(10 * math.log10(ratio), 35.0)

    def test_shadowing_shift(self):
        cfg = sc.ScenarioConfig()
        assert_allclose(sc.path_gain(cfg, 250.0, 8.0) / sc.path_gain(cfg, 250.0), 10 ** -0.8)


class TestDraw:
    def test_deterministic(self):
        cfg = sc.ScenarioConfig()
        a = sc.draw_channels(cfg, np.random.default_rng(3))
        b = sc.draw_channels(cfg, np.random.default_rng(3))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_beamformer_unit_norm(self):
        d = sc.draw_channels(sc.ScenarioConfig(n_tx_antennas=3), np.random.default_rng(0))
        assert_allclose(np.linalg.norm(d.b, axis=1), 1.0, rtol=1e-15)

    def test_mrc_combiner(self):
        d = sc.draw_channels(sc.ScenarioConfig(), np.random.default_rng(0))
        hb = np.sum(d.h * d.b, axis=1)
        assert_allclose(d.c, d.g * hb[:, None])

    def test_second_moment(self):
        n = 50_000
        cfg = sc.ScenarioConfig(n_users=n)
        gain = float(sc.path_gain(cfg, 250.0))
        d = sc.draw_channels(cfg, np.random.default_rng(1), (np.full(n, gain), np.full(n, 2 * gain)))
        assert abs(np.mean(np.abs(d.h) ** 2) / gain - 1) < 0.02
        assert abs(np.mean(np.abs(d.g) ** 2) / (2 * gain) - 1) < 0.02
        # variance split evenly between real and imaginary parts
        assert abs(np.mean(d.h.real ** 2) / np.mean(d.h.imag ** 2) - 1) < 0.02


class TestCoefficients:
    def unit_draw(self, n=2):
        one = np.ones((n, 1), dtype=complex)
        return sc.ChannelDraw(one, one, np.ones((n, 1)), one, np.ones(n), np.ones(n))

    def test_hand_reduction(self):
        sigma2 = 1e-13
        omega, phi, noise = sc.coefficients(self.unit_draw(), sigma2, sigma2, math.inf)
        assert_allclose(omega, np.ones((2, 2)))
        assert_allclose(phi, 0.0)
        assert_allclose(noise, sigma2)

    def test_finite_relay_power(self):
        sigma2, pr = 0.5, 2.0
        omega, phi, noise = sc.coefficients(self.unit_draw(), sigma2, sigma2, pr)
        assert_allclose(omega, [[1.0, 1.25], [1.25, 1.0]])
        assert_allclose(phi, 0.25)
        assert_allclose(noise, (1 + 0.25) * 0.5)

    def test_termwise_scaling(self):
        cfg = sc.ScenarioConfig()
        d = sc.draw_channels(cfg, np.random.default_rng(5))
        c = 3.0
        scaled = d._replace(g=c * d.g, c=c * d.c)
        s2, pr = 1e-13, 1.0
        base = sc.coefficients(d, s2, s2, math.inf)
        big = sc.coefficients(scaled, s2, s2, math.inf)
        # without relay noise every term carries |c|^4
        for a, b in zip(base, big):
            assert_allclose(b, c ** 4 * a, rtol=1e-12)
        w_signal, _, n_signal = sc.coefficients(d, s2, s2, math.inf)
        w_full, phi_full, n_full = sc.coefficients(d, s2, s2, pr)
        w_big, phi_big, n_big = sc.coefficients(scaled, s2, s2, pr)
        # relay-noise terms carry |c|^2
        assert_allclose(phi_big, c ** 2 * phi_full, rtol=1e-12)
        off = ~np.eye(cfg.n_users, dtype=bool)  # the direct gains carry no relay-noise term
        assert_allclose((w_big - c ** 4 * w_signal)[off], c ** 2 * (w_full - w_signal)[off], rtol=1e-9)
        assert_allclose(n_big - c ** 4 * n_signal, c ** 2 * (n_full - n_signal), rtol=1e-9)

    def test_phi_zero_without_relay_noise(self):
        cfg = sc.ScenarioConfig(relay_power_dbm=math.inf)
        inst = sc.derive_instance(cfg, sc.draw_channels(cfg, np.random.default_rng(0)))
        assert np.all(inst.phi == 0.0)

    def test_finite_nonnegative(self):
        cfg = sc.ScenarioConfig()
        rng = np.random.default_rng(11)
        for _ in range(10_000):
            omega, phi, noise = sc.coefficients(sc.draw_channels(cfg, rng), 1e-14, 1e-14, 1.0)
            assert np.all(np.isfinite(omega)) and np.all(omega >= 0) and np.all(np.diag(omega) > 0)
            assert np.all(np.isfinite(phi)) and np.all(phi >= 0)
            assert np.all(np.isfinite(noise)) and np.all(noise > 0)


class TestQos:
    def test_zero(self, hand_instance):
        assert_allclose(sc.qos_targets(hand_instance, 0.0), 0.0)

    def test_hand_instance(self, hand_instance):
        assert_allclose(sc.benchmark_sinr(hand_instance), [2.0, 3.0])
        assert_allclose(sc.qos_targets(hand_instance, 0.5)[0], 0.5 * 2e6 * math.log2(3.0))

    def test_interference_free(self):
        with pytest.raises(sc.DegenerateTarget):
            sc.qos_targets(make_instance([[1.0]], 0.0, 1.0), 0.5)

    def test_r_at_least_one_rejected(self, hand_instance):
        with pytest.raises(ValueError):
            sc.qos_targets(hand_instance, 1.0)

    def test_full_power_feasible(self):
        cfg = sc.ScenarioConfig()
        rng = np.random.default_rng(21)
        cases = [(0.0, 0.2), (0.0, 0.8), (-20.0, 0.2), (-20.0, 0.8)]
        failures = dict.fromkeys(cases, 0)
        for _ in range(1000):
            inst = sc.derive_instance(cfg, sc.draw_channels(cfg, rng))
            for pm, r in cases:
                failures[pm, r] += not sc.full_power_feasible(inst, float(model.dbm_to_watt(pm)), r)
        log.info("full-power infeasible draws out of 1000 by (pmax_dbm, r): %s", failures)
        # the benchmark SINR ignores noise, so low-power draws can miss their targets
        assert failures[0.0, 0.2] == failures[0.0, 0.8] == 0
        assert 0 < failures[-20.0, 0.2] <= failures[-20.0, 0.8] < 1000
        for seed in range(20):
            trial = sc.generate_trial(cfg, seed, check_p_max_dbm=-20.0, check_r=0.8)
            assert sc.full_power_feasible(trial.instance, 1e-5, 0.8)


class TestGeneration:
    def test_seed_mixing(self):
        assert sc.splitmix64(0) == 0xE220A8397B1DCDAF
        assert sc.trial_seed(5, 0) == 5 ^ 0xE220A8397B1DCDAF
        assert len({sc.trial_seed(0, k) for k in range(1000)}) == 1000

    def test_deterministic(self):
        cfg = sc.ScenarioConfig(r=0.2)
        a, b = sc.generate_instance(cfg, 9), sc.generate_instance(cfg, 9)
        assert np.array_equal(a.omega, b.omega) and a.users == b.users

    def test_instance_fields(self):
        cfg = sc.ScenarioConfig(r=0.2, p_max_dbm=10.0)
        inst = sc.generate_instance(cfg, 1)
        assert_allclose(inst.p_max, 0.01)
        assert_allclose(inst.r_min, sc.qos_targets(inst, 0.2))
        assert inst.bandwidth == 2e6

    def test_general_users(self):
        users = sc.general_users(sc.ScenarioConfig(extra_mu=(0.5,), xi=1e-8, delta=0.5))
        assert len(users) == 5 and users[0].mu_m == (5.0, 0.5)

    def test_multi_rb(self):
        cfg = sc.ScenarioConfig(n_rb=3)
        mrb = sc.generate_multi_rb(cfg, 4, 0.2)
        assert mrb.n_rb == 3 and mrb.rb_bandwidth == pytest.approx(2e6 / 3)
        P0 = np.repeat((mrb.p_max / 3)[:, None], 3, axis=1)
        assert model.is_feasible_multi_rb(mrb, P0).ok
        assert np.all(mrb.r_min > 0)


class TestJson:
    def test_round_trip(self, hand_instance):
        inst = hand_instance.with_r_min([1e5, 2e5])
        doc = json.loads(json.dumps(sc.instance_to_json(inst)))
        back = sc.instance_from_json(doc)
        assert np.array_equal(back.omega, inst.omega) and back.users == inst.users

    def test_row_major_orientation(self):
        doc = {"n": 2, "B": 1.0, "omega": [1.0, 4.0, 0.0, 1.0], "phi": [0, 0], "noise": [1, 1],
               "users": [{"w": 0.5, "p_max": 1.0}, {"w": 0.5, "p_max": 1.0}]}
        inst = sc.instance_from_json(doc)
        assert inst.omega[0, 1] == 4.0

    def test_schema_violation(self):
        doc = {"n": 1, "B": -1.0, "omega": [1.0], "phi": [0], "noise": [1], "users": [{"w": 1, "p_max": 1}]}
        with pytest.raises(jsonschema.ValidationError):
            sc.instance_from_json(doc)

    def test_size_mismatch(self):
        doc = {"n": 2, "B": 1.0, "omega": [1.0], "phi": [0, 0], "noise": [1, 1],
               "users": [{"w": 0.5, "p_max": 1.0}, {"w": 0.5, "p_max": 1.0}]}
        with pytest.raises(ValueError):
            sc.instance_from_json(doc)


def test_config_replace_keeps_validation():
    with pytest.raises(ValueError):
        replace(sc.ScenarioConfig(), weights=(1.0,))
