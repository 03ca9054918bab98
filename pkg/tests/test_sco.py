import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wsee import model, scenario as sc, sco
from wsee.model import GeneralPowerUser, MultiRbInstance
from wsee.solver import InfeasibleError

from conftest import golden_max, make_instance, random_instance, random_multi_rb


def assert_monotone(hist, rtol=1e-9):
    for a, b in zip(hist, hist[1:]):
        assert b >= a - rtol * abs(a)


@pytest.fixture(scope="module")
def scenario_instances():
    cfg = sc.ScenarioConfig()
    out = []
    for k, r in enumerate((0.0, 0.2, 0.8, 0.0, 0.2, 0.8)):
        trial = sc.generate_trial(cfg, sc.trial_seed(7, k), check_r=0.8)
        out.append(sc.with_qos(trial.instance, r))
    return out


class TestOptions:
    def test_validation(self):
        with pytest.raises(ValueError):
            sco.ScoOptions(eps=0.0)
        with pytest.raises(ValueError):
            sco.ScoOptions(scale=1.5)
        with pytest.raises(ValueError):
            sco.ScoOptions(scale=0.0)


class TestWseeMaximize:
    def test_single_user_oracle(self):
        inst = make_instance([[1.0]], 0.0, 1e-9, B=2e6, p_max=0.1, mu=5.0, p_st=0.375)
        res = sco.wsee_maximize(inst)
        _, best = golden_max(lambda p: model.ee(inst, [p], 0), math.log2(1e-12), math.log2(0.1))
        grid = max(model.ee(inst, [p], 0) for p in np.logspace(-12, -1, 20001))
        assert res.converged
        assert abs(res.wsee - best) <= 1e-3 * best
        assert res.wsee >= grid * (1 - 1e-6)

    def test_pinned_qos(self, rng):
        for _ in range(5):
            inst = random_instance(rng, 3, phi_scale=0.1)
            inst = inst.with_r_min(model.rate(inst, inst.p_max) * (1 - 1e-12))
            res = sco.wsee_maximize(inst)
            assert_allclose(res.p, inst.p_max, rtol=1e-6)
            assert res.iterations <= 1

    def test_history_monotone(self, scenario_instances):
        for inst in scenario_instances:
            for lam in (0.01, 1.0):
                try:
                    res = sco.wsee_maximize(inst, sco.ScoOptions(scale=lam))
                except sco.InfeasibleInitialPoint:
                    continue
                assert_monotone(res.history)
                assert res.converged
                if len(res.history) > 1:
                    assert abs(res.history[-1] - res.history[-2]) < 1e-4 * abs(res.history[-2])

    def test_self_consistency(self, scenario_instances):
        for inst in scenario_instances:
            res = sco.wsee_maximize(inst)
            assert_allclose(res.wsee, model.wsee(inst, res.p), rtol=1e-9)
            assert_allclose(res.wsr, model.wsr(inst, res.p), rtol=1e-9)
            assert_allclose(res.history[-1], res.wsee, rtol=1e-6)

    def test_iterates_feasible(self, scenario_instances):
        for inst in scenario_instances:
            res = sco.wsee_maximize(inst, sco.ScoOptions(keep_reports=True))
            N = inst.n_users
            for rep in res.reports:
                assert model.is_feasible(inst, np.exp2(rep.x[:N]), 1e-8).ok

    def test_kkt_certified(self, scenario_instances):
        for inst in scenario_instances:
            res = sco.wsee_maximize(inst)
            assert res.kkt.stationarity <= 1e-3
            assert res.kkt.violation <= 1e-8

    def test_infeasible_start_names_user(self, hand_instance):
        inst = hand_instance.with_r_min([1.0, model.rate(hand_instance, [1.0, 1.0], 1) * 1.5])
        with pytest.raises(sco.InfeasibleInitialPoint) as info:
            sco.wsee_maximize(inst)
        assert {v.user for v in info.value.violations} == {1}

    def test_floor_on_zero_start(self, hand_instance):
        res = sco.wsee_maximize(hand_instance, sco.ScoOptions(p0=np.zeros(2)))
        assert_monotone(res.history)
        assert res.history[0] > 0

    def test_zero_weight_user(self, rng):
        inst = random_instance(rng, 3)
        inst = inst.with_users([model.UserLink(w, u.p_max, u.r_min, u.mu, u.p_st)
                                for w, u in zip([0.5, 0.5, 0.0], inst.users)])
        res = sco.wsee_maximize(inst)
        assert res.converged
        assert_monotone(res.history)

    def test_record_history_off(self, hand_instance):
        res = sco.wsee_maximize(hand_instance, sco.ScoOptions(record_history=False))
        assert len(res.history) == 1


class TestWsrMaximize:
    def test_single_user_full_power(self):
        inst = make_instance([[1.0]], 0.0, 1e-3, B=2e6, p_max=0.5)
        res = sco.wsr_maximize(inst, sco.ScoOptions(scale=0.01))
        assert_allclose(res.p, [0.5], rtol=1e-6)

    def test_single_user_self_interference(self):
        inst = make_instance([[1.0]], 0.3, 1e-3, B=2e6, p_max=0.5)
        res = sco.wsr_maximize(inst, sco.ScoOptions(scale=0.01))
        assert_allclose(res.p, [0.5], rtol=1e-6)

    def test_monotone_and_bounded(self, scenario_instances):
        for inst in scenario_instances:
            res = sco.wsr_maximize(inst)
            assert_monotone(res.history)
            bound = sum(w * inst.bandwidth * math.log2(1 + model.gamma_max(inst, i))
                        for i, w in enumerate(inst.weights))
            assert res.wsr <= bound
            assert res.kkt.stationarity <= 1e-3


class TestGeneral:
    def test_reduces_to_linear(self, rng):
        for _ in range(5):
            inst = random_instance(rng, 3)
            gen = [GeneralPowerUser.from_link(u) for u in inst.users]
            a = sco.wsee_maximize(inst)
            b = sco.wsee_maximize_general(inst, gen)
            assert abs(a.wsee - b.wsee) <= 1e-3 * a.wsee
            assert_monotone(b.history)

    def test_rate_cost_lowers_wsee(self, scenario_instances):
        inst = scenario_instances[0]
        base = [GeneralPowerUser.from_link(u) for u in inst.users]
        costly = [GeneralPowerUser.from_link(u, xi=1e-6) for u in inst.users]
        a = sco.wsee_maximize_general(inst, base)
        b = sco.wsee_maximize_general(inst, costly)
        assert b.wsee < a.wsee

    def test_single_user_oracle(self):
        inst = make_instance([[1.0]], 0.0, 1e-9, B=2e6, p_max=0.1, mu=5.0, p_st=0.375)
        gen = [GeneralPowerUser((5.0, 20.0), xi=2e-7, delta=0.8, p_st=0.375)]
        res = sco.wsee_maximize_general(inst, gen)
        _, best = golden_max(lambda p: model.ee_general(inst, gen, [p], 0), math.log2(1e-12), math.log2(0.1))
        assert abs(res.wsee - best) <= 1e-3 * best
        assert_allclose(res.wsee, model.wsee_general(inst, gen, res.p), rtol=1e-9)

    def test_degenerate_rate(self):
        inst = make_instance([[1e-300]], 0.0, 1.0, p_max=1.0)
        with pytest.raises(sco.DegenerateRate):
            sco.wsee_maximize_general(inst, [GeneralPowerUser.from_link(inst.users[0])])

    def test_user_count_checked(self, hand_instance):
        with pytest.raises(ValueError):
            sco.wsee_maximize_general(hand_instance, [GeneralPowerUser((1.0,))])


class TestMultiRb:
    def test_single_rb_reduction(self, scenario_instances):
        for inst in scenario_instances[:3]:
            a = sco.wsee_maximize(inst)
            b = sco.wsee_maximize_multi_rb(MultiRbInstance.from_single(inst))
            assert abs(a.wsee - b.wsee) <= 1e-6 * a.wsee

    def test_symmetric_split_fixed_point(self, rng):
        base = random_multi_rb(rng, 2, 1)
        om = np.concatenate([base.omega, base.omega])
        mrb = MultiRbInstance(1e6, om, np.zeros((2, 2)), np.full((2, 2), 1e-3), base.users)
        res = sco.wsee_maximize_multi_rb(mrb)
        assert_allclose(res.p[:, 0], res.p[:, 1], rtol=1e-4)
        assert_allclose(model.wsee_multi_rb(mrb, res.p[:, ::-1]), res.wsee, rtol=1e-12)

    def test_single_user_grid_oracle(self, rng):
        mrb = random_multi_rb(rng, 1, 2, p_max=1.0)
        res = sco.wsee_maximize_multi_rb(mrb)
        ax = np.logspace(-8, 0, 801)
        P1, P2 = np.meshgrid(ax, ax, indexing="ij")
        ok = P1 + P2 <= 1.0
        g = mrb.omega[:, 0, 0] / mrb.noise[:, 0]
        rate = mrb.rb_bandwidth * (np.log2(1 + g[0] * P1) + np.log2(1 + g[1] * P2))
        ee = np.where(ok, rate / (mrb.mu[0] * (P1 + P2) + mrb.p_st[0]), -np.inf)
        best = ee.max()
        assert abs(res.wsee - best) <= 5e-3 * best
        assert res.wsee >= best * (1 - 1e-9)

    def test_monotone_and_feasible(self):
        cfg = sc.ScenarioConfig()
        for k in range(3):
            mrb = sc.generate_multi_rb(cfg, k, 0.2)
            res = sco.wsee_maximize_multi_rb(mrb)
            assert_monotone(res.history)
            assert model.is_feasible_multi_rb(mrb, res.p, 1e-8).ok
            assert res.kkt.stationarity <= 1e-3


class TestCertify:
    def test_single_user_interior_maximizer(self):
        inst = make_instance([[1.0]], 0.0, 1e-9, B=2e6, p_max=0.1, mu=5.0, p_st=0.375)
        p, _ = golden_max(lambda p: model.ee(inst, [p], 0), math.log2(1e-12), math.log2(0.1))
        assert sco.certify_kkt(inst, [p]).stationarity <= 1e-5

    def test_random_point_negative_control(self, scenario_instances):
        inst = scenario_instances[0]
        res = sco.certify_kkt(inst, 0.3 * inst.p_max)
        assert res.stationarity > 1e-2

    def test_wsr_negative_control(self, scenario_instances):
        inst = scenario_instances[0]
        assert sco.certify_kkt_wsr(inst, 1e-3 * inst.p_max).stationarity > 1e-2


class TestFeasibleStart:
    def test_finds_point(self, scenario_instances):
        inst = scenario_instances[2]  # r = 0.8
        p = sco.feasible_start(inst)
        assert model.is_feasible(inst, p).ok

    def test_infeasible(self, hand_instance):
        inst = hand_instance.with_r_min([4e6, 4e6])  # both SINRs >= 3 is impossible here
        with pytest.raises(InfeasibleError):
            sco.feasible_start(inst)
