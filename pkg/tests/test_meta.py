import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aiig.config import MetaConfig
from aiig.env import ConfigError, GameConfig
from aiig.learner import LearnerConfig
from aiig.meta import (Annealer, Population, RobustnessReport, acceptance_probability, accept,
                       anneal, evaluate_ensemble, propose, valid_ops)
from aiig.rollout import make_protagonist
from oracles import within_binomial_3sigma, within_multinomial_3sigma

META = MetaConfig()


def rho_k_minus_2(pop):
    return abs(pop.K - 2)


class TestRobustness:
    def test_reference_row(self):
        rep = RobustnessReport.assemble(-14.4, -83.0, 4, 0.1, 1.0)
        assert abs(rep.rho - 10.1) <= 1e-12

    @pytest.mark.parametrize("r_p", [-20.0, -3.5, 0.0, 7.25])
    @pytest.mark.parametrize("r_o", [-90.0, -1.0, 4.0])
    @pytest.mark.parametrize("k", [1, 2, 4, 8])
    def test_grid(self, r_p, r_o, k):
        rep = RobustnessReport.assemble(r_p, r_o, k, 0.1, 1.0)
        assert abs(rep.rho - (-r_p + 0.1 * r_o + 1.0 * k)) <= 1e-12

    def test_zero_weights(self):
        assert RobustnessReport.assemble(-7.0, 50.0, 3, 0.0, 0.0).rho == 7.0

    def test_config_defaults_and_validation(self):
        assert (META.lambda1, META.lambda2, META.T0, META.T_min, META.decay) == (0.1, 1.0, 30.0, 0.2, 0.975)
        assert (META.eval_train_steps, META.eval_episodes, META.eval_gamma) == (20_000, 200, 0.99)
        with pytest.raises(ConfigError):
            MetaConfig(T0=0.1, T_min=0.2)
        with pytest.raises(ConfigError):
            MetaConfig(decay=1.0)


class TestPropose:
    def test_single_member_with_one_deactivated(self):
        pop = Population([0], [1])
        assert sorted(valid_ops(pop)) == ["append", "exchange"]
        rng = np.random.default_rng(0)
        assert {propose(pop, rng).op for _ in range(200)} == {"append", "exchange"}

    def test_saturated(self):
        assert propose(Population([0]), np.random.default_rng(0)).saturated

    def test_op_frequencies(self):
        pop = Population([0, 1, 2], [3, 4, 5])
        rng = np.random.default_rng(1)
        ops = [propose(pop, rng).op for _ in range(1000)]
        counts = [ops.count(o) for o in ("pop", "append", "exchange")]
        assert within_multinomial_3sigma(counts, [1 / 3] * 3)

    def test_apply_undo(self):
        pop = Population([0, 1, 2], [3, 4])
        rng = np.random.default_rng(2)
        for _ in range(100):
            before = pop.snapshot()
            p = propose(pop, rng)
            p.apply(pop)
            p.undo(pop)
            assert pop.snapshot() == before

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), n_active=st.integers(1, 6), steps=st.integers(1, 60))
    def test_pool_preserved_and_k_positive(self, seed, n_active, steps):
        pop = Population(range(n_active), range(n_active, 6))
        rng = np.random.default_rng(seed)
        for _ in range(steps):
            p = propose(pop, rng)
            p.apply(pop)
            assert pop.pool == frozenset(range(6)) and pop.K >= 1
            assert len(pop.active) + len(pop.deactivated) == 6
            if rng.random() < 0.5:
                p.undo(pop)

    def test_invalid_population(self):
        with pytest.raises(ValueError):
            Population([])
        with pytest.raises(ValueError):
            Population([0, 1], [1])


class TestAccept:
    def test_improvement_always_accepted(self):
        assert acceptance_probability(5.0, 4.0, 30.0) == 1.0

    def test_hot_example(self):
        assert acceptance_probability(0.0, 2.0, 30.0) == pytest.approx(math.exp(-1 / 15), abs=1e-15)
        assert round(acceptance_probability(0.0, 2.0, 30.0), 4) == 0.9355

    def test_cold_example(self):
        p = acceptance_probability(0.0, 2.0, 0.2)
        assert p == pytest.approx(math.exp(-10.0)) and round(p, 6) == pytest.approx(4.5e-5, abs=1e-6)
        rng = np.random.default_rng(3)
        k = sum(accept(0.0, 2.0, 0.2, rng) for _ in range(10_000))
        assert within_binomial_3sigma(k, 10_000, p) and k <= 5

    @pytest.mark.parametrize("delta,T", [(-2.0, 30.0), (-1.0, 1.0), (-0.5, 0.2), (-3.0, 5.0)])
    def test_frequency_matches_probability(self, delta, T):
        rng = np.random.default_rng(int(T * 100 - delta * 7))
        p = math.exp(delta / T)
        k = sum(accept(0.0, -delta, T, rng) for _ in range(10_000))
        assert within_binomial_3sigma(k, 10_000, p)

    def test_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            acceptance_probability(0.0, 1.0, 0.0)


class TestAnneal:
    def test_temperature_after_ten_proposals(self):
        pop = Population([0, 1, 2], [3, 4, 5])
        ann = Annealer(pop, META, np.random.default_rng(0))
        ann.start(rho_k_minus_2(pop))
        for _ in range(10):
            p = ann.propose()
            ann.resolve(None if p.saturated else rho_k_minus_2(pop))
        assert ann.T == pytest.approx(30 * 0.975 ** 10, abs=1e-12)
        assert ann.T == pytest.approx(23.28, abs=0.01)  # 23.2899, quoted truncated

    def test_mock_landscape_reaches_optimum(self):
        wins = 0
        for seed in range(20):
            pop = Population([0, 1, 2, 3], [4, 5])
            pop, trace = anneal(pop, rho_k_minus_2, META, np.random.default_rng(seed), proposals=200)
            wins += pop.K == 2
            assert len(trace) == 200
        assert wins >= 18

    def test_flat_landscape_wanders(self):
        finals = set()
        for seed in range(20):
            pop = Population([0, 1, 2], [3, 4, 5])
            pop, trace = anneal(pop, lambda p: 1.0, META, np.random.default_rng(seed), proposals=50)
            assert all(row.accepted for row in trace)
            finals.add(tuple(sorted(pop.active)))
        assert len(finals) > 5

    def test_temperature_monotone_and_floored(self):
        pop = Population([0, 1], [2])
        _, trace = anneal(pop, rho_k_minus_2, META, np.random.default_rng(4), proposals=400)
        temps = [row.T for row in trace]
        assert all(a >= b for a, b in zip(temps, temps[1:]))
        assert min(temps) == META.T_min

    def test_rejection_restores_and_rho_old_is_last_accepted(self):
        pop = Population([0, 1], [2, 3])
        rng = np.random.default_rng(5)
        _, trace = anneal(pop, rho_k_minus_2, MetaConfig(T0=0.3, T_min=0.2), rng, proposals=100)
        last_accepted = 0.0
        for row in trace:
            assert row.rho_old == last_accepted
            if row.accepted:
                last_accepted = row.rho_new
            else:
                assert row.K_after == row.K_before

    def test_saturated_steps_are_logged(self):
        pop = Population([0])
        _, trace = anneal(pop, rho_k_minus_2, META, np.random.default_rng(6), proposals=3)
        assert [r.op for r in trace] == ["saturated"] * 3

    def test_trace_csv(self, tmp_path):
        pop = Population([0, 1], [2])
        _, trace = anneal(pop, rho_k_minus_2, META, np.random.default_rng(7), proposals=5,
                          trace_path=tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0].split(",")[:4] == ["proposal_index", "op", "K_before", "K_after"]
        assert len(lines) == 6


class TestEvaluate:
    def test_protagonist_is_frozen_and_report_consistent(self):
        cfg = GameConfig()
        lc = LearnerConfig(batch_size=16)
        protagonist = make_protagonist("belief", lc, cfg, np.random.default_rng(0))
        before = [p.tobytes() for p in protagonist.learner.params_snapshot()]
        opt_before = protagonist.learner.actor_opt.t
        meta = MetaConfig(eval_train_steps=200, eval_episodes=5)
        res = evaluate_ensemble(protagonist, None, 3, cfg, meta, lc, np.random.default_rng(1))
        assert [p.tobytes() for p in protagonist.learner.params_snapshot()] == before
        assert protagonist.learner.actor_opt.t == opt_before
        rep = res.report
        assert rep.rho == -rep.r_p + 0.1 * rep.r_o + 3
        assert len(res.episodes) == 5 and res.train_steps >= 200 and res.opponent_gamma == 0.99
        assert rep.r_p == pytest.approx(np.mean([e["protagonist_return"] for e in res.episodes]))
