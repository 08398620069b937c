import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aiig.belief import (LIKELIHOOD_FLOOR, Belief, BeliefFilter, OpponentModelSet,
                         belief_reward, encode_protagonist_input, predict, update_action,
                         update_probe)
from aiig.env import (AgentType, GameConfig, OpponentAction, ProtagonistAction, ProtagonistObs,
                      StepFlags, TagGame, protagonist_reward_given_type, scripted_opponent)
from oracles import brute_force_posterior, filter_episode, synthetic_models

CFG = GameConfig()
ALLY, ENEMY = AgentType.ALLY, AgentType.ENEMY
OBS = ProtagonistObs((4.0, 4.0), (4.0, 0.0), None, None, 0, 0)

probs2 = st.floats(0.0, 1.0).map(lambda p: Belief([1.0 - p, p]))


def fixed_models(p_ally, p_enemy):
    return OpponentModelSet({ALLY: lambda o: np.asarray(p_ally), ENEMY: lambda o: np.asarray(p_enemy)})


class TestBelief:
    def test_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            Belief([0.6, 0.6])
        with pytest.raises(ValueError):
            Belief([-0.1, 1.1])

    @pytest.mark.parametrize("b", [[0.3, 0.7], [1.0, 0.0], [0.5, 0.5]])
    def test_predict_is_identity(self, b):
        assert predict(Belief(b)).tolist() == b


class TestActionUpdate:
    def test_equal_likelihoods_leave_belief(self):
        m = fixed_models([0.25] * 4, [0.25] * 4)
        assert update_action(Belief([0.3, 0.7]), OBS, 2, m).tolist() == pytest.approx([0.3, 0.7], abs=1e-15)

    def test_single_step_bayes(self):
        m = fixed_models([0.7, 0.1, 0.1, 0.1], [0.1, 0.3, 0.3, 0.3])
        b = update_action(Belief.uniform(), OBS, OpponentAction.MOVE_LEFT, m)
        assert b.tolist() == pytest.approx([0.875, 0.125], abs=1e-12)

    def test_floor_keeps_belief_defined(self):
        m = fixed_models([0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.0])
        b = update_action(Belief([0.2, 0.8]), OBS, OpponentAction.MOVE_LEFT, m)
        assert b.tolist() == pytest.approx([0.2, 0.8], abs=1e-12)

    def test_floor_value(self):
        assert LIKELIHOOD_FLOOR == 1e-6
        m = fixed_models([0.0, 0.0, 1.0, 0.0], [0.5, 0.0, 0.5, 0.0])
        b = update_action(Belief.uniform(), OBS, OpponentAction.MOVE_LEFT, m)
        assert b[ALLY] == pytest.approx(1e-6 / (1e-6 + 0.5), rel=1e-12)

    @pytest.mark.parametrize("seed", range(50))
    def test_sequence_matches_joint_posterior(self, seed):
        models = synthetic_models(seed)
        beliefs, factors = filter_episode(seed, models)
        oracle = brute_force_posterior([0.5, 0.5], factors)
        assert np.max(np.abs(np.array(beliefs[-1]) - oracle)) <= 1e-10


class TestProbeUpdate:
    def test_uniform_prior(self):
        assert update_probe(Belief.uniform(), ENEMY, 0.8).tolist() == pytest.approx([0.2, 0.8], abs=1e-12)

    def test_second_reading(self):
        b = update_probe(Belief([0.2, 0.8]), ENEMY, 0.8)
        assert b.tolist() == pytest.approx([0.04 / 0.68, 0.64 / 0.68], abs=1e-12)
        assert round(b[ENEMY], 4) == 0.9412

    def test_uninformative_accuracy(self):
        assert update_probe(Belief([0.3, 0.7]), ALLY, 0.5).tolist() == pytest.approx([0.3, 0.7])

    def test_monotone_evidence(self):
        b, last = Belief.uniform(), 0.5
        for _ in range(30):
            b = update_probe(b, ALLY, 0.8)
            assert b[ALLY] > last or b[ALLY] == 1.0
            last = b[ALLY]
        assert last > 0.999999


@settings(max_examples=200, deadline=None)
@given(b=probs2, reading=st.sampled_from([ALLY, ENEMY]), acc=st.floats(0.51, 1.0),
       lik=st.lists(st.floats(0.0, 1.0), min_size=8, max_size=8))
def test_updates_stay_on_simplex_and_commute(b, reading, acc, lik):
    lik = np.asarray(lik)
    pa = lik[:4] + 1e-3
    pe = lik[4:] + 1e-3
    m = fixed_models(pa / pa.sum(), pe / pe.sum())
    if b.probs.min() == 0.0 and acc == 1.0:
        return  # a certain belief contradicted by a perfect probe has no posterior
    one = update_probe(update_action(b, OBS, 1, m), reading, acc)
    two = update_action(update_probe(b, reading, acc), OBS, 1, m)
    for out in (one, two):
        assert np.all(out.probs >= 0) and abs(out.probs.sum() - 1.0) <= 1e-12
    assert one.probs == pytest.approx(two.probs, abs=1e-12)


class TestBeliefReward:
    def flags(self, success=True, tag=True, d=0.0, probe=False, count=0):
        action = ProtagonistAction.TAG if tag else (ProtagonistAction.PROBE if probe
                                                    else ProtagonistAction.MOVE_UP)
        return StepFlags(action, tag, success, probe, count, d)

    def test_half_belief_tag_component(self):
        cfg = GameConfig()
        f = self.flags()
        r = belief_reward(Belief.uniform(), f, cfg)
        # remove the type-independent tag cost; distance is zero
        assert r - cfg.tag_cost == pytest.approx(-5.0, abs=1e-12)

    def test_certain_enemy(self):
        f = self.flags(d=1.7)
        assert belief_reward(Belief.point(ENEMY), f, CFG) == protagonist_reward_given_type(f, ENEMY, CFG)

    @pytest.mark.parametrize("p", [0.0, 0.3, 1.0])
    def test_move_is_type_independent(self, p):
        f = self.flags(success=False, tag=False, d=1.0)
        assert belief_reward(Belief([1 - p, p]), f, CFG) == pytest.approx(-0.25, abs=1e-15)

    def test_point_belief_on_true_type_matches_env_reward(self):
        rng = np.random.default_rng(4)
        game = TagGame(CFG, rng=rng)
        checked = 0
        for _ in range(200):
            _, o_obs = game.reset()
            t = game.state.opponent_type
            while True:
                res = game.step(int(rng.integers(6)), scripted_opponent("rush", o_obs, CFG))
                assert belief_reward(Belief.point(t), res.flags, CFG) == pytest.approx(res.r_p, abs=1e-12)
                checked += 1
                o_obs = res.o_obs
                if res.done:
                    break
        assert checked > 1000

    def test_variance_reduction(self):
        # matched transitions: same successful tag, type drawn at random
        rng = np.random.default_rng(0)
        f = self.flags(d=1.0)
        types = rng.integers(0, 2, 2000)
        state = [protagonist_reward_given_type(f, AgentType(int(t)), CFG) for t in types]
        belief = [belief_reward(Belief.uniform(), f, CFG) for _ in types]
        assert np.var(belief) < np.var(state)


class TestEncoding:
    def test_example(self):
        obs = ProtagonistObs((0.0, 0.0), (4.0, 0.0), None, None, 0, 0)
        x = encode_protagonist_input(obs, Belief.uniform(), CFG)
        assert x.tolist() == [0, 0, 0.5, 0, 0.5, 0, 0]

    def test_fuzz_range(self):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            p = tuple(rng.uniform(0, 8, 2))
            o = tuple(rng.uniform(0, 8, 2))
            obs = ProtagonistObs(p, o, None, None, int(rng.integers(0, 11)), int(rng.integers(0, 61)))
            x = encode_protagonist_input(obs, Belief([0.4, 0.6]), CFG)
            assert x.shape == (7,) and np.all((x >= 0) & (x <= 1))


class TestFilter:
    def test_rush_types_separate_after_divergence(self):
        models = OpponentModelSet.scripted("rush", CFG)
        game = TagGame(CFG, seed=0)
        p_obs, o_obs = game.reset(ENEMY)
        filt = BeliefFilter(models, CFG)
        b = filt.reset()
        assert b.tolist() == [0.5, 0.5]
        for _ in range(12):
            res = game.step(ProtagonistAction.MOVE_LEFT, scripted_opponent("rush", o_obs, CFG))
            b = filt.observe(p_obs, res.p_obs)
            p_obs, o_obs = res.p_obs, res.o_obs
            if res.done:
                break
        assert b[ENEMY] > 0.999
