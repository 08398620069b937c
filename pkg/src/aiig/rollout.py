"""Agents and single-episode rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .belief import (PROTAGONIST_INPUT_DIM, Belief, BeliefFilter, OpponentModelSet,
                     belief_reward, encode_protagonist_input)
from .env import (N_OPPONENT_ACTIONS, N_PROTAGONIST_ACTIONS, OPPONENT_INPUT_DIM, AgentType,
                  GameConfig,
                  OpponentObs, ProtagonistAction, ProtagonistObs, ScriptKind, TagGame,
                  TraceRecord, encode_opponent_input, scripted_action_probs)
from .learner import ActorCritic, ActResult, MemberTag, Transition, act, sample_categorical
from .nn import softmax
from .recurrent import EpisodeSequence, RecurrentActorCritic, raw_obs_features

MODES = ("belief", "recurrent")


# -- protagonists -------------------------------------------------------------

class BeliefProtagonist:
    """Feedforward policy over (observation, belief) features."""

    mode = "belief"

    def __init__(self, learner: ActorCritic, config: GameConfig):
        self.learner = learner
        self.config = config

    def begin_episode(self) -> None:
        pass

    def features(self, obs: ProtagonistObs, belief: Belief) -> np.ndarray:
        return encode_protagonist_input(obs, belief, self.config)

    def act(self, obs, belief, explore, rng) -> ActResult:
        return act(self.learner, self.features(obs, belief), explore, rng)


class RecurrentProtagonist:
    """Recurrent policy over the raw observation stream; ignores the belief."""

    mode = "recurrent"

    def __init__(self, learner: RecurrentActorCritic, config: GameConfig):
        self.learner = learner
        self.config = config
        self.hidden = learner.policy.initial_state()

    def begin_episode(self) -> None:
        self.hidden = self.learner.policy.initial_state()

    def features(self, obs, belief=None) -> np.ndarray:
        return raw_obs_features(obs, self.config)

    def act(self, obs, belief, explore, rng) -> ActResult:
        policy = self.learner.policy
        self.hidden = policy.step_one(self.features(obs), self.hidden)
        logits = policy.readout.logits_one(self.hidden)
        probs = softmax(logits)
        if explore:
            cfg = self.learner.cfg
            noise = np.clip(rng.normal(0.0, cfg.exploration_noise_std, logits.shape),
                            -cfg.noise_clip, cfg.noise_clip)
            sampled = softmax(logits + noise)
        else:
            sampled = probs
        return ActResult(sample_categorical(sampled, rng), sampled, probs)


class ScriptedProtagonist:
    """Baseline protagonists: ``uniform`` random or ``idle`` (shuffles left/right, never tags)."""

    mode = "belief"

    def __init__(self, kind: str = "uniform"):
        if kind not in ("uniform", "idle"):
            raise ValueError(f"unknown scripted protagonist {kind!r}")
        self.kind = kind

    def begin_episode(self) -> None:
        pass

    def act(self, obs, belief, explore, rng) -> ActResult:
        probs = np.zeros(N_PROTAGONIST_ACTIONS)
        if self.kind == "uniform":
            probs[:] = 1.0 / N_PROTAGONIST_ACTIONS
            return ActResult(sample_categorical(probs, rng), probs, probs)
        a = ProtagonistAction.MOVE_LEFT if obs.step % 2 == 0 else ProtagonistAction.MOVE_RIGHT
        probs[a] = 1.0
        return ActResult(int(a), probs, probs)


# -- opponents ----------------------------------------------------------------

class LearnedOpponent:
    """One actor-critic per opponent type; dispatches on the observed own type."""

    def __init__(self, learners: Mapping[AgentType, ActorCritic], config: GameConfig):
        self.learners = dict(learners)
        self.config = config

    def act(self, obs: OpponentObs, explore, rng) -> ActResult:
        return act(self.learners[obs.own_type], encode_opponent_input(obs, self.config),
                   explore, rng)


class NetOpponent:
    """Opponent driven by bare softmax actors (mutants, distilled models)."""

    def __init__(self, actors: Mapping[AgentType, object], config: GameConfig):
        self.actors = dict(actors)
        self.config = config

    def act(self, obs: OpponentObs, explore, rng) -> ActResult:
        probs = self.actors[obs.own_type].probs_one(encode_opponent_input(obs, self.config))
        return ActResult(sample_categorical(probs, rng), probs, probs)


class ScriptedOpponentPolicy:
    def __init__(self, kind, config: GameConfig):
        self.kind = ScriptKind(kind)
        self.config = config

    def act(self, obs: OpponentObs, explore, rng) -> ActResult:
        probs = scripted_action_probs(self.kind, obs, self.config)
        if self.kind is ScriptKind.RANDOM:
            return ActResult(sample_categorical(probs, rng), probs, probs)
        return ActResult(int(np.argmax(probs)), probs, probs)


# -- episodes -----------------------------------------------------------------

@dataclass
class EpisodeResult:
    opponent_type: AgentType
    outcome: str
    length: int
    protagonist_return: float  # state-space reward with the true type
    protagonist_belief_return: float
    opponent_return: float
    beliefs: list[list[float]] = field(default_factory=list)
    protagonist_transitions: list[Transition] = field(default_factory=list)
    protagonist_sequence: Optional[EpisodeSequence] = None
    opponent_transitions: list[Transition] = field(default_factory=list)
    trace: list[TraceRecord] = field(default_factory=list)


def run_episode(game: TagGame, protagonist, opponent, models: Optional[OpponentModelSet],
                mode: str, rng: np.random.Generator,
                opponent_rng: Optional[np.random.Generator] = None,
                explore: bool = True, opponent_explore: Optional[bool] = None,
                opponent_tag: MemberTag | None = None,
                opponent_type: Optional[AgentType] = None,
                record_trace: bool = False) -> EpisodeResult:
    """Roll one episode and collect both agents' transitions.

    In belief mode the protagonist sees encoded (observation, belief)
    features and its stored reward is the belief-space reward under the
    belief held when it acted. In recurrent mode it sees raw observations
    and stores the state-space reward. Opponent transitions always carry
    the state-space reward and the noiseless actor distribution.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    config = game.config
    opponent_rng = rng if opponent_rng is None else opponent_rng
    opponent_explore = explore if opponent_explore is None else opponent_explore
    opponent_tag = opponent_tag or MemberTag("opponent")
    models = models or OpponentModelSet.uniform()

    p_obs, o_obs = game.reset(opponent_type)
    true_type = game.state.opponent_type
    tag = MemberTag(opponent_tag.role, int(true_type), opponent_tag.member, opponent_tag.source)
    filt = BeliefFilter(models, config)
    belief = filt.reset()
    protagonist.begin_episode()

    result = EpisodeResult(true_type, "running", 0, 0.0, 0.0, 0.0, beliefs=[belief.tolist()])
    raw_obs, p_actions, p_rewards, p_dones = [], [], [], []
    if mode == "recurrent":
        raw_obs.append(raw_obs_features(p_obs, config))
    p_features = encode_protagonist_input(p_obs, belief, config) if mode == "belief" else None
    o_features = encode_opponent_input(o_obs, config)

    done = False
    while not done:
        p_act = protagonist.act(p_obs, belief, explore, rng)
        o_act = opponent.act(o_obs, opponent_explore, opponent_rng)
        step = game.step(p_act.action, o_act.action)
        done = step.done

        new_belief = filt.observe(p_obs, step.p_obs)
        r_belief = belief_reward(belief, step.flags, config)
        result.protagonist_return += step.r_p
        result.protagonist_belief_return += r_belief
        result.opponent_return += step.r_o
        result.length += 1
        result.beliefs.append(new_belief.tolist())

        next_o_features = encode_opponent_input(step.o_obs, config)
        result.opponent_transitions.append(Transition(
            o_features, o_act.action, o_act.policy_probs, step.r_o, next_o_features, done, tag))
        if mode == "belief":
            next_p_features = encode_protagonist_input(step.p_obs, new_belief, config)
            result.protagonist_transitions.append(Transition(
                p_features, p_act.action, p_act.action_probs, r_belief, next_p_features, done))
            p_features = next_p_features
        else:
            raw_obs.append(raw_obs_features(step.p_obs, config))
            p_actions.append(p_act.action)
            p_rewards.append(step.r_p)
            p_dones.append(float(done))

        if record_trace:
            result.trace.append(TraceRecord(
                step=step.state.step,
                protagonist_pos=step.state.protagonist_pos,
                opponent_pos=step.state.opponent_pos,
                protagonist_action=ProtagonistAction(p_act.action).name,
                opponent_action=step.p_obs.last_opponent_action.name,
                r_p=step.r_p, r_o=step.r_o,
                probe_reading=None if step.probe_reading is None else step.probe_reading.name,
                opponent_type=true_type.name,
                outcome=step.state.outcome.value,
                belief=new_belief.tolist() if mode == "belief" else None,
            ))

        p_obs, o_obs, o_features, belief = step.p_obs, step.o_obs, next_o_features, new_belief

    result.outcome = game.state.outcome.value
    if mode == "recurrent":
        result.protagonist_sequence = EpisodeSequence(
            np.array(raw_obs), np.array(p_actions, dtype=np.int64),
            np.array(p_rewards), np.array(p_dones))
    return result


def make_protagonist(mode: str, cfg, config: GameConfig, rng: np.random.Generator):
    if mode == "belief":
        return BeliefProtagonist(ActorCritic(PROTAGONIST_INPUT_DIM, N_PROTAGONIST_ACTIONS, cfg, rng), config)
    if mode == "recurrent":
        return RecurrentProtagonist(RecurrentActorCritic(cfg, N_PROTAGONIST_ACTIONS, rng=rng), config)
    raise ValueError(f"unknown mode {mode!r}")


def make_opponent_learners(cfg, rng: np.random.Generator) -> dict[AgentType, ActorCritic]:
    return {t: ActorCritic(OPPONENT_INPUT_DIM, N_OPPONENT_ACTIONS, cfg, rng) for t in AgentType}
