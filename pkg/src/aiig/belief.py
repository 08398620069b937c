"""Posterior over the opponent's hidden type.

Physical state is fully observed, so the filter only tracks the type
marginal. Types never change within an episode, which makes the prediction
step the identity; all evidence enters through the opponent's observed
action (scored by a per-type opponent model) and through probe readings.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .env import (AGENT_TYPES, N_OPPONENT_ACTIONS, AgentType, GameConfig, OpponentObs,
                  ProtagonistObs, ScriptKind, StepFlags, encode_opponent_input,
                  opponent_obs_as, protagonist_reward_given_type, scripted_action_probs)

LIKELIHOOD_FLOOR = 1e-6
PROTAGONIST_INPUT_DIM = 7


class Belief:
    """Probability vector over ``AgentType`` ordered [Ally, Enemy]."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        probs = np.array(probs, dtype=np.float64)
        if probs.shape != (len(AGENT_TYPES),) or np.any(probs < 0) \
                or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"not a belief over {len(AGENT_TYPES)} types: {probs!r}")
        self.probs = probs

    @classmethod
    def uniform(cls) -> "Belief":
        return cls(np.full(len(AGENT_TYPES), 1.0 / len(AGENT_TYPES)))

    @classmethod
    def point(cls, agent_type: AgentType) -> "Belief":
        probs = np.zeros(len(AGENT_TYPES))
        probs[int(agent_type)] = 1.0
        return cls(probs)

    def __getitem__(self, agent_type) -> float:
        return float(self.probs[int(agent_type)])

    def __repr__(self):
        return f"Belief(ally={self.probs[0]:.6g}, enemy={self.probs[1]:.6g})"

    def tolist(self) -> list[float]:
        return [float(p) for p in self.probs]


def _normalized(unnorm: np.ndarray) -> Belief:
    return Belief(unnorm / unnorm.sum())


# -- opponent models ----------------------------------------------------------

class OpponentModelSet:
    """One policy evaluator per opponent type, used as the filter's likelihood."""

    def __init__(self, evaluators: Mapping[AgentType, Callable[[OpponentObs], np.ndarray]],
                 name: str = "custom"):
        missing = [t for t in AGENT_TYPES if t not in evaluators]
        if missing:
            raise ValueError(f"no opponent model for {missing}")
        self.evaluators = dict(evaluators)
        self.name = name

    def probs(self, obs: OpponentObs) -> np.ndarray:
        return self.evaluators[obs.own_type](obs)

    def likelihoods(self, pre_obs: ProtagonistObs, action) -> np.ndarray:
        """P(action | pre-action observation, type m) for every type m."""
        return np.array([self.evaluators[t](opponent_obs_as(pre_obs, t))[int(action)]
                         for t in AGENT_TYPES])

    @property
    def informative(self) -> bool:
        return self.name != "uniform"

    @classmethod
    def uniform(cls) -> "OpponentModelSet":
        flat = np.full(N_OPPONENT_ACTIONS, 1.0 / N_OPPONENT_ACTIONS)
        return cls({t: (lambda obs: flat) for t in AGENT_TYPES}, name="uniform")

    @classmethod
    def scripted(cls, kind, config: GameConfig | None = None) -> "OpponentModelSet":
        kind = ScriptKind(kind)
        fn = lambda obs: scripted_action_probs(kind, obs, config)  # noqa: E731
        return cls({t: fn for t in AGENT_TYPES}, name=f"scripted:{kind.value}")

    @classmethod
    def from_nets(cls, nets: Mapping[AgentType, object], config: GameConfig) -> "OpponentModelSet":
        """Wrap softmax-head networks (anything with ``probs_one``) as evaluators."""
        def make(net):
            return lambda obs: net.probs_one(encode_opponent_input(obs, config))
        return cls({t: make(nets[t]) for t in AGENT_TYPES}, name="distilled")


# -- filter operations --------------------------------------------------------

def predict(b: Belief) -> Belief:
    """Type persistence: the type marginal carries over unchanged."""
    return Belief(b.probs)


def update_action(b: Belief, pre_obs: ProtagonistObs, action, models: OpponentModelSet,
                  floor: float = LIKELIHOOD_FLOOR) -> Belief:
    lik = np.maximum(models.likelihoods(pre_obs, action), floor)
    return _normalized(lik * b.probs)


def update_probe(b: Belief, reading: AgentType, accuracy: float) -> Belief:
    if not 0.5 <= accuracy <= 1.0:
        raise ValueError(f"probe accuracy must lie in [0.5, 1], got {accuracy}")
    lik = np.where(np.arange(len(AGENT_TYPES)) == int(reading), accuracy, 1.0 - accuracy)
    return _normalized(lik * b.probs)


def belief_reward(b: Belief, flags: StepFlags, config: GameConfig) -> float:
    """Expected protagonist reward under ``b`` with the physical outcome held fixed."""
    return sum(b[t] * protagonist_reward_given_type(flags, t, config) for t in AGENT_TYPES)


def encode_protagonist_input(obs: ProtagonistObs, b: Belief, config: GameConfig) -> np.ndarray:
    w = config.world_size
    (xp, yp), (xo, yo) = obs.protagonist_pos, obs.opponent_pos
    return np.array([xp / w, yp / w, xo / w, yo / w, b[AgentType.ENEMY],
                     obs.probe_count / 10.0, obs.step / config.max_steps])


class BeliefFilter:
    """Tracks the belief through one episode from the protagonist's side."""

    def __init__(self, models: OpponentModelSet, config: GameConfig):
        self.models = models
        self.config = config
        self.belief = Belief.uniform()

    def reset(self) -> Belief:
        self.belief = Belief.uniform()
        return self.belief

    def observe(self, pre_obs: ProtagonistObs, post_obs: ProtagonistObs) -> Belief:
        """Absorb one tick: the opponent's move taken from ``pre_obs`` and any probe reading."""
        b = predict(self.belief)
        if post_obs.last_opponent_action is not None:
            b = update_action(b, pre_obs, post_obs.last_opponent_action, self.models)
        if post_obs.probe_reading is not None:
            b = update_probe(b, post_obs.probe_reading, self.config.probe_accuracy)
        self.belief = b
        return b


def joint_posterior(prior: Sequence[float], likelihood_rows: np.ndarray,
                    floor: float = LIKELIHOOD_FLOOR) -> np.ndarray:
    """One-shot posterior: floor each row, multiply everything, normalize once."""
    lik = np.maximum(np.asarray(likelihood_rows, dtype=np.float64), floor)
    unnorm = np.asarray(prior, dtype=np.float64) * np.prod(lik, axis=0)
    return unnorm / unnorm.sum()


def sequential_posteriors(prior: Sequence[float], likelihood_rows: np.ndarray,
                          floor: float = LIKELIHOOD_FLOOR) -> np.ndarray:
    """Belief after each row of evidence (row 0 is the prior), via the active kernel."""
    rows = np.ascontiguousarray(likelihood_rows, dtype=np.float64)
    return kernels.bayes_filter(np.asarray(prior, dtype=np.float64), rows, floor)


def probe_likelihood(reading: AgentType, accuracy: float) -> np.ndarray:
    return np.where(np.arange(len(AGENT_TYPES)) == int(reading), accuracy, 1.0 - accuracy)


def evidence_rows(transitions, models: OpponentModelSet,
                  accuracy: float) -> tuple[np.ndarray, list[Optional[str]]]:
    """Likelihood rows for a list of ``(pre_obs, post_obs)`` pairs.

    Action evidence comes before probe evidence within a tick, matching
    ``BeliefFilter.observe``. Returns the rows and a tag per row.
    """
    rows, tags = [], []
    for pre_obs, post_obs in transitions:
        if post_obs.last_opponent_action is not None:
            rows.append(models.likelihoods(pre_obs, post_obs.last_opponent_action))
            tags.append("action")
        if post_obs.probe_reading is not None:
            rows.append(probe_likelihood(post_obs.probe_reading, accuracy))
            tags.append("probe")
    return np.array(rows).reshape(-1, len(AGENT_TYPES)), tags
