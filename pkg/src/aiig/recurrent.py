"""Recurrent protagonist baseline.

The policy is a gated recurrent cell over the raw observation stream with a
softmax readout. Critics see the raw observation together with the
policy's hidden state (treated as a constant input), so they share the
policy's memory without backpropagating into it. Training replays whole
episodes and backpropagates through time over each full episode.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import N_OPPONENT_ACTIONS, AgentType, GameConfig, ProtagonistObs
from .learner import LearnerConfig, LossReport, _clipped_noise, actor_objective_grad, one_hot
from .nn import Adam, DenseNet, RecurrentNet, load_net, optimizer_step, soft_update

RAW_OBS_DIM = 11
HIDDEN_SIZE = 32


def raw_obs_features(obs: ProtagonistObs, config: GameConfig) -> np.ndarray:
    """Positions, last opponent move (one-hot), signed probe reading, probe count, clock."""
    w = config.world_size
    (xp, yp), (xo, yo) = obs.protagonist_pos, obs.opponent_pos
    move = np.zeros(N_OPPONENT_ACTIONS)
    if obs.last_opponent_action is not None:
        move[int(obs.last_opponent_action)] = 1.0
    reading = 0.0
    if obs.probe_reading is not None:
        reading = 1.0 if obs.probe_reading == AgentType.ENEMY else -1.0
    return np.concatenate([[xp / w, yp / w, xo / w, yo / w], move,
                           [reading, obs.probe_count / 10.0, obs.step / config.max_steps]])


@dataclass
class EpisodeSequence:
    observations: np.ndarray  # (T+1, obs_dim), last row is the terminal observation
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,)

    def __len__(self) -> int:
        return len(self.actions)


class EpisodeBuffer:
    """Ring buffer of whole episodes for sequence replay."""

    def __init__(self, capacity: int = 5000):
        self.capacity = capacity
        self.episodes: list[EpisodeSequence] = []
        self.inserted = 0
        self.transitions = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.episodes)

    def push(self, episode: EpisodeSequence) -> None:
        with self._lock:
            if len(self.episodes) < self.capacity:
                self.episodes.append(episode)
            else:
                self.transitions -= len(self.episodes[self.inserted % self.capacity])
                self.episodes[self.inserted % self.capacity] = episode
            self.transitions += len(episode)
            self.inserted += 1

    def sample(self, n: int, rng: np.random.Generator) -> list[EpisodeSequence]:
        with self._lock:
            k = len(self.episodes)
        return [self.episodes[i] for i in rng.integers(0, k, size=n)]


class RecurrentActorCritic:
    NETS = ("policy", "q1", "q2", "policy_target", "q1_target", "q2_target")

    def __init__(self, cfg: LearnerConfig | None = None, n_actions: int = 6,
                 obs_dim: int = RAW_OBS_DIM, hidden_size: int = HIDDEN_SIZE,
                 rng: Optional[np.random.Generator] = None):
        self.cfg = cfg or LearnerConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.policy = RecurrentNet(obs_dim, hidden_size, [self.cfg.hidden[0], n_actions],
                                   rng=rng, out_scale=0.1)
        critic_in = obs_dim + hidden_size + n_actions
        self.q1 = DenseNet([critic_in, *self.cfg.hidden, 1], rng=rng)
        self.q2 = DenseNet([critic_in, *self.cfg.hidden, 1], rng=rng)
        self.policy_target = self.policy.copy()
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self._make_optimizers()
        self.train_steps = 0

    def _make_optimizers(self):
        self.policy_opt = Adam(self.policy.params, lr=self.cfg.actor_lr)
        self.q1_opt = Adam(self.q1.params, lr=self.cfg.critic_lr)
        self.q2_opt = Adam(self.q2.params, lr=self.cfg.critic_lr)

    def params_snapshot(self) -> list[np.ndarray]:
        return [p.copy() for name in self.NETS for p in getattr(self, name).params]

    def critic_input(self, obs, hidden, actions) -> np.ndarray:
        return np.concatenate([obs, hidden, one_hot(actions, self.n_actions)], axis=1)

    def to_blocks(self) -> tuple[dict, dict]:
        header = {f"arch.{name}": getattr(self, name).arch for name in self.NETS}
        header.update(kind="recurrent_actor_critic", obs_dim=self.obs_dim,
                      n_actions=self.n_actions, gamma=repr(self.cfg.gamma),
                      train_steps=self.train_steps)
        blocks = {}
        for name in self.NETS:
            blocks.update(getattr(self, name).to_blocks(name))
        for name in ("policy", "q1", "q2"):
            blocks.update(getattr(self, f"{name}_opt").to_blocks(f"opt.{name}"))
        return header, blocks

    @classmethod
    def from_blocks(cls, header: dict, blocks: dict, cfg: LearnerConfig) -> "RecurrentActorCritic":
        rac = cls.__new__(cls)
        rac.cfg = cfg.with_gamma(float(header.get("gamma", cfg.gamma)))
        rac.obs_dim, rac.n_actions = int(header["obs_dim"]), int(header["n_actions"])
        for name in cls.NETS:
            setattr(rac, name, load_net(header[f"arch.{name}"], blocks, name))
        rac._make_optimizers()
        for name in ("policy", "q1", "q2"):
            getattr(rac, f"{name}_opt").load_blocks(blocks, f"opt.{name}")
        rac.train_steps = int(header.get("train_steps", 0))
        return rac


def _pad(episodes: list[EpisodeSequence], obs_dim: int):
    T = max(len(ep) for ep in episodes)
    B = len(episodes)
    obs = np.zeros((T + 1, B, obs_dim))
    actions = np.zeros((T, B), dtype=np.int64)
    rewards = np.zeros((T, B))
    dones = np.ones((T, B))
    mask = np.zeros((T, B))
    for b, ep in enumerate(episodes):
        n = len(ep)
        obs[:n + 1, b] = ep.observations
        actions[:n, b] = ep.actions
        rewards[:n, b] = ep.rewards
        dones[:n, b] = ep.dones
        mask[:n, b] = 1.0
    return obs, actions, rewards, dones, mask


def train_step_recurrent(rac: RecurrentActorCritic, buffer: EpisodeBuffer,
                         cfg: LearnerConfig | None, step_index: int,
                         rng: np.random.Generator, episodes_per_batch: int = 8) -> LossReport:
    """One clipped double-Q critic update (and a delayed BPTT actor update)."""
    cfg = cfg or rac.cfg
    if buffer.transitions < cfg.batch_size or len(buffer) == 0:
        return LossReport("warming_up")
    episodes = buffer.sample(episodes_per_batch, rng)
    obs, actions, rewards, dones, mask = _pad(episodes, rac.obs_dim)
    T, B = actions.shape
    n = mask.sum()

    probs, cache = rac.policy.forward(obs)  # hidden after consuming obs[t]
    hs = cache.hs[1:]
    hs_target, _ = rac.policy_target.forward_hidden(obs)

    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    next_logits = rac.policy_target.readout.logits(flat(hs_target[1:]))
    next_logits = next_logits + _clipped_noise(next_logits.shape, cfg, rng)
    next_actions = np.argmax(next_logits, axis=1)
    x_next = rac.critic_input(flat(obs[1:]), flat(hs_target[1:]), next_actions)
    q_next = np.minimum(rac.q1_target(x_next)[:, 0], rac.q2_target(x_next)[:, 0])
    y = rewards.ravel() + cfg.gamma * (1.0 - dones.ravel()) * q_next

    m = mask.ravel()
    x = rac.critic_input(flat(obs[:-1]), flat(hs[:-1]), actions.ravel())
    critic_loss = 0.0
    for critic, opt in ((rac.q1, rac.q1_opt), (rac.q2, rac.q2_opt)):
        q, ccache = critic.forward(x)
        err = (q[:, 0] - y) * m
        critic_loss += float((err ** 2).sum() / n) / 2.0
        optimizer_step(critic, critic.backward(ccache, (2.0 / n) * err[:, None]), opt)

    report = LossReport("ok", critic_loss=critic_loss)
    if step_index % cfg.policy_delay == 0:
        states = flat(obs[:-1])
        hidden = flat(hs[:-1])
        rep_obs = np.repeat(states, rac.n_actions, axis=0)
        rep_h = np.repeat(hidden, rac.n_actions, axis=0)
        acts = np.tile(np.arange(rac.n_actions), T * B)
        q = rac.q1(rac.critic_input(rep_obs, rep_h, acts)).reshape(T * B, rac.n_actions)
        p = probs[:-1].reshape(T * B, rac.n_actions)
        loss, g = actor_objective_grad(p, q, cfg.entropy_coef)
        grad = np.zeros((T + 1, B, rac.n_actions))
        grad[:-1] = (g * m[:, None] / n).reshape(T, B, rac.n_actions)
        grads = rac.policy.backward(cache, grad_output=grad, wrt="logits")
        optimizer_step(rac.policy, grads, rac.policy_opt)
        report.actor_loss = float((loss * m).sum() / n)
        report.actor_updated = True
        soft_update(rac.policy_target, rac.policy, cfg.tau)
        soft_update(rac.q1_target, rac.q1, cfg.tau)
        soft_update(rac.q2_target, rac.q2, cfg.tau)
    rac.train_steps += 1
    return report
