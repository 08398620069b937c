"""Twin-delayed actor-critic for discrete action sets.

The skeleton is TD3's: twin critics with a clipped double-Q target, target
policy smoothing, delayed actor updates and soft target updates. The actor
is categorical; exploration and target smoothing both perturb its logits
with clipped Gaussian noise, and the actor objective is the exact expected
Q under the softmax (action sets have at most six entries).
"""

from __future__ import annotations

import threading
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .env import ConfigError
from .nn import Adam, DenseNet, load_net, optimizer_step, soft_update, softmax


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    actor_lr: float = 5e-5
    critic_lr: float = 1e-3
    tau: float = 5e-3
    exploration_noise_std: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    batch_size: int = 128
    buffer_capacity: int = 200_000
    hidden: tuple[int, ...] = (64, 64)
    # entropy bonus on the actor objective; keeps the softmax from saturating
    entropy_coef: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"learner.gamma must lie in (0, 1), got {self.gamma!r}")
        if not self.noise_clip > 0:
            raise ConfigError("learner.noise_clip must be positive")
        for key in ("actor_lr", "critic_lr", "tau", "policy_delay", "batch_size", "buffer_capacity"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"learner.{key} must be positive")
        if self.entropy_coef < 0:
            raise ConfigError("learner.entropy_coef must be non-negative")
        if self.exploration_noise_std < 0:
            raise ConfigError("learner.exploration_noise_std must be non-negative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, data: dict) -> "LearnerConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown key learner.{key}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def with_gamma(self, gamma: float) -> "LearnerConfig":
        return LearnerConfig(**{**asdict(self), "gamma": gamma})


# -- replay -------------------------------------------------------------------

SOURCES = ("grad", "mutant", "eval", "scripted")


@dataclass(frozen=True)
class MemberTag:
    role: str  # "protagonist" or "opponent"
    agent_type: Optional[int] = None
    member: int = -1
    source: str = "grad"


@dataclass
class Transition:
    input: np.ndarray
    action: int
    action_probs: np.ndarray
    reward: float
    next_input: np.ndarray
    done: bool
    member_tag: MemberTag = field(default_factory=lambda: MemberTag("protagonist"))


class Batch(NamedTuple):
    inputs: np.ndarray
    actions: np.ndarray
    action_probs: np.ndarray
    rewards: np.ndarray
    next_inputs: np.ndarray
    dones: np.ndarray
    indices: np.ndarray


class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling.

    Appends and snapshots take a lock so rollout threads can share one
    buffer; sampling works on the index range visible when it started.
    """

    def __init__(self, input_dim: int, n_actions: int, capacity: int = 200_000):
        self.input_dim, self.n_actions, self.capacity = input_dim, n_actions, int(capacity)
        self.inputs = np.zeros((self.capacity, input_dim))
        self.next_inputs = np.zeros((self.capacity, input_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.action_probs = np.zeros((self.capacity, n_actions))
        self.rewards = np.zeros(self.capacity)
        self.dones = np.zeros(self.capacity)
        self.members = np.full(self.capacity, -1, dtype=np.int64)
        self.sources = np.zeros(self.capacity, dtype=np.int8)
        self.types = np.full(self.capacity, -1, dtype=np.int8)
        self.inserted = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(self, tr: Transition) -> None:
        probs = np.asarray(tr.action_probs, dtype=np.float64)
        if not 0 <= int(tr.action) < self.n_actions:
            raise ValueError(f"action {tr.action} out of range")
        if probs.shape != (self.n_actions,) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("action_probs must be a distribution over the action set")
        with self._lock:
            i = self.inserted % self.capacity
            self.inputs[i] = tr.input
            self.next_inputs[i] = tr.next_input
            self.actions[i] = int(tr.action)
            self.action_probs[i] = probs
            self.rewards[i] = tr.reward
            self.dones[i] = float(tr.done)
            tag = tr.member_tag
            self.members[i] = tag.member
            self.sources[i] = SOURCES.index(tag.source)
            self.types[i] = -1 if tag.agent_type is None else int(tag.agent_type)
            self.inserted += 1

    def extend(self, transitions) -> None:
        for tr in transitions:
            self.push(tr)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        with self._lock:
            n = len(self)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, n, size=batch_size)
        return self.gather(idx)

    def gather(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.inputs[idx], self.actions[idx], self.action_probs[idx],
                     self.rewards[idx], self.next_inputs[idx], self.dones[idx], idx)

    def census(self) -> dict[str, int]:
        """Transition count per source label over the current contents."""
        n = len(self)
        codes, counts = np.unique(self.sources[:n], return_counts=True)
        return {SOURCES[c]: int(k) for c, k in zip(codes, counts)}


# -- actor-critic -------------------------------------------------------------

def one_hot(actions, n: int) -> np.ndarray:
    return np.eye(n)[np.asarray(actions, dtype=np.int64)]


class ActResult(NamedTuple):
    action: int
    action_probs: np.ndarray  # the distribution the action was sampled from
    policy_probs: np.ndarray  # the noiseless actor distribution


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(probs) - 1)


class ActorCritic:
    def __init__(self, input_dim: int, n_actions: int, cfg: LearnerConfig | None = None,
                 rng: Optional[np.random.Generator] = None):
        self.cfg = cfg or LearnerConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim, self.n_actions = input_dim, n_actions
        hidden = list(self.cfg.hidden)
        self.actor = DenseNet([input_dim, *hidden, n_actions], head="softmax", rng=rng, out_scale=0.1)
        self.q1 = DenseNet([input_dim + n_actions, *hidden, 1], rng=rng)
        self.q2 = DenseNet([input_dim + n_actions, *hidden, 1], rng=rng)
        self._sync_targets()
        self._make_optimizers()
        self.train_steps = 0

    def _sync_targets(self):
        self.actor_target = self.actor.copy()
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()

    def _make_optimizers(self):
        self.actor_opt = Adam(self.actor.params, lr=self.cfg.actor_lr)
        self.q1_opt = Adam(self.q1.params, lr=self.cfg.critic_lr)
        self.q2_opt = Adam(self.q2.params, lr=self.cfg.critic_lr)

    NETS = ("actor", "q1", "q2", "actor_target", "q1_target", "q2_target")

    def params_snapshot(self) -> list[np.ndarray]:
        return [p.copy() for name in self.NETS for p in getattr(self, name).params]

    def critic_input(self, inputs, actions) -> np.ndarray:
        return np.concatenate([inputs, one_hot(actions, self.n_actions)], axis=1)

    def q_all(self, critic: DenseNet, inputs: np.ndarray) -> np.ndarray:
        """Q(s, a) for every action: shape (B, n_actions)."""
        B = inputs.shape[0]
        rep = np.repeat(inputs, self.n_actions, axis=0)
        acts = np.tile(np.arange(self.n_actions), B)
        return critic(self.critic_input(rep, acts)).reshape(B, self.n_actions)

    # -- persistence ------------------------------------------------------
    def to_blocks(self) -> tuple[dict, dict]:
        header = {f"arch.{name}": getattr(self, name).arch for name in self.NETS}
        header.update(kind="actor_critic", input_dim=self.input_dim, n_actions=self.n_actions,
                      gamma=repr(self.cfg.gamma), train_steps=self.train_steps)
        blocks = {}
        for name in self.NETS:
            blocks.update(getattr(self, name).to_blocks(name))
        for name in ("actor", "q1", "q2"):
            blocks.update(getattr(self, f"{name}_opt").to_blocks(f"opt.{name}"))
        return header, blocks

    @classmethod
    def from_blocks(cls, header: dict, blocks: dict, cfg: LearnerConfig) -> "ActorCritic":
        cfg = cfg.with_gamma(float(header.get("gamma", cfg.gamma)))
        ac = cls.__new__(cls)
        ac.cfg = cfg
        ac.input_dim, ac.n_actions = int(header["input_dim"]), int(header["n_actions"])
        for name in cls.NETS:
            setattr(ac, name, load_net(header[f"arch.{name}"], blocks, name))
        ac._make_optimizers()
        for name in ("actor", "q1", "q2"):
            getattr(ac, f"{name}_opt").load_blocks(blocks, f"opt.{name}")
        ac.train_steps = int(header.get("train_steps", 0))
        return ac


def _clipped_noise(shape, cfg: LearnerConfig, rng: np.random.Generator) -> np.ndarray:
    noise = rng.normal(0.0, cfg.exploration_noise_std, size=shape)
    return np.clip(noise, -cfg.noise_clip, cfg.noise_clip)


def act(ac: ActorCritic, x, explore: bool, rng: np.random.Generator) -> ActResult:
    logits = ac.actor.logits_one(x)
    policy = softmax(logits)
    probs = softmax(logits + _clipped_noise(logits.shape, ac.cfg, rng)) if explore else policy
    return ActResult(sample_categorical(probs, rng), probs, policy)


def critic_targets(ac: ActorCritic, batch: Batch, cfg: LearnerConfig | None = None,
                   rng: Optional[np.random.Generator] = None, smoothing: bool = True) -> np.ndarray:
    cfg = cfg or ac.cfg
    logits = ac.actor_target.logits(batch.next_inputs)
    if smoothing:
        if rng is None:
            raise ValueError("target smoothing needs an rng")
        logits = logits + _clipped_noise(logits.shape, cfg, rng)
    next_actions = np.argmax(logits, axis=1)
    x = ac.critic_input(batch.next_inputs, next_actions)
    q_next = np.minimum(ac.q1_target(x)[:, 0], ac.q2_target(x)[:, 0])
    return batch.rewards + cfg.gamma * (1.0 - batch.dones) * q_next


@dataclass
class LossReport:
    status: str  # "ok" or "warming_up"
    critic_loss: Optional[float] = None
    actor_loss: Optional[float] = None
    actor_updated: bool = False


def critic_update(ac: ActorCritic, inputs, actions, y) -> float:
    x = ac.critic_input(inputs, actions)
    B = len(y)
    total = 0.0
    for critic, opt in ((ac.q1, ac.q1_opt), (ac.q2, ac.q2_opt)):
        q, cache = critic.forward(x)
        err = q[:, 0] - y
        total += float(np.mean(err ** 2))
        grads = critic.backward(cache, (2.0 / B) * err[:, None])
        optimizer_step(critic, grads, opt)
    return total / 2.0


def actor_objective_grad(probs: np.ndarray, q: np.ndarray, entropy_coef: float):
    """Loss ``-(E_pi[Q] + c * H(pi))`` per row and its gradient w.r.t. the logits."""
    expected = (probs * q).sum(axis=1, keepdims=True)
    logp = np.log(np.maximum(probs, 1e-300))
    entropy = -(probs * logp).sum(axis=1, keepdims=True)
    grad = -probs * (q - expected) + entropy_coef * probs * (logp + entropy)
    return -(expected + entropy_coef * entropy)[:, 0], grad


def actor_update(ac: ActorCritic, inputs) -> float:
    probs, cache = ac.actor.forward(inputs)
    q = ac.q_all(ac.q1, inputs)
    loss, grad_logits = actor_objective_grad(probs, q, ac.cfg.entropy_coef)
    B = inputs.shape[0]
    grads = ac.actor.backward(cache, grad_logits / B, wrt="logits")
    optimizer_step(ac.actor, grads, ac.actor_opt)
    return float(loss.mean())


def update_targets(ac: ActorCritic, tau: float) -> None:
    soft_update(ac.actor_target, ac.actor, tau)
    soft_update(ac.q1_target, ac.q1, tau)
    soft_update(ac.q2_target, ac.q2, tau)


def train_step(ac: ActorCritic, buffer: ReplayBuffer, cfg: LearnerConfig | None,
               step_index: int, rng: np.random.Generator) -> LossReport:
    cfg = cfg or ac.cfg
    if len(buffer) < cfg.batch_size:
        return LossReport("warming_up")
    batch = buffer.sample(cfg.batch_size, rng)
    y = critic_targets(ac, batch, cfg, rng)
    report = LossReport("ok", critic_loss=critic_update(ac, batch.inputs, batch.actions, y))
    if step_index % cfg.policy_delay == 0:
        report.actor_loss = actor_update(ac, batch.inputs)
        report.actor_updated = True
        update_targets(ac, cfg.tau)
    ac.train_steps += 1
    return report


def train_steps(ac: ActorCritic, buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> int:
    """Run ``n`` consecutive steps on the learner's own counter; returns updates done."""
    done = 0
    for _ in range(n):
        if train_step(ac, buffer, ac.cfg, ac.train_steps, rng).status == "ok":
            done += 1
    return done
