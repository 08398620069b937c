"""Collapse an opponent ensemble into one policy per type.

The KL-optimal summary of K per-type policies is their arithmetic mean.
Rather than running K networks at inference time, a single softmax
network is regressed onto the action distributions stored with each
replay transition, so the cost does not grow with the ensemble size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .env import N_OPPONENT_ACTIONS, OPPONENT_INPUT_DIM, AgentType
from .learner import ReplayBuffer
from .nn import Adam, DenseNet, optimizer_step


class InsufficientSamplesError(ValueError):
    def __init__(self, agent_type: AgentType, count: int, required: int):
        self.agent_type, self.count, self.required = agent_type, count, required
        super().__init__(f"cannot distill type {AgentType(agent_type).name}: "
                         f"{count} transitions, need at least {required}")


def exact_average(members: Sequence, x) -> np.ndarray:
    """Mean of the members' action distributions at encoded input(s) ``x``."""
    if not members:
        raise ValueError("exact_average needs at least one member")
    x = np.asarray(x, dtype=np.float64)
    return np.mean([m(x) if x.ndim == 2 else m.probs_one(x) for m in members], axis=0)


def distillation_targets(buffer: ReplayBuffer, agent_type: AgentType):
    """(inputs, stored action distributions) of every transition tagged with ``agent_type``."""
    n = len(buffer)
    idx = np.flatnonzero(buffer.types[:n] == int(agent_type))
    return buffer.inputs[idx].copy(), buffer.action_probs[idx].copy()


@dataclass
class DistillResult:
    net: DenseNet
    train_loss: float
    holdout_loss: float
    n_samples: int
    holdout_inputs: np.ndarray
    holdout_targets: np.ndarray


def fit_distribution(inputs: np.ndarray, targets: np.ndarray, layer_sizes: Sequence[int],
                     steps: int, batch_size: int, lr: float, rng: np.random.Generator,
                     net: Optional[DenseNet] = None) -> tuple[DenseNet, float]:
    """Minimize the mean squared error between softmax outputs and target distributions."""
    net = net or DenseNet(layer_sizes, head="softmax", rng=rng, out_scale=0.1)
    opt = Adam(net.params, lr=lr)
    n = len(inputs)
    loss = float("nan")
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        probs, cache = net.forward(inputs[idx])
        err = probs - targets[idx]
        loss = float(np.mean(np.sum(err ** 2, axis=1)))
        optimizer_step(net, net.backward(cache, 2.0 * err / len(idx)), opt)
    return net, loss


def distill(buffer: ReplayBuffer, agent_type: AgentType,
            layer_sizes: Sequence[int] = (OPPONENT_INPUT_DIM, 64, 64, N_OPPONENT_ACTIONS),
            steps: int = 5000, batch_size: int = 256, lr: float = 1e-3, holdout: float = 0.1,
            min_samples: int = 1000, rng: Optional[np.random.Generator] = None) -> DistillResult:
    rng = rng if rng is not None else np.random.default_rng(0)
    inputs, targets = distillation_targets(buffer, agent_type)
    if len(inputs) < min_samples:
        raise InsufficientSamplesError(agent_type, len(inputs), min_samples)
    order = rng.permutation(len(inputs))
    n_hold = max(1, int(round(holdout * len(inputs))))
    hold, train = order[:n_hold], order[n_hold:]
    net, train_loss = fit_distribution(inputs[train], targets[train], layer_sizes,
                                       steps, batch_size, lr, rng)
    pred = net(inputs[hold])
    holdout_loss = float(np.mean(np.sum((pred - targets[hold]) ** 2, axis=1)))
    return DistillResult(net, train_loss, holdout_loss, len(inputs), inputs[hold], targets[hold])


def total_variation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)
