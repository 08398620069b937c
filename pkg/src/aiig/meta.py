"""Robustness metric, ensemble evaluation and annealing over ensemble subsets.

The robustness score of an ensemble is ``-r_p + lambda1 * r_o + lambda2 * K``
where ``r_p`` and ``r_o`` come from pitting a freshly trained evaluation
opponent against the frozen protagonist. Lower is better. Simulated
annealing walks the active/deactivated split with pop, append and
exchange moves.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .belief import OpponentModelSet
from .config import MetaConfig
from .env import N_OPPONENT_ACTIONS, OPPONENT_INPUT_DIM, AgentType, GameConfig, TagGame
from .learner import LearnerConfig, ReplayBuffer, train_step
from .rollout import LearnedOpponent, make_opponent_learners, run_episode


# -- the metric ---------------------------------------------------------------

@dataclass(frozen=True)
class RobustnessReport:
    r_p: float
    r_o: float
    K: int
    rho: float

    @classmethod
    def assemble(cls, r_p: float, r_o: float, K: int, lambda1: float = 0.1,
                 lambda2: float = 1.0) -> "RobustnessReport":
        return cls(float(r_p), float(r_o), int(K), -r_p + lambda1 * r_o + lambda2 * K)


@dataclass
class EvaluationResult:
    report: RobustnessReport
    episodes: list[dict] = field(default_factory=list)
    opponent_gamma: float = 0.99
    train_steps: int = 0


def evaluate_ensemble(protagonist, models: Optional[OpponentModelSet], K: int, env: GameConfig,
                      meta_cfg: MetaConfig, learner_cfg: LearnerConfig,
                      rng: np.random.Generator) -> EvaluationResult:
    """Train a fresh opponent against the frozen protagonist, then measure both sides.

    The protagonist only acts (noiselessly); nothing in it is updated. The
    opponent has one learner per type, trained for ``eval_train_steps``
    environment steps with one gradient step per environment step.
    """
    cfg = learner_cfg.with_gamma(meta_cfg.eval_gamma)
    learners = make_opponent_learners(cfg, rng)
    opponent = LearnedOpponent(learners, env)
    buffers = {t: ReplayBuffer(OPPONENT_INPUT_DIM, N_OPPONENT_ACTIONS, cfg.buffer_capacity)
               for t in AgentType}
    game = TagGame(env, rng=rng)
    mode = protagonist.mode
    steps = 0
    while steps < meta_cfg.eval_train_steps:
        res = run_episode(game, protagonist, opponent, models, mode, rng,
                          explore=False, opponent_explore=True)
        t = res.opponent_type
        buffers[t].extend(res.opponent_transitions)
        for _ in range(res.length):
            train_step(learners[t], buffers[t], cfg, learners[t].train_steps, rng)
        steps += res.length

    rows = []
    for i in range(meta_cfg.eval_episodes):
        res = run_episode(game, protagonist, opponent, models, mode, rng,
                          explore=False, opponent_explore=False)
        rows.append({"episode": i, "opponent_type": res.opponent_type.name,
                     "outcome": res.outcome, "length": res.length,
                     "protagonist_return": res.protagonist_return,
                     "opponent_return": res.opponent_return})
    r_p = float(np.mean([r["protagonist_return"] for r in rows]))
    r_o = float(np.mean([r["opponent_return"] for r in rows]))
    report = RobustnessReport.assemble(r_p, r_o, K, meta_cfg.lambda1, meta_cfg.lambda2)
    return EvaluationResult(report, rows, cfg.gamma, steps)


# -- population moves ---------------------------------------------------------

class Population:
    """Active ensemble plus deactivation set, over a fixed pool of member ids."""

    def __init__(self, active, deactivated=(), members: Optional[dict] = None):
        self.active = list(active)
        self.deactivated = list(deactivated)
        self.members = dict(members or {})
        if not self.active:
            raise ValueError("the active ensemble must not be empty")
        if set(self.active) & set(self.deactivated):
            raise ValueError("a member cannot be both active and deactivated")

    @property
    def K(self) -> int:
        return len(self.active)

    @property
    def pool(self) -> frozenset:
        return frozenset(self.active) | frozenset(self.deactivated)

    def snapshot(self) -> tuple[tuple, tuple]:
        return tuple(self.active), tuple(self.deactivated)

    def active_members(self) -> list:
        return [self.members[i] for i in self.active]


OPS = ("pop", "append", "exchange")


@dataclass
class Proposal:
    op: str  # one of OPS, or "saturated"
    removed: Optional[object] = None  # moved active -> deactivated
    added: Optional[object] = None  # moved deactivated -> active
    _before: Optional[tuple] = None

    @property
    def saturated(self) -> bool:
        return self.op == "saturated"

    def apply(self, pop: Population) -> None:
        if self.saturated:
            return
        self._before = pop.snapshot()
        if self.removed is not None:
            pop.active.remove(self.removed)
            pop.deactivated.append(self.removed)
        if self.added is not None:
            pop.deactivated.remove(self.added)
            pop.active.append(self.added)

    def undo(self, pop: Population) -> None:
        if self._before is None:
            return
        pop.active, pop.deactivated = list(self._before[0]), list(self._before[1])
        self._before = None


def valid_ops(pop: Population) -> list[str]:
    ops = []
    if pop.K >= 2:
        ops.append("pop")
    if pop.deactivated:
        ops.append("append")
        ops.append("exchange")
    return ops


def propose(pop: Population, rng: np.random.Generator) -> Proposal:
    ops = valid_ops(pop)
    if not ops:
        return Proposal("saturated")
    op = ops[int(rng.integers(len(ops)))]
    removed = pop.active[int(rng.integers(pop.K))] if op in ("pop", "exchange") else None
    added = (pop.deactivated[int(rng.integers(len(pop.deactivated)))]
             if op in ("append", "exchange") else None)
    return Proposal(op, removed, added)


def acceptance_probability(rho_old: float, rho_new: float, T: float) -> float:
    if not T > 0:
        raise ValueError("temperature must be positive")
    return math.exp(min(0.0, rho_old - rho_new) / T)


def accept(rho_old: float, rho_new: float, T: float, rng: np.random.Generator) -> bool:
    return bool(rng.random() < acceptance_probability(rho_old, rho_new, T))


# -- annealing ----------------------------------------------------------------

TRACE_COLUMNS = ("proposal_index", "op", "K_before", "K_after", "rho_old", "rho_new",
                 "T", "accepted")


@dataclass
class TraceRow:
    proposal_index: int
    op: str
    K_before: int
    K_after: int
    rho_old: float
    rho_new: Optional[float]
    T: float
    accepted: bool

    def as_csv(self) -> list:
        return [self.proposal_index, self.op, self.K_before, self.K_after, repr(self.rho_old),
                "" if self.rho_new is None else repr(self.rho_new), repr(self.T),
                int(self.accepted)]


class Annealer:
    """Stepwise simulated annealing so callers can interleave training between moves.

    ``rho_old`` is the score of the last accepted configuration; it is not
    re-measured on later steps.
    """

    def __init__(self, pop: Population, meta_cfg: MetaConfig, rng: np.random.Generator):
        self.pop, self.cfg, self.rng = pop, meta_cfg, rng
        self.T = meta_cfg.T0
        self.rho_old: Optional[float] = None
        self.pending: Optional[Proposal] = None
        self.trace: list[TraceRow] = []
        self._k_before = pop.K

    def start(self, rho: float) -> None:
        self.rho_old = float(rho)

    def propose(self) -> Proposal:
        if self.rho_old is None:
            raise RuntimeError("call start() with the initial score first")
        if self.pending is not None:
            raise RuntimeError("resolve the pending proposal first")
        self._k_before = self.pop.K
        proposal = propose(self.pop, self.rng)
        proposal.apply(self.pop)
        self.pending = proposal
        return proposal

    def resolve(self, rho_new: Optional[float]) -> TraceRow:
        proposal, self.pending = self.pending, None
        if proposal is None:
            raise RuntimeError("no pending proposal")
        T, rho_old = self.T, self.rho_old
        if proposal.saturated:
            row = TraceRow(len(self.trace), "saturated", self._k_before, self.pop.K,
                           rho_old, None, T, False)
        else:
            ok = accept(rho_old, rho_new, T, self.rng)
            if ok:
                self.rho_old = float(rho_new)
            else:
                proposal.undo(self.pop)
            row = TraceRow(len(self.trace), proposal.op, self._k_before, self.pop.K,
                           rho_old, float(rho_new), T, ok)
        self.trace.append(row)
        self.T = max(self.cfg.T_min, self.T * self.cfg.decay)
        return row


def anneal(pop: Population, evaluator: Callable[[Population], float], meta_cfg: MetaConfig,
           rng: np.random.Generator, proposals: Optional[int] = None,
           trace_path=None) -> tuple[Population, list[TraceRow]]:
    """Run ``proposals`` annealing steps; ``evaluator`` maps a population to its score."""
    annealer = Annealer(pop, meta_cfg, rng)
    annealer.start(evaluator(pop))
    for _ in range(meta_cfg.proposals if proposals is None else proposals):
        proposal = annealer.propose()
        annealer.resolve(None if proposal.saturated else evaluator(pop))
    if trace_path is not None:
        write_trace_csv(trace_path, annealer.trace)
    return pop, annealer.trace


def write_trace_csv(path, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in rows:
            w.writerow(row.as_csv())
