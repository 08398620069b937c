"""Ensemble self-play with evolutionary mutants and a shared replay.

Each ensemble member owns one learner per opponent type and its own
discount factor. All members, and the mutants spawned from them, write
into one replay per opponent type; every learner trains off-policy on
that shared data. The protagonist trains against members drawn
uniformly from the active ensemble.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from .belief import PROTAGONIST_INPUT_DIM, OpponentModelSet
from .checkpoint import content_hash, load_container, save_container
from .config import EnsembleConfig, ExperimentConfig, dump_toml
from .distill import InsufficientSamplesError, distill
from .env import (AGENT_TYPES, N_OPPONENT_ACTIONS, N_PROTAGONIST_ACTIONS, OPPONENT_INPUT_DIM,
                  AgentType, GameConfig, TagGame)
from .learner import ActorCritic, LearnerConfig, MemberTag, ReplayBuffer, train_step
from .meta import Annealer, Population, evaluate_ensemble, write_trace_csv
from .nn import DenseNet, load_net, mutate_net
from .recurrent import EpisodeBuffer, RecurrentActorCritic, train_step_recurrent
from .rollout import (BeliefProtagonist, LearnedOpponent, NetOpponent, RecurrentProtagonist,
                      ScriptedOpponentPolicy, make_opponent_learners, make_protagonist,
                      run_episode)
from .seeding import Streams

SCHEMA_VERSION = 1


# -- members and replay ---------------------------------------------------------

@dataclass
class EnsembleMember:
    member_id: int
    gamma: float
    learners: Optional[dict] = None  # AgentType -> ActorCritic
    reward_avg: Optional[float] = None
    episodes: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"member gamma must lie in (0, 1), got {self.gamma!r}")

    def record(self, episode_return: float, rate: float) -> None:
        """Exponential running average of this member's episode returns."""
        if self.reward_avg is None:
            self.reward_avg = float(episode_return)
        else:
            self.reward_avg += rate * (float(episode_return) - self.reward_avg)
        self.episodes += 1

    def policy(self, config: GameConfig) -> LearnedOpponent:
        return LearnedOpponent(self.learners, config)


def build_population(gammas, learner_cfg: LearnerConfig, rng: np.random.Generator) -> Population:
    members = {}
    for i, g in enumerate(gammas):
        members[i] = EnsembleMember(i, float(g), make_opponent_learners(learner_cfg.with_gamma(g), rng))
    return Population(list(members), [], members)


class SharedReplay:
    """Protagonist replay plus one opponent replay per type, shared by all members."""

    def __init__(self, mode: str, capacity: int = 200_000):
        self.mode = mode
        if mode == "belief":
            self.protagonist = ReplayBuffer(PROTAGONIST_INPUT_DIM, N_PROTAGONIST_ACTIONS, capacity)
        else:
            self.protagonist = EpisodeBuffer()
        self.opponent = {t: ReplayBuffer(OPPONENT_INPUT_DIM, N_OPPONENT_ACTIONS, capacity)
                         for t in AGENT_TYPES}

    def add_episode(self, res, protagonist: bool = True) -> None:
        if protagonist:
            if self.mode == "belief":
                self.protagonist.extend(res.protagonist_transitions)
            else:
                self.protagonist.push(res.protagonist_sequence)
        self.opponent[res.opponent_type].extend(res.opponent_transitions)

    @property
    def opponent_size(self) -> int:
        return sum(len(b) for b in self.opponent.values())

    def census(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for buf in self.opponent.values():
            for k, v in buf.census().items():
                out[k] = out.get(k, 0) + v
        return out


def protagonist_train_step(protagonist, replay: SharedReplay, rng: np.random.Generator):
    learner = protagonist.learner
    if isinstance(learner, RecurrentActorCritic):
        return train_step_recurrent(learner, replay.protagonist, learner.cfg, learner.train_steps, rng)
    return train_step(learner, replay.protagonist, learner.cfg, learner.train_steps, rng)


def _as_streams(rng) -> Streams:
    if isinstance(rng, Streams):
        return rng
    # a single generator drives every role
    class _One(Streams):
        def __getitem__(self, name):
            return rng
    return _One(0)


# -- self-play --------------------------------------------------------------------

@dataclass
class EpochReport:
    protagonist_returns: list[float] = field(default_factory=list)
    opponent_returns: dict = field(default_factory=lambda: {t: [] for t in AGENT_TYPES})
    member_returns: dict = field(default_factory=dict)
    selections: list[int] = field(default_factory=list)
    types: list[AgentType] = field(default_factory=list)
    transitions: int = 0


def self_play_epoch(protagonist, population: Population, replay: SharedReplay, game: TagGame,
                    models: Optional[OpponentModelSet], cfg: EnsembleConfig, rng) -> EpochReport:
    """Roll ``episodes_per_epoch`` episodes, then train the protagonist and every sampled member."""
    streams = _as_streams(rng)
    report = EpochReport()
    for _ in range(cfg.episodes_per_epoch):
        k = population.active[int(streams["select"].integers(population.K))]
        t = AgentType(int(streams["type"].integers(len(AGENT_TYPES))))
        member = population.members[k]
        res = run_episode(game, protagonist, member.policy(game.config), models, protagonist.mode,
                          streams["act"], opponent_tag=MemberTag("opponent", None, k, "grad"),
                          opponent_type=t)
        replay.add_episode(res)
        member.record(res.opponent_return, cfg.running_avg_rate)
        report.protagonist_returns.append(res.protagonist_return)
        report.opponent_returns[t].append(res.opponent_return)
        report.member_returns.setdefault(k, []).append(res.opponent_return)
        report.selections.append(k)
        report.types.append(t)
        report.transitions += res.length

    train_rng = streams["train"]
    for _ in range(cfg.grad_steps):
        protagonist_train_step(protagonist, replay, train_rng)
    for k in sorted(set(report.selections)):
        for t in AGENT_TYPES:
            learner = population.members[k].learners[t]
            for _ in range(cfg.grad_steps):
                train_step(learner, replay.opponent[t], learner.cfg, learner.train_steps, train_rng)
    return report


# -- evolution --------------------------------------------------------------------

MutateFn = Callable[[EnsembleMember, float, np.random.Generator], Mapping[AgentType, DenseNet]]


def gaussian_mutation(member: EnsembleMember, sigma: float, rng) -> dict:
    return {t: mutate_net(member.learners[t].actor, sigma, rng) for t in AGENT_TYPES}


@dataclass
class MutantOutcome:
    parent: int
    mean_return: float
    parent_avg: Optional[float]
    replaced: bool
    transitions: int


@dataclass
class EvolutionReport:
    mutants: list[MutantOutcome] = field(default_factory=list)

    @property
    def transitions(self) -> int:
        return sum(m.transitions for m in self.mutants)

    @property
    def replacements(self) -> int:
        return sum(m.replaced for m in self.mutants)


def _same_params(actors: Mapping, member: EnsembleMember) -> bool:
    return all(np.array_equal(a, b) for t in AGENT_TYPES
               for a, b in zip(actors[t].params, member.learners[t].actor.params))


def evolution_step(population: Population, protagonist, replay: SharedReplay, game: TagGame,
                   models: Optional[OpponentModelSet], cfg: EnsembleConfig, rng,
                   mutate_fn: MutateFn = gaussian_mutation) -> EvolutionReport:
    """Spawn mutants of active members, play them against the frozen protagonist, keep winners.

    Mutant trajectories always go into the shared replay. A parent's actor is
    overwritten only when its mutant beats the parent's running average by
    ``evo_margin``.
    """
    streams = _as_streams(rng)
    evo = streams["evolution"]
    report = EvolutionReport()
    for _ in range(cfg.evo_population):
        parent_id = population.active[int(evo.integers(population.K))]
        parent = population.members[parent_id]
        actors = dict(mutate_fn(parent, cfg.evo_sigma, evo))
        opponent = NetOpponent(actors, game.config)
        returns, n = [], 0
        for _ in range(cfg.evo_episodes):
            t = AgentType(int(evo.integers(len(AGENT_TYPES))))
            res = run_episode(game, protagonist, opponent, models, protagonist.mode, evo,
                              explore=False, opponent_tag=MemberTag("opponent", None, parent_id, "mutant"),
                              opponent_type=t)
            replay.add_episode(res, protagonist=False)
            returns.append(res.opponent_return)
            n += res.length
        mean = float(np.mean(returns))
        baseline = parent.reward_avg
        replaced = False
        # an unchanged copy would be a no-op replacement
        if baseline is not None and mean > baseline + cfg.evo_margin and not _same_params(actors, parent):
            for t in AGENT_TYPES:
                learner = parent.learners[t]
                for dst, src in zip(learner.actor.params, actors[t].params):
                    dst[...] = src
                learner.actor.touch()
                for dst, src in zip(learner.actor_target.params, actors[t].params):
                    dst[...] = src
                learner.actor_target.touch()
            parent.reward_avg = mean
            replaced = True
        report.mutants.append(MutantOutcome(parent_id, mean, baseline, replaced, n))
    return report


def rush_actor(config: GameConfig, hidden=(64, 64)) -> DenseNet:
    """Hand-wired opponent actor that heads straight for its own base (vertical on ties)."""
    net = DenseNet([OPPONENT_INPUT_DIM, *hidden, N_OPPONENT_ACTIONS], head="softmax").zero_()
    w = config.world_size
    W0, W1, W2 = net.weights
    # hidden units 0..3: relu(dx), relu(-dx), relu(dy), relu(-dy) in world units
    W0[4, 0], W0[4, 1], W0[5, 2], W0[5, 3] = w, -w, w, -w
    for i in range(4):
        W1[i, i] = 1.0
    # action order: left, right, up, down
    gain = 50.0
    W2[1, 0], W2[0, 1], W2[2, 2], W2[3, 3] = gain, gain, 1.01 * gain, 1.01 * gain
    net.touch()
    return net


# -- distillation refresh ------------------------------------------------------------

def refresh_models(replay: SharedReplay, config: GameConfig, cfg: EnsembleConfig,
                   rng: np.random.Generator, hidden=(64, 64)) -> Optional[tuple[OpponentModelSet, dict]]:
    """Distill one model per type from the shared replay; None while data is short."""
    nets = {}
    try:
        for t in AGENT_TYPES:
            result = distill(replay.opponent[t], t,
                             (OPPONENT_INPUT_DIM, *hidden, N_OPPONENT_ACTIONS),
                             steps=cfg.distill_steps, batch_size=cfg.distill_batch,
                             lr=cfg.distill_lr, holdout=cfg.distill_holdout,
                             min_samples=cfg.distill_min_samples, rng=rng)
            nets[t] = result.net
    except InsufficientSamplesError:
        return None
    return OpponentModelSet.from_nets(nets, config), nets


# -- metrics -----------------------------------------------------------------------

def metric_columns(n_members: int) -> list[str]:
    return (["epoch", "protagonist_reward", "enemy_reward", "ally_reward", "buffer_size"]
            + [f"member_{i}_reward" for i in range(n_members)]
            + ["active_k", "distilled", "wall_time"])


def _mean_or_blank(values) -> str:
    return repr(float(np.mean(values))) if len(values) else ""


def metric_row(epoch: int, rep: EpochReport, replay: SharedReplay, population: Population,
               n_members: int, distilled: bool, wall_time: Optional[float]) -> list:
    members = [_mean_or_blank(rep.member_returns.get(i, [])) for i in range(n_members)]
    return ([epoch, _mean_or_blank(rep.protagonist_returns),
             _mean_or_blank(rep.opponent_returns[AgentType.ENEMY]),
             _mean_or_blank(rep.opponent_returns[AgentType.ALLY]), replay.opponent_size]
            + members + [population.K, int(distilled),
                         "" if wall_time is None else f"{wall_time:.3f}"])


# -- persistence ---------------------------------------------------------------------

def save_protagonist(path, protagonist) -> None:
    header, blocks = protagonist.learner.to_blocks()
    header["mode"] = protagonist.mode
    save_container(path, header, blocks)


def load_protagonist(path, learner_cfg: LearnerConfig, config: GameConfig):
    header, blocks = load_container(path)
    if header.get("mode") == "recurrent":
        return RecurrentProtagonist(RecurrentActorCritic.from_blocks(header, blocks, learner_cfg), config)
    return BeliefProtagonist(ActorCritic.from_blocks(header, blocks, learner_cfg), config)


def save_models(out: Path, nets: Mapping[AgentType, DenseNet]) -> list[str]:
    names = []
    for t, net in nets.items():
        name = f"model-type-{t.name.lower()}.ckpt"
        save_container(out / name, {"arch": net.arch, "agent_type": t.name}, net.to_blocks("net"))
        names.append(name)
    return names


def load_models(run_dir, config: GameConfig) -> Optional[OpponentModelSet]:
    run_dir = Path(run_dir)
    nets = {}
    for t in AGENT_TYPES:
        path = run_dir / f"model-type-{t.name.lower()}.ckpt"
        if not path.exists():
            return None
        header, blocks = load_container(path)
        nets[t] = load_net(header["arch"], blocks, "net")
    return OpponentModelSet.from_nets(nets, config)


def member_file(member_id: int, t: AgentType) -> str:
    return f"member-{member_id}-type-{t.name.lower()}.ckpt"


def load_member(run_dir, member_id: int, learner_cfg: LearnerConfig) -> dict:
    out = {}
    for t in AGENT_TYPES:
        header, blocks = load_container(Path(run_dir) / member_file(member_id, t))
        out[t] = ActorCritic.from_blocks(header, blocks, learner_cfg)
    return out


# -- full training -----------------------------------------------------------------

@dataclass
class TrainResult:
    out_dir: Path
    protagonist: object
    population: Population
    models: Optional[OpponentModelSet]
    rows: list
    eo_trace: list = field(default_factory=list)


class _Run:
    """Mutable state of one training run; kept together so it can be flushed on interrupt."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path, deterministic: bool):
        self.cfg, self.out, self.deterministic = cfg, Path(out_dir), deterministic
        self.streams = Streams(cfg.seed)
        self.switches = cfg.switches()
        init = self.streams["init"]
        self.protagonist = make_protagonist(cfg.mode, cfg.learner, cfg.env, init)
        self.population = build_population(self.switches.gammas, cfg.learner, init)
        self.n_members = len(cfg.ensemble.gammas)
        self.replay = SharedReplay(cfg.mode, cfg.learner.buffer_capacity)
        self.game = TagGame(cfg.env, rng=self.streams["env"])
        self.models: Optional[OpponentModelSet] = None
        self.model_nets: dict = {}
        self.rows: list = []
        self.annealer: Optional[Annealer] = None
        self.eo_evaluations: list = []
        if self.switches.ensemble_optimization:
            self.annealer = Annealer(self.population, cfg.meta, self.streams["anneal"])

    # distillation schedule: first fit as soon as each type has enough data, then every cadence epochs
    def maybe_distill(self, epoch: int) -> None:
        ens = self.cfg.ensemble
        if ens.distill_cadence == 0 or self.cfg.mode != "belief":
            return
        if self.models is not None and (epoch + 1) % ens.distill_cadence != 0:
            return
        fitted = refresh_models(self.replay, self.cfg.env, ens, self.streams["distill"],
                                self.cfg.learner.hidden)
        if fitted is not None:
            self.models, self.model_nets = fitted

    def evaluate(self) -> float:
        result = evaluate_ensemble(self.protagonist, self.models, self.population.K, self.cfg.env,
                                   self.cfg.meta, self.cfg.learner, self.streams["meta"])
        self.eo_evaluations.append(result.report)
        return result.report.rho

    def maybe_optimize(self, epoch: int, last: bool) -> None:
        if self.annealer is None:
            return
        ens, a = self.cfg.ensemble, self.annealer
        due = epoch + 1 >= ens.eo_start and (epoch + 1 - ens.eo_start) % ens.eo_interval == 0
        if not due and not (last and a.pending is not None):
            return
        if a.rho_old is None:
            a.start(self.evaluate())
        elif a.pending is not None:
            a.resolve(None if a.pending.saturated else self.evaluate())
        if not last and len(a.trace) < self.cfg.meta.proposals:
            a.propose()

    def run(self) -> None:
        ens = self.cfg.ensemble
        t0 = time.perf_counter()
        for epoch in range(ens.epochs):
            rep = self_play_epoch(self.protagonist, self.population, self.replay, self.game,
                                  self.models, ens, self.streams)
            if self.switches.evolution and ens.evo_population > 0:
                evolution_step(self.population, self.protagonist, self.replay, self.game,
                               self.models, ens, self.streams)
            self.maybe_distill(epoch)
            self.maybe_optimize(epoch, last=epoch == ens.epochs - 1)
            wall = None if self.deterministic else time.perf_counter() - t0
            self.rows.append(metric_row(epoch, rep, self.replay, self.population, self.n_members,
                                        self.models is not None, wall))

    def save(self) -> None:
        out = self.out
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(dump_toml(self.cfg.to_dict()), encoding="utf-8")
        with (out / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(metric_columns(self.n_members))
            w.writerows(self.rows)
        files = ["config.toml", "metrics.csv", "protagonist.ckpt"]
        save_protagonist(out / "protagonist.ckpt", self.protagonist)
        for mid, member in self.population.members.items():
            for t in AGENT_TYPES:
                name = member_file(mid, t)
                header, blocks = member.learners[t].to_blocks()
                header.update(member_id=mid, agent_type=t.name)
                save_container(out / name, header, blocks)
                files.append(name)
        if self.model_nets:
            files += save_models(out, self.model_nets)
        if self.annealer is not None:
            write_trace_csv(out / "eo_trace.csv", self.annealer.trace)
            files.append("eo_trace.csv")
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.cfg.seed, "mode": self.cfg.mode, "variant": self.cfg.variant,
            "epochs_completed": len(self.rows),
            "members": [{"id": m.member_id, "gamma": m.gamma, "reward_avg": m.reward_avg,
                         "active": m.member_id in self.population.active}
                        for m in self.population.members.values()],
            "active": list(self.population.active),
            "deactivated": list(self.population.deactivated),
            "files": {name: content_hash(out / name) for name in files},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def train_full(cfg: ExperimentConfig, out_dir, deterministic: bool = False) -> TrainResult:
    """Alternate self-play and evolution, refresh the opponent models, optionally anneal the ensemble.

    Artifacts are written even when the run is interrupted part-way.
    """
    run = _Run(cfg, out_dir, deterministic)
    try:
        run.run()
    finally:
        run.save()
    trace = run.annealer.trace if run.annealer is not None else []
    return TrainResult(run.out, run.protagonist, run.population, run.models, run.rows, trace)


def load_population(run_dir, learner_cfg: LearnerConfig) -> Population:
    manifest = json.loads((Path(run_dir) / "manifest.json").read_text(encoding="utf-8"))
    members = {}
    for m in manifest["members"]:
        members[m["id"]] = EnsembleMember(m["id"], m["gamma"],
                                          load_member(run_dir, m["id"], learner_cfg),
                                          m["reward_avg"])
    return Population(manifest["active"], manifest["deactivated"], members)


# -- plain single-pair self-play ------------------------------------------------------

def train_single_pair(cfg: ExperimentConfig, gamma: float) -> tuple[object, dict, list]:
    """Self-play between one protagonist and one opponent learner pair, no ensemble machinery.

    Shares the random-stream layout of :func:`train_full`, so with one member,
    evolution off and distillation off the two must agree bit for bit.
    """
    streams = Streams(cfg.seed)
    init = streams["init"]
    protagonist = make_protagonist(cfg.mode, cfg.learner, cfg.env, init)
    learners = make_opponent_learners(cfg.learner.with_gamma(gamma), init)
    opponent = LearnedOpponent(learners, cfg.env)
    replay = SharedReplay(cfg.mode, cfg.learner.buffer_capacity)
    game = TagGame(cfg.env, rng=streams["env"])
    ens = cfg.ensemble
    returns = []
    for _ in range(ens.epochs):
        epoch_returns = []
        for _ in range(ens.episodes_per_epoch):
            t = AgentType(int(streams["type"].integers(len(AGENT_TYPES))))
            res = run_episode(game, protagonist, opponent, None, cfg.mode, streams["act"],
                              opponent_tag=MemberTag("opponent", None, 0, "grad"), opponent_type=t)
            replay.add_episode(res)
            epoch_returns.append(res.protagonist_return)
        for _ in range(ens.grad_steps):
            protagonist_train_step(protagonist, replay, streams["train"])
        for t in AGENT_TYPES:
            for _ in range(ens.grad_steps):
                train_step(learners[t], replay.opponent[t], learners[t].cfg,
                           learners[t].train_steps, streams["train"])
        returns.append(epoch_returns)
    return protagonist, learners, returns


# -- scripted-opponent training ---------------------------------------------------------

@dataclass
class ScriptedRun:
    protagonist: BeliefProtagonist
    env_steps: int
    curve: list  # (env_steps, eval reward)


def evaluate_protagonist(protagonist, opponent, models, config: GameConfig, episodes: int,
                         seed: int) -> float:
    game = TagGame(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    return float(np.mean([run_episode(game, protagonist, opponent, models, protagonist.mode, rng,
                                      explore=False).protagonist_return
                          for _ in range(episodes)]))


def train_vs_scripted(kind: str, env_steps: int, learner_cfg: LearnerConfig, config: GameConfig,
                      seed: int, train_ratio: float = 0.5, eval_every: int = 0,
                      eval_episodes: int = 200) -> ScriptedRun:
    """Belief-space protagonist against one scripted opponent with exact scripted type models."""
    streams = Streams(seed)
    protagonist = make_protagonist("belief", learner_cfg, config, streams["init"])
    opponent = ScriptedOpponentPolicy(kind, config)
    models = OpponentModelSet.scripted(kind, config)
    buffer = ReplayBuffer(PROTAGONIST_INPUT_DIM, N_PROTAGONIST_ACTIONS, learner_cfg.buffer_capacity)
    game = TagGame(config, rng=streams["env"])
    steps, debt, next_eval, curve = 0, 0.0, eval_every, []
    while steps < env_steps:
        res = run_episode(game, protagonist, opponent, models, "belief", streams["act"])
        buffer.extend(res.protagonist_transitions)
        steps += res.length
        debt += train_ratio * res.length
        while debt >= 1.0:
            train_step(protagonist.learner, buffer, learner_cfg, protagonist.learner.train_steps,
                       streams["train"])
            debt -= 1.0
        if eval_every and steps >= next_eval:
            curve.append((steps, evaluate_protagonist(protagonist, opponent, models, config,
                                                      eval_episodes, seed=10_000 + seed)))
            next_eval += eval_every
    return ScriptedRun(protagonist, steps, curve)
