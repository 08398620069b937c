"""Two-player asymmetric tag game.

A protagonist (the officer) shares an 8x8 square with an opponent whose
type, ally or enemy, is hidden from the protagonist. The opponent starts at
the bottom middle and tries to reach its type's base on the far side of the
river; the protagonist may tag it (only south of the river) or probe for a
noisy reading of its type.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, NamedTuple, Optional

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending key."""


class EpisodeDoneError(RuntimeError):
    """Raised when stepping a state whose episode has already ended."""


class AgentType(enum.IntEnum):
    ALLY = 0
    ENEMY = 1

    @property
    def other(self) -> "AgentType":
        return AgentType(1 - int(self))


AGENT_TYPES = (AgentType.ALLY, AgentType.ENEMY)


class ProtagonistAction(enum.IntEnum):
    MOVE_LEFT = 0
    MOVE_RIGHT = 1
    MOVE_UP = 2
    MOVE_DOWN = 3
    TAG = 4
    PROBE = 5


class OpponentAction(enum.IntEnum):
    MOVE_LEFT = 0
    MOVE_RIGHT = 1
    MOVE_UP = 2
    MOVE_DOWN = 3


N_PROTAGONIST_ACTIONS = len(ProtagonistAction)
N_OPPONENT_ACTIONS = len(OpponentAction)

# unit displacement for the shared move codes 0..3
_MOVES = ((-1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, -1.0))


class Outcome(enum.Enum):
    RUNNING = "running"
    TAGGED = "tagged"
    OPPONENT_HOME = "opponent_home"
    TIMEOUT = "timeout"


Position = tuple[float, float]


@dataclass(frozen=True)
class GameConfig:
    world_size: float = 8.0
    tag_range: float = 2.5
    probe_accuracy: float = 0.8
    r_tag_enemy: float = 10.0
    r_tag_ally: float = -20.0
    r_tagged: float = -10.0
    tag_cost: float = -0.2
    probe_cost_unit: float = 0.25
    distance_coeff: float = 0.25
    distance_exponent: float = 0.4
    river_y_min: float = 6.0
    ally_base: Position = (1.0, 7.5)
    enemy_base: Position = (7.0, 7.5)
    base_epsilon: float = 0.5
    max_steps: int = 60
    move_step: float = 1.0
    # None means the centre of the map
    protagonist_start: Optional[Position] = None

    def __post_init__(self):
        for key in ("world_size", "tag_range", "base_epsilon", "move_step",
                    "river_y_min", "probe_cost_unit", "distance_coeff",
                    "distance_exponent"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"env.{key} must be positive, got {getattr(self, key)!r}")
        if not 0.5 < self.probe_accuracy <= 1.0:
            raise ConfigError(f"env.probe_accuracy must lie in (0.5, 1], got {self.probe_accuracy!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ConfigError(f"env.max_steps must be a positive integer, got {self.max_steps!r}")
        if self.river_y_min >= self.world_size:
            raise ConfigError("env.river_y_min must lie inside the world")
        for key in ("ally_base", "enemy_base"):
            x, y = getattr(self, key)
            if not (0.0 <= x <= self.world_size and self.river_y_min < y <= self.world_size):
                raise ConfigError(f"env.{key} must lie inside the river band, got {(x, y)!r}")
            object.__setattr__(self, key, (float(x), float(y)))
        if self.protagonist_start is not None:
            x, y = self.protagonist_start
            if not (0.0 <= x <= self.world_size and 0.0 <= y <= self.world_size):
                raise ConfigError("env.protagonist_start must lie inside the world")
            object.__setattr__(self, "protagonist_start", (float(x), float(y)))

    @classmethod
    def from_dict(cls, data: dict) -> "GameConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown key env.{key}")
        data = dict(data)
        for key in ("ally_base", "enemy_base", "protagonist_start"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def base_of(self, agent_type: AgentType) -> Position:
        return self.enemy_base if agent_type == AgentType.ENEMY else self.ally_base

    @property
    def start_positions(self) -> tuple[Position, Position]:
        half = self.world_size / 2.0
        protagonist = self.protagonist_start if self.protagonist_start is not None else (half, half)
        return protagonist, (half, 0.0)


@dataclass(frozen=True)
class WorldState:
    protagonist_pos: Position
    opponent_pos: Position
    opponent_type: AgentType
    step: int = 0
    probe_count: int = 0
    done: bool = False
    outcome: Outcome = Outcome.RUNNING


@dataclass(frozen=True)
class ProtagonistObs:
    protagonist_pos: Position
    opponent_pos: Position
    last_opponent_action: Optional[OpponentAction]
    probe_reading: Optional[AgentType]
    probe_count: int
    step: int


@dataclass(frozen=True)
class OpponentObs:
    protagonist_pos: Position
    opponent_pos: Position
    own_type: AgentType
    step: int


@dataclass(frozen=True)
class StepFlags:
    """Physical outcome of one tick, independent of the opponent's type."""

    protagonist_action: ProtagonistAction
    tag_attempted: bool
    tag_success: bool
    probed: bool
    probe_count: int  # after this tick's probe, so C counts the current probe
    opponent_distance: float  # protagonist-opponent distance after the moves


class StepResult(NamedTuple):
    state: WorldState
    p_obs: ProtagonistObs
    o_obs: OpponentObs
    r_p: float
    r_o: float
    done: bool
    flags: StepFlags
    probe_reading: Optional[AgentType]


def distance(a: Position, b: Position) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _move(pos: Position, action: int, config: GameConfig) -> Position:
    dx, dy = _MOVES[action]
    w = config.world_size
    x = min(max(pos[0] + dx * config.move_step, 0.0), w)
    y = min(max(pos[1] + dy * config.move_step, 0.0), w)
    return (x, y)


def observe(state: WorldState, last_opponent_action=None, probe_reading=None):
    """Both agents' observations of ``state``."""
    p_obs = ProtagonistObs(state.protagonist_pos, state.opponent_pos, last_opponent_action,
                           probe_reading, state.probe_count, state.step)
    o_obs = OpponentObs(state.protagonist_pos, state.opponent_pos, state.opponent_type, state.step)
    return p_obs, o_obs


def reset(config: GameConfig, seed=None, rng: Optional[np.random.Generator] = None):
    """Start an episode. Pass either ``seed`` or an existing generator."""
    if rng is None:
        rng = np.random.default_rng(seed)
    opponent_type = AgentType(int(rng.integers(2)))
    protagonist_pos, opponent_pos = config.start_positions
    state = WorldState(protagonist_pos, opponent_pos, opponent_type)
    p_obs, o_obs = observe(state)
    return state, p_obs, o_obs


def distance_penalty(d: float, config: GameConfig) -> float:
    return -config.distance_coeff * d ** config.distance_exponent


def protagonist_reward_given_type(flags: StepFlags, hypothetical: AgentType,
                                  config: GameConfig) -> float:
    """Protagonist reward had the opponent been ``hypothetical``, physics held fixed."""
    reward = distance_penalty(flags.opponent_distance, config)
    if flags.tag_attempted:
        reward += config.tag_cost
        if flags.tag_success:
            reward += config.r_tag_enemy if hypothetical == AgentType.ENEMY else config.r_tag_ally
    if flags.probed:
        reward -= config.probe_cost_unit * flags.probe_count
    return reward


def opponent_reward(state: WorldState, tagged: bool, config: GameConfig) -> float:
    d = distance(state.opponent_pos, config.base_of(state.opponent_type))
    reward = distance_penalty(d, config)
    if tagged:
        reward += config.r_tagged
    return reward


def step(state: WorldState, a_p, a_o, config: GameConfig,
         rng: np.random.Generator) -> StepResult:
    """Advance one simultaneous-move tick.

    Tag success is judged on the pre-move positions of this tick; a tagged
    opponent does not move. ``rng`` is only consumed by probes.
    """
    if state.done:
        raise EpisodeDoneError("cannot step a finished episode")
    a_p = ProtagonistAction(a_p)
    a_o = OpponentAction(a_o)

    tag_attempted = a_p == ProtagonistAction.TAG
    tag_success = (tag_attempted
                   and distance(state.protagonist_pos, state.opponent_pos) < config.tag_range
                   and state.opponent_pos[1] <= config.river_y_min)

    probed = a_p == ProtagonistAction.PROBE
    probe_count = state.probe_count
    reading = None
    if probed:
        probe_count += 1
        truthful = rng.random() < config.probe_accuracy
        reading = state.opponent_type if truthful else state.opponent_type.other

    p_pos = _move(state.protagonist_pos, a_p, config) if a_p < 4 else state.protagonist_pos
    o_pos = state.opponent_pos if tag_success else _move(state.opponent_pos, a_o, config)
    t = state.step + 1

    if tag_success:
        outcome = Outcome.TAGGED
    elif distance(o_pos, config.base_of(state.opponent_type)) <= config.base_epsilon + 1e-9:
        outcome = Outcome.OPPONENT_HOME
    elif t >= config.max_steps:
        outcome = Outcome.TIMEOUT
    else:
        outcome = Outcome.RUNNING
    done = outcome is not Outcome.RUNNING

    new_state = WorldState(p_pos, o_pos, state.opponent_type, t, probe_count, done, outcome)
    flags = StepFlags(a_p, tag_attempted, tag_success, probed, probe_count, distance(p_pos, o_pos))
    r_p = protagonist_reward_given_type(flags, state.opponent_type, config)
    r_o = opponent_reward(new_state, tag_success, config)
    p_obs, o_obs = observe(new_state, a_o, reading)
    return StepResult(new_state, p_obs, o_obs, r_p, r_o, done, flags, reading)


class TagGame:
    """Stateful wrapper owning a config, its random stream and the current state."""

    def __init__(self, config: GameConfig | None = None, seed=None,
                 rng: Optional[np.random.Generator] = None):
        self.config = config or GameConfig()
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.state: Optional[WorldState] = None

    def reset(self, opponent_type: Optional[AgentType] = None):
        state, p_obs, o_obs = reset(self.config, rng=self.rng)
        if opponent_type is not None:
            state = replace(state, opponent_type=AgentType(opponent_type))
            p_obs, o_obs = observe(state)
        self.state = state
        return p_obs, o_obs

    def step(self, a_p, a_o) -> StepResult:
        result = step(self.state, a_p, a_o, self.config, self.rng)
        self.state = result.state
        return result


# -- feature encodings --------------------------------------------------------

OPPONENT_INPUT_DIM = 7


def encode_opponent_input(obs: OpponentObs, config: GameConfig) -> np.ndarray:
    """[x_p, y_p, x_o, y_o, base_dx, base_dy] / world_size, then step / max_steps."""
    w = config.world_size
    bx, by = config.base_of(obs.own_type)
    (xp, yp), (xo, yo) = obs.protagonist_pos, obs.opponent_pos
    return np.array([xp / w, yp / w, xo / w, yo / w, (bx - xo) / w, (by - yo) / w,
                     obs.step / config.max_steps])


def opponent_obs_as(p_obs: ProtagonistObs, own_type: AgentType) -> OpponentObs:
    """The opponent's observation at the same tick, under a hypothesised type."""
    return OpponentObs(p_obs.protagonist_pos, p_obs.opponent_pos, own_type, p_obs.step)


# -- scripted opponents -------------------------------------------------------

class ScriptKind(str, enum.Enum):
    RUSH = "rush"
    DECEIVE = "deceive"
    RANDOM = "random"


def _greedy_toward(pos: Position, target: Position) -> OpponentAction:
    dx = target[0] - pos[0]
    dy = target[1] - pos[1]
    # ties go vertical so the opponent keeps heading for the river
    if abs(dx) > abs(dy):
        return OpponentAction.MOVE_RIGHT if dx > 0 else OpponentAction.MOVE_LEFT
    return OpponentAction.MOVE_UP if dy >= 0 else OpponentAction.MOVE_DOWN


def scripted_opponent(kind, obs: OpponentObs, config: GameConfig | None = None,
                      rng: Optional[np.random.Generator] = None) -> OpponentAction:
    config = config or GameConfig()
    kind = ScriptKind(kind)
    if kind is ScriptKind.RANDOM:
        if rng is None:
            raise ValueError("the random script needs an rng")
        return OpponentAction(int(rng.integers(N_OPPONENT_ACTIONS)))
    own_base = config.base_of(obs.own_type)
    if kind is ScriptKind.DECEIVE and obs.own_type == AgentType.ENEMY:
        if obs.opponent_pos[1] <= config.river_y_min:
            return _greedy_toward(obs.opponent_pos, config.ally_base)
    return _greedy_toward(obs.opponent_pos, own_base)


def scripted_action_probs(kind, obs: OpponentObs, config: GameConfig | None = None) -> np.ndarray:
    """Action distribution of a script: one-hot for deterministic kinds."""
    if ScriptKind(kind) is ScriptKind.RANDOM:
        return np.full(N_OPPONENT_ACTIONS, 1.0 / N_OPPONENT_ACTIONS)
    probs = np.zeros(N_OPPONENT_ACTIONS)
    probs[scripted_opponent(kind, obs, config)] = 1.0
    return probs


# -- traces -------------------------------------------------------------------

@dataclass
class TraceRecord:
    step: int
    protagonist_pos: Position
    opponent_pos: Position
    protagonist_action: str
    opponent_action: str
    r_p: float
    r_o: float
    probe_reading: Optional[str]
    opponent_type: str
    outcome: str
    belief: Optional[list[float]] = field(default=None)

    def to_json(self) -> str:
        data = asdict(self)
        if data["belief"] is None:
            del data["belief"]
        return json.dumps(data)


def write_trace(path, records: Iterable[TraceRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")
