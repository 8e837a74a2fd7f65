"""Pommerman-style four-agent grid game.

The state is an immutable value: :func:`step` never touches its input and
returns a fresh :class:`BoardState`.  Terrain lives in three small ``int8``
arrays (cell kind, hidden item, revealed item) rather than a grid of cell
objects; :meth:`BoardState.cell` gives the per-cell view when one is wanted.

Resolution order inside one :func:`step`:

1. bomb lives and flame lives tick down (expired flames vanish);
2. bombs at life 0 explode, chaining through every bomb their blast touches;
   blasts destroy Wood and kill agents standing in them;
3. destroyed Wood becomes Passage and reveals its hidden item, if any;
4. kicked bombs slide one cell;
5. agents lay bombs and move (collisions bounce, kicks launch bombs); an
   agent that ends the move inside a flame dies;
6. agents standing on a revealed item consume it;
7. the step counter advances and the terminal condition is checked.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PASSAGE, RIGID, WOOD, FOG = 0, 1, 2, 3

Position = tuple[int, int]


class Item(enum.IntEnum):
    NONE = 0
    EXTRA_AMMO = 1
    EXTRA_RANGE = 2
    CAN_KICK = 3


class Action(enum.IntEnum):
    STOP = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4
    LAY_BOMB = 5


# Iteration order doubles as the deterministic tie-break order.
DIRECTIONS: dict[Action, Position] = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


class Mode(str, enum.Enum):
    FFA = "ffa"
    TEAM = "team"
    SOLO = "solo"  # seat 0 plays alone; the other seats start dead


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class GameConfig:
    board_size: int = 11
    view_radius: int = 3
    full_observability: bool = False
    max_steps: int = 800
    bomb_life_max: int = 10
    flame_life: int = 2
    initial_ammo: int = 1
    initial_blast: int = 2
    wood_passage_probability: float = 0.5
    rigid_count: int = 36
    wood_count: int = 36
    mode: Mode = Mode.TEAM
    draw_reward: float = -1.0
    kick_enabled: bool = True

    def validate(self) -> None:
        counts = {
            "view_radius": self.view_radius,
            "rigid_count": self.rigid_count,
            "wood_count": self.wood_count,
            "initial_ammo": self.initial_ammo,
        }
        for name, value in counts.items():
            if value < 0:
                raise GameError(f"{name} must be non-negative, got {value}")
        if self.board_size < 5:
            raise GameError(f"board_size must be at least 5, got {self.board_size}")
        if self.bomb_life_max < 1 or self.flame_life < 1 or self.max_steps < 1:
            raise GameError("bomb_life_max, flame_life and max_steps must be positive")
        if self.initial_blast < 2:
            raise GameError("initial_blast must be at least 2")
        if not 0.0 <= self.wood_passage_probability <= 1.0:
            raise GameError("wood_passage_probability must lie in [0, 1]")
        Mode(self.mode)

    @property
    def item_count(self) -> int:
        return int(round(self.wood_count * (1.0 - self.wood_passage_probability)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = Mode(self.mode).value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        d = dict(d)
        if "mode" in d:
            d["mode"] = Mode(d["mode"])
        return cls(**d)


@dataclass(frozen=True)
class Cell:
    kind: int
    hidden_item: Item = Item.NONE
    revealed_item: Item = Item.NONE

    def __post_init__(self):
        if self.hidden_item and self.kind != WOOD:
            raise GameError("only Wood cells can hide an item")
        if self.revealed_item and self.kind != PASSAGE:
            raise GameError("revealed items lie on Passage cells only")


@dataclass(frozen=True)
class Bomb:
    position: Position
    owner: int
    life: int
    blast_strength: int
    velocity: Position | None = None


@dataclass(frozen=True)
class AgentStatus:
    position: Position
    ammo: int
    blast_strength: int
    can_kick: bool
    alive: bool
    team: int


@dataclass(frozen=True, eq=False)
class BoardState:
    kind: np.ndarray
    hidden: np.ndarray
    item: np.ndarray
    bombs: tuple[Bomb, ...]
    flames: tuple[tuple[Position, int], ...]
    agents: tuple[AgentStatus, ...]
    step: int
    config: GameConfig = field(default_factory=GameConfig)

    def __post_init__(self):
        for arr in (self.kind, self.hidden, self.item):
            arr.flags.writeable = False
        if len(self.agents) != 4:
            raise GameError("a board holds exactly four agents")

    @property
    def mode(self) -> Mode:
        return Mode(self.config.mode)

    def cell(self, r: int, c: int) -> Cell:
        return Cell(int(self.kind[r, c]), Item(int(self.hidden[r, c])), Item(int(self.item[r, c])))

    def bomb_at(self, pos: Position) -> Bomb | None:
        for b in self.bombs:
            if b.position == pos:
                return b
        return None

    def canonical_bytes(self) -> bytes:
        head = repr(
            (
                tuple(sorted((b.position, b.owner, b.life, b.blast_strength, b.velocity) for b in self.bombs)),
                tuple(sorted(self.flames)),
                tuple(
                    (a.position, a.ammo, a.blast_strength, a.can_kick, a.alive, a.team) for a in self.agents
                ),
                self.step,
                Mode(self.config.mode).value,
            )
        ).encode()
        return self.kind.tobytes() + self.hidden.tobytes() + self.item.tobytes() + head

    def __eq__(self, other):
        if not isinstance(other, BoardState):
            return NotImplemented
        return self.canonical_bytes() == other.canonical_bytes()

    def __hash__(self):
        return hash(self.canonical_bytes())


def state_hash(state: BoardState) -> str:
    return hashlib.sha256(state.canonical_bytes()).hexdigest()


def corner_positions(n: int) -> tuple[Position, ...]:
    """Seat order: top-left, bottom-left, bottom-right, top-right.

    Seats 0 and 2 share the main diagonal, as do 1 and 3.
    """
    return ((0, 0), (n - 1, 0), (n - 1, n - 1), (0, n - 1))


def team_of(seat: int, mode: Mode) -> int:
    return seat % 2 if Mode(mode) == Mode.TEAM else seat


def _protected_cells(n: int) -> set[Position]:
    cells = set()
    for r, c in corner_positions(n):
        cells.add((r, c))
        for dr, dc in DIRECTIONS.values():
            rr, cc = r + dr, c + dc
            if 0 <= rr < n and 0 <= cc < n:
                cells.add((rr, cc))
    return cells


def _place_symmetric(kind: np.ndarray, count: int, value: int, candidates: list[Position], rng, what: str) -> None:
    """Place ``count`` cells of ``value`` in transpose-symmetric orbits."""
    pairs = [(r, c) for r, c in candidates if r < c and (c, r) in candidates]
    singles = [(r, c) for r, c in candidates if r == c]
    n_pairs, n_single = divmod(count, 2)
    if n_pairs > len(pairs) or n_single > len(singles):
        raise GameError(f"{what}={count} does not fit the board")
    for i in rng.choice(len(pairs), size=n_pairs, replace=False) if n_pairs else []:
        r, c = pairs[int(i)]
        kind[r, c] = kind[c, r] = value
    if n_single:
        r, c = singles[int(rng.integers(len(singles)))]
        kind[r, c] = value


def generate_board(seed: int, config: GameConfig | None = None) -> BoardState:
    """Draw a transpose-symmetric board with one agent per corner.

    Rigid walls are confined to the interior so the outer ring (which joins
    all four corners) is never severed; each corner and its neighbours stay
    Passage.  Hidden items are spread over exactly ``config.item_count``
    Wood cells.
    """
    config = config or GameConfig()
    config.validate()
    n = config.board_size
    rng = np.random.default_rng(seed)
    kind = np.zeros((n, n), dtype=np.int8)
    protected = _protected_cells(n)

    interior = [(r, c) for r in range(1, n - 1) for c in range(1, n - 1) if (r, c) not in protected]
    _place_symmetric(kind, config.rigid_count, RIGID, interior, rng, "rigid_count")
    free = [(r, c) for r in range(n) for c in range(n) if (r, c) not in protected and kind[r, c] == PASSAGE]
    _place_symmetric(kind, config.wood_count, WOOD, free, rng, "wood_count")

    hidden = np.zeros((n, n), dtype=np.int8)
    wood_cells = np.argwhere(kind == WOOD)
    k = min(config.item_count, len(wood_cells))
    if k:
        chosen = rng.choice(len(wood_cells), size=k, replace=False)
        kinds = rng.integers(1, 4, size=k)
        for idx, it in zip(chosen, kinds):
            r, c = wood_cells[int(idx)]
            hidden[r, c] = it

    mode = Mode(config.mode)
    agents = tuple(
        AgentStatus(
            position=pos,
            ammo=config.initial_ammo,
            blast_strength=config.initial_blast,
            can_kick=False,
            alive=(mode != Mode.SOLO or seat == 0),
            team=team_of(seat, mode),
        )
        for seat, pos in enumerate(corner_positions(n))
    )
    return BoardState(kind, hidden, np.zeros((n, n), dtype=np.int8), (), (), agents, 0, config)


def in_bounds(pos: Position, n: int) -> bool:
    return 0 <= pos[0] < n and 0 <= pos[1] < n


def blast_cells(pos: Position, strength: int, kind: np.ndarray) -> list[Position]:
    """Cross of radius ``strength``: Rigid stops a ray, the first Wood is hit and stops it.

    Any other cell value (Passage, Fog) lets the ray through.
    """
    n = kind.shape[0]
    cells = [pos]
    for dr, dc in DIRECTIONS.values():
        for d in range(1, strength + 1):
            r, c = pos[0] + dr * d, pos[1] + dc * d
            if not (0 <= r < n and 0 <= c < n):
                break
            k = kind[r, c]
            if k == RIGID:
                break
            cells.append((r, c))
            if k == WOOD:
                break
    return cells


def _kick_allowed(agent: AgentStatus, config: GameConfig) -> bool:
    return agent.can_kick and config.kick_enabled


def legal_primitive_moves(state: BoardState, agent: int) -> set[Action]:
    if not 0 <= agent < 4:
        raise GameError(f"unknown agent id {agent}")
    a = state.agents[agent]
    n = state.config.board_size
    legal = {Action.STOP}
    bomb_cells = {b.position for b in state.bombs}
    for action, (dr, dc) in DIRECTIONS.items():
        t = (a.position[0] + dr, a.position[1] + dc)
        if not in_bounds(t, n) or state.kind[t] != PASSAGE:
            continue
        if t in bomb_cells and not _kick_allowed(a, state.config):
            continue
        legal.add(action)
    if a.ammo > 0 and a.position not in bomb_cells:
        legal.add(Action.LAY_BOMB)
    return legal


def alive_teams(state: BoardState) -> set[int]:
    return {a.team for a in state.agents if a.alive}


def is_done(state: BoardState) -> bool:
    if state.step >= state.config.max_steps:
        return True
    mode = state.mode
    if mode == Mode.SOLO:
        return not state.agents[0].alive
    return len(alive_teams(state)) <= 1


def _explode(bombs: list[Bomb], kind: np.ndarray):
    """Resolve every bomb at life <= 0 plus everything it chains into.

    Rays use the pre-explosion terrain, so the outcome does not depend on
    the order in which bombs are popped.
    """
    by_pos = {b.position: i for i, b in enumerate(bombs)}
    queue = [i for i, b in enumerate(bombs) if b.life <= 0]
    exploded = set(queue)
    cells: set[Position] = set()
    while queue:
        i = queue.pop()
        for cell in blast_cells(bombs[i].position, bombs[i].blast_strength, kind):
            cells.add(cell)
            j = by_pos.get(cell)
            if j is not None and j not in exploded:
                exploded.add(j)
                queue.append(j)
    return exploded, cells


def _slide_bombs(bombs: list[Bomb], kind: np.ndarray, agent_cells: set[Position]) -> list[Bomb]:
    n = kind.shape[0]
    targets = {}
    for i, b in enumerate(bombs):
        if b.velocity is not None:
            targets[i] = (b.position[0] + b.velocity[0], b.position[1] + b.velocity[1])
    stopped = set()
    for i, t in targets.items():
        if not in_bounds(t, n) or kind[t] != PASSAGE or t in agent_cells:
            stopped.add(i)
    changed = True
    while changed:
        changed = False
        final = {}
        for i, b in enumerate(bombs):
            final.setdefault(targets[i] if i in targets and i not in stopped else b.position, []).append(i)
        for cell, ids in final.items():
            if len(ids) > 1:
                for i in ids:
                    if i in targets and i not in stopped:
                        stopped.add(i)
                        changed = True
    out = []
    for i, b in enumerate(bombs):
        if i in targets and i not in stopped:
            out.append(replace(b, position=targets[i]))
        elif i in stopped:
            out.append(replace(b, velocity=None))
        else:
            out.append(b)
    return out


def step(state: BoardState, actions: Sequence[int]) -> tuple[BoardState, np.ndarray | None, bool]:
    """Advance one tick.  Returns ``(next_state, terminal_rewards_or_None, done)``.

    Illegal actions are coerced to Stop; dead agents always Stop.
    """
    if len(actions) != 4:
        raise GameError("step needs exactly four actions")
    if is_done(state):
        raise GameError("episode already finished")
    cfg = state.config
    kind = state.kind.copy()
    hidden = state.hidden.copy()
    item = state.item.copy()
    agents = list(state.agents)

    # (1) tick
    bombs = [replace(b, life=b.life - 1) for b in state.bombs]
    flames = {pos: rem - 1 for pos, rem in state.flames if rem > 1}

    # (2) explosions
    exploded, blasted = _explode(bombs, state.kind)
    for i in exploded:
        owner = bombs[i].owner
        agents[owner] = replace(agents[owner], ammo=agents[owner].ammo + 1)
    bombs = [b for i, b in enumerate(bombs) if i not in exploded]
    for cell in blasted:
        flames[cell] = cfg.flame_life
    for s, a in enumerate(agents):
        if a.alive and a.position in blasted:
            agents[s] = replace(a, alive=False)

    # (3) destroyed wood
    for cell in blasted:
        if kind[cell] == WOOD:
            kind[cell] = PASSAGE
            item[cell] = hidden[cell]
            hidden[cell] = Item.NONE

    # (4) sliding bombs
    alive_cells = {a.position for a in agents if a.alive}
    bombs = _slide_bombs(bombs, kind, alive_cells)

    # (5) agent moves
    bombs, agents = _move_agents(bombs, agents, actions, kind, cfg)
    for s, a in enumerate(agents):
        if a.alive and a.position in flames:
            agents[s] = replace(a, alive=False)

    # (6) pick-ups
    for s, a in enumerate(agents):
        if not a.alive:
            continue
        it = item[a.position]
        if it == Item.NONE:
            continue
        item[a.position] = Item.NONE
        if it == Item.EXTRA_AMMO:
            agents[s] = replace(a, ammo=a.ammo + 1)
        elif it == Item.EXTRA_RANGE:
            agents[s] = replace(a, blast_strength=a.blast_strength + 1)
        else:
            agents[s] = replace(a, can_kick=True)

    # (7) bookkeeping
    new = BoardState(
        kind,
        hidden,
        item,
        tuple(bombs),
        tuple(sorted(flames.items())),
        tuple(agents),
        state.step + 1,
        cfg,
    )
    done = is_done(new)
    return new, (terminal_reward(new) if done else None), done


def _move_agents(bombs, agents, actions, kind, cfg):
    n = cfg.board_size
    bombs = list(bombs)
    agents = list(agents)
    bomb_idx = {b.position: i for i, b in enumerate(bombs)}
    origin = [a.position for a in agents]
    desired = list(origin)
    direction: list[Position | None] = [None] * 4

    for s, a in enumerate(agents):
        if not a.alive:
            continue
        act = int(actions[s]) if 0 <= int(actions[s]) <= 5 else Action.STOP
        if act == Action.LAY_BOMB:
            if a.ammo > 0 and a.position not in bomb_idx:
                bombs.append(Bomb(a.position, s, cfg.bomb_life_max, a.blast_strength))
                bomb_idx[a.position] = len(bombs) - 1
                agents[s] = replace(a, ammo=a.ammo - 1)
            continue
        if act == Action.STOP:
            continue
        dr, dc = DIRECTIONS[Action(act)]
        t = (a.position[0] + dr, a.position[1] + dc)
        if not in_bounds(t, n) or kind[t] != PASSAGE:
            continue
        if t in bomb_idx and not _kick_allowed(a, cfg):
            if bombs[bomb_idx[t]].velocity is not None:
                bombs[bomb_idx[t]] = replace(bombs[bomb_idx[t]], velocity=None)
            continue
        desired[s] = t
        direction[s] = (dr, dc)

    alive = [a.alive for a in agents]
    while True:
        _resolve_collisions(desired, origin, alive)
        # kicks: any agent still entering a bomb cell must push the bomb on
        failed = False
        claimed = {desired[s] for s in range(4) if alive[s]}
        for s in range(4):
            if not alive[s] or desired[s] == origin[s] or desired[s] not in bomb_idx:
                continue
            i = bomb_idx[desired[s]]
            dr, dc = direction[s]
            beyond = (desired[s][0] + dr, desired[s][1] + dc)
            ok = (
                in_bounds(beyond, n)
                and kind[beyond] == PASSAGE
                and beyond not in bomb_idx
                and beyond not in claimed
            )
            if not ok:
                desired[s] = origin[s]
                bombs[i] = replace(bombs[i], velocity=None)
                failed = True
        if not failed:
            break

    for s in range(4):
        if not alive[s] or desired[s] == origin[s]:
            continue
        if desired[s] in bomb_idx:
            i = bomb_idx.pop(desired[s])
            dr, dc = direction[s]
            beyond = (desired[s][0] + dr, desired[s][1] + dc)
            bombs[i] = replace(bombs[i], position=beyond, velocity=(dr, dc))
            bomb_idx[beyond] = i
        agents[s] = replace(agents[s], position=desired[s])
    return bombs, agents


def _resolve_collisions(desired: list, origin: list, alive: list) -> None:
    changed = True
    while changed:
        changed = False
        for s in range(4):
            if not alive[s] or desired[s] == origin[s]:
                continue
            for o in range(4):
                if o == s or not alive[o]:
                    continue
                same_target = desired[o] == desired[s]
                swap = desired[o] == origin[s] and desired[s] == origin[o]
                if same_target or swap:
                    desired[s] = origin[s]
                    if desired[o] != origin[o]:
                        desired[o] = origin[o]
                    changed = True
                    break


def terminal_reward(state: BoardState) -> np.ndarray:
    """+1 for the surviving side, -1 for the rest, ``draw_reward`` for everyone on a draw."""
    if not is_done(state):
        raise GameError("terminal_reward called on a non-terminal state")
    cfg = state.config
    mode = state.mode
    rewards = np.zeros(4)
    if mode == Mode.SOLO:
        rewards[0] = 1.0 if state.agents[0].alive else -1.0
        return rewards
    teams = alive_teams(state)
    if len(teams) == 1:
        (winner,) = teams
        for s, a in enumerate(state.agents):
            rewards[s] = 1.0 if a.team == winner else -1.0
    else:
        rewards[:] = cfg.draw_reward
    return rewards


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True, eq=False)
class ObservedState:
    """What one agent sees.  Cells outside its window carry ``FOG``."""

    kind: np.ndarray
    item: np.ndarray
    bombs: tuple[Bomb, ...]
    flames: tuple[tuple[Position, int], ...]
    positions: tuple[Position | None, ...]  # None when dead or out of view
    self_id: int
    ammo: int
    blast_strength: int
    can_kick: bool
    teammate: int | None
    enemies: tuple[int, ...]
    step: int
    config: GameConfig

    @property
    def position(self) -> Position:
        return self.positions[self.self_id]

    @property
    def board_size(self) -> int:
        return self.kind.shape[0]

    def key(self) -> bytes:
        return self.kind.tobytes() + self.item.tobytes() + repr(
            (
                tuple(sorted((b.position, b.owner, b.life, b.blast_strength, b.velocity) for b in self.bombs)),
                self.flames,
                self.positions,
                self.self_id,
                self.ammo,
                self.blast_strength,
                self.can_kick,
                self.teammate,
                self.enemies,
                self.step,
            )
        ).encode()

    def __eq__(self, other):
        if not isinstance(other, ObservedState):
            return NotImplemented
        return self.key() == other.key()

    __hash__ = None


def visible_mask(position: Position, n: int, radius: int) -> np.ndarray:
    rows = np.abs(np.arange(n) - position[0]) <= radius
    cols = np.abs(np.arange(n) - position[1]) <= radius
    return rows[:, None] & cols[None, :]


def observe(state: BoardState, agent: int, config: GameConfig | None = None) -> ObservedState:
    config = config or state.config
    if not 0 <= agent < 4:
        raise GameError(f"unknown agent id {agent}")
    me = state.agents[agent]
    if not me.alive:
        raise GameError(f"agent {agent} is dead")
    n = state.kind.shape[0]
    if config.full_observability:
        vis = np.ones((n, n), dtype=bool)
    else:
        vis = visible_mask(me.position, n, config.view_radius)
    kind = np.where(vis, state.kind, FOG).astype(np.int8)
    item = np.where(vis, state.item, 0).astype(np.int8)
    bombs = tuple(b for b in state.bombs if vis[b.position])
    flames = tuple((p, r) for p, r in state.flames if vis[p])
    positions = tuple(a.position if a.alive and vis[a.position] else None for a in state.agents)

    mode = state.mode
    if mode == Mode.TEAM:
        teammate = next(s for s in range(4) if s != agent and state.agents[s].team == me.team)
        enemies = tuple(s for s in range(4) if state.agents[s].team != me.team)
    elif mode == Mode.FFA:
        teammate = None
        enemies = tuple(s for s in range(4) if s != agent)
    else:
        teammate, enemies = None, ()
    return ObservedState(
        kind, item, bombs, flames, positions, agent, me.ammo, me.blast_strength,
        _kick_allowed(me, state.config), teammate, enemies, state.step, state.config,
    )


# ---------------------------------------------------------------------------
# replay log


REPLAY_VERSION = 1


class ReplayWriter:
    """Line-delimited JSON: one header record, then one record per step."""

    def __init__(self, path: str | Path, seed: int, config: GameConfig, initial: BoardState):
        self._fh = open(path, "w", encoding="utf-8")
        self._write(
            {"type": "header", "version": REPLAY_VERSION, "seed": int(seed),
             "config": config.to_dict(), "hash": state_hash(initial)}
        )

    def _write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def record(self, state_after: BoardState, actions: Iterable[int]) -> None:
        self._write(
            {"type": "step", "step": state_after.step, "actions": [int(a) for a in actions],
             "hash": state_hash(state_after)}
        )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ReplayMismatch(GameError):
    pass


def replay(path: str | Path) -> BoardState:
    """Re-simulate a replay log, checking every recorded state hash."""
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records or records[0].get("type") != "header":
        raise ReplayMismatch("replay log lacks a header record")
    header = records[0]
    if header["version"] != REPLAY_VERSION:
        raise ReplayMismatch(f"unsupported replay version {header['version']}")
    state = generate_board(header["seed"], GameConfig.from_dict(header["config"]))
    if state_hash(state) != header["hash"]:
        raise ReplayMismatch("initial board hash mismatch")
    for rec in records[1:]:
        state, _, _ = step(state, rec["actions"])
        if state.step != rec["step"] or state_hash(state) != rec["hash"]:
            raise ReplayMismatch(f"state hash mismatch at step {rec['step']}")
    return state
