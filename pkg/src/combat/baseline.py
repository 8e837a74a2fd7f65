"""Rule-based agents.

``SimplePolicy`` approximates the officially documented SimpleAgent
behaviour with a fixed priority list:

1. flee when the current cell is swept by a (chain-fixed) blast due within
   ``danger_horizon`` ticks;
2. step onto an adjacent revealed power-up;
3. lay a bomb next to Wood, or with an enemy inside the blast, provided a
   retreat to a safe cell exists;
4. otherwise wander: Stop with probability ``stop_bias``; else, with
   probability ``seek_prob``, take a safe step toward the nearest visible
   enemy, item or Wood; else a uniformly random safe move.

Timing follows :func:`combat.env.step`: a bomb showing life ``L`` goes off
at the start of the ``L``-th following tick, before anyone moves, and its
flames stay for ``flame_life`` ticks.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .env import DIRECTIONS, PASSAGE, WOOD, Action, Bomb, ObservedState, in_bounds, blast_cells
from .representation import danger_map, fix_bomb_chains

Policy = Callable[[ObservedState, int, np.random.Generator], Action]


def _flame_remaining(observed: ObservedState) -> np.ndarray:
    out = np.zeros(observed.kind.shape, dtype=np.int64)
    for pos, rem in observed.flames:
        out[pos] = max(out[pos], rem)
    return out


def _walkable(observed: ObservedState, bombs) -> np.ndarray:
    ok = observed.kind == PASSAGE
    for b in bombs:
        ok[b.position] = False
    for s, pos in enumerate(observed.positions):
        if pos is not None and s != observed.self_id:
            ok[pos] = False
    return ok


def lethal_now(danger: np.ndarray, flames: np.ndarray) -> np.ndarray:
    """Cells that kill an agent ending this tick's move there."""
    return (danger <= 1) | (flames >= 2)


def find_retreat(observed: ObservedState, bombs, danger: np.ndarray, flames: np.ndarray) -> Action | None:
    """First move of the shortest escape to a cell no blast will ever reach.

    A cell entered on move ``j`` must not explode before the agent can leave
    it (``danger > j + 1``) and must be free of flames by then.
    """
    n = observed.board_size
    start = observed.position
    walk = _walkable(observed, bombs)
    if np.isinf(danger[start]) and flames[start] == 0:
        return Action.STOP
    seen = {start}
    queue = deque([(start, 0, None)])
    while queue:
        cell, j, first = queue.popleft()
        for action, (dr, dc) in DIRECTIONS.items():
            nxt = (cell[0] + dr, cell[1] + dc)
            if nxt in seen or not in_bounds(nxt, n) or not walk[nxt]:
                continue
            t = j + 1
            if danger[nxt] <= t + 1 or flames[nxt] > t:
                continue
            seen.add(nxt)
            f = first if first is not None else action
            if np.isinf(danger[nxt]):
                return f
            queue.append((nxt, t, f))
    return None


@dataclass
class SimplePolicy:
    danger_horizon: int = 10
    stop_bias: float = 0.2
    seek_prob: float = 0.8

    def __call__(self, observed: ObservedState, agent: int, rng: np.random.Generator) -> Action:
        return self.act(observed, agent, rng)

    def act(self, observed: ObservedState, agent: int, rng: np.random.Generator) -> Action:
        if observed.self_id != agent:
            raise ValueError("observation belongs to a different agent")
        n = observed.board_size
        me = observed.position
        fixed = fix_bomb_chains(observed.bombs, observed.kind)
        danger = danger_map(observed.bombs, observed.kind, fixed)
        flames = _flame_remaining(observed)
        lethal = lethal_now(danger, flames)
        walk = _walkable(observed, observed.bombs)
        moves = []
        for action, (dr, dc) in DIRECTIONS.items():
            t = (me[0] + dr, me[1] + dc)
            if in_bounds(t, n) and walk[t] and not lethal[t]:
                moves.append((action, t))

        # (1) flee
        if danger[me] <= self.danger_horizon or flames[me] >= 2:
            escape = find_retreat(observed, observed.bombs, danger, flames)
            if escape is not None:
                return escape
            if not moves:
                return Action.STOP
            best = max(moves, key=lambda m: (danger[m[1]], -int(m[0])))
            return best[0] if danger[best[1]] > danger[me] else Action.STOP

        def safe(cell) -> bool:
            return danger[cell] > self.danger_horizon and flames[cell] == 0

        # (2) adjacent power-up
        for action, t in moves:
            if observed.item[t] and safe(t):
                return action

        # (3) bomb
        if observed.ammo > 0 and not any(b.position == me for b in observed.bombs) and self._worth_bombing(observed):
            trial = list(observed.bombs) + [Bomb(me, agent, observed.config.bomb_life_max, observed.blast_strength)]
            trial_danger = danger_map(trial, observed.kind)
            if find_retreat(observed, trial, trial_danger, flames) not in (None, Action.STOP):
                return Action.LAY_BOMB

        # (4) wander
        if rng.random() < self.stop_bias:
            return Action.STOP
        options = [a for a, t in moves if safe(t)]
        if not options:
            return Action.STOP
        if rng.random() < self.seek_prob:
            toward = self._seek(observed, walk, danger, flames)
            if toward in options:
                return toward
        return options[int(rng.integers(len(options)))]

    def _seek(self, observed: ObservedState, walk: np.ndarray, danger, flames) -> Action | None:
        """First step of a BFS toward the closest cell worth standing on."""
        n = observed.board_size
        me = observed.position
        goal = np.zeros(walk.shape, dtype=bool)
        reach_enemy = [observed.positions[e] for e in observed.enemies if observed.positions[e] is not None]
        for pos in reach_enemy:
            for cell in blast_cells(pos, observed.blast_strength, observed.kind):
                goal[cell] = True
        if not goal.any():
            goal = observed.item != 0
        if not goal.any():
            wood = observed.kind == WOOD
            near = np.zeros_like(wood)
            near[1:, :] |= wood[:-1, :]
            near[:-1, :] |= wood[1:, :]
            near[:, 1:] |= wood[:, :-1]
            near[:, :-1] |= wood[:, 1:]
            goal = near
        if goal[me]:
            return None
        seen = {me}
        queue = deque([(me, None)])
        while queue:
            cell, first = queue.popleft()
            for action, (dr, dc) in DIRECTIONS.items():
                nxt = (cell[0] + dr, cell[1] + dc)
                if nxt in seen or not in_bounds(nxt, n) or not walk[nxt] or flames[nxt] or danger[nxt] <= self.danger_horizon:
                    continue
                seen.add(nxt)
                f = first if first is not None else action
                if goal[nxt]:
                    return f
                queue.append((nxt, f))
        return None

    def _worth_bombing(self, observed: ObservedState) -> bool:
        n = observed.board_size
        me = observed.position
        for dr, dc in DIRECTIONS.values():
            t = (me[0] + dr, me[1] + dc)
            if in_bounds(t, n) and observed.kind[t] == WOOD:
                return True
        reach = set(blast_cells(me, observed.blast_strength, observed.kind))
        return any(observed.positions[e] is not None and observed.positions[e] in reach for e in observed.enemies)


def stop_policy(observed: ObservedState, agent: int, rng: np.random.Generator) -> Action:
    return Action.STOP


SCRIPTED_POLICIES: dict[str, Callable[[], Policy]] = {
    "scripted:simple": SimplePolicy,
    "scripted:stop": lambda: stop_policy,
}


def register_policy(kind: str, factory: Callable[[], Policy]) -> None:
    if not kind.startswith("scripted:"):
        raise ValueError("scripted policy kinds start with 'scripted:'")
    SCRIPTED_POLICIES[kind] = factory


def make_policy(kind: str) -> Policy:
    try:
        return SCRIPTED_POLICIES[kind]()
    except KeyError:
        raise ValueError(f"unknown scripted policy {kind!r}") from None


def scripted_act(observed: ObservedState, agent: int, rng: np.random.Generator, policy: Policy | None = None) -> Action:
    return (policy or SimplePolicy())(observed, agent, rng)
