"""Feature tensors and the destination action space.

Channel layout (version 1), all values in [0, 1]:

====  ==============================================================
 0    Passage mask
 1    Rigid mask
 2    Wood mask
 3    Fog mask
 4    bomb blast strength, ``min(strength, N) / N``
 5    bomb life after chain fixing, ``fixed_life / bomb_life_max``
 6    flame mask
 7    revealed power-up mask (any kind)
 8    self position (1.0) plus three broadcast scalars, see below
 9    teammate position mask
10    enemy positions mask
====  ==============================================================

Channel 8 scalars: let ``q`` be the board corner nearest the agent (ties in
seat order top-left, bottom-left, bottom-right, top-right).  The remaining
three corners, walking that same cyclic order from ``q``, hold
``min(ammo, 10) / 10``, ``min(blast, N) / N`` and ``can_kick``.  None of
those corners can be the agent's own cell.

Action indices ``0 .. N*N-1`` name destination cells in row-major order;
index ``N*N`` lays a bomb.
"""

from __future__ import annotations

import heapq
from typing import Iterable

import numpy as np

from .env import (
    DIRECTIONS,
    FOG,
    PASSAGE,
    RIGID,
    WOOD,
    Action,
    Bomb,
    ObservedState,
    Position,
    blast_cells,
    corner_positions,
    in_bounds,
)

LAYOUT_VERSION = 1
NUM_CHANNELS = 11
DEFAULT_BOARD = 11
NUM_ACTIONS = DEFAULT_BOARD * DEFAULT_BOARD + 1  # 122

CH_PASSAGE, CH_RIGID, CH_WOOD, CH_FOG = 0, 1, 2, 3
CH_BOMB_STRENGTH, CH_BOMB_LIFE, CH_FLAME, CH_ITEM = 4, 5, 6, 7
CH_SELF, CH_TEAMMATE, CH_ENEMY = 8, 9, 10


class LayoutError(ValueError):
    pass


def num_actions(board_size: int) -> int:
    return board_size * board_size + 1


def bomb_action(board_size: int) -> int:
    return board_size * board_size


def decode_action(index: int, board_size: int = DEFAULT_BOARD) -> Position | None:
    """Destination cell for ``index``, or None for the bomb action."""
    if not 0 <= index < num_actions(board_size):
        raise LayoutError(f"action index {index} out of range")
    if index == bomb_action(board_size):
        return None
    return divmod(index, board_size)


def fix_bomb_chains(bombs: Iterable[Bomb], kind: np.ndarray) -> dict[Position, tuple[int, int]]:
    """Effective (life, strength) per bomb position once chain reactions are accounted for.

    A bomb goes off no later than any bomb whose blast reaches it; lives are
    relaxed to the fixed point of that min-propagation.  Strength is not
    propagated.
    """
    bombs = list(bombs)
    if not bombs:
        return {}
    pos_index = {b.position: i for i, b in enumerate(bombs)}
    reaches = []  # reaches[i] = bombs inside i's blast
    for b in bombs:
        hit = [pos_index[c] for c in blast_cells(b.position, b.blast_strength, kind) if c in pos_index]
        reaches.append([j for j in hit if j != pos_index[b.position]])
    life = [b.life for b in bombs]
    # Dijkstra-style relaxation: earliest detonation first.
    heap = [(life[i], i) for i in range(len(bombs))]
    heapq.heapify(heap)
    done = [False] * len(bombs)
    while heap:
        t, i = heapq.heappop(heap)
        if done[i] or t != life[i]:
            continue
        done[i] = True
        for j in reaches[i]:
            if t < life[j]:
                life[j] = t
                heapq.heappush(heap, (t, j))
    return {b.position: (life[i], b.blast_strength) for i, b in enumerate(bombs)}


def danger_map(bombs: Iterable[Bomb], kind: np.ndarray, fixed=None) -> np.ndarray:
    """Ticks until each cell is swept by a blast (``inf`` when no bomb reaches it)."""
    bombs = list(bombs)
    fixed = fixed if fixed is not None else fix_bomb_chains(bombs, kind)
    out = np.full(kind.shape, np.inf)
    for b in bombs:
        life, strength = fixed[b.position]
        for c in blast_cells(b.position, strength, kind):
            if life < out[c]:
                out[c] = life
    return out


def scalar_corners(position: Position, n: int) -> list[Position]:
    corners = corner_positions(n)
    dists = [abs(position[0] - r) + abs(position[1] - c) for r, c in corners]
    q = int(np.argmin(dists))
    return [corners[(q + k) % 4] for k in (1, 2, 3)]


def encode(observed: ObservedState, board_size: int = DEFAULT_BOARD) -> np.ndarray:
    """11 x N x N float64 tensor for ``observed``; ``board_size`` pins the expected N."""
    n = observed.board_size
    if n != board_size:
        raise LayoutError(f"layout expects a {board_size}x{board_size} board, got {n}x{n}")
    cfg = observed.config
    x = np.zeros((NUM_CHANNELS, n, n))
    kind = observed.kind
    x[CH_PASSAGE] = kind == PASSAGE
    x[CH_RIGID] = kind == RIGID
    x[CH_WOOD] = kind == WOOD
    x[CH_FOG] = kind == FOG

    fixed = fix_bomb_chains(observed.bombs, kind)
    for b in observed.bombs:
        life, strength = fixed[b.position]
        x[CH_BOMB_STRENGTH][b.position] = min(strength, n) / n
        x[CH_BOMB_LIFE][b.position] = min(max(life, 0), cfg.bomb_life_max) / cfg.bomb_life_max
    for pos, _ in observed.flames:
        x[CH_FLAME][pos] = 1.0
    x[CH_ITEM] = observed.item != 0

    me = observed.position
    x[CH_SELF][me] = 1.0
    scalars = (min(observed.ammo, 10) / 10, min(observed.blast_strength, n) / n, float(observed.can_kick))
    for corner, value in zip(scalar_corners(me, n), scalars):
        x[CH_SELF][corner] = value
    if observed.teammate is not None and observed.positions[observed.teammate] is not None:
        x[CH_TEAMMATE][observed.positions[observed.teammate]] = 1.0
    for e in observed.enemies:
        if observed.positions[e] is not None:
            x[CH_ENEMY][observed.positions[e]] = 1.0
    return x


def _traversable(observed: ObservedState) -> np.ndarray:
    ok = observed.kind == PASSAGE
    if not observed.can_kick:
        for b in observed.bombs:
            ok[b.position] = False
    return ok


def shortest_paths(observed: ObservedState) -> tuple[np.ndarray, np.ndarray]:
    """Dijkstra from the agent over traversable cells (unit weights).

    Returns ``(dist, first)``: distance per cell (-1 if unreachable) and the
    first primitive move of the preferred shortest path, where among all
    shortest paths the smallest first move in Up < Down < Left < Right wins.
    """
    n = observed.board_size
    ok = _traversable(observed)
    start = observed.position
    dist = np.full((n, n), -1, dtype=np.int64)
    first = np.zeros((n, n), dtype=np.int64)
    dist[start] = 0
    heap = [(0, int(Action.STOP), start)]
    settled = np.zeros((n, n), dtype=bool)
    while heap:
        d, f, cell = heapq.heappop(heap)
        if settled[cell]:
            continue
        settled[cell] = True
        for action, (dr, dc) in DIRECTIONS.items():
            nxt = (cell[0] + dr, cell[1] + dc)
            if not in_bounds(nxt, n) or not ok[nxt]:
                continue
            nf = int(action) if cell == start else f
            nd = d + 1
            if dist[nxt] == -1 or nd < dist[nxt] or (nd == dist[nxt] and nf < first[nxt]):
                dist[nxt] = nd
                first[nxt] = nf
                heapq.heappush(heap, (nd, nf, nxt))
    return dist, first


def resolve_action(observed: ObservedState, agent: int, action: int) -> Action:
    """Map a destination/bomb index to the primitive move actually played."""
    if observed.self_id != agent:
        raise LayoutError("observation belongs to a different agent")
    n = observed.board_size
    if action == bomb_action(n):
        on_bomb = any(b.position == observed.position for b in observed.bombs)
        return Action.LAY_BOMB if observed.ammo > 0 and not on_bomb else Action.STOP
    target = decode_action(action, n)
    me = observed.position
    if target == me:
        return Action.STOP
    dist, first = shortest_paths(observed)
    if dist[target] < 0:
        reach = np.argwhere(dist >= 0)
        manhattan = np.abs(reach[:, 0] - target[0]) + np.abs(reach[:, 1] - target[1])
        keys = np.lexsort((reach[:, 1], reach[:, 0], dist[reach[:, 0], reach[:, 1]], manhattan))
        target = tuple(int(v) for v in reach[keys[0]])
        if target == me:
            return Action.STOP
    return Action(int(first[target]))
