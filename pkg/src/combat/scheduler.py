"""Weighted round-robin match scheduling.

Trainable agents meet pairwise in circle-method order (each round is a set
of disjoint pairs, each cycle covers every unordered pair once).  Each
fixture is then turned into a 2-vs-2 match according to the stage's
teammate policy, and with probability ``p_anchor`` one side is replaced by a
team of rule-based agents.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class ScheduleError(ValueError):
    pass


class TeammatePolicy(str, enum.Enum):
    SCRIPTED = "scripted"
    TRAINABLE = "trainable"


@dataclass(frozen=True)
class MatchSpec:
    team_a: tuple[str, str]
    team_b: tuple[str, str]
    seed: int
    stage: int

    @property
    def participants(self) -> tuple[str, ...]:
        return (*self.team_a, *self.team_b)

    def to_dict(self) -> dict:
        return {"team_a": list(self.team_a), "team_b": list(self.team_b), "seed": self.seed, "stage": self.stage}


def round_robin_rounds(ids: Sequence[str]) -> list[list[tuple[str, str]]]:
    """Circle method; with an odd count one agent sits out each round."""
    players: list[str | None] = list(ids)
    if len(players) % 2:
        players.append(None)
    n = len(players)
    rounds = []
    for _ in range(n - 1):
        pairs = []
        for k in range(n // 2):
            a, b = players[k], players[n - 1 - k]
            if a is not None and b is not None:
                pairs.append((a, b))
        rounds.append(pairs)
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _kinds(population) -> tuple[list[str], list[str]]:
    """Split a population snapshot into (trainable ids, scripted ids)."""
    items = population.values() if hasattr(population, "values") else population
    trainable, scripted = [], []
    for agent in items:
        (trainable if agent.trainable else scripted).append(agent.id)
    return trainable, scripted


class MatchScheduler:
    def __init__(self, p_anchor: float = 0.5):
        if not 0.0 <= p_anchor <= 1.0:
            raise ScheduleError("p_anchor must lie in [0, 1]")
        self.p_anchor = p_anchor
        self._cycle: list[tuple[str, str]] = []
        self._pos = 0
        self.cycles_started = 0

    def _next_pair(self, trainable: list[str], rng: np.random.Generator) -> tuple[str, str]:
        current = set(trainable)
        stale = any(a not in current or b not in current for a, b in self._cycle[self._pos:])
        if self._pos >= len(self._cycle) or stale:
            order = [trainable[i] for i in rng.permutation(len(trainable))]
            self._cycle = [pair for rnd in round_robin_rounds(order) for pair in rnd]
            self._pos = 0
            self.cycles_started += 1
        pair = self._cycle[self._pos]
        self._pos += 1
        return pair

    def next_match(self, population, rng: np.random.Generator, stage: int = 1,
                   teammate_policy: TeammatePolicy = TeammatePolicy.SCRIPTED,
                   weights: Mapping[str, float] | None = None) -> MatchSpec:
        trainable, scripted = _kinds(population)
        trainable.sort()
        scripted.sort()
        policy = TeammatePolicy(teammate_policy)
        if len(trainable) < 2:
            raise ScheduleError("need at least two trainable agents")
        if not scripted and (policy == TeammatePolicy.SCRIPTED or self.p_anchor > 0):
            raise ScheduleError("this stage needs a rule-based agent in the population")
        if policy == TeammatePolicy.TRAINABLE and len(trainable) < 4 and self.p_anchor < 1:
            raise ScheduleError("trainable teammates need at least four trainable agents")

        def pick(pool: list[str], k: int) -> list[str]:
            w = np.array([weights.get(i, 1.0) if weights else 1.0 for i in pool], dtype=float)
            idx = rng.choice(len(pool), size=k, replace=False, p=w / w.sum())
            return [pool[int(i)] for i in idx]

        def anchor() -> str:
            return scripted[0] if len(scripted) == 1 else pick(scripted, 1)[0]

        i, j = self._next_pair(trainable, rng)
        use_anchor = rng.random() < self.p_anchor
        if policy == TeammatePolicy.SCRIPTED:
            if use_anchor:
                keep = i if rng.random() < 0.5 else j
                team_a, team_b = (keep, anchor()), (anchor(), anchor())
            else:
                team_a, team_b = (i, anchor()), (j, anchor())
        else:
            if use_anchor:
                team_a, team_b = (i, j), (anchor(), anchor())
            else:
                x, y = pick([t for t in trainable if t not in (i, j)], 2)
                team_a, team_b = (i, x), (j, y)
        seed = int(rng.integers(2**31 - 1))
        return MatchSpec(tuple(team_a), tuple(team_b), seed, stage)

    def state_dict(self) -> dict:
        return {"cycle": [list(p) for p in self._cycle], "pos": self._pos,
                "cycles_started": self.cycles_started, "p_anchor": self.p_anchor}

    @classmethod
    def from_state(cls, d: dict) -> "MatchScheduler":
        s = cls(d["p_anchor"])
        s._cycle = [tuple(p) for p in d["cycle"]]
        s._pos = d["pos"]
        s.cycles_started = d["cycles_started"]
        return s
