"""Agent registry, convergence detection, discount annealing and elimination."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .learner import AdamState, Params
from .rating import RankingList

log = logging.getLogger(__name__)

TRAINABLE = "trainable"


@dataclass(frozen=True)
class PopulationConfig:
    gamma_init: float = 0.5
    alpha: float = 0.5
    window: int = 200
    epsilon: float = 0.02
    sigma_max: float = 0.5
    min_games: int = 100
    dwell: int = 10
    margin: float = 150.0
    top_k: int = 2


@dataclass
class AgentSpec:
    id: str
    kind: str = TRAINABLE
    gamma: float = 0.5
    alpha: float = 0.5
    params: Params | None = None
    adam: AdamState | None = None
    reward_config: dict[str, float] = field(default_factory=dict)
    reward_history: list[float] = field(default_factory=list)
    stage: int = 1
    version: int = 0
    updates: int = 0
    parent: str | None = None

    @property
    def trainable(self) -> bool:
        return self.kind == TRAINABLE

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"{self.id}: gamma must lie in [0, 1)")
        if not self.trainable and self.params is not None:
            raise ValueError(f"{self.id}: scripted agents carry no parameters")


@dataclass
class Population:
    agents: dict[str, AgentSpec] = field(default_factory=dict)
    next_index: int = 0
    dwell: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.agents)

    def __getitem__(self, agent_id: str) -> AgentSpec:
        return self.agents[agent_id]

    def __contains__(self, agent_id: str) -> bool:
        return agent_id in self.agents

    def values(self):
        return self.agents.values()

    def trainable_ids(self) -> list[str]:
        return [a.id for a in self.agents.values() if a.trainable]

    def new_id(self) -> str:
        agent_id = f"agent-{self.next_index}"
        self.next_index += 1
        return agent_id

    def copy(self) -> "Population":
        return Population({k: replace(v, reward_history=list(v.reward_history)) for k, v in self.agents.items()},
                          self.next_index, dict(self.dwell))


def anneal_gamma(gamma: float, alpha: float) -> float:
    """gamma + (1 - gamma) * alpha"""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    out = gamma + (1.0 - gamma) * alpha
    # Near 1 the sum can round onto 1.0 or fail to move.
    if out >= 1.0 or out <= gamma:
        out = float(np.nextafter(gamma, 1.0))
        if out >= 1.0:
            raise ValueError("gamma is saturated: no float lies strictly between it and 1")
    return float(out)


def is_converged(history: Sequence[float], window: int, epsilon: float, sigma_max: float = float("inf")) -> bool:
    if window < 1 or len(history) < 2 * window:
        return False
    h = np.asarray(history[-2 * window:], dtype=float)
    previous, last = h[:window], h[window:]
    return bool(abs(last.mean() - previous.mean()) < epsilon and last.std() < sigma_max)


def update_dwell(population: Population, ranking: RankingList) -> None:
    """Count consecutive ranking snapshots in which each trainable agent was the strict minimum."""
    ids = [i for i in population.trainable_ids() if i in ranking]
    lowest = None
    if len(ids) >= 2:
        ratings = sorted((ranking.rating(i), i) for i in ids)
        if ratings[0][0] < ratings[1][0]:
            lowest = ratings[0][1]
    for i in ids:
        population.dwell[i] = population.dwell.get(i, 0) + 1 if i == lowest else 0


def removable(agent: AgentSpec, ranking: RankingList, config: PopulationConfig,
              dwell: Mapping[str, int], trainable_ids: Sequence[str]) -> bool:
    if not agent.trainable:
        return False
    entry = ranking[agent.id]
    if entry.games_played < config.min_games:
        return False
    if dwell.get(agent.id, 0) < config.dwell:
        return False
    others = [ranking.rating(i) for i in trainable_ids if i in ranking]
    if not others:
        return False
    return float(np.median(others)) - entry.rating > config.margin


@dataclass
class StepEvents:
    annealed: list[tuple[str, float, float]] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    spawned: list[tuple[str, str]] = field(default_factory=list)
    refused: list[str] = field(default_factory=list)

    def as_records(self) -> list[dict]:
        out = [{"event": "anneal", "id": i, "gamma_before": a, "gamma_after": b} for i, a, b in self.annealed]
        out += [{"event": "remove", "id": i} for i in self.removed]
        out += [{"event": "spawn", "id": i, "parent": p} for i, p in self.spawned]
        out += [{"event": "refused_removal", "id": i} for i in self.refused]
        return out


def apply_population_step(population: Population, ranking: RankingList, updates: Mapping[str, tuple],
                          participants: Sequence[str], config: PopulationConfig,
                          rng: np.random.Generator) -> tuple[Population, RankingList, StepEvents]:
    """Install optimizer outputs, then per participant: anneal if converged, else remove if removable.

    ``updates`` maps agent id to ``(params, adam_state, version, updates)``.
    Every removal spawns a clone of a random top-k trainable agent so the
    population size stays fixed.
    """
    pop = population.copy()
    events = StepEvents()
    for agent_id, (params, adam, version, n_updates) in updates.items():
        if agent_id in pop:
            a = pop[agent_id]
            pop.agents[agent_id] = replace(a, params=params, adam=adam, version=version, updates=n_updates)

    seen = set()
    for agent_id in participants:
        if agent_id in seen or agent_id not in pop:
            continue
        seen.add(agent_id)
        agent = pop[agent_id]
        if not agent.trainable:
            continue
        if is_converged(agent.reward_history, config.window, config.epsilon, config.sigma_max):
            new_gamma = anneal_gamma(agent.gamma, agent.alpha)
            pop.agents[agent_id] = replace(agent, gamma=new_gamma, reward_history=[])
            events.annealed.append((agent_id, agent.gamma, new_gamma))
        elif removable(agent, ranking, config, pop.dwell, pop.trainable_ids()):
            if len(pop.trainable_ids()) - 1 < 2:
                log.warning("refusing to remove %s: fewer than two trainable agents would remain", agent_id)
                events.refused.append(agent_id)
                continue
            del pop.agents[agent_id]
            pop.dwell.pop(agent_id, None)
            ranking = ranking.without(agent_id)
            events.removed.append(agent_id)
            candidates = sorted(pop.trainable_ids(), key=lambda i: (-ranking.rating(i), i))[: config.top_k]
            parent = pop[candidates[int(rng.integers(len(candidates)))]]
            child_id = pop.new_id()
            pop.agents[child_id] = replace(
                parent,
                id=child_id,
                gamma=config.gamma_init,
                params={k: v.copy() for k, v in parent.params.items()} if parent.params else None,
                adam=AdamState({k: v.copy() for k, v in parent.adam.m.items()},
                               {k: v.copy() for k, v in parent.adam.v.items()}, parent.adam.step)
                if parent.adam else None,
                reward_history=[],
                version=0,
                updates=0,
                parent=parent.id,
            )
            ranking = ranking.with_agent(child_id)
            events.spawned.append((child_id, parent.id))
    return pop, ranking, events
