"""Team ELO ranking list.

A team is rated by the mean of its members; the team delta
``k * (score - expected)`` is credited in full to every member slot, so each
match conserves the participants' total rating.  Deltas are rounded to a
multiple of ``2**-20`` so that ratings starting on that grid stay on it and the
additions are exact in floating point: the conservation holds bit for bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable

INITIAL_RATING = 1200.0
DEFAULT_K = 32.0
RESOLUTION = 2.0 ** -20


class UnknownAgent(KeyError):
    pass


class Outcome(str, enum.Enum):
    A_WINS = "a"
    B_WINS = "b"
    DRAW = "draw"


@dataclass(frozen=True)
class RatingEntry:
    rating: float = INITIAL_RATING
    wins: int = 0
    losses: int = 0
    draws: int = 0

    @property
    def games_played(self) -> int:
        return self.wins + self.losses + self.draws


@dataclass(frozen=True)
class MatchRecord:
    team_a: tuple[str, str]
    team_b: tuple[str, str]
    outcome: Outcome
    episode_length: int
    timestamp: float = 0.0
    self_play: bool = False

    def __post_init__(self):
        if len(self.team_a) != 2 or len(self.team_b) != 2:
            raise ValueError("teams have exactly two members")

    @property
    def participants(self) -> tuple[str, ...]:
        return (*self.team_a, *self.team_b)

    def to_dict(self) -> dict:
        return {
            "team_a": list(self.team_a),
            "team_b": list(self.team_b),
            "outcome": self.outcome.value,
            "episode_length": self.episode_length,
            "timestamp": self.timestamp,
            "self_play": self.self_play,
        }


@dataclass(frozen=True)
class RankingList:
    entries: dict[str, RatingEntry] = field(default_factory=dict)

    def __contains__(self, agent_id: str) -> bool:
        return agent_id in self.entries

    def __getitem__(self, agent_id: str) -> RatingEntry:
        try:
            return self.entries[agent_id]
        except KeyError:
            raise UnknownAgent(agent_id) from None

    def rating(self, agent_id: str) -> float:
        return self[agent_id].rating

    def with_agent(self, agent_id: str, rating: float = INITIAL_RATING) -> "RankingList":
        entries = dict(self.entries)
        entries[agent_id] = RatingEntry(rating)
        return RankingList(entries)

    def without(self, agent_id: str) -> "RankingList":
        entries = dict(self.entries)
        entries.pop(agent_id, None)
        return RankingList(entries)

    def sorted_view(self) -> list[tuple[str, RatingEntry]]:
        return sorted(self.entries.items(), key=lambda kv: (-kv[1].rating, kv[1].games_played, kv[0]))

    def total_rating(self, ids: Iterable[str]) -> float:
        return sum(self.rating(i) for i in ids)


def expected_score(rating_a: float, rating_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((rating_b - rating_a) / 400.0))


def _score(outcome: Outcome) -> float:
    return {Outcome.A_WINS: 1.0, Outcome.B_WINS: 0.0, Outcome.DRAW: 0.5}[Outcome(outcome)]


def team_delta(ranking: RankingList, match: MatchRecord, k_factor: float = DEFAULT_K) -> float:
    ra = sum(ranking.rating(i) for i in match.team_a) / 2.0
    rb = sum(ranking.rating(i) for i in match.team_b) / 2.0
    delta = k_factor * (_score(match.outcome) - expected_score(ra, rb))
    return round(delta / RESOLUTION) * RESOLUTION


def update_ratings(ranking: RankingList, match: MatchRecord, k_factor: float = DEFAULT_K) -> RankingList:
    for agent_id in match.participants:
        ranking[agent_id]  # raises UnknownAgent
    delta = team_delta(ranking, match, k_factor)
    entries = dict(ranking.entries)
    for agent_id in match.team_a:
        entries[agent_id] = replace(entries[agent_id], rating=entries[agent_id].rating + delta)
    for agent_id in match.team_b:
        entries[agent_id] = replace(entries[agent_id], rating=entries[agent_id].rating - delta)

    outcome = Outcome(match.outcome)
    for side, ids in (("a", set(match.team_a)), ("b", set(match.team_b))):
        for agent_id in ids:
            e = entries[agent_id]
            if outcome == Outcome.DRAW:
                e = replace(e, draws=e.draws + 1)
            elif outcome.value == side:
                e = replace(e, wins=e.wins + 1)
            else:
                e = replace(e, losses=e.losses + 1)
            entries[agent_id] = e
    return RankingList(entries)


def format_table(ranking: RankingList) -> str:
    lines = [f"{'id':<16} {'rating':>9} {'W/L/D':>13} {'games':>6}"]
    for agent_id, e in ranking.sorted_view():
        wld = f"{e.wins}/{e.losses}/{e.draws}"
        lines.append(f"{agent_id:<16} {e.rating:>9.2f} {wld:>13} {e.games_played:>6}")
    return "\n".join(lines)
