"""The COMBAT training loop.

One logical pass per pickup: draw a match from the scheduler, play it,
update the ranking, train the participating agents on their buffered
trajectories, then let the population anneal, remove or clone agents.

Single-worker deterministic mode plays matches in-process and is a pure
function of the :class:`RunConfig`.  With ``workers > 1`` matches run in a
process pool against parameter snapshots; results are consumed in
completion order by the single writer (ranking, optimizers, population).
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .baseline import make_policy
from .checkpoint import TrainingState, load_checkpoint, save_checkpoint, write_manifest
from .config import RunConfig, StageConfig, dump_config
from .env import BoardState, GameConfig, GameError, Mode, generate_board, observe, step
from .learner import (
    AdamState,
    Hyperparams,
    NetworkSpec,
    Params,
    Trajectory,
    a2c_gradients,
    adam_update,
    forward,
    init_params,
    sample_action,
)
from .population import AgentSpec, Population, apply_population_step, update_dwell
from .rating import MatchRecord, Outcome, RankingList, update_ratings
from .representation import encode, resolve_action
from .scheduler import MatchScheduler, MatchSpec

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.cmbt"
MATCH_LOG_NAME = "matches.jsonl"
MANIFEST_NAME = "population.ini"


class UnknownStage(ValueError):
    pass


# ---------------------------------------------------------------------------
# playing


@dataclass
class NetController:
    agent_id: str
    params: Params
    version: int
    gamma: float


@dataclass
class ScriptedController:
    agent_id: str
    kind: str


@dataclass
class EpisodeResult:
    final: BoardState
    segments: dict[int, list[Trajectory]]
    pickups: np.ndarray
    returns: np.ndarray
    terminal: np.ndarray
    length: int


def picked_up(prev: BoardState, new: BoardState, seat: int) -> bool:
    """Did ``seat`` consume an item during the step prev -> new?"""
    a = new.agents[seat]
    if not a.alive:
        return False
    pos = a.position
    # the item may have been revealed and eaten within the same step
    had = prev.item[pos] != 0 or (prev.kind[pos] != 0 and prev.hidden[pos] != 0)
    return bool(had and new.item[pos] == 0)


def run_episode(state: BoardState, controllers: Mapping[int, NetController | ScriptedController],
                stage: StageConfig, rng: np.random.Generator, horizon: int) -> EpisodeResult:
    """Play ``state`` to the end.  Seats without a controller always Stop.

    Network seats record one step per tick they are alive.  Their buffers are
    cut every ``horizon`` steps, bootstrapping from the critic at the cut;
    the closing segment is terminal.  Per-step reward is ``w_pickup`` per
    consumed item, and ``w_terminal`` times the game outcome is added to
    the seat's last recorded step.
    """
    n = state.config.board_size
    policies = {s: make_policy(c.kind) for s, c in controllers.items() if isinstance(c, ScriptedController)}
    open_buf: dict[int, tuple[list, list, list]] = {}
    segments: dict[int, list[Trajectory]] = {s: [] for s, c in controllers.items() if isinstance(c, NetController)}
    pickups = np.zeros(4, dtype=np.int64)
    returns = np.zeros(4)
    terminal = np.zeros(4)
    done = state.step >= state.config.max_steps
    while not done:
        actions = [0, 0, 0, 0]
        for s in range(4):
            c = controllers.get(s)
            if c is None or not state.agents[s].alive:
                continue
            obs = observe(state, s)
            if isinstance(c, ScriptedController):
                actions[s] = int(policies[s](obs, s, rng))
                continue
            x = encode(obs, n).astype(c.params["fc.w"].dtype)
            logits, value = forward(c.params, x)
            idx = sample_action(logits, rng)
            actions[s] = int(resolve_action(obs, s, idx))
            buf = open_buf.get(s)
            if buf is not None and len(buf[0]) >= horizon:
                segments[s].append(Trajectory(*buf, bootstrap_value=float(value), terminal=False,
                                              gamma=c.gamma, agent_id=c.agent_id, version=c.version))
                buf = None
            if buf is None:
                buf = open_buf[s] = ([], [], [])
            buf[0].append(x)
            buf[1].append(idx)
            buf[2].append(0.0)
        new, term, done = step(state, actions)
        for s in range(4):
            if s in controllers and picked_up(state, new, s):
                pickups[s] += 1
                r = stage.w_pickup
                returns[s] += r
                if s in open_buf:
                    open_buf[s][2][-1] += r
        state = new
        if term is not None:
            terminal = term
    for s in range(4):
        if s not in controllers:
            continue
        r = stage.w_terminal * float(terminal[s])
        returns[s] += r
        if s in open_buf:
            states, actions_, rewards = open_buf[s]
            rewards[-1] += r
            c = controllers[s]
            segments[s].append(Trajectory(states, actions_, rewards, bootstrap_value=0.0, terminal=True,
                                          gamma=c.gamma, agent_id=c.agent_id, version=c.version))
    return EpisodeResult(state, segments, pickups, returns, terminal, state.step)


def stage_game(game: GameConfig, stage: StageConfig) -> GameConfig:
    return replace(game, kick_enabled=stage.kick_enabled, mode=Mode.TEAM)


def _controller(agent: AgentSpec) -> NetController | ScriptedController:
    if agent.trainable:
        return NetController(agent.id, agent.params, agent.version, agent.gamma)
    return ScriptedController(agent.id, agent.kind)


@dataclass
class MatchResult:
    record: MatchRecord
    trajectories: dict[str, list[Trajectory]]
    returns: dict[str, float]
    pickups: dict[str, int]


def play_match(spec: MatchSpec, population: Population | Mapping[str, AgentSpec], stage: StageConfig,
               game: GameConfig, hyper: Hyperparams, index: int = 0) -> MatchResult:
    """Team A takes seats 0 and 2, team B seats 1 and 3."""
    if stage.stage != spec.stage:
        raise UnknownStage(f"match is for stage {spec.stage}, stage config is {stage.stage}")
    agents = population.agents if isinstance(population, Population) else population
    seats = {0: spec.team_a[0], 2: spec.team_a[1], 1: spec.team_b[0], 3: spec.team_b[1]}
    controllers = {s: _controller(agents[i]) for s, i in seats.items()}
    rng = np.random.default_rng([spec.seed, index])
    state = generate_board(spec.seed, stage_game(game, stage))
    res = run_episode(state, controllers, stage, rng, hyper.minibatch_horizon)

    if res.terminal[0] > 0:
        outcome = Outcome.A_WINS
    elif res.terminal[1] > 0:
        outcome = Outcome.B_WINS
    else:
        outcome = Outcome.DRAW
    self_play = len(set(spec.participants)) < 4
    record = MatchRecord(spec.team_a, spec.team_b, outcome, res.length, timestamp=float(index), self_play=self_play)
    trajectories: dict[str, list[Trajectory]] = {}
    returns: dict[str, float] = {}
    pickups: dict[str, int] = {}
    for s, agent_id in seats.items():
        if not agents[agent_id].trainable:
            continue
        trajectories.setdefault(agent_id, []).extend(res.segments[s])
        returns[agent_id] = returns.get(agent_id, 0.0) + float(res.returns[s])
        pickups[agent_id] = pickups.get(agent_id, 0) + int(res.pickups[s])
    return MatchResult(record, trajectories, returns, pickups)


def _play_remote(args):
    spec, agents, stage, game, hyper, index = args
    try:
        return index, play_match(spec, agents, stage, game, hyper, index), None
    except (GameError, ValueError) as e:
        return index, None, repr(e)


# ---------------------------------------------------------------------------
# learning


def train_step(params: Params, adam: AdamState, batch: list[Trajectory], hyper: Hyperparams,
               update: int) -> tuple[Params, AdamState]:
    grads = a2c_gradients(params, batch, hyper, update)
    return adam_update(params, {k: -g for k, g in grads.items()}, adam, hyper)


@dataclass
class Buffers:
    """Per-agent trajectory buffers, kept apart by parameter version."""

    data: dict[str, dict[int, list[Trajectory]]] = field(default_factory=dict)

    def add(self, trajectories: list[Trajectory]) -> None:
        for t in trajectories:
            self.data.setdefault(t.agent_id, {}).setdefault(t.version, []).append(t)

    def prune(self, agent_id: str, current: int, max_staleness: int) -> int:
        versions = self.data.get(agent_id, {})
        dropped = 0
        for v in [v for v in versions if v < current - max_staleness or v > current]:
            dropped += sum(len(t) for t in versions.pop(v))
        return dropped

    def ready(self, agent_id: str, horizon: int) -> list[Trajectory] | None:
        """Oldest single-version batch holding at least ``horizon`` steps."""
        for v in sorted(self.data.get(agent_id, {})):
            batch = self.data[agent_id][v]
            if sum(len(t) for t in batch) >= horizon:
                return self.data[agent_id].pop(v)
        return None

    def drain(self, agent_id: str) -> list[list[Trajectory]]:
        versions = self.data.pop(agent_id, {})
        return [versions[v] for v in sorted(versions) if versions[v]]

    def forget(self, agent_id: str) -> None:
        self.data.pop(agent_id, None)


def _learn(agent: AgentSpec, batches: list[list[Trajectory]], hyper: Hyperparams) -> tuple:
    params, adam, version, updates = agent.params, agent.adam, agent.version, agent.updates
    for batch in batches:
        params, adam = train_step(params, adam, batch, hyper, updates)
        version += 1
        updates += 1
    return params, adam, version, updates


# ---------------------------------------------------------------------------
# run state


def initial_state(cfg: RunConfig) -> TrainingState:
    seq = np.random.SeedSequence(cfg.seed)
    s_sched, s_pop, s_init = seq.spawn(3)
    pop = Population()
    ranking = RankingList()
    stage = cfg.stages[cfg.stage]
    init_seeds = s_init.generate_state(cfg.trainable)
    for k in range(cfg.trainable):
        agent_id = pop.new_id()
        params = init_params(cfg.network, int(init_seeds[k]))
        pop.agents[agent_id] = AgentSpec(
            id=agent_id, gamma=cfg.population.gamma_init, alpha=cfg.population.alpha, params=params,
            adam=AdamState.zeros_like(params), reward_config=_reward_config(stage), stage=cfg.stage,
        )
        ranking = ranking.with_agent(agent_id)
    for k in range(cfg.scripted):
        agent_id = f"{cfg.scripted_kind}#{k}"
        pop.agents[agent_id] = AgentSpec(id=agent_id, kind=cfg.scripted_kind, gamma=0.0, alpha=cfg.population.alpha,
                                         stage=cfg.stage)
        ranking = ranking.with_agent(agent_id)
    return TrainingState(
        population=pop,
        ranking=ranking,
        scheduler=MatchScheduler(cfg.p_anchor),
        rngs={"schedule": np.random.default_rng(s_sched), "population": np.random.default_rng(s_pop)},
        network=cfg.network,
        stage=cfg.stage,
    )


def _reward_config(stage: StageConfig) -> dict[str, float]:
    return {"terminal": stage.w_terminal, "pickup": stage.w_pickup}


@dataclass
class RunPaths:
    root: Path

    @property
    def checkpoint(self) -> Path:
        return self.root / CHECKPOINT_NAME

    @property
    def match_log(self) -> Path:
        return self.root / MATCH_LOG_NAME

    @property
    def manifest(self) -> Path:
        return self.root / MANIFEST_NAME


def _truncate_log(path: Path, keep: int) -> None:
    if not path.exists():
        return
    with open(path, "rb") as fh:
        lines = fh.readlines()
    if len(lines) != keep:
        with open(path, "wb") as fh:
            fh.writelines(lines[:keep])


class Trainer:
    def __init__(self, cfg: RunConfig, resume: bool = False, stage_override: int | None = None):
        self.cfg = cfg
        self.paths = RunPaths(cfg.run_dir)
        self.paths.root.mkdir(parents=True, exist_ok=True)
        if resume and self.paths.checkpoint.exists():
            self.state = load_checkpoint(self.paths.checkpoint)
            if self.state.network != cfg.network:
                raise ValueError("checkpoint network does not match the run config")
            _truncate_log(self.paths.match_log, self.state.pickups)
            log.info("resumed at pickup %d", self.state.pickups)
        else:
            self.state = initial_state(cfg)
            if self.paths.match_log.exists():
                self.paths.match_log.unlink()
            (self.paths.root / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
        if stage_override is not None:
            self._set_stage(stage_override)
        self.buffers = Buffers()
        self.dropped_steps = 0
        self.failed_matches = 0

    # -- helpers

    @property
    def stage(self) -> StageConfig:
        return self.cfg.stages[self.state.stage]

    def _set_stage(self, k: int) -> None:
        if k not in self.cfg.stages:
            raise UnknownStage(f"unknown stage id {k}")
        st = self.state
        st.stage = k
        st.stage_converged = set()
        rc = _reward_config(self.cfg.stages[k])
        for a in list(st.population.values()):
            st.population.agents[a.id] = replace(a, stage=k, reward_config=dict(rc) if a.trainable else a.reward_config)

    def next_spec(self) -> MatchSpec:
        st = self.state
        return st.scheduler.next_match(st.population, st.rngs["schedule"], st.stage, self.stage.teammate)

    def checkpoint(self) -> None:
        """Train on whatever is buffered, then persist.  Flushing first keeps a
        resumed run identical to an uninterrupted one."""
        self._flush()
        save_checkpoint(self.state, self.paths.checkpoint)
        write_manifest(self.state, self.paths.manifest, self.paths.checkpoint)

    def _flush(self) -> None:
        pop = self.state.population
        for agent_id in list(self.buffers.data):
            if agent_id not in pop:
                self.buffers.forget(agent_id)
                continue
            agent = pop[agent_id]
            self.dropped_steps += self.buffers.prune(agent_id, agent.version, self.cfg.max_staleness)
            batches = self.buffers.drain(agent_id)
            if batches:
                params, adam, version, updates = _learn(agent, batches, self.cfg.hyper)
                pop.agents[agent_id] = replace(agent, params=params, adam=adam, version=version, updates=updates)

    # -- one pickup

    def consume(self, spec: MatchSpec, result: MatchResult | None) -> dict:
        """Apply one finished match: ranking, learning, population step, stage."""
        st = self.state
        index = st.pickups
        st.pickups += 1
        if result is None:
            self.failed_matches += 1
            return {"index": index, "spec": spec.to_dict(), "error": True}

        st.ranking = update_ratings(st.ranking, result.record, self.cfg.k_factor)
        update_dwell(st.population, st.ranking)

        pop = st.population
        hyper = self.cfg.hyper
        updates = {}
        for agent_id, trajs in result.trajectories.items():
            if agent_id not in pop:
                continue
            agent = pop[agent_id]
            history = agent.reward_history + [result.returns[agent_id]]
            pop.agents[agent_id] = agent = replace(agent, reward_history=history[-2 * self.cfg.population.window:])
            self.buffers.add(trajs)
            self.dropped_steps += self.buffers.prune(agent_id, agent.version, self.cfg.max_staleness)
            batches = []
            while (batch := self.buffers.ready(agent_id, hyper.minibatch_horizon)) is not None:
                batches.append(batch)
            if batches:
                updates[agent_id] = _learn(agent, batches, hyper)

        participants = [i for i in dict.fromkeys(spec.participants) if i in pop and pop[i].trainable]
        new_pop, ranking, events = apply_population_step(
            pop, st.ranking, updates, participants, self.cfg.population, st.rngs["population"]
        )
        for agent_id in events.removed:
            self.buffers.forget(agent_id)
            st.stage_converged.discard(agent_id)
        for child_id, _ in events.spawned:
            a = new_pop[child_id]
            new_pop.agents[child_id] = replace(a, stage=st.stage, reward_config=_reward_config(self.stage))
        st.stage_converged.update(i for i, _, _ in events.annealed)
        st.population, st.ranking = new_pop, ranking

        advanced = None
        trainable = set(new_pop.trainable_ids())
        if (self.cfg.auto_advance and st.stage < max(self.cfg.stages)
                and trainable and trainable <= st.stage_converged):
            self._set_stage(st.stage + 1)
            advanced = st.stage
        rec = {
            "index": index,
            "spec": spec.to_dict(),
            "outcome": result.record.outcome.value,
            "episode_length": result.record.episode_length,
            "returns": result.returns,
            "pickups": result.pickups,
            "ratings_after": {i: st.ranking.rating(i) for i in dict.fromkeys(spec.participants) if i in st.ranking},
            "events": events.as_records(),
        }
        if advanced is not None:
            rec["events"].append({"event": "stage", "stage": advanced})
        return rec

    def _log(self, fh, rec: dict) -> None:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if self.cfg.checkpoint_interval and self.state.pickups % self.cfg.checkpoint_interval == 0:
            fh.flush()
            self.checkpoint()

    # -- main loops

    def run(self, stop_after: int | None = None) -> TrainingState:
        """Play until ``cfg.pickups`` matches are done (or ``stop_after`` more)."""
        target = self.cfg.pickups
        if stop_after is not None:
            target = min(target, self.state.pickups + stop_after)
        try:
            with open(self.paths.match_log, "a", encoding="utf-8") as fh:
                if self.cfg.workers == 1 or self.cfg.deterministic:
                    self._run_serial(fh, target)
                else:
                    self._run_pool(fh, target)
                fh.flush()
                self.checkpoint()
        except OSError:
            log.exception("I/O failure; writing a resumable checkpoint")
            try:
                self.checkpoint()
            except OSError:
                log.exception("could not write the checkpoint either")
            raise
        return self.state

    def _play(self, spec: MatchSpec, index: int) -> MatchResult | None:
        try:
            return play_match(spec, self.state.population, self.stage, self.cfg.game, self.cfg.hyper, index)
        except (GameError, ValueError) as e:
            log.error("match %d aborted: %r", index, e)
            return None

    def _run_serial(self, fh, target: int) -> None:
        while self.state.pickups < target:
            spec = self.next_spec()
            result = self._play(spec, self.state.pickups)
            self._log(fh, self.consume(spec, result))

    def _run_pool(self, fh, target: int) -> None:
        """Keep ``workers`` matches in flight; finish in completion order."""
        issued = self.state.pickups
        pending = {}
        with ProcessPoolExecutor(self.cfg.workers) as pool:
            while self.state.pickups < target:
                while issued < target and len(pending) < self.cfg.workers:
                    spec = self.next_spec()
                    snapshot = {i: self.state.population[i] for i in dict.fromkeys(spec.participants)}
                    fut = pool.submit(_play_remote, (spec, snapshot, self.stage, self.cfg.game, self.cfg.hyper, issued))
                    pending[fut] = spec
                    issued += 1
                finished, _ = wait(pending, return_when=FIRST_COMPLETED)
                for fut in finished:
                    spec = pending.pop(fut)
                    _, result, err = fut.result()
                    if err:
                        log.error("match aborted: %s", err)
                    if result is not None and spec.stage != self.state.stage:
                        result = None
                    self._log(fh, self.consume(spec, result))


def run_training(cfg: RunConfig, resume: bool = False, stage: int | None = None) -> tuple[Population, RankingList]:
    state = Trainer(cfg, resume=resume, stage_override=stage).run()
    return state.population, state.ranking


# ---------------------------------------------------------------------------
# solo practice and evaluation


@dataclass
class SoloReport:
    pickups: list[int]
    returns: list[float]
    updates: int
    params: Params


def train_solo(game: GameConfig, network: NetworkSpec, hyper: Hyperparams, stage: StageConfig,
               updates: int, seed: int = 0, gamma: float | None = None) -> SoloReport:
    """One trainable agent alone on the board (Solo mode), trained for ``updates`` optimizer steps."""
    game = replace(game, mode=Mode.SOLO, kick_enabled=stage.kick_enabled)
    gamma = hyper.gamma if gamma is None else gamma
    seq = np.random.SeedSequence(seed)
    rng = np.random.default_rng(seq)
    params = init_params(network, int(seq.generate_state(1)[0]))
    adam = AdamState.zeros_like(params)
    pending: list[Trajectory] = []
    pickups, returns = [], []
    done_updates, episode = 0, 0
    while done_updates < updates:
        state = generate_board(int(rng.integers(2**31 - 1)), game)
        ctrl = {0: NetController("solo", params, done_updates, gamma)}
        res = run_episode(state, ctrl, stage, rng, hyper.minibatch_horizon)
        pickups.append(int(res.pickups[0]))
        returns.append(float(res.returns[0]))
        episode += 1
        pending.extend(res.segments[0])
        while sum(len(t) for t in pending) >= hyper.minibatch_horizon and done_updates < updates:
            n = k = 0
            while n < hyper.minibatch_horizon:
                n += len(pending[k])
                k += 1
            params, adam = train_step(params, adam, pending[:k], hyper, done_updates)
            done_updates += 1
            pending = pending[k:]
    return SoloReport(pickups, returns, done_updates, params)


@dataclass
class EvalReport:
    agent_id: str
    wins: int = 0
    losses: int = 0
    draws: int = 0

    @property
    def matches(self) -> int:
        return self.wins + self.losses + self.draws


def evaluate(state: TrainingState, game: GameConfig, matches: int, agent_id: str | None = None,
             scripted_kind: str = "scripted:simple", seed: int = 0, stage: StageConfig | None = None) -> EvalReport:
    """(agent, scripted) versus (scripted, scripted); greedy play is not used."""
    pop = state.population
    if agent_id is None:
        ranked = [i for i, _ in state.ranking.sorted_view() if i in pop and pop[i].trainable]
        if not ranked:
            raise ValueError("checkpoint holds no trainable agent")
        agent_id = ranked[0]
    stage = stage or StageConfig(state.stage)
    anchor = AgentSpec(id="eval-anchor", kind=scripted_kind, gamma=0.0)
    agents = {agent_id: pop[agent_id], anchor.id: anchor}
    report = EvalReport(agent_id)
    hyper = Hyperparams(minibatch_horizon=10**9)
    for k in range(matches):
        spec = MatchSpec((agent_id, anchor.id), (anchor.id, anchor.id), seed + k, stage.stage)
        res = play_match(spec, agents, stage, game, hyper, k)
        if res.record.outcome == Outcome.A_WINS:
            report.wins += 1
        elif res.record.outcome == Outcome.B_WINS:
            report.losses += 1
        else:
            report.draws += 1
    return report


def read_match_log(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
