from dataclasses import replace

import numpy as np
import pytest

from combat.checkpoint import load_checkpoint
from combat.config import default_stages
from combat.env import AgentStatus, Bomb, GameConfig, Item, Mode, generate_board, observe, step
from combat.learner import Hyperparams, NetworkSpec, Trajectory, init_params
from combat.orchestrator import (
    Buffers, NetController, Trainer, UnknownStage, evaluate, initial_state, picked_up,
    play_match, read_match_log, run_episode, run_training, train_solo,
)
from combat.representation import resolve_action
from combat.scheduler import MatchSpec, TeammatePolicy
from conftest import make_state, tiny_config

N = 7


def beeline_params(target):
    """A network whose policy always picks ``target`` (row, col)."""
    p = init_params(NetworkSpec(board_size=N, conv_channels=(), hidden=4), 0, dtype=np.float64)
    p["pi.w"][:] = 0.0
    p["pi.b"][:] = -1e3
    p["pi.b"][target[0] * N + target[1]] = 1e3
    return p


def doomed_pickup_board():
    """Seat 0 walks right along row 0 over two power-ups into the blast of a
    bomb laid by seat 1; its teammate is already dead, so team A loses."""
    item = np.zeros((N, N), dtype=np.int8)
    item[0, 1] = Item.EXTRA_AMMO
    item[0, 2] = Item.EXTRA_RANGE
    agents = (AgentStatus((0, 0), 1, 2, False, True, 0), AgentStatus((N - 1, 0), 1, 2, False, True, 1),
              AgentStatus((N - 1, N - 1), 1, 2, False, False, 0), AgentStatus((0, N - 1), 0, 2, False, True, 1))
    return make_state(N, agents=agents, item=item, bombs=[Bomb((2, 3), 1, 6, 3)], view_radius=N,
                      kick_enabled=False)


def replay_pickups(initial, trajectory_actions):
    """Independent accounting: re-simulate the episode from the logged action
    indices and count pickups through seat 0's stat changes."""
    state, count, k = initial, 0, 0
    rewards = None
    while True:
        actions = [0, 0, 0, 0]
        if state.agents[0].alive:
            actions[0] = int(resolve_action(observe(state, 0), 0, trajectory_actions[k]))
            k += 1
        new, rewards, done = step(state, actions)
        before, after = state.agents[0], new.agents[0]
        if after.alive:
            count += (after.ammo > before.ammo) + (after.blast_strength > before.blast_strength) + (
                after.can_kick and not before.can_kick)
        state = new
        if done:
            return count, float(rewards[0]), k


@pytest.mark.parametrize("stage_id,expected", [(1, -1.0), (2, -0.8)])
def test_reward_accounting(stage_id, expected):
    stage = default_stages(w_pickup=0.1)[stage_id]
    s0 = doomed_pickup_board()
    ctrl = {0: NetController("a", beeline_params((0, 3)), 0, 0.5)}
    res = run_episode(s0, ctrl, stage, np.random.default_rng(0), horizon=1000)
    actions = [a for seg in res.segments[0] for a in seg.actions]
    count, terminal, used = replay_pickups(s0, actions)
    assert count == 2 and terminal == -1.0 and used == len(actions)
    assert res.pickups[0] == 2 and res.terminal[0] == -1
    total = sum(r for seg in res.segments[0] for r in seg.rewards)
    assert total == pytest.approx(count * stage.w_pickup + terminal) == pytest.approx(expected)
    assert res.returns[0] == pytest.approx(expected)


def test_segments_are_cut_at_the_horizon():
    game = GameConfig(board_size=N, rigid_count=6, wood_count=8, max_steps=23, mode=Mode.SOLO)
    ctrl = {0: NetController("a", init_params(NetworkSpec(board_size=N, conv_channels=(2,), hidden=8), 1), 3, 0.5)}
    res = run_episode(generate_board(5, game), ctrl, default_stages()[2], np.random.default_rng(1), horizon=5)
    segs = res.segments[0]
    assert sum(len(t) for t in segs) == res.length
    assert [t.terminal for t in segs] == [False] * (len(segs) - 1) + [True]
    assert all(len(t) == 5 for t in segs[:-1]) and 1 <= len(segs[-1]) <= 5
    assert all(t.version == 3 and t.gamma == 0.5 and t.agent_id == "a" for t in segs)
    assert segs[-1].bootstrap_value == 0.0


def test_pickup_of_an_item_revealed_the_same_tick():
    s = make_state(N)
    new = replace(s, agents=(replace(s.agents[0], position=(0, 1)),) + s.agents[1:])
    kind = s.kind.copy()
    kind[0, 1] = 2
    hidden = s.hidden.copy()
    hidden[0, 1] = Item.CAN_KICK
    assert picked_up(replace(s, kind=kind, hidden=hidden), new, 0)
    assert not picked_up(s, new, 0)


def test_play_match_rejects_wrong_stage(tmp_path):
    cfg = tiny_config(tmp_path)
    st = initial_state(cfg)
    spec = MatchSpec(("agent-0", "scripted:simple#0"), ("agent-1", "scripted:simple#0"), 1, 2)
    with pytest.raises(UnknownStage):
        play_match(spec, st.population, cfg.stages[1], cfg.game, cfg.hyper)


def test_play_match_outcome_and_attribution(tmp_path):
    cfg = tiny_config(tmp_path)
    st = initial_state(cfg)
    sid = "scripted:simple#0"
    spec = MatchSpec(("agent-0", sid), ("agent-1", sid), 11, 1)
    res = play_match(spec, st.population, cfg.stages[1], cfg.game, cfg.hyper, index=4)
    assert set(res.trajectories) == {"agent-0", "agent-1"}
    assert res.record.timestamp == 4.0 and res.record.self_play
    for agent_id, trajs in res.trajectories.items():
        assert all(t.agent_id == agent_id and t.version == 0 for t in trajs)
        assert sum(sum(t.rewards) for t in trajs) == pytest.approx(res.returns[agent_id])
    terminal = {a: res.returns[a] for a in res.returns}
    if res.record.outcome.value == "a":
        assert terminal["agent-0"] == 1 and terminal["agent-1"] == -1
    again = play_match(spec, st.population, cfg.stages[1], cfg.game, cfg.hyper, index=4)
    assert again.record == res.record


def test_stage_three_has_no_scripted_teammates(tmp_path):
    cfg = tiny_config(tmp_path, trainable=6, stage=3)
    trainer = Trainer(cfg)
    for _ in range(300):
        spec = trainer.next_spec()
        pop = trainer.state.population
        for team in (spec.team_a, spec.team_b):
            assert len({pop[i].trainable for i in team}) == 1
    assert cfg.stages[3].teammate == TeammatePolicy.TRAINABLE


def test_single_pickup(tmp_path):
    cfg = tiny_config(tmp_path, pickups=1)
    state = Trainer(cfg).run()
    log = read_match_log(cfg.run_dir / "matches.jsonl")
    assert len(log) == 1 and state.pickups == 1
    spec = log[0]["spec"]
    games = {i: e.games_played for i, e in state.ranking.entries.items()}
    # one game per team an agent sits on: a lone scripted agent may fill both sides
    for i, n in games.items():
        assert n == (i in spec["team_a"]) + (i in spec["team_b"])
    assert (cfg.run_dir / "checkpoint.cmbt").exists() and (cfg.run_dir / "population.ini").exists()
    assert (cfg.run_dir / "config.ini").exists()


def test_run_is_a_pure_function_of_the_config(tmp_path):
    a = tiny_config(tmp_path / "a", pickups=30)
    b = tiny_config(tmp_path / "b", pickups=30)
    run_training(a)
    run_training(b)
    assert (a.run_dir / "checkpoint.cmbt").read_bytes() == (b.run_dir / "checkpoint.cmbt").read_bytes()
    assert (a.run_dir / "matches.jsonl").read_text() == (b.run_dir / "matches.jsonl").read_text()
    c = tiny_config(tmp_path / "c", pickups=30, seed=4)
    run_training(c)
    assert (a.run_dir / "checkpoint.cmbt").read_bytes() != (c.run_dir / "checkpoint.cmbt").read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path):
    full = tiny_config(tmp_path / "full", pickups=30)
    run_training(full)
    part = tiny_config(tmp_path / "part", pickups=30)
    Trainer(part).run(stop_after=17)  # stops between checkpoints; the tail is rewritten on resume
    assert load_checkpoint(part.run_dir / "checkpoint.cmbt").pickups == 17
    Trainer(part, resume=True).run()
    assert len(read_match_log(part.run_dir / "matches.jsonl")) == 30
    assert (full.run_dir / "checkpoint.cmbt").read_bytes() == (part.run_dir / "checkpoint.cmbt").read_bytes()


def test_every_log_record_matches_one_ranking_update(tmp_path):
    cfg = tiny_config(tmp_path, pickups=25)
    state = Trainer(cfg).run()
    log = read_match_log(cfg.run_dir / "matches.jsonl")
    assert [r["index"] for r in log] == list(range(25))
    slots = sum(len(set(r["spec"]["team_a"])) + len(set(r["spec"]["team_b"])) for r in log if "outcome" in r)
    removed = {e["id"] for r in log for e in r["events"] if e["event"] == "remove"}
    assert not removed or slots >= sum(e.games_played for e in state.ranking.entries.values())
    if not removed:
        assert slots == sum(e.games_played for e in state.ranking.entries.values())


def test_annealing_and_elimination_show_up(tmp_path):
    cfg = tiny_config(tmp_path, pickups=120, seed=0)
    state = Trainer(cfg).run()
    events = [e for r in read_match_log(cfg.run_dir / "matches.jsonl") for e in r["events"]]
    anneals = [e for e in events if e["event"] == "anneal"]
    assert anneals
    assert all(e["gamma_after"] > e["gamma_before"] for e in anneals)
    assert len(state.population.trainable_ids()) == cfg.trainable
    assert "scripted:simple#0" in state.population


def test_stage_override_and_auto_advance(tmp_path):
    cfg = tiny_config(tmp_path, pickups=5)
    trainer = Trainer(cfg, stage_override=4)
    assert trainer.state.stage == 4
    assert all(a.reward_config["pickup"] == 0.1 for a in trainer.state.population.values() if a.trainable)
    with pytest.raises(UnknownStage):
        Trainer(tiny_config(tmp_path / "x"), stage_override=7)
    cfg = tiny_config(tmp_path / "adv", pickups=200, seed=0)
    trainer = Trainer(cfg)
    trainer.run()
    stages = [e["stage"] for r in read_match_log(cfg.run_dir / "matches.jsonl") for e in r["events"]
              if e["event"] == "stage"]
    assert stages == [2, 3, 4]
    assert trainer.state.stage == 4


def test_buffers_never_mix_versions():
    buf = Buffers()
    traj = lambda v, n: Trajectory([np.zeros((11, 7, 7))] * n, [0] * n, [0.0] * n, 0.0, True, 0.5, "a", v)
    buf.add([traj(0, 4), traj(1, 3), traj(0, 5), traj(1, 6)])
    first = buf.ready("a", 8)
    assert {t.version for t in first} == {0}
    second = buf.ready("a", 8)
    assert {t.version for t in second} == {1}
    assert buf.ready("a", 8) is None
    buf.add([traj(0, 3), traj(2, 3), traj(5, 3)])
    assert buf.prune("a", current=2, max_staleness=1) == 6
    assert list(buf.data["a"]) == [2]


def test_worker_pool_completes(tmp_path):
    cfg = tiny_config(tmp_path, pickups=12, workers=2, deterministic=False, checkpoint_interval=5)
    state = Trainer(cfg).run()
    assert state.pickups == 12
    log = read_match_log(cfg.run_dir / "matches.jsonl")
    assert sorted(r["index"] for r in log) == list(range(12))
    assert all("outcome" in r for r in log)


def test_solo_training_runs():
    game = GameConfig(board_size=N, rigid_count=6, wood_count=8, max_steps=30)
    report = train_solo(game, NetworkSpec(board_size=N, conv_channels=(2,), hidden=8),
                        Hyperparams(minibatch_horizon=16), default_stages()[2], updates=5, seed=1)
    assert report.updates == 5 and len(report.pickups) == len(report.returns) >= 1
    assert all(r <= 1 + 0.1 * p + 1e-9 for r, p in zip(report.returns, report.pickups))


def test_evaluate(tmp_path):
    cfg = tiny_config(tmp_path, pickups=3)
    state = Trainer(cfg).run()
    report = evaluate(state, cfg.game, 4)
    assert report.matches == 4 and report.agent_id in state.population.trainable_ids()
