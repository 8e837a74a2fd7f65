import numpy as np
import pytest
from hypothesis import given, strategies as st

from combat.learner import AdamState, NetworkSpec, init_params
from combat.population import (
    AgentSpec, Population, PopulationConfig, anneal_gamma, apply_population_step, is_converged, removable,
    update_dwell,
)
from combat.rating import RankingList, RatingEntry

SPEC = NetworkSpec(board_size=5, conv_channels=(2,), hidden=4)


def trainable(agent_id, seed=0, **kw):
    params = init_params(SPEC, seed)
    return AgentSpec(agent_id, params=params, adam=AdamState.zeros_like(params), **kw)


def make_population(n=8, scripted=1):
    agents = [trainable(f"agent-{i}", seed=i) for i in range(n)]
    agents += [AgentSpec(f"scripted:simple#{i}", kind="scripted:simple") for i in range(scripted)]
    return Population({a.id: a for a in agents}, next_index=n)


def flat_ranking(pop, rating=1200.0, games=0):
    return RankingList({i: RatingEntry(rating, games, 0, 0) for i in pop.agents})


# --- annealing


def test_anneal_examples():
    assert anneal_gamma(0.5, 0.5) == 0.75
    assert anneal_gamma(0.9, 0.1) == pytest.approx(0.91, abs=1e-15)
    assert anneal_gamma(0.0, 0.3) == pytest.approx(0.3)


@pytest.mark.parametrize("gamma0,alpha", [(0.5, 0.5), (0.5, 0.1), (0.2, 0.3), (0.9, 0.05)])
def test_anneal_closed_form(gamma0, alpha):
    g = gamma0
    for t in range(1, 21):
        g = anneal_gamma(g, alpha)
        assert abs(g - (1 - (1 - gamma0) * (1 - alpha) ** t)) < 1e-12


@given(st.floats(0, float(np.nextafter(np.nextafter(1.0, 0.0), 0.0))), st.floats(0, 1, exclude_min=True, exclude_max=True))
def test_anneal_strictly_increases_below_one(gamma, alpha):
    out = anneal_gamma(gamma, alpha)
    assert gamma < out < 1.0


@pytest.mark.parametrize("gamma,alpha", [(1.0, 0.5), (-0.1, 0.5), (0.5, 0.0), (0.5, 1.0), (0.5, -1)])
def test_anneal_rejects_out_of_range(gamma, alpha):
    with pytest.raises(ValueError):
        anneal_gamma(gamma, alpha)


def test_anneal_saturates_loudly():
    g = float(np.nextafter(1.0, 0.0))
    with pytest.raises(ValueError):
        anneal_gamma(g, 0.5)


# --- convergence


def test_convergence_examples():
    assert is_converged([0.3] * 20, window=10, epsilon=0.02)
    assert not is_converged([0.3] * 19, window=10, epsilon=0.02)
    assert not is_converged([], window=10, epsilon=0.02)


@given(st.integers(1, 50), st.floats(0.001, 1.0))
def test_steady_increase_is_not_converged(window, epsilon):
    # the two window means differ by step * window > epsilon
    step = 1.01 * epsilon / window
    history = [k * step for k in range(2 * window)]
    assert not is_converged(history, window, epsilon)


def test_sigma_max_gate():
    noisy = [0.0, 1.0] * 20
    assert is_converged(noisy, 10, 0.02)
    assert not is_converged(noisy, 10, 0.02, sigma_max=0.4)


def test_only_the_last_two_windows_count():
    history = list(range(100)) + [5.0] * 20
    assert is_converged(history, 10, 0.02)


# --- removal


def test_removable_rule_table():
    pop = make_population(4)
    cfg = PopulationConfig(min_games=100, dwell=10, margin=150)
    ranking = RankingList({
        "agent-0": RatingEntry(1000, 150, 0, 0),
        "agent-1": RatingEntry(1200, 150, 0, 0),
        "agent-2": RatingEntry(1200, 150, 0, 0),
        "agent-3": RatingEntry(1250, 150, 0, 0),
        "scripted:simple#0": RatingEntry(500, 150, 0, 0),
    })
    ids = pop.trainable_ids()
    dwell = {"agent-0": 10}
    assert removable(pop["agent-0"], ranking, cfg, dwell, ids)
    assert not removable(pop["scripted:simple#0"], ranking, cfg, dwell, ids)
    assert not removable(pop["agent-0"], ranking, cfg, {"agent-0": 9}, ids)
    few = RankingList({**ranking.entries, "agent-0": RatingEntry(1000, 10, 0, 0)})
    assert not removable(pop["agent-0"], few, cfg, dwell, ids)
    close = RankingList({**ranking.entries, "agent-0": RatingEntry(1050, 150, 0, 0)})
    assert not removable(pop["agent-0"], close, cfg, dwell, ids)  # exactly margin behind: not strictly more


def test_dwell_counts_consecutive_strict_minimum():
    pop = make_population(3)
    low = RankingList({"agent-0": RatingEntry(1100), "agent-1": RatingEntry(1200), "agent-2": RatingEntry(1300)})
    tie = RankingList({"agent-0": RatingEntry(1100), "agent-1": RatingEntry(1100), "agent-2": RatingEntry(1300)})
    for _ in range(3):
        update_dwell(pop, low)
    assert pop.dwell == {"agent-0": 3, "agent-1": 0, "agent-2": 0}
    update_dwell(pop, tie)
    assert pop.dwell["agent-0"] == 0
    update_dwell(pop, low)
    assert pop.dwell["agent-0"] == 1


# --- population step


def test_quiet_step_only_installs_params():
    pop = make_population(3)
    ranking = flat_ranking(pop)
    new = init_params(SPEC, 99)
    adam = AdamState.zeros_like(new)
    out, out_rank, events = apply_population_step(pop, ranking, {"agent-1": (new, adam, 4, 7)},
                                                  ["agent-0", "agent-1", "scripted:simple#0"], PopulationConfig(),
                                                  np.random.default_rng(0))
    assert out_rank == ranking and not events.as_records()
    assert out["agent-1"].params is new and out["agent-1"].version == 4 and out["agent-1"].updates == 7
    assert out["agent-0"] is pop["agent-0"] or out["agent-0"] == pop["agent-0"]
    assert pop["agent-1"].version == 0  # input untouched


def test_converged_agent_is_annealed():
    pop = make_population(3)
    pop.agents["agent-2"].reward_history.extend([0.4] * 20)
    cfg = PopulationConfig(window=10)
    out, _, events = apply_population_step(pop, flat_ranking(pop), {}, ["agent-2"], cfg, np.random.default_rng(0))
    assert out["agent-2"].gamma == 0.75 and out["agent-2"].reward_history == []
    assert events.annealed == [("agent-2", 0.5, 0.75)]
    assert pop["agent-2"].reward_history == [0.4] * 20


def weak_agent_setup(n=8):
    pop = make_population(n)
    entries = {i: RatingEntry(1200 + 10 * k, 200, 0, 0) for k, i in enumerate(pop.trainable_ids())}
    entries["agent-0"] = RatingEntry(900, 200, 0, 0)
    entries["scripted:simple#0"] = RatingEntry(1200)
    pop.dwell["agent-0"] = 50
    return pop, RankingList(entries)


def test_removal_spawns_a_clone_of_a_top_agent():
    pop, ranking = weak_agent_setup()
    cfg = PopulationConfig(top_k=2, gamma_init=0.5)
    out, out_rank, events = apply_population_step(pop, ranking, {}, ["agent-0"], cfg, np.random.default_rng(0))
    assert len(out) == len(pop) == 9
    assert "agent-0" not in out and "agent-0" not in out_rank
    (child, parent), = events.spawned
    assert parent in ("agent-7", "agent-6") and child == "agent-8"
    assert out[child].gamma == 0.5 and out[child].parent == parent
    assert out_rank.rating(child) == 1200.0 and out_rank[child].games_played == 0
    for name, tensor in pop[parent].params.items():
        assert np.array_equal(out[child].params[name], tensor) and out[child].params[name] is not tensor
    assert len(out.trainable_ids()) == len(pop.trainable_ids())


def test_parent_choice_is_uniform_over_top_k():
    pop, ranking = weak_agent_setup()
    seen = {apply_population_step(pop, ranking, {}, ["agent-0"], PopulationConfig(top_k=3),
                                  np.random.default_rng(s))[2].spawned[0][1] for s in range(60)}
    assert seen == {"agent-7", "agent-6", "agent-5"}


def test_convergence_takes_precedence_over_removal():
    pop, ranking = weak_agent_setup()
    pop.agents["agent-0"].reward_history.extend([1.0] * 400)
    out, _, events = apply_population_step(pop, ranking, {}, ["agent-0"], PopulationConfig(),
                                           np.random.default_rng(0))
    assert "agent-0" in out and events.annealed and not events.removed


def test_refuses_to_drop_below_two_trainable():
    pop, ranking = weak_agent_setup(n=2)
    ranking = RankingList({**ranking.entries, "agent-1": RatingEntry(1400, 200, 0, 0)})
    out, _, events = apply_population_step(pop, ranking, {}, ["agent-0"], PopulationConfig(margin=100),
                                           np.random.default_rng(0))
    assert events.refused == ["agent-0"] and "agent-0" in out


def test_scripted_agents_survive_and_never_anneal():
    pop, ranking = weak_agent_setup()
    sid = "scripted:simple#0"
    pop.agents[sid].reward_history.extend([0.0] * 1000)
    ranking = RankingList({**ranking.entries, sid: RatingEntry(0, 1000, 0, 0)})
    pop.dwell[sid] = 1000
    out, _, events = apply_population_step(pop, ranking, {}, [sid, sid], PopulationConfig(),
                                           np.random.default_rng(0))
    assert out[sid].gamma == pop[sid].gamma and not events.as_records()
    with pytest.raises(ValueError):
        AgentSpec("bad", kind="scripted:simple", params=init_params(SPEC, 0))


def test_step_is_deterministic():
    pop, ranking = weak_agent_setup()
    a = apply_population_step(pop, ranking, {}, ["agent-0"], PopulationConfig(), np.random.default_rng(5))
    b = apply_population_step(pop, ranking, {}, ["agent-0"], PopulationConfig(), np.random.default_rng(5))
    assert a[2].as_records() == b[2].as_records() and a[1] == b[1]
    assert list(a[0].agents) == list(b[0].agents)
