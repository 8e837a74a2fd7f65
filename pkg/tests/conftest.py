import numpy as np
import pytest

from combat.env import AgentStatus, BoardState, GameConfig, Mode, PASSAGE


def make_state(n=5, kind=None, agents=None, bombs=(), flames=(), item=None, hidden=None, step=0, **cfg):
    """Hand-built board; by default an open n x n passage with agents in the corners."""
    config = GameConfig(board_size=n, rigid_count=0, wood_count=0, **cfg)
    kind = np.full((n, n), PASSAGE, dtype=np.int8) if kind is None else np.asarray(kind, dtype=np.int8)
    hidden = np.zeros((n, n), dtype=np.int8) if hidden is None else np.asarray(hidden, dtype=np.int8)
    item = np.zeros((n, n), dtype=np.int8) if item is None else np.asarray(item, dtype=np.int8)
    if agents is None:
        corners = [(0, 0), (n - 1, 0), (n - 1, n - 1), (0, n - 1)]
        mode = Mode(config.mode)
        agents = [AgentStatus(p, 1, 2, False, mode != Mode.SOLO or s == 0, s % 2 if mode == Mode.TEAM else s)
                  for s, p in enumerate(corners)]
    return BoardState(kind.copy(), hidden.copy(), item.copy(), tuple(bombs), tuple(flames), tuple(agents), step, config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(data_dir, **overrides):
    """A run small enough to play dozens of matches per second."""
    from combat.config import RunConfig
    from combat.learner import Hyperparams, NetworkSpec
    from combat.population import PopulationConfig

    game = GameConfig(board_size=7, rigid_count=6, wood_count=8, max_steps=40)
    kw = dict(
        trainable=4,
        scripted=1,
        pickups=20,
        seed=3,
        checkpoint_interval=10,
        data_dir=str(data_dir),
        game=game,
        hyper=Hyperparams(minibatch_horizon=16, learning_rate=1e-3),
        network=NetworkSpec(board_size=7, conv_channels=(2,), hidden=8),
        population=PopulationConfig(window=5, epsilon=0.5, sigma_max=2.0, min_games=5, dwell=2, margin=20.0),
    )
    kw.update(overrides)
    return RunConfig(**kw)


# Acceptance verdicts, filled in by test_acceptance.py and echoed at the end of the run.
ACCEPTANCE: dict[str, tuple[bool, str]] = {}
ACCEPTANCE_ORDER = [
    "gradient oracle", "annealing closed form", "rating conservation and anchor drift", "scheduler statistics",
    "environment oracles", "desk-scale learning", "population integration", "checkpoint round trip",
    "softmax and entropy numerics",
]


def verdict(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[name] = (bool(ok), detail)
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for name in ACCEPTANCE_ORDER:
        if name not in ACCEPTANCE:
            terminalreporter.write_line(f"[----] {name}: no verdict (not selected, or errored first)")
            continue
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
