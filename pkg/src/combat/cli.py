"""Command line entry point: ``combat train|rank|eval|replay``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .env import GameConfig, ReplayMismatch, replay
from .orchestrator import Trainer, evaluate
from .rating import format_table


def _train(args) -> int:
    if args.config:
        cfg = load_config(args.config, seed=args.seed, workers=args.workers)
    else:
        cfg = RunConfig(**{k: v for k, v in (("seed", args.seed), ("workers", args.workers)) if v is not None})
    if args.deterministic:
        cfg = replace(cfg, deterministic=True)
    if args.data_dir:
        cfg = replace(cfg, data_dir=args.data_dir)
    if args.pickups:
        cfg = replace(cfg, pickups=args.pickups)
    trainer = Trainer(cfg, resume=args.resume, stage_override=args.stage)
    state = trainer.run()
    print(f"finished {state.pickups} pickups at stage {state.stage}; run directory {cfg.run_dir}")
    print(format_table(state.ranking))
    return 0


def _rank(args) -> int:
    state = load_checkpoint(args.checkpoint)
    print(format_table(state.ranking))
    return 0


def _eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    if args.config:
        game = load_config(args.config).game
    else:
        game = GameConfig(board_size=state.network.board_size)
    report = evaluate(state, game, args.matches, agent_id=args.agent, scripted_kind=args.scripted_kind, seed=args.seed)
    n = max(report.matches, 1)
    print(f"{report.agent_id} + scripted teammate vs {args.vs}: "
          f"{report.wins} W / {report.losses} L / {report.draws} D over {report.matches} matches "
          f"(win rate {report.wins / n:.3f})")
    return 0


def _replay(args) -> int:
    path = Path(args.log)
    with open(path, encoding="utf-8") as fh:
        first = json.loads(fh.readline() or "{}")
    if first.get("type") == "header":
        state = replay(path)
        alive = [s for s, a in enumerate(state.agents) if a.alive]
        print(f"replay verified: {state.step} steps, survivors {alive}")
        return 0
    # otherwise treat it as a match log
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            spec = rec["spec"]
            print(f"{rec['index']:>6}  {'+'.join(spec['team_a'])} vs {'+'.join(spec['team_b'])}  "
                  f"{rec.get('outcome', 'error'):>5}  len={rec.get('episode_length', '-')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="combat")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the population training loop")
    t.add_argument("--config", type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--stage", type=int, help="force the curriculum stage")
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    t.add_argument("--pickups", type=int, help="override the total number of matches")
    t.add_argument("--data-dir", help="override the data directory")
    t.set_defaults(func=_train)

    r = sub.add_parser("rank", help="print the ranking stored in a checkpoint")
    r.add_argument("--checkpoint", type=Path, required=True)
    r.set_defaults(func=_rank)

    e = sub.add_parser("eval", help="play a checkpointed agent against rule-based agents")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--vs", choices=["scripted"], default="scripted")
    e.add_argument("--matches", type=int, default=20)
    e.add_argument("--agent", help="agent id (default: best rated trainable)")
    e.add_argument("--scripted-kind", default="scripted:simple")
    e.add_argument("--config", type=Path, help="run config for the game settings")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_eval)

    rp = sub.add_parser("replay", help="verify a game replay log or list a match log")
    rp.add_argument("log")
    rp.set_defaults(func=_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ReplayMismatch, FileNotFoundError) as e:
        print(f"combat: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
