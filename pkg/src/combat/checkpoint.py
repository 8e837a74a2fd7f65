"""Binary checkpoint format (little-endian throughout).

::

    magic            4 bytes  b"CMBT"
    format version   u16
    layout version   u8       feature-channel layout of the saved networks
    network          u16 board_size, u16 in_channels, u8 n_conv,
                     n_conv x u16 conv widths, u32 hidden width
    agent count      u32
    per agent        str id, u8 kind byte (0 trainable, 1 scripted), str kind,
                     f64 gamma, f64 alpha, u32 tensor count,
                     per tensor: str name, u8 rank, rank x u32 dims,
                                 row-major float32 payload
    ranking          u32 count, per entry: str id, f64 rating, u32 wins,
                     u32 losses, u32 draws
    rng block        u32 length + UTF-8 JSON of bit-generator states
    run-state block  u32 length + UTF-8 JSON (stage, counters, scheduler,
                     per-agent bookkeeping)

``str`` is a u16 byte length followed by UTF-8.  Trainable agents carry the
network tensors plus ``adam.m.<name>`` / ``adam.v.<name>`` moments.  The
file must end exactly after the run-state block.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .learner import AdamState, NetworkSpec
from .population import TRAINABLE, AgentSpec, Population
from .rating import RankingList, RatingEntry
from .representation import LAYOUT_VERSION
from .scheduler import MatchScheduler

MAGIC = b"CMBT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class MagicMismatch(CheckpointError):
    pass


class UnsupportedVersion(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


@dataclass
class TrainingState:
    population: Population
    ranking: RankingList
    scheduler: MatchScheduler
    rngs: dict[str, np.random.Generator]
    network: NetworkSpec
    stage: int = 1
    pickups: int = 0
    stage_converged: set[str] = field(default_factory=set)


def _tensor_names(net: NetworkSpec) -> list[str]:
    names = list(net.shapes())
    return names + [f"adam.m.{n}" for n in names] + [f"adam.v.{n}" for n in names]


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def str(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.pack("H", len(raw))
        self.parts.append(raw)

    def blob(self, raw: bytes) -> None:
        self.pack("I", len(raw))
        self.parts.append(raw)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpoint(f"file ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def str(self) -> str:
        (n,) = self.unpack("H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptCheckpoint(f"bad string at byte {self.pos - n}") from e

    def blob_json(self, what: str):
        (n,) = self.unpack("I")
        raw = self.take(n)
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptCheckpoint(f"unreadable {what} block") from e


def _agent_tensors(agent: AgentSpec, net: NetworkSpec) -> list[tuple[str, np.ndarray]]:
    if not agent.trainable:
        return []
    names = list(net.shapes())
    adam = agent.adam or AdamState.zeros_like(agent.params)
    out = [(n, agent.params[n]) for n in names]
    out += [(f"adam.m.{n}", adam.m[n]) for n in names]
    out += [(f"adam.v.{n}", adam.v[n]) for n in names]
    return out


def dumps(state: TrainingState) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("HB", FORMAT_VERSION, LAYOUT_VERSION)
    net = state.network
    w.pack("HHB", net.board_size, net.in_channels, len(net.conv_channels))
    for c in net.conv_channels:
        w.pack("H", c)
    w.pack("I", net.hidden)

    agents = list(state.population.values())
    w.pack("I", len(agents))
    for a in agents:
        w.str(a.id)
        w.pack("B", 0 if a.trainable else 1)
        w.str(a.kind)
        w.pack("dd", a.gamma, a.alpha)
        tensors = _agent_tensors(a, net)
        w.pack("I", len(tensors))
        for name, arr in tensors:
            w.str(name)
            w.pack("B", arr.ndim)
            for d in arr.shape:
                w.pack("I", d)
            w.parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    entries = list(state.ranking.entries.items())
    w.pack("I", len(entries))
    for agent_id, e in entries:
        w.str(agent_id)
        w.pack("dIII", e.rating, e.wins, e.losses, e.draws)

    rngs = {name: g.bit_generator.state for name, g in sorted(state.rngs.items())}
    w.blob(json.dumps(rngs, sort_keys=True).encode())
    run_state = {
        "stage": state.stage,
        "pickups": state.pickups,
        "stage_converged": sorted(state.stage_converged),
        "next_index": state.population.next_index,
        "dwell": state.population.dwell,
        "scheduler": state.scheduler.state_dict(),
        "agents": {
            a.id: {
                "version": a.version,
                "updates": a.updates,
                "adam_step": a.adam.step if a.adam else 0,
                "reward_history": a.reward_history,
                "reward_config": a.reward_config,
                "stage": a.stage,
                "parent": a.parent,
            }
            for a in agents
        },
    }
    w.blob(json.dumps(run_state, sort_keys=True).encode())
    return w.getvalue()


def loads(data: bytes) -> TrainingState:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise MagicMismatch("not a COMBAT checkpoint (bad magic)")
    version, layout = r.unpack("HB")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"checkpoint format version {version} is not supported")
    if layout != LAYOUT_VERSION:
        raise UnsupportedVersion(f"feature layout version {layout} is not supported")
    board, in_ch, n_conv = r.unpack("HHB")
    convs = tuple(r.unpack("H")[0] for _ in range(n_conv))
    (hidden,) = r.unpack("I")
    try:
        net = NetworkSpec(board, in_ch, convs, hidden)
        expected = net.shapes()
    except (ValueError, ZeroDivisionError) as e:
        raise ShapeMismatch(f"invalid network header: {e}") from e
    names = _tensor_names(net)
    base_names = list(expected)

    (count,) = r.unpack("I")
    raw_agents = []
    for _ in range(count):
        agent_id = r.str()
        if any(agent_id == a[0] for a in raw_agents):
            raise CorruptCheckpoint(f"duplicate agent id {agent_id!r}")
        (kind_byte,) = r.unpack("B")
        kind = r.str()
        if kind_byte not in (0, 1) or (kind_byte == 0) != (kind == TRAINABLE):
            raise CorruptCheckpoint(f"{agent_id}: kind byte {kind_byte} disagrees with kind {kind!r}")
        gamma, alpha = r.unpack("dd")
        (n_tensors,) = r.unpack("I")
        want = names if kind_byte == 0 else []
        if n_tensors != len(want):
            raise ShapeMismatch(f"{agent_id}: expected {len(want)} tensors, found {n_tensors}")
        tensors = {}
        for name_expected in want:
            name = r.str()
            if name != name_expected:
                raise ShapeMismatch(f"{agent_id}: expected tensor {name_expected}, found {name!r}")
            (rank,) = r.unpack("B")
            dims = tuple(r.unpack("I")[0] for _ in range(rank))
            base = name.split(".", 2)[-1] if name.startswith("adam.") else name
            if dims != expected[base]:
                raise ShapeMismatch(f"{agent_id}/{name}: expected shape {expected[base]}, found {dims}")
            size = int(np.prod(dims)) * 4
            tensors[name] = np.frombuffer(r.take(size), dtype="<f4").reshape(dims).astype(np.float32)
        raw_agents.append((agent_id, kind, gamma, alpha, tensors))

    (n_rank,) = r.unpack("I")
    entries = {}
    for _ in range(n_rank):
        agent_id = r.str()
        rating, wins, losses, draws = r.unpack("dIII")
        entries[agent_id] = RatingEntry(rating, wins, losses, draws)
    if sorted(entries) != sorted(a[0] for a in raw_agents) or len(entries) != n_rank:
        raise CorruptCheckpoint("ranking entries do not match the population")
    rng_states = r.blob_json("rng")
    run_state = r.blob_json("run-state")
    if r.pos != len(data):
        raise CorruptCheckpoint(f"{len(data) - r.pos} unexpected trailing bytes")

    try:
        agents = {}
        for agent_id, kind, gamma, alpha, tensors in raw_agents:
            meta = run_state["agents"][agent_id]
            params = adam = None
            if tensors:
                params = {n: tensors[n] for n in base_names}
                adam = AdamState({n: tensors[f"adam.m.{n}"] for n in base_names},
                                 {n: tensors[f"adam.v.{n}"] for n in base_names}, meta["adam_step"])
            agents[agent_id] = AgentSpec(
                id=agent_id, kind=kind, gamma=gamma, alpha=alpha, params=params, adam=adam,
                reward_config=meta["reward_config"], reward_history=list(meta["reward_history"]),
                stage=meta["stage"], version=meta["version"], updates=meta["updates"], parent=meta["parent"],
            )
        population = Population(agents, run_state["next_index"], dict(run_state["dwell"]))
        rngs = {}
        for name, st in rng_states.items():
            g = np.random.default_rng()
            g.bit_generator.state = st
            rngs[name] = g
        return TrainingState(
            population=population,
            ranking=RankingList(entries),
            scheduler=MatchScheduler.from_state(run_state["scheduler"]),
            rngs=rngs,
            network=net,
            stage=run_state["stage"],
            pickups=run_state["pickups"],
            stage_converged=set(run_state["stage_converged"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpoint(f"inconsistent checkpoint contents: {e}") from e


def save_checkpoint(state: TrainingState, path: str | Path) -> None:
    """Write atomically: a crash mid-write leaves the previous file intact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(dumps(state))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> TrainingState:
    return loads(Path(path).read_bytes())


def write_manifest(state: TrainingState, path: str | Path, checkpoint_path: str | Path) -> None:
    """Human-readable population manifest (one INI section per agent)."""
    lines = []
    for a in state.population.values():
        lines += [
            f"[{a.id}]",
            f"kind = {a.kind}",
            f"gamma = {a.gamma!r}",
            f"alpha = {a.alpha!r}",
            f"stage = {a.stage}",
            f"checkpoint = {checkpoint_path}",
            "",
        ]
    Path(path).write_text("\n".join(lines), encoding="utf-8")
