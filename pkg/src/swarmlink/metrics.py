"""Run logs, delay / loss / convergence statistics and CSV export."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .swarm import AgentState, WorldState
from .transport import LinkStats


class MetricsError(Exception):
    pass


class EmptyLogError(MetricsError, ValueError):
    pass


@dataclass(frozen=True)
class DelaySample:
    seq: int
    send_timestamp: float
    recv_timestamp: float

    @property
    def delay(self) -> float:
        # may be negative across hosts with skewed clocks; kept as measured
        return self.recv_timestamp - self.send_timestamp


@dataclass(frozen=True)
class DelayStats:
    mean: float
    max: float
    stddev: float
    count: int


@dataclass(frozen=True)
class LossReport:
    expected: int
    received: int
    gaps: list[int]


@dataclass(frozen=True)
class SpeedStats:
    mean_speed: float
    stddev: float
    max_abs_dev: float


@dataclass(frozen=True)
class TickRecord:
    tick: int
    time: float
    agents: tuple[AgentState, ...]
    speed: Optional[SpeedStats]
    cohesion_radius: Optional[float]
    staleness: float = 0.0


@dataclass
class RunLog:
    node_id: Optional[int] = None
    ticks: list[TickRecord] = field(default_factory=list)
    delays: list[DelaySample] = field(default_factory=list)
    received_seqs: list[int] = field(default_factory=list)
    discarded_frames: int = 0
    link_stats: Optional[LinkStats] = None
    error: Optional[str] = None

    def record(self, tick: int, world: WorldState, agents: Iterable[AgentState], staleness: float = 0.0):
        if self.ticks and world.time <= self.ticks[-1].time:
            raise MetricsError("tick times must be strictly increasing")
        if world.followers:
            speed, coh = speed_dispersion(world), cohesion_radius(world)
        else:
            speed = coh = None
        self.ticks.append(TickRecord(tick, world.time, tuple(agents), speed, coh, staleness))


def delay_stats(samples: list[DelaySample]) -> DelayStats:
    if not samples:
        raise EmptyLogError("no delay samples")
    d = [s.delay for s in samples]
    mean = math.fsum(d) / len(d)
    var = math.fsum((x - mean) ** 2 for x in d) / len(d)
    return DelayStats(mean, max(d), math.sqrt(var), len(d))


def missing_seqs(seqs: Iterable[int]) -> list[int]:
    got = set(seqs)
    if not got:
        return []
    return [s for s in range(max(got) + 1) if s not in got]


def packet_loss(log: RunLog) -> LossReport:
    got = set(log.received_seqs)
    expected = max(got) + 1 if got else 0
    return LossReport(expected, len(got), missing_seqs(got))


def speed_dispersion(world: WorldState) -> SpeedStats:
    speeds = [math.hypot(*a.vel) for a in world.followers]
    if not speeds:
        raise MetricsError("speed statistics need at least one follower")
    mean = math.fsum(speeds) / len(speeds)
    var = math.fsum((s - mean) ** 2 for s in speeds) / len(speeds)
    return SpeedStats(mean, math.sqrt(var), max(abs(s - mean) for s in speeds))


def cohesion_radius(world: WorldState) -> float:
    fs = world.followers
    if not fs:
        raise MetricsError("cohesion radius needs at least one follower")
    cx = math.fsum(a.pos[0] for a in fs) / len(fs)
    cy = math.fsum(a.pos[1] for a in fs) / len(fs)
    return max(math.hypot(a.pos[0] - cx, a.pos[1] - cy) for a in fs)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

COLUMNS = {
    "trajectories": ["tick", "time", "agent_id", "x", "y", "vx", "vy"],
    "delays": ["seq", "send_ts", "recv_ts", "delay"],
    "swarm_metrics": ["tick", "time", "mean_speed", "speed_stddev", "cohesion_radius", "staleness"],
}


def _rows(log: RunLog, kind: str):
    if kind == "trajectories":
        for t in log.ticks:
            for a in sorted(t.agents, key=lambda a: a.id):
                yield [t.tick, t.time, a.id, a.pos[0], a.pos[1], a.vel[0], a.vel[1]]
    elif kind == "delays":
        for s in log.delays:
            yield [s.seq, s.send_timestamp, s.recv_timestamp, s.delay]
    elif kind == "swarm_metrics":
        for t in log.ticks:
            if t.speed is not None:
                yield [t.tick, t.time, t.speed.mean_speed, t.speed.stddev, t.cohesion_radius, t.staleness]
    else:
        raise ValueError(f"unknown CSV kind {kind!r}")


def _cell(v) -> str:
    # repr round-trips doubles exactly
    return repr(v) if isinstance(v, float) else str(v)


def export_csv(log: RunLog, kind: str, path, allow_empty: bool = False) -> int:
    """Write one CSV; returns the number of data rows."""
    rows = [[_cell(v) for v in r] for r in _rows(log, kind)]
    if not rows and not allow_empty:
        raise EmptyLogError(f"run log has no {kind} data")
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(COLUMNS[kind])
            w.writerows(rows)
    except OSError as e:
        raise MetricsError(f"cannot write {os.fspath(path)}: {e}") from e
    return len(rows)


def read_delays_csv(path) -> list[DelaySample]:
    with open(path, newline="") as f:
        return [DelaySample(int(r["seq"]), float(r["send_ts"]), float(r["recv_ts"]))
                for r in csv.DictReader(f)]


def merge_trajectories(logs: Iterable[RunLog]) -> RunLog:
    """Union of several nodes' per-tick agents, keyed by tick."""
    by_tick: dict[int, tuple[float, list[AgentState]]] = {}
    for lg in logs:
        for t in lg.ticks:
            entry = by_tick.setdefault(t.tick, (t.time, []))
            if entry[0] != t.time:
                raise MetricsError(f"tick {t.tick}: nodes disagree on time ({entry[0]} vs {t.time})")
            entry[1].extend(t.agents)
    out = RunLog()
    for tick in sorted(by_tick):
        time_, agents = by_tick[tick]
        out.ticks.append(TickRecord(tick, time_, tuple(sorted(agents, key=lambda a: a.id)), None, None))
    return out
