"""One testbed node: steps its local followers, publishes snapshots of them and
folds the peer's snapshots back into its world."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from . import swarm
from .metrics import DelaySample, RunLog
from .protocol import ProtocolError, Snapshot, decode_snapshot, encode_snapshot
from .swarm import AgentState, LeaderPath, SimConfig, SwarmParams, WorldState
from .transport import Link, LinkClosed

log = logging.getLogger(__name__)


class ExchangeMode(str, Enum):
    LOCKSTEP = "lockstep"
    FREERUN = "freerun"


class NodeError(Exception):
    """Run aborted.  ``log`` holds the partial RunLog, marked with the error."""

    kind = "node-error"

    def __init__(self, msg: str, log: Optional[RunLog] = None):
        super().__init__(msg)
        self.log = log


class PeerTimeout(NodeError):
    kind = "peer-timeout"


class SeqMismatch(NodeError):
    kind = "protocol-violation"


class IdCollision(NodeError):
    kind = "id-collision"


class SimulationAbort(NodeError):
    kind = "simulation-abort"


@dataclass(frozen=True)
class NodeConfig:
    node_id: int
    local_agent_ids: tuple[int, ...]
    peer_agent_ids: tuple[int, ...]
    initial_world: WorldState
    swarm: SwarmParams = SwarmParams()
    sim: SimConfig = SimConfig()
    has_leader: bool = False
    leader_id: int = 0
    leader_path: Optional[LeaderPath] = None
    exchange_mode: ExchangeMode = ExchangeMode.LOCKSTEP
    exchange_period: float = 0.05
    step_budget: int = 100
    read_timeout: float = 5.0
    # wall seconds per free-run tick; defaults to real time (sim.dt)
    tick_interval: Optional[float] = None
    # how long a free-run node keeps listening after its last tick
    drain_time: float = 0.2

    def __post_init__(self):
        if self.has_leader and self.leader_path is None:
            raise ValueError("leader node needs a leader_path")
        if set(self.local_agent_ids) & set(self.peer_agent_ids):
            raise ValueError("local and peer agent ids overlap")
        if self.step_budget < 0:
            raise ValueError("step_budget must be non-negative")
        if self.exchange_period <= 0:
            raise ValueError("exchange_period must be positive")

    @property
    def published_ids(self) -> tuple[int, ...]:
        ids = set(self.local_agent_ids)
        if self.has_leader:
            ids.add(self.leader_id)
        return tuple(sorted(ids))


@dataclass
class RemoteView:
    agent_ids: tuple[int, ...]
    leader_id: Optional[int] = None
    snapshot: Optional[Snapshot] = None
    recv_time: float = 0.0
    discarded: int = 0
    # reference time for staleness before the first snapshot arrives
    since: float = 0.0

    @property
    def seq(self) -> int:
        return -1 if self.snapshot is None else self.snapshot.seq

    def staleness(self, now: float) -> float:
        return now - (self.snapshot.send_timestamp if self.snapshot is not None else self.since)

    def offer(self, snap: Snapshot, recv_time: float) -> bool:
        """Accept ``snap`` if it is newer than what we hold."""
        if snap.seq <= self.seq:
            self.discarded += 1
            return False
        if snap.n != len(self.agent_ids):
            raise SeqMismatch(f"peer snapshot carries {snap.n} agents, expected {len(self.agent_ids)}")
        self.snapshot = snap
        self.recv_time = recv_time
        return True


def merge_remote(world: WorldState, view: RemoteView, local_ids=()) -> WorldState:
    snap = view.snapshot
    if snap is None or snap.n == 0:
        return world
    local = set(local_ids)
    if world.leader is not None and view.leader_id != world.leader.id:
        local.add(world.leader.id)
    clash = local.intersection(view.agent_ids)
    if clash:
        raise IdCollision(f"remote agent ids {sorted(clash)} collide with local agents")
    leader = world.leader
    followers = {a.id: a for a in world.followers}
    for k, aid in enumerate(view.agent_ids):
        st = AgentState(aid, (snap.xs[k], snap.ys[k]), (snap.vxs[k], snap.vys[k]))
        if aid == view.leader_id:
            leader = st
        else:
            followers[aid] = st
    return WorldState(world.time, leader, tuple(followers[i] for i in sorted(followers)))


class _Node:
    def __init__(self, cfg: NodeConfig, link: Link):
        self.cfg = cfg
        self.link = link
        self.world = cfg.initial_world
        self.view = RemoteView(cfg.peer_agent_ids, None if cfg.has_leader else cfg.leader_id)
        self.log = RunLog(node_id=cfg.node_id, link_stats=link.stats)
        self.next_seq = 0
        self.peer_closed = False

    def local_agents(self) -> list[AgentState]:
        ids = set(self.cfg.local_agent_ids)
        out = [a for a in self.world.followers if a.id in ids]
        if self.cfg.has_leader:
            out.append(self.world.leader)
        return sorted(out, key=lambda a: a.id)

    def send_snapshot(self) -> int:
        seq = self.next_seq
        snap = Snapshot.from_states(self.cfg.node_id, seq, time.time(), self.local_agents())
        self.link.send_frame(encode_snapshot(snap))
        self.next_seq += 1
        return seq

    def ingest(self, frame: bytes, arrival: float) -> Snapshot:
        try:
            snap = decode_snapshot(frame)
        except ProtocolError as e:
            raise SeqMismatch(f"corrupt frame from peer: {e}") from e
        if self.view.offer(snap, arrival):
            self.log.received_seqs.append(snap.seq)
            self.log.delays.append(DelaySample(snap.seq, snap.send_timestamp, arrival))
        return snap

    def merge(self):
        self.world = merge_remote(self.world, self.view, self.cfg.local_agent_ids)

    def advance(self):
        cfg = self.cfg
        path = cfg.leader_path if cfg.has_leader else None
        try:
            self.world = swarm.step(self.world, cfg.swarm, cfg.sim, path, cfg.local_agent_ids)
        except swarm.SwarmError as e:
            raise SimulationAbort(str(e)) from e

    def fail(self, err: NodeError) -> NodeError:
        self.log.error = err.kind
        self.log.discarded_frames = self.view.discarded
        err.log = self.log
        return err


def run_lockstep(cfg: NodeConfig, link: Link) -> RunLog:
    """Synchronous exchange: every tick waits for the peer's snapshot of the same tick."""
    n = _Node(cfg, link)
    try:
        for k in range(cfg.step_budget):
            seq = n.send_snapshot()
            assert seq == k
            deadline = time.monotonic() + cfg.read_timeout
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise PeerTimeout(f"tick {k}: no snapshot from peer within {cfg.read_timeout}s")
                got = link.recv_timed(remaining)
                if got is None:
                    continue
                snap = n.ingest(*got)
                if snap.seq == k:
                    break
                if snap.seq > k:
                    raise SeqMismatch(f"tick {k}: peer sent seq {snap.seq}")
            n.merge()
            n.log.record(k, n.world, n.local_agents(), n.view.staleness(time.time()))
            n.advance()
    except LinkClosed as e:
        # the peer left before the agreed step budget: dead or desynchronised
        raise n.fail(PeerTimeout(f"peer link closed at tick {len(n.log.ticks)}: {e}")) from e
    except NodeError as e:
        raise n.fail(e)
    n.log.discarded_frames = n.view.discarded
    return n.log


def run_freerun(cfg: NodeConfig, link: Link) -> RunLog:
    """Asynchronous exchange: step at a fixed wall cadence using the freshest
    peer snapshot (zero-order hold between arrivals)."""
    n = _Node(cfg, link)
    tau = cfg.tick_interval if cfg.tick_interval is not None else cfg.sim.dt
    every = max(1, round(cfg.exchange_period / cfg.sim.dt))

    def pump(until: float):
        while not n.peer_closed:
            remaining = until - time.time()
            try:
                got = link.recv_timed(max(remaining, 0.0))
            except LinkClosed:
                n.peer_closed = True
                return
            if got is None:
                return
            n.ingest(*got)

    def send():
        if n.peer_closed:
            return
        try:
            n.send_snapshot()
        except LinkClosed:
            n.peer_closed = True

    try:
        # no handshake: peer agents start from their scenario-initial state, so the
        # frame count (and hence which frames an impaired link drops) is fixed
        t0 = time.time()
        n.view.since = t0
        for k in range(cfg.step_budget):
            start = t0 + k * tau
            pump(start)
            if k % every == 0:
                send()
            # step mid-interval so a peer running on the same cadence has delivered its frame
            pump(start + tau / 2)
            n.merge()
            now = time.time()
            n.log.record(k, n.world, n.local_agents(), n.view.staleness(now))
            n.advance()
        pump(time.time() + cfg.drain_time)
    except NodeError as e:
        raise n.fail(e)
    n.log.discarded_frames = n.view.discarded
    return n.log


def run_node(cfg: NodeConfig, link: Link) -> RunLog:
    if cfg.exchange_mode is ExchangeMode.LOCKSTEP:
        return run_lockstep(cfg, link)
    return run_freerun(cfg, link)


def run_monolithic(world: WorldState, params: SwarmParams, sim: SimConfig, path: Optional[LeaderPath],
                   step_budget: int) -> RunLog:
    """All agents in one process; the reference the distributed runs must match."""
    out = RunLog()
    for k in range(step_budget):
        out.record(k, world, world.agents())
        try:
            world = swarm.step(world, params, sim, path)
        except swarm.SwarmError as e:
            out.error = SimulationAbort.kind
            raise SimulationAbort(str(e), out) from e
    return out
