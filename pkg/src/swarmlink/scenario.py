"""Scenario files: YAML documents describing a whole two-node session.

Both peers of a session read the same file, so everything that must agree
between them (agent split, leader ownership, constants, seeds, exchange mode)
lives here rather than on the command line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .node import ExchangeMode, NodeConfig
from .swarm import (DECAYING, GROWING, AgentState, Circle, Integrator, LeaderPath, SimConfig, SwarmParams,
                    Waypoints, WorldState, init_random_nonoverlapping, leader_state_at)
from .transport import EndpointConfig, ImpairmentConfig, Role

LEADER_ID = 0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    address: str = "127.0.0.1:47100"
    connect_timeout: float = 10.0
    read_timeout: float = 5.0


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    agents_per_node: tuple[int, int]
    leader_node: int
    leader_path: LeaderPath
    swarm: SwarmParams = SwarmParams()
    sim: SimConfig = SimConfig()
    impairment: ImpairmentConfig = ImpairmentConfig()
    step_budget: int = 100
    exchange_mode: ExchangeMode = ExchangeMode.LOCKSTEP
    exchange_period: float = 0.05
    tick_interval: Optional[float] = None
    session: SessionConfig = SessionConfig()

    def __post_init__(self):
        if len(self.agents_per_node) != 2 or any(n < 0 for n in self.agents_per_node):
            raise ValueError("agents_per_node must be two non-negative counts")
        if self.leader_node not in (0, 1):
            raise ValueError("leader_node must be 0 or 1")
        if self.step_budget < 0:
            raise ValueError("step_budget must be non-negative")

    # -- agent id layout: leader 0, then node 0's followers, then node 1's
    def follower_ids(self, node_id: int) -> tuple[int, ...]:
        start = 1 + sum(self.agents_per_node[:node_id])
        return tuple(range(start, start + self.agents_per_node[node_id]))

    def published_ids(self, node_id: int) -> tuple[int, ...]:
        ids = self.follower_ids(node_id)
        return (LEADER_ID, *ids) if node_id == self.leader_node else ids

    def initial_world(self) -> WorldState:
        n = sum(self.agents_per_node)
        pts = init_random_nonoverlapping(n, self.sim.arena, self.sim.min_separation, self.sim.seed)
        followers = tuple(AgentState(1 + k, p) for k, p in enumerate(pts))
        return WorldState(0.0, leader_state_at(self.leader_path, 0.0, LEADER_ID), followers)

    def node_config(self, node_id: int, drain_time: Optional[float] = None) -> NodeConfig:
        # every node starts from the full initial world; remote entries are
        # replaced as soon as the peer's snapshots arrive
        world = self.initial_world()
        has_leader = node_id == self.leader_node
        if drain_time is None:
            imp = self.impairment
            drain_time = imp.fixed_delay + imp.jitter + 0.2
        return NodeConfig(
            node_id=node_id,
            local_agent_ids=self.follower_ids(node_id),
            peer_agent_ids=self.published_ids(1 - node_id),
            initial_world=world,
            swarm=self.swarm,
            sim=self.sim,
            has_leader=has_leader,
            leader_id=LEADER_ID,
            leader_path=self.leader_path if has_leader else None,
            exchange_mode=self.exchange_mode,
            exchange_period=self.exchange_period,
            step_budget=self.step_budget,
            read_timeout=self.session.read_timeout,
            tick_interval=self.tick_interval,
            drain_time=drain_time,
        )

    def endpoint(self, role: Role) -> EndpointConfig:
        s = self.session
        return EndpointConfig(role, s.address, s.connect_timeout, s.read_timeout)


def node_id_for_role(role: Role) -> int:
    # node 0 is the server-side testbed, node 1 the client side
    return 0 if role is Role.SERVER else 1


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class _Ctx:
    def __init__(self, source: str):
        self.source = source

    def err(self, node: Optional[yaml.Node], where: str, msg: str) -> ScenarioError:
        line = f":{node.start_mark.line + 1}" if node is not None else ""
        return ScenarioError(f"{self.source}{line}: {where}: {msg}")

    def mapping(self, node: yaml.Node, where: str, required: set[str], optional: set[str]) -> dict[str, yaml.Node]:
        if not isinstance(node, yaml.MappingNode):
            raise self.err(node, where, "expected a mapping")
        out = {}
        for k, v in node.value:
            key = k.value
            if key not in required | optional:
                raise self.err(k, f"{where}.{key}" if where else key, "unknown key")
            if key in out:
                raise self.err(k, f"{where}.{key}" if where else key, "duplicate key")
            out[key] = v
        for key in sorted(required - out.keys()):
            raise self.err(node, f"{where}.{key}" if where else key, "missing required field")
        return out

    def scalar(self, node: yaml.Node, where: str) -> Any:
        if not isinstance(node, yaml.ScalarNode):
            raise self.err(node, where, "expected a scalar")
        return yaml.safe_load(yaml.serialize(node))

    def number(self, node, where, positive=False, nonneg=False) -> float:
        v = self.scalar(node, where)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.err(node, where, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise self.err(node, where, "must be finite")
        if positive and not v > 0:
            raise self.err(node, where, f"must be > 0, got {v}")
        if nonneg and v < 0:
            raise self.err(node, where, f"must be >= 0, got {v}")
        return v

    def integer(self, node, where, nonneg=True) -> int:
        v = self.scalar(node, where)
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.err(node, where, f"expected an integer, got {v!r}")
        if nonneg and v < 0:
            raise self.err(node, where, f"must be >= 0, got {v}")
        return v

    def boolean(self, node, where) -> bool:
        v = self.scalar(node, where)
        if not isinstance(v, bool):
            raise self.err(node, where, f"expected true/false, got {v!r}")
        return v

    def string(self, node, where) -> str:
        v = self.scalar(node, where)
        if not isinstance(v, str):
            raise self.err(node, where, f"expected a string, got {v!r}")
        return v

    def vec2(self, node, where) -> tuple[float, float]:
        if not isinstance(node, yaml.SequenceNode) or len(node.value) != 2:
            raise self.err(node, where, "expected a pair [x, y]")
        return (self.number(node.value[0], f"{where}[0]"), self.number(node.value[1], f"{where}[1]"))

    def build(self, node, where, factory, **kwargs):
        # surface dataclass invariant failures with the section's line number
        try:
            return factory(**kwargs)
        except ValueError as e:
            raise self.err(node, where, f"invariant violated: {e}") from None


_SWARM_KEYS = {"c0", "cl", "cr", "ca", "lr", "la", "alpha", "beta"}


def _swarm(c: _Ctx, node) -> SwarmParams:
    m = c.mapping(node, "swarm", _SWARM_KEYS, {"align_with_leader", "exponent_sign"})
    kw = {k: c.number(m[k], f"swarm.{k}") for k in _SWARM_KEYS}
    if "align_with_leader" in m:
        kw["align_with_leader"] = c.boolean(m["align_with_leader"], "swarm.align_with_leader")
    if "exponent_sign" in m:
        s = c.string(m["exponent_sign"], "swarm.exponent_sign")
        if s not in ("decaying", "growing"):
            raise c.err(m["exponent_sign"], "swarm.exponent_sign", "must be 'decaying' or 'growing'")
        kw["exponent_sign"] = DECAYING if s == "decaying" else GROWING
    return c.build(node, "swarm", SwarmParams, **kw)


def _sim(c: _Ctx, node) -> SimConfig:
    m = c.mapping(node, "sim", {"dt", "seed"}, {"integrator", "arena", "min_separation"})
    kw: dict[str, Any] = {"dt": c.number(m["dt"], "sim.dt", positive=True),
                          "seed": c.integer(m["seed"], "sim.seed")}
    if "integrator" in m:
        name = c.string(m["integrator"], "sim.integrator")
        try:
            kw["integrator"] = Integrator(name)
        except ValueError:
            choices = ", ".join(i.value for i in Integrator)
            raise c.err(m["integrator"], "sim.integrator", f"must be one of {choices}") from None
    if "arena" in m:
        kw["arena"] = c.vec2(m["arena"], "sim.arena")
    if "min_separation" in m:
        kw["min_separation"] = c.number(m["min_separation"], "sim.min_separation", positive=True)
    return c.build(node, "sim", SimConfig, **kw)


def _path(c: _Ctx, node) -> LeaderPath:
    m = c.mapping(node, "leader_path", set(), {"circle", "waypoints"})
    if len(m) != 1:
        raise c.err(node, "leader_path", "exactly one of 'circle' or 'waypoints' is required")
    if "circle" in m:
        cm = c.mapping(m["circle"], "leader_path.circle", {"center", "radius", "angular_velocity"}, {"phase"})
        return c.build(m["circle"], "leader_path.circle", Circle,
                       center=c.vec2(cm["center"], "leader_path.circle.center"),
                       radius=c.number(cm["radius"], "leader_path.circle.radius", positive=True),
                       angular_velocity=c.number(cm["angular_velocity"], "leader_path.circle.angular_velocity"),
                       phase=c.number(cm["phase"], "leader_path.circle.phase") if "phase" in cm else 0.0)
    seq = m["waypoints"]
    if not isinstance(seq, yaml.SequenceNode):
        raise c.err(seq, "leader_path.waypoints", "expected a list of {t, pos} entries")
    pts = []
    for k, item in enumerate(seq.value):
        where = f"leader_path.waypoints[{k}]"
        im = c.mapping(item, where, {"t", "pos"}, set())
        pts.append((c.number(im["t"], f"{where}.t"), c.vec2(im["pos"], f"{where}.pos")))
    return c.build(seq, "leader_path.waypoints", Waypoints, points=tuple(pts))


def _impairment(c: _Ctx, node) -> ImpairmentConfig:
    keys = {"fixed_delay", "jitter", "drop_prob", "seed"}
    m = c.mapping(node, "impairment", set(), keys)
    kw: dict[str, Any] = {}
    for k in ("fixed_delay", "jitter", "drop_prob"):
        if k in m:
            kw[k] = c.number(m[k], f"impairment.{k}", nonneg=True)
    if "seed" in m:
        kw["seed"] = c.integer(m["seed"], "impairment.seed")
    return c.build(node, "impairment", ImpairmentConfig, **kw)


def _exchange(c: _Ctx, node) -> dict[str, Any]:
    m = c.mapping(node, "exchange", {"mode"}, {"period", "tick_interval"})
    mode = c.string(m["mode"], "exchange.mode")
    try:
        out: dict[str, Any] = {"exchange_mode": ExchangeMode(mode)}
    except ValueError:
        raise c.err(m["mode"], "exchange.mode", "must be 'lockstep' or 'freerun'") from None
    if "period" in m:
        out["exchange_period"] = c.number(m["period"], "exchange.period", positive=True)
    if "tick_interval" in m:
        out["tick_interval"] = c.number(m["tick_interval"], "exchange.tick_interval", positive=True)
    return out


def _session(c: _Ctx, node) -> SessionConfig:
    m = c.mapping(node, "session", {"address"}, {"connect_timeout", "read_timeout"})
    kw: dict[str, Any] = {"address": c.string(m["address"], "session.address")}
    for k in ("connect_timeout", "read_timeout"):
        if k in m:
            kw[k] = c.number(m[k], f"session.{k}", positive=True)
    s = c.build(node, "session", SessionConfig, **kw)
    c.build(m["address"], "session.address", EndpointConfig, role=Role.CLIENT, address=s.address,
            connect_timeout=s.connect_timeout, read_timeout=s.read_timeout)
    return s


def parse_scenario_text(text: str, source: str = "<scenario>") -> ScenarioSpec:
    c = _Ctx(source)
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ScenarioError(f"{source}{line}: invalid YAML: {getattr(e, 'problem', e)}") from None
    if root is None:
        raise ScenarioError(f"{source}: empty scenario file")
    m = c.mapping(root, "",
                  {"name", "agents_per_node", "leader_node", "leader_path", "swarm", "sim", "step_budget", "exchange"},
                  {"impairment", "session"})
    apn = m["agents_per_node"]
    if not isinstance(apn, yaml.SequenceNode) or len(apn.value) != 2:
        raise c.err(apn, "agents_per_node", "expected a list of two counts")
    counts = (c.integer(apn.value[0], "agents_per_node[0]"), c.integer(apn.value[1], "agents_per_node[1]"))
    leader_node = c.integer(m["leader_node"], "leader_node")
    if leader_node not in (0, 1):
        raise c.err(m["leader_node"], "leader_node", "must be 0 or 1")
    kw: dict[str, Any] = dict(
        name=c.string(m["name"], "name"),
        agents_per_node=counts,
        leader_node=leader_node,
        leader_path=_path(c, m["leader_path"]),
        swarm=_swarm(c, m["swarm"]),
        sim=_sim(c, m["sim"]),
        step_budget=c.integer(m["step_budget"], "step_budget"),
        **_exchange(c, m["exchange"]),
    )
    if "impairment" in m:
        kw["impairment"] = _impairment(c, m["impairment"])
    if "session" in m:
        kw["session"] = _session(c, m["session"])
    return c.build(root, "scenario", ScenarioSpec, **kw)


def packaged_scenarios() -> list[str]:
    root = resources.files("swarmlink") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def parse_scenario(file) -> ScenarioSpec:
    """Load a scenario from a path, or by name from the packaged scenarios."""
    p = Path(file)
    if p.exists():
        return parse_scenario_text(p.read_text(), str(p))
    res = resources.files("swarmlink") / "scenarios" / f"{file}.yaml"
    if res.is_file():
        return parse_scenario_text(res.read_text(), f"{file}.yaml")
    raise ScenarioError(f"{file}: no such file or packaged scenario "
                        f"(packaged: {', '.join(packaged_scenarios())})")
