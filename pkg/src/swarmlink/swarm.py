"""Leader-follower swarm dynamics with an exponential (Morse-type) pair potential.

Each follower obeys

    dx/dt = v
    dv/dt = (alpha - beta |v|^2) v - grad U(x) + sum_j c0 (v_j - v)
    U(x)  = 1/2 cl |x - y|^2 + sum_j (cr exp(s r/lr) - ca exp(s r/la))

where ``y`` is the leader position, ``r = |x - x_j|`` and ``s`` is the exponent
sign (``DECAYING`` by default).  The leader follows a prescribed path and is
not itself driven by the swarm.

Vectors are plain ``(x, y)`` float tuples.  All arithmetic is scalar Python so
that the same inputs produce bitwise-identical outputs regardless of which
subset of followers is being advanced; the distributed nodes rely on this.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

Vec2 = tuple[float, float]

# Exponent sign for the pair potential.  The printed control law has e^{+r/l},
# which gives an unbounded potential; the decaying form is the Morse analogue.
DECAYING = -1.0
GROWING = 1.0

COINCIDENT_EPS = 1e-9


class SwarmError(Exception):
    pass


class CoincidentAgentsError(SwarmError):
    """Two agents are closer than the coincidence epsilon."""


class PlacementInfeasibleError(SwarmError):
    pass


class PathTimeError(SwarmError, ValueError):
    pass


@dataclass(frozen=True)
class SwarmParams:
    c0: float = 0.01
    cl: float = 0.005
    cr: float = 9.0
    ca: float = 5.0
    lr: float = 2.0
    la: float = 12.0
    alpha: float = 0.0
    beta: float = 0.2
    align_with_leader: bool = False
    exponent_sign: float = DECAYING

    def __post_init__(self):
        for name in ("c0", "cl", "cr", "ca", "lr", "la", "alpha", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.lr <= 0 or self.la <= 0:
            raise ValueError("lr and la must be positive")
        if self.lr == self.la:
            raise ValueError("lr and la must differ (degenerate potential)")
        if self.cr <= 0 or self.ca <= 0:
            raise ValueError("cr and ca must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.exponent_sign not in (DECAYING, GROWING):
            raise ValueError("exponent_sign must be -1 or +1")

    def equilibrium_distance(self) -> float:
        """Root of the pair-potential derivative for the decaying form."""
        return math.log((self.cr * self.la) / (self.ca * self.lr)) / (1.0 / self.lr - 1.0 / self.la)


@dataclass(frozen=True)
class AgentState:
    id: int
    pos: Vec2
    vel: Vec2 = (0.0, 0.0)

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("agent id must be non-negative")
        (x, y), (vx, vy) = self.pos, self.vel
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(vx) and math.isfinite(vy)):
            raise ValueError(f"agent {self.id}: non-finite state")


@dataclass(frozen=True)
class WorldState:
    time: float
    leader: Optional[AgentState]
    followers: tuple[AgentState, ...] = ()

    def __post_init__(self):
        ids = [a.id for a in self.followers]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("followers must be sorted by strictly increasing id")
        if self.leader is not None and self.leader.id in ids:
            raise ValueError("leader id collides with a follower id")

    def index_of(self, agent_id: int) -> int:
        for k, a in enumerate(self.followers):
            if a.id == agent_id:
                return k
        raise KeyError(agent_id)

    def agents(self) -> list[AgentState]:
        """Leader (if any) and followers, ordered by id."""
        out = list(self.followers)
        if self.leader is not None:
            out.append(self.leader)
        return sorted(out, key=lambda a: a.id)


@dataclass(frozen=True)
class Circle:
    center: Vec2
    radius: float
    angular_velocity: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("circle radius must be positive")


@dataclass(frozen=True)
class Waypoints:
    points: tuple[tuple[float, Vec2], ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("waypoint path needs at least 2 points")
        times = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")


LeaderPath = Union[Circle, Waypoints]


class Integrator(str, Enum):
    SEMI_IMPLICIT_EULER = "semi_implicit_euler"
    RK4 = "rk4"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    integrator: Integrator = Integrator.SEMI_IMPLICIT_EULER
    seed: int = 0
    arena: Vec2 = (15.0, 20.0)
    min_separation: float = 1.0
    coincident_eps: float = COINCIDENT_EPS

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.min_separation > 0:
            raise ValueError("min_separation must be positive")
        if not (self.arena[0] > 0 and self.arena[1] > 0):
            raise ValueError("arena dimensions must be positive")


# Arena of the physical micro-car testbed, kept as a preset.
PHYSICAL_ARENA: Vec2 = (1.5, 2.0)


# ---------------------------------------------------------------------------
# force terms
# ---------------------------------------------------------------------------

def _pair_potential(r: float, p: SwarmParams) -> float:
    s = p.exponent_sign
    return p.cr * math.exp(s * r / p.lr) - p.ca * math.exp(s * r / p.la)


def _pair_dpotential(r: float, p: SwarmParams) -> float:
    s = p.exponent_sign
    return s * (p.cr / p.lr) * math.exp(s * r / p.lr) - s * (p.ca / p.la) * math.exp(s * r / p.la)


def pair_interaction_force(xi: Vec2, xj: Vec2, params: SwarmParams, eps: float = COINCIDENT_EPS) -> Vec2:
    dx = xi[0] - xj[0]
    dy = xi[1] - xj[1]
    r = math.hypot(dx, dy)
    if r < eps:
        raise CoincidentAgentsError(f"agents at {xi} and {xj} are {r:.3g} m apart")
    c = -_pair_dpotential(r, params) / r
    return (c * dx, c * dy)


def leader_attraction_force(xi: Vec2, y: Vec2, params: SwarmParams) -> Vec2:
    return (-params.cl * (xi[0] - y[0]), -params.cl * (xi[1] - y[1]))


def alignment_accel(vi: Vec2, others: Iterable[Vec2], params: SwarmParams) -> Vec2:
    sx = sy = 0.0
    for v in others:
        sx += v[0] - vi[0]
        sy += v[1] - vi[1]
    return (params.c0 * sx, params.c0 * sy)


def self_propulsion_accel(vi: Vec2, params: SwarmParams) -> Vec2:
    g = params.alpha - params.beta * (vi[0] * vi[0] + vi[1] * vi[1])
    return (g * vi[0], g * vi[1])


def _accel(i: int, pos: Sequence[Vec2], vel: Sequence[Vec2], leader: Optional[AgentState],
           p: SwarmParams, eps: float) -> Vec2:
    # summation order is fixed (leader term, then j ascending); keep it that way
    xi, vi = pos[i], vel[i]
    ax, ay = self_propulsion_accel(vi, p)
    if leader is not None:
        fx, fy = leader_attraction_force(xi, leader.pos, p)
        ax += fx
        ay += fy
    gx = gy = 0.0
    sx = sy = 0.0
    for j in range(len(pos)):
        if j == i:
            continue
        fx, fy = pair_interaction_force(xi, pos[j], p, eps)
        gx += fx
        gy += fy
        sx += vel[j][0] - vi[0]
        sy += vel[j][1] - vi[1]
    if p.align_with_leader and leader is not None:
        sx += leader.vel[0] - vi[0]
        sy += leader.vel[1] - vi[1]
    return (ax + gx + p.c0 * sx, ay + gy + p.c0 * sy)


def follower_accel(i: int, world: WorldState, params: SwarmParams, eps: float = COINCIDENT_EPS) -> Vec2:
    """Acceleration of follower ``i`` (an index into ``world.followers``)."""
    pos = [a.pos for a in world.followers]
    vel = [a.vel for a in world.followers]
    return _accel(i, pos, vel, world.leader, params, eps)


def potential_energy(xi: Vec2, world: WorldState, params: SwarmParams, i: int,
                     eps: float = COINCIDENT_EPS) -> float:
    """U seen by follower ``i`` if it were placed at ``xi``; other agents stay put."""
    u = 0.0
    if world.leader is not None:
        y = world.leader.pos
        d2 = (xi[0] - y[0]) ** 2 + (xi[1] - y[1]) ** 2
        u += 0.5 * params.cl * d2
    for j, other in enumerate(world.followers):
        if j == i:
            continue
        r = math.hypot(xi[0] - other.pos[0], xi[1] - other.pos[1])
        if r < eps:
            raise CoincidentAgentsError(f"follower {i} coincides with follower {j}")
        u += _pair_potential(r, params)
    return u


def total_energy(world: WorldState, params: SwarmParams) -> float:
    """Kinetic energy plus the whole-swarm potential (each pair counted once)."""
    e = 0.0
    fs = world.followers
    for a in fs:
        e += 0.5 * (a.vel[0] ** 2 + a.vel[1] ** 2)
        if world.leader is not None:
            y = world.leader.pos
            e += 0.5 * params.cl * ((a.pos[0] - y[0]) ** 2 + (a.pos[1] - y[1]) ** 2)
    for i in range(len(fs)):
        for j in range(i + 1, len(fs)):
            r = math.hypot(fs[i].pos[0] - fs[j].pos[0], fs[i].pos[1] - fs[j].pos[1])
            e += _pair_potential(r, params)
    return e


# ---------------------------------------------------------------------------
# leader path and initial conditions
# ---------------------------------------------------------------------------

def leader_state_at(path: LeaderPath, t: float, agent_id: int = 0) -> AgentState:
    if isinstance(path, Circle):
        th = path.angular_velocity * t + path.phase
        c, s = math.cos(th), math.sin(th)
        pos = (path.center[0] + path.radius * c, path.center[1] + path.radius * s)
        w = path.radius * path.angular_velocity
        return AgentState(agent_id, pos, (-w * s, w * c))

    pts = path.points
    if t < pts[0][0] or t > pts[-1][0]:
        raise PathTimeError(f"t={t} outside waypoint range [{pts[0][0]}, {pts[-1][0]}]")
    for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
        if t <= t1:
            u = (t - t0) / (t1 - t0)
            vel = ((p1[0] - p0[0]) / (t1 - t0), (p1[1] - p0[1]) / (t1 - t0))
            pos = (p0[0] + u * (p1[0] - p0[0]), p0[1] + u * (p1[1] - p0[1]))
            return AgentState(agent_id, pos, vel)
    raise AssertionError("unreachable")


def init_random_nonoverlapping(n: int, arena: Vec2, min_sep: float, seed: int,
                               max_attempts: int = 10_000) -> list[Vec2]:
    rng = random.Random(seed)
    pts: list[Vec2] = []
    sep2 = min_sep * min_sep
    for k in range(n):
        for _ in range(max_attempts):
            cand = (rng.uniform(0.0, arena[0]), rng.uniform(0.0, arena[1]))
            if all((cand[0] - q[0]) ** 2 + (cand[1] - q[1]) ** 2 >= sep2 for q in pts):
                pts.append(cand)
                break
        else:
            raise PlacementInfeasibleError(
                f"could not place point {k + 1} of {n} with separation {min_sep} "
                f"in {arena[0]}x{arena[1]} after {max_attempts} attempts")
    return pts


def initial_world(n_followers: int, path: LeaderPath, cfg: SimConfig,
                  leader_id: int = 0, first_follower_id: int = 1) -> WorldState:
    pts = init_random_nonoverlapping(n_followers, cfg.arena, cfg.min_separation, cfg.seed)
    followers = tuple(AgentState(first_follower_id + k, p) for k, p in enumerate(pts))
    return WorldState(0.0, leader_state_at(path, 0.0, leader_id), followers)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _accels(idx: Sequence[int], pos, vel, leader, p, eps) -> list[Vec2]:
    return [_accel(i, pos, vel, leader, p, eps) for i in idx]


def step(world: WorldState, params: SwarmParams, cfg: SimConfig, path: Optional[LeaderPath] = None,
         local_ids: Optional[Iterable[int]] = None) -> WorldState:
    """Advance the world by one ``cfg.dt``.

    Only followers whose ids are in ``local_ids`` are integrated (all of them
    when ``None``); the rest are held.  With ``path`` the leader is placed on the
    path at the new time, otherwise it is held as well.
    """
    dt = cfg.dt
    fs = world.followers
    if local_ids is None:
        idx = list(range(len(fs)))
    else:
        wanted = set(local_ids)
        idx = [k for k, a in enumerate(fs) if a.id in wanted]
    pos = [a.pos for a in fs]
    vel = [a.vel for a in fs]
    eps = cfg.coincident_eps
    leader = world.leader
    t1 = world.time + dt

    if cfg.integrator is Integrator.SEMI_IMPLICIT_EULER:
        acc = _accels(idx, pos, vel, leader, params, eps)
        new_pos, new_vel = list(pos), list(vel)
        for k, a in zip(idx, acc):
            v = (vel[k][0] + dt * a[0], vel[k][1] + dt * a[1])
            new_vel[k] = v
            new_pos[k] = (pos[k][0] + dt * v[0], pos[k][1] + dt * v[1])
    else:
        new_pos, new_vel = _rk4(idx, pos, vel, world, params, path, dt, eps)

    followers = tuple(
        AgentState(a.id, new_pos[k], new_vel[k]) if new_pos[k] is not pos[k] else a
        for k, a in enumerate(fs))
    if path is not None and leader is not None:
        leader = leader_state_at(path, t1, leader.id)
    out = WorldState(t1, leader, followers)
    _check_separation(out, eps)
    return out


def _rk4(idx, pos, vel, world, params, path, dt, eps):
    # held (non-integrated) followers keep their state through all stages
    leader0 = world.leader

    def leader_at(t):
        if path is None or leader0 is None:
            return leader0
        return leader_state_at(path, t, leader0.id)

    def deriv(P, V, t):
        acc = _accels(idx, P, V, leader_at(t), params, eps)
        return [V[k] for k in idx], acc

    def shifted(P, V, dP, dV, h):
        P2, V2 = list(P), list(V)
        for n, k in enumerate(idx):
            P2[k] = (P[k][0] + h * dP[n][0], P[k][1] + h * dP[n][1])
            V2[k] = (V[k][0] + h * dV[n][0], V[k][1] + h * dV[n][1])
        return P2, V2

    t = world.time
    k1p, k1v = deriv(pos, vel, t)
    k2p, k2v = deriv(*shifted(pos, vel, k1p, k1v, dt / 2), t + dt / 2)
    k3p, k3v = deriv(*shifted(pos, vel, k2p, k2v, dt / 2), t + dt / 2)
    k4p, k4v = deriv(*shifted(pos, vel, k3p, k3v, dt), t + dt)
    new_pos, new_vel = list(pos), list(vel)
    for n, k in enumerate(idx):
        new_pos[k] = tuple(pos[k][c] + dt / 6 * (k1p[n][c] + 2 * k2p[n][c] + 2 * k3p[n][c] + k4p[n][c])
                           for c in (0, 1))
        new_vel[k] = tuple(vel[k][c] + dt / 6 * (k1v[n][c] + 2 * k2v[n][c] + 2 * k3v[n][c] + k4v[n][c])
                           for c in (0, 1))
    return new_pos, new_vel


def _check_separation(world: WorldState, eps: float) -> None:
    fs = world.followers
    for i in range(len(fs)):
        xi = fs[i].pos
        for j in range(i + 1, len(fs)):
            if math.hypot(xi[0] - fs[j].pos[0], xi[1] - fs[j].pos[1]) < eps:
                raise CoincidentAgentsError(
                    f"t={world.time}: followers {fs[i].id} and {fs[j].id} collided")
