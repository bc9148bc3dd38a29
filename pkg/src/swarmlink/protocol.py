"""Snapshot wire format.

One snapshot is one ASCII line::

    SNAP <node_id> <seq> <send_timestamp> <n> X1..Xn Y1..Yn VX1..VXn VY1..VYn\\n

Floats use ``repr`` (shortest string that round-trips to the same double).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

MAGIC = b"SNAP"
NEWLINE = b"\n"


class ProtocolError(ValueError):
    pass


class MalformedHeaderError(ProtocolError):
    pass


class FieldCountError(ProtocolError):
    pass


class NumberFormatError(ProtocolError):
    pass


class NonFiniteValueError(ProtocolError):
    pass


@dataclass(frozen=True)
class Snapshot:
    node_id: int
    seq: int
    send_timestamp: float
    xs: tuple[float, ...] = ()
    ys: tuple[float, ...] = ()
    vxs: tuple[float, ...] = ()
    vys: tuple[float, ...] = ()

    def __post_init__(self):
        n = len(self.xs)
        if not (len(self.ys) == len(self.vxs) == len(self.vys) == n):
            raise ValueError("xs, ys, vxs, vys must all have length n")

    @property
    def n(self) -> int:
        return len(self.xs)

    @classmethod
    def from_states(cls, node_id: int, seq: int, send_timestamp: float, states: Sequence) -> "Snapshot":
        return cls(node_id, seq, send_timestamp,
                   tuple(a.pos[0] for a in states), tuple(a.pos[1] for a in states),
                   tuple(a.vel[0] for a in states), tuple(a.vel[1] for a in states))


def _fmt(v: float) -> str:
    if not math.isfinite(v):
        raise NonFiniteValueError(f"non-finite value {v!r}")
    return repr(float(v))


def encode_snapshot(s: Snapshot) -> bytes:
    parts = ["SNAP", str(int(s.node_id)), str(int(s.seq)), _fmt(s.send_timestamp), str(s.n)]
    for group in (s.xs, s.ys, s.vxs, s.vys):
        parts.extend(_fmt(v) for v in group)
    return (" ".join(parts) + "\n").encode("ascii")


def _parse_int(tok: bytes, name: str) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise MalformedHeaderError(f"bad {name} field {tok!r}") from None
    if v < 0:
        raise MalformedHeaderError(f"{name} must be non-negative, got {v}")
    return v


def _parse_float(tok: bytes) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise NumberFormatError(f"unparseable number {tok!r}") from None
    if not math.isfinite(v):
        raise NonFiniteValueError(f"non-finite value {tok!r}")
    return v


def decode_snapshot(line: bytes) -> Snapshot:
    if not line.endswith(NEWLINE):
        raise MalformedHeaderError("frame is not newline-terminated")
    toks = line[:-1].split(b" ")
    if len(toks) < 5 or toks[0] != MAGIC:
        raise MalformedHeaderError(f"bad header in {line[:40]!r}")
    node_id = _parse_int(toks[1], "node_id")
    seq = _parse_int(toks[2], "seq")
    try:
        ts = _parse_float(toks[3])
    except NumberFormatError as e:
        raise MalformedHeaderError(str(e)) from None
    n = _parse_int(toks[4], "n")
    values = toks[5:]
    if len(values) != 4 * n:
        raise FieldCountError(f"header claims n={n} ({4 * n} values) but frame has {len(values)}")
    vals = [_parse_float(t) for t in values]
    return Snapshot(node_id, seq, ts,
                    tuple(vals[0:n]), tuple(vals[n:2 * n]),
                    tuple(vals[2 * n:3 * n]), tuple(vals[3 * n:4 * n]))


def split_frames(buffer: bytes) -> tuple[list[bytes], bytes]:
    """Split off complete newline-terminated lines; the tail is returned untouched."""
    lines = []
    start = 0
    while True:
        nl = buffer.find(NEWLINE, start)
        if nl < 0:
            break
        lines.append(buffer[start:nl + 1])
        start = nl + 1
    return lines, buffer[start:]
