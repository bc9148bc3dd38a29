"""Frame links between two nodes: real TCP, or an in-process channel with
emulated delay, jitter and loss.

Both kinds share the same surface: ``send_frame``, ``recv_frame``,
``recv_timed`` and ``close``.  Frames are newline-terminated lines; delivery
is FIFO per direction.
"""
from __future__ import annotations

import collections
import errno
import logging
import queue
import random
import socket
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .protocol import NEWLINE, split_frames

log = logging.getLogger(__name__)

DEFAULT_BUFFER_FRAMES = 1024
_RECV_CHUNK = 65536


class TransportError(Exception):
    pass


class LinkClosed(TransportError):
    pass


class BindFailed(TransportError):
    pass


class ConnectTimeout(TransportError):
    pass


class ConnectRefused(TransportError):
    pass


class Role(str, Enum):
    SERVER = "server"
    CLIENT = "client"


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port_s = address.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must be host:port, got {address!r}")
    try:
        port = int(port_s)
    except ValueError:
        raise ValueError(f"bad port in {address!r}") from None
    if not 1 <= port <= 65535:
        raise ValueError(f"port {port} out of range 1-65535")
    return host, port


@dataclass(frozen=True)
class EndpointConfig:
    role: Role
    address: str
    connect_timeout: float = 10.0
    read_timeout: float = 5.0

    def __post_init__(self):
        parse_address(self.address)
        if not (self.connect_timeout > 0 and self.read_timeout > 0):
            raise ValueError("timeouts must be positive")


@dataclass(frozen=True)
class ImpairmentConfig:
    fixed_delay: float = 0.0
    jitter: float = 0.0
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.fixed_delay < 0 or self.jitter < 0:
            raise ValueError("delay and jitter must be non-negative")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")


@dataclass
class LinkStats:
    frames_sent: int = 0
    frames_received: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    frames_dropped_by_impairment: int = 0
    dropped_frames: list[int] = field(default_factory=list)


def _as_frame(frame: bytes) -> bytes:
    if NEWLINE in frame[:-1]:
        raise ValueError("frame contains an embedded newline")
    return frame if frame.endswith(NEWLINE) else frame + NEWLINE


class Link:
    """Common surface.  Subclasses provide ``send_frame`` and ``recv_timed``."""

    stats: LinkStats

    def send_frame(self, frame: bytes) -> None:
        raise NotImplementedError

    def recv_timed(self, timeout: Optional[float]) -> Optional[tuple[bytes, float]]:
        """Next frame with its local arrival wall-clock time, or None on timeout."""
        raise NotImplementedError

    def recv_frame(self, timeout: Optional[float]) -> Optional[bytes]:
        got = self.recv_timed(timeout)
        return None if got is None else got[0]

    def close(self) -> None:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# TCP
# ---------------------------------------------------------------------------

_EOF = object()
_STOP = object()


class TcpLink(Link):
    def __init__(self, sock: socket.socket, buffer_frames: int = DEFAULT_BUFFER_FRAMES):
        self.sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(None)
        self.stats = LinkStats()
        self._out: queue.Queue = queue.Queue(maxsize=buffer_frames)
        self._in: queue.Queue = queue.Queue()
        self._closed = threading.Event()
        self._peer_gone = threading.Event()
        self._send_failed = threading.Event()
        self._eof_seen = False
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._writer.start()
        self._reader.start()

    def _write_loop(self):
        while True:
            item = self._out.get()
            if item is _STOP:
                return
            try:
                self.sock.sendall(item)
            except OSError as e:
                log.debug("tcp send failed: %s", e)
                self._send_failed.set()
                self._drain_out()
                return
            self.stats.bytes_sent += len(item)

    def _drain_out(self):
        # unblock any sender stuck on a full queue after a write failure
        while True:
            try:
                self._out.get_nowait()
            except queue.Empty:
                return

    def _read_loop(self):
        buf = b""
        while True:
            try:
                chunk = self.sock.recv(_RECV_CHUNK)
            except OSError:
                chunk = b""
            if not chunk:
                self._peer_gone.set()
                self._in.put(_EOF)
                return
            now = time.time()
            self.stats.bytes_received += len(chunk)
            lines, buf = split_frames(buf + chunk)
            for line in lines:
                self.stats.frames_received += 1
                self._in.put((line, now))

    def send_frame(self, frame: bytes) -> None:
        if self._closed.is_set() or self._send_failed.is_set():
            raise LinkClosed("link is closed")
        frame = _as_frame(frame)
        while True:
            try:
                self._out.put(frame, timeout=0.1)
                break
            except queue.Full:
                if self._send_failed.is_set() or self._closed.is_set():
                    raise LinkClosed("link closed while sending") from None
        self.stats.frames_sent += 1

    def recv_timed(self, timeout):
        if self._closed.is_set():
            raise LinkClosed("link is closed")
        if self._eof_seen:
            raise LinkClosed("peer closed the link")
        try:
            item = self._in.get(timeout=timeout) if (timeout is None or timeout > 0) else self._in.get_nowait()
        except queue.Empty:
            return None
        if item is _EOF:
            self._eof_seen = True
            raise LinkClosed("peer closed the link")
        return item

    def close(self, flush_timeout: float = 10.0) -> None:
        if self._closed.is_set():
            return
        if not self._send_failed.is_set():
            try:
                self._out.put(_STOP, timeout=flush_timeout)
            except queue.Full:
                pass
            self._writer.join(flush_timeout)
        self._closed.set()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.join(1.0)


class TcpListener:
    """Bound, listening server socket.  ``port`` 0 picks an ephemeral port."""

    def __init__(self, host: str, port: int):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((host, port))
        except OSError as e:
            self.sock.close()
            raise BindFailed(f"cannot bind {host}:{port}: {e}") from e
        self.sock.listen(1)
        self.host = host
        self.port = self.sock.getsockname()[1]

    def accept(self, timeout: float) -> TcpLink:
        self.sock.settimeout(timeout)
        try:
            conn, _ = self.sock.accept()
        except socket.timeout:
            raise ConnectTimeout(f"no client connected to {self.host}:{self.port} within {timeout}s") from None
        return TcpLink(conn)

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect(host: str, port: int, timeout: float, retry_refused: bool = False) -> TcpLink:
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ConnectTimeout(f"could not connect to {host}:{port} within {timeout}s")
        try:
            sock = socket.create_connection((host, port), timeout=remaining)
            return TcpLink(sock)
        except ConnectionRefusedError as e:
            if not retry_refused:
                raise ConnectRefused(f"connection to {host}:{port} refused") from e
            time.sleep(min(0.05, max(remaining, 0)))
        except socket.timeout:
            raise ConnectTimeout(f"could not connect to {host}:{port} within {timeout}s") from None
        except OSError as e:
            if e.errno == errno.ECONNREFUSED and retry_refused:
                time.sleep(0.05)
                continue
            raise ConnectRefused(f"cannot connect to {host}:{port}: {e}") from e


def open_link(cfg: EndpointConfig, retry_refused: bool = False) -> TcpLink:
    host, port = parse_address(cfg.address)
    if cfg.role is Role.SERVER:
        with TcpListener(host, port) as lst:
            return lst.accept(cfg.connect_timeout)
    return connect(host, port, cfg.connect_timeout, retry_refused)


# ---------------------------------------------------------------------------
# in-process impaired channel
# ---------------------------------------------------------------------------

class _Pipe:
    """One direction of an impaired channel: a delay-ordered FIFO."""

    def __init__(self, imp: ImpairmentConfig, name: str, maxsize: int):
        self.imp = imp
        self.maxsize = maxsize
        self.q: collections.deque = collections.deque()
        self.cond = threading.Condition()
        self.closed = False
        self.last_due = 0.0
        self.n_sent = 0
        self.drop_rng = random.Random(f"{imp.seed}/{name}/drop")
        self.jitter_rng = random.Random(f"{imp.seed}/{name}/jitter")


class ImpairedLink(Link):
    def __init__(self, out: _Pipe, inp: _Pipe):
        self._out = out
        self._in = inp
        self.stats = LinkStats()
        self._closed = False

    def send_frame(self, frame: bytes) -> None:
        frame = _as_frame(frame)
        p = self._out
        with p.cond:
            if self._closed:
                raise LinkClosed("link is closed")
            if self._in.closed:
                raise LinkClosed("peer closed the link")
            index = p.n_sent
            p.n_sent += 1
            self.stats.frames_sent += 1
            self.stats.bytes_sent += len(frame)
            if p.imp.drop_prob > 0 and p.drop_rng.random() < p.imp.drop_prob:
                self.stats.frames_dropped_by_impairment += 1
                self.stats.dropped_frames.append(index)
                return
            delay = p.imp.fixed_delay
            if p.imp.jitter > 0:
                delay += p.jitter_rng.uniform(0.0, p.imp.jitter)
            # delays queue behind each other, never reorder
            due = max(time.time() + delay, p.last_due)
            p.last_due = due
            while len(p.q) >= p.maxsize:
                p.cond.wait(0.1)
                if self._closed or self._in.closed:
                    raise LinkClosed("link closed while sending")
            p.q.append((due, frame))
            p.cond.notify_all()

    def recv_timed(self, timeout):
        p = self._in
        deadline = None if timeout is None else time.time() + timeout
        with p.cond:
            while True:
                if self._closed:
                    raise LinkClosed("link is closed")
                now = time.time()
                if p.q and p.q[0][0] <= now:
                    _, frame = p.q.popleft()
                    p.cond.notify_all()
                    self.stats.frames_received += 1
                    self.stats.bytes_received += len(frame)
                    return frame, now
                if not p.q and p.closed:
                    raise LinkClosed("peer closed the link")
                waits = []
                if deadline is not None:
                    if now >= deadline:
                        return None
                    waits.append(deadline - now)
                if p.q:
                    waits.append(p.q[0][0] - now)
                p.cond.wait(min(waits) if waits else None)

    def close(self) -> None:
        for p in (self._out, self._in):
            with p.cond:
                if p is self._out:
                    p.closed = True
                self._closed = True
                p.cond.notify_all()


def impaired_channel(imp: Optional[ImpairmentConfig] = None, imp_back: Optional[ImpairmentConfig] = None,
                     buffer_frames: int = DEFAULT_BUFFER_FRAMES) -> tuple[ImpairedLink, ImpairedLink]:
    """Connected pair of in-process links.

    ``imp`` governs A->B, ``imp_back`` B->A (defaults to ``imp``).  The two
    directions draw from independent seeded streams.
    """
    imp = imp or ImpairmentConfig()
    imp_back = imp_back or imp
    ab = _Pipe(imp, "a->b", buffer_frames)
    ba = _Pipe(imp_back, "b->a", buffer_frames)
    return ImpairedLink(ab, ba), ImpairedLink(ba, ab)
