"""Sum-allreduce over dense float64 payloads.

Two transports share one collective schedule: a binomial-tree reduce to
rank 0 followed by the mirror binomial broadcast. The schedule is a pure
function of (world size, rank), so for fixed per-rank inputs the result
is bit-identical on every rank, on every run, and on both transports.
The distributed solvers lean on that to keep replicated state exactly
synchronized without a master.

Transports:

* in-process: every rank is a thread in one process; messages travel
  through per-edge queues and are copied on send so no rank ever aliases
  another rank's buffers.
* tcp: one rank per process. Rank 0 doubles as the rendezvous point: it
  collects one registration per peer (world size, rank, listener port)
  and answers with the address book; afterwards peers dial each other
  lazily, the higher rank always connecting to the lower rank's listener.
  Matrix frames on the wire are [u32 tag][u64 byte length][DMAT1 body],
  little-endian; the tag carries the collective sequence number.
"""

from __future__ import annotations

import json
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .matrix import dmat_decode, dmat_encode

DEFAULT_TIMEOUT = 30.0

_FRAME_HEADER = struct.Struct("<IQ")
_TAG_REGISTER = 0xFFFF0001
_TAG_BOOK = 0xFFFF0002
_TAG_HELLO = 0xFFFF0003
_TAG_LIMIT = 0xFFFF0000  # collective sequence numbers stay below this


class CommError(RuntimeError):
    """Protocol violation or lost peer inside a collective."""


class CommTimeoutError(CommError):
    """A peer failed to produce data within the collective timeout."""


@dataclass
class CommStats:
    """Per-rank instrumentation counters.

    `allreduce_calls` and `bytes_sent` count the algorithmic collectives;
    the `service_*` pair counts bookkeeping reductions (stopping residual,
    time-cap flag), kept apart so communication-count assertions on the
    algorithms stay exact. `bytes_sent` is the modeled tree volume,
    payload bytes times the 2 * ceil(log2 P) tree steps, so it is
    identical on every rank and across transports.
    """

    allreduce_calls: int = 0
    bytes_sent: int = 0
    comm_wall_time: float = 0.0
    compute_wall_time: float = 0.0
    service_calls: int = 0
    service_bytes: int = 0


class CommWorld:
    """One rank's handle on the collective fabric."""

    def __init__(self, rank: int, size: int, endpoint, timeout: float = DEFAULT_TIMEOUT):
        if size < 1:
            raise ValueError("world size must be at least 1")
        if not 0 <= rank < size:
            raise ValueError(f"rank {rank} outside world of size {size}")
        self.rank = rank
        self.size = size
        self.timeout = timeout
        self.stats = CommStats()
        self._endpoint = endpoint
        self._seq = 0

    def close(self) -> None:
        if self._endpoint is not None:
            self._endpoint.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def _ceil_log2(p: int) -> int:
    return max(p - 1, 0).bit_length()


def allreduce_sum(world: CommWorld, *payloads, service: bool = False):
    """Entrywise sum of every rank's payloads, delivered to every rank.

    All ranks must call with the same number of arrays, with matching
    shapes, in the same order; disagreements raise ``CommError`` naming
    both ranks involved. Returns a single array for a single payload,
    otherwise a tuple in call order. With ``service=True`` the call is
    accounted under the service counters instead of the algorithmic ones.
    """
    if not payloads:
        raise ValueError("allreduce_sum needs at least one payload")
    mats = [np.array(p, dtype=np.float64) for p in payloads]
    if any(m.ndim > 2 for m in mats):
        raise ValueError("allreduce payloads must be scalars, vectors, or matrices")
    # the tree carries 2-D frames only; vectors ride as single columns
    orig_shapes = [m.shape for m in mats]
    mats = [m.reshape((m.size if m.ndim != 2 else m.shape[0],
                       1 if m.ndim != 2 else m.shape[1]), order="F")
            for m in mats]
    t0 = time.perf_counter()
    out = _tree_allreduce(world, mats)
    elapsed = time.perf_counter() - t0
    stats = world.stats
    stats.comm_wall_time += elapsed
    volume = sum(m.nbytes for m in out) * 2 * _ceil_log2(world.size)
    if service:
        stats.service_calls += 1
        stats.service_bytes += volume
    else:
        stats.allreduce_calls += 1
        stats.bytes_sent += volume
    out = [m.reshape(shape, order="F") for m, shape in zip(out, orig_shapes)]
    return out[0] if len(out) == 1 else tuple(out)


def barrier(world: CommWorld) -> None:
    """Block until every rank in the world has entered the barrier."""
    t0 = time.perf_counter()
    _tree_allreduce(world, [np.zeros((1, 1))])
    world.stats.comm_wall_time += time.perf_counter() - t0


def _tree_allreduce(world: CommWorld, mats):
    seq = world._seq
    if seq >= _TAG_LIMIT:
        raise CommError("collective sequence space exhausted")
    world._seq += 1
    rank, size, ep = world.rank, world.size, world._endpoint
    shapes = [m.shape for m in mats]
    # fold partial sums toward rank 0
    mask = 1
    while mask < size:
        if rank & mask:
            ep.send(rank ^ mask, seq, mats)
            break
        peer = rank | mask
        if peer < size:
            got = _checked_recv(world, peer, seq, shapes)
            for m, g in zip(mats, got):
                m += g
        mask <<= 1
    # fan the total back out along the mirrored tree
    for t in reversed(range(_ceil_log2(size))):
        step = 1 << t
        span = step << 1
        if rank % span == 0:
            peer = rank + step
            if peer < size:
                ep.send(peer, seq, mats)
        elif rank % span == step:
            mats = _checked_recv(world, rank - step, seq, shapes)
    return mats


def _checked_recv(world: CommWorld, src: int, seq: int, shapes):
    got_seq, got = world._endpoint.recv(src, len(shapes), world.timeout)
    if got_seq != seq:
        raise CommError(
            f"collective sequence mismatch: rank {world.rank} is at call "
            f"{seq} but rank {src} sent call {got_seq}")
    got_shapes = [g.shape for g in got]
    if got_shapes != list(shapes):
        raise CommError(
            f"payload shape mismatch in collective {seq}: rank {world.rank} "
            f"expects {list(shapes)} but rank {src} sent {got_shapes}")
    return got


class InProcessFabric:
    """Shared mailbox fabric for P ranks living in one process."""

    def __init__(self, size: int):
        self.size = size
        self._boxes = {
            (dst, src): queue.Queue()
            for dst in range(size) for src in range(size) if dst != src
        }

    def endpoint(self, rank: int) -> "_InProcessEndpoint":
        return _InProcessEndpoint(self, rank)


class _InProcessEndpoint:
    def __init__(self, fabric: InProcessFabric, rank: int):
        self._fabric = fabric
        self._rank = rank

    def send(self, dst: int, seq: int, mats) -> None:
        # copy on send: the receiver must never alias the sender's buffers
        msg = (seq, [np.array(m) for m in mats])
        self._fabric._boxes[(dst, self._rank)].put(msg)

    def recv(self, src: int, count: int, timeout: float):
        del count  # queue messages arrive whole; shapes are checked upstream
        try:
            return self._fabric._boxes[(self._rank, src)].get(timeout=timeout)
        except queue.Empty:
            raise CommTimeoutError(
                f"rank {self._rank} timed out after {timeout:.1f}s waiting "
                f"for rank {src}") from None

    def close(self) -> None:
        pass


def make_inprocess_worlds(size: int, timeout: float = DEFAULT_TIMEOUT) -> list[CommWorld]:
    """Build P thread-side CommWorlds sharing one in-process fabric."""
    fabric = InProcessFabric(size)
    return [CommWorld(r, size, fabric.endpoint(r), timeout=timeout)
            for r in range(size)]


def _write_frame(conn: socket.socket, tag: int, body: bytes) -> None:
    conn.sendall(_FRAME_HEADER.pack(tag, len(body)) + body)


def _read_exact(conn: socket.socket, n: int, timeout: float, rank: int, peer: int) -> bytes:
    deadline = time.monotonic() + timeout
    chunks = []
    got = 0
    while got < n:
        left = deadline - time.monotonic()
        if left <= 0:
            raise CommTimeoutError(
                f"rank {rank} timed out after {timeout:.1f}s waiting for "
                f"rank {peer}")
        conn.settimeout(left)
        try:
            chunk = conn.recv(min(n - got, 1 << 20))
        except socket.timeout:
            raise CommTimeoutError(
                f"rank {rank} timed out after {timeout:.1f}s waiting for "
                f"rank {peer}") from None
        if not chunk:
            raise CommError(
                f"rank {peer} closed its connection to rank {rank} mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _read_frame(conn: socket.socket, timeout: float, rank: int, peer: int):
    head = _read_exact(conn, _FRAME_HEADER.size, timeout, rank, peer)
    tag, length = _FRAME_HEADER.unpack(head)
    body = _read_exact(conn, length, timeout, rank, peer)
    return tag, body


def _nodelay(conn: socket.socket) -> socket.socket:
    # collectives exchange many small frames; never let Nagle batch them
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return conn


def _dial(addr, timeout: float):
    deadline = time.monotonic() + timeout
    while True:
        try:
            return _nodelay(socket.create_connection(addr, timeout=min(1.0, timeout)))
        except OSError:
            if time.monotonic() >= deadline:
                raise CommTimeoutError(
                    f"could not reach {addr[0]}:{addr[1]} within "
                    f"{timeout:.1f}s") from None
            time.sleep(0.05)


class TcpEndpoint:
    """Socket mesh endpoint for one rank (see module docstring for flow)."""

    def __init__(self, rank: int, size: int, address, timeout: float = DEFAULT_TIMEOUT):
        self.rank = rank
        self.size = size
        self.timeout = timeout
        self._conns: dict[int, socket.socket] = {}
        self._cond = threading.Condition()
        self._listener = None
        self._accept_thread = None
        self._closed = False
        self._book: dict[int, tuple[str, int]] = {}
        host, port = address
        if size == 1:
            return
        if rank == 0:
            self._listener = socket.create_server((host, port), backlog=size)
            book: dict[int, list] = {}
            for _ in range(size - 1):
                conn, peer_addr = self._listener.accept()
                _nodelay(conn)
                tag, body = _read_frame(conn, timeout, rank, -1)
                if tag != _TAG_REGISTER:
                    raise CommError(
                        f"rank 0 expected a registration frame, got tag {tag:#x}")
                reg = json.loads(body.decode())
                peer_rank = int(reg["rank"])
                if int(reg["world"]) != size:
                    raise CommError(
                        f"world size mismatch: rank 0 expects {size} but "
                        f"rank {peer_rank} announced {reg['world']}")
                if not 1 <= peer_rank < size or peer_rank in self._conns:
                    raise CommError(f"invalid or duplicate rank {peer_rank} "
                                    f"at the rendezvous")
                self._conns[peer_rank] = conn
                book[str(peer_rank)] = [peer_addr[0], int(reg["port"])]
            payload = json.dumps(book).encode()
            for conn in self._conns.values():
                _write_frame(conn, _TAG_BOOK, payload)
        else:
            self._listener = socket.create_server(("", 0), backlog=size)
            my_port = self._listener.getsockname()[1]
            sock0 = _dial((host, port), timeout)
            _write_frame(sock0, _TAG_REGISTER, json.dumps(
                {"world": size, "rank": rank, "port": my_port}).encode())
            tag, body = _read_frame(sock0, timeout, rank, 0)
            if tag != _TAG_BOOK:
                raise CommError(
                    f"rank {rank} expected the address book, got tag {tag:#x}")
            self._book = {int(k): (v[0], int(v[1]))
                          for k, v in json.loads(body.decode()).items()}
            self._conns[0] = sock0
            self._accept_thread = threading.Thread(
                target=self._accept_loop, name=f"nmf-accept-{rank}", daemon=True)
            self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            _nodelay(conn)
            try:
                tag, body = _read_frame(conn, self.timeout, self.rank, -1)
                if tag != _TAG_HELLO:
                    conn.close()
                    continue
                peer = int(json.loads(body.decode())["rank"])
            except CommError:
                conn.close()
                continue
            with self._cond:
                self._conns[peer] = conn
                self._cond.notify_all()

    def _connection(self, peer: int) -> socket.socket:
        with self._cond:
            conn = self._conns.get(peer)
        if conn is not None:
            return conn
        if peer < self.rank:
            # the higher rank always dials the lower rank's listener
            conn = _dial(self._book[peer], self.timeout)
            _write_frame(conn, _TAG_HELLO,
                         json.dumps({"rank": self.rank}).encode())
            with self._cond:
                self._conns[peer] = conn
            return conn
        deadline = time.monotonic() + self.timeout
        with self._cond:
            while peer not in self._conns:
                left = deadline - time.monotonic()
                if left <= 0 or not self._cond.wait(timeout=left):
                    raise CommTimeoutError(
                        f"rank {self.rank} timed out after "
                        f"{self.timeout:.1f}s waiting for a connection "
                        f"from rank {peer}")
            return self._conns[peer]

    def send(self, dst: int, seq: int, mats) -> None:
        conn = self._connection(dst)
        for m in mats:
            _write_frame(conn, seq, dmat_encode(m))

    def recv(self, src: int, count: int, timeout: float):
        conn = self._connection(src)
        seq = None
        mats = []
        for _ in range(count):
            tag, body = _read_frame(conn, timeout, self.rank, src)
            if tag >= _TAG_LIMIT:
                raise CommError(
                    f"rank {self.rank} received a control frame {tag:#x} "
                    f"from rank {src} inside a collective")
            if seq is None:
                seq = tag
            elif tag != seq:
                raise CommError(
                    f"interleaved frames from rank {src} at rank "
                    f"{self.rank}: tags {seq} and {tag}")
            mats.append(dmat_decode(body))
        return seq, mats

    def close(self) -> None:
        self._closed = True
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._cond:
            conns = list(self._conns.values())
            self._conns.clear()
        for conn in conns:
            try:
                conn.close()
            except OSError:
                pass


def make_tcp_world(rank: int, size: int, address,
                   timeout: float = DEFAULT_TIMEOUT) -> CommWorld:
    """Join (or host, for rank 0) a TCP world at `address` = (host, port)."""
    return CommWorld(rank, size, TcpEndpoint(rank, size, address, timeout),
                     timeout=timeout)
