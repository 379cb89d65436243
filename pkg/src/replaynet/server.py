"""In-network replay-memory server.

Two deployment modes share one executable:

  mode A (shared memory): the node stores model parameters and stages raw
    experience batches in a FIFO that a remote replay puller drains; nothing
    is sampled here.
  mode B (co-located replay): the node additionally owns the SumTree and
    serves sampled batches, so only training-batch-sized data ever travels
    toward the learner.

Concurrency: one acceptor, one dedicated reader per connection (no
per-message threads), and in mode B a single replay thread that owns the
SumTree outright. Connection handlers never touch the tree; they enqueue
commands on a bounded ingress queue and wait on per-request reply queues.
The listener is an abstraction boundary so a kernel-bypass transport could
replace OS sockets without touching the server core.
"""

from __future__ import annotations

import collections
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import protocol as wire
from .core import Experience
from .protocol import ErrorCode, Role, ServerMode
from .stats import ServerStats
from .sumtree import SumTree

RECV_CHUNK = 1 << 20


@dataclass
class ServerConfig:
    mode: ServerMode = ServerMode.B_COLOCATED_REPLAY
    host: str = "127.0.0.1"
    port: int = 0  # 0 picks an ephemeral port
    capacity: int = 65536
    alpha: float = 0.6
    p_min: float = 1e-6
    queue_batches: int = 64
    state_dim: int = 64
    action_count: int = 4
    stats_csv: str | None = None
    seed: int | None = None
    stratified: bool = False


class ParameterStore:
    """Versioned opaque parameter blob with swap-on-write publication.

    Writers build the new (version, blob) pair and publish it as one
    reference assignment, so readers always observe a complete blob.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._current: tuple[int, bytes] = (0, b"")
        self.updated_at = 0.0

    def set_blob(self, blob: bytes) -> int:
        with self._lock:
            version = self._current[0] + 1
            self._current = (version, bytes(blob))
            self.updated_at = time.time()
            return version

    @property
    def current(self) -> tuple[int, bytes]:
        return self._current

    @property
    def version(self) -> int:
        return self._current[0]


class Listener:
    """Byte-stream listener boundary: accept() yields connected stream
    sockets. Swap in a kernel-bypass implementation here; the server core
    only ever sees this interface."""

    def accept(self):
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    @property
    def address(self) -> tuple[str, int]:
        raise NotImplementedError


class TcpListener(Listener):
    def __init__(self, host: str, port: int):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(128)

    def accept(self):
        conn, _addr = self._sock.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return conn

    def close(self) -> None:
        # shutdown() wakes a thread blocked in accept(); close() alone does not.
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()


class _Conn:
    """Per-connection state owned by that connection's reader thread."""

    def __init__(self, sock):
        self.sock = sock
        self.decoder = wire.StreamDecoder()
        self.role: Role | None = None
        self.session_id = 0
        self.send_lock = threading.Lock()


@dataclass
class _AddBatch:
    experiences: tuple[Experience, ...]
    priorities: tuple[float, ...]


@dataclass
class _SampleCmd:
    batch_size: int
    reply: queue.SimpleQueue = field(default_factory=queue.SimpleQueue)


@dataclass
class _UpdateCmd:
    wire_ids: tuple[int, ...]
    priorities: tuple[float, ...]
    reply: queue.SimpleQueue = field(default_factory=queue.SimpleQueue)


_STOP = object()


class ReplayServer:
    def __init__(self, config: ServerConfig, listener: Listener | None = None):
        self.config = config
        self.stats = ServerStats()
        self.params = ParameterStore()
        self._listener = listener or TcpListener(config.host, config.port)
        self._rng = np.random.default_rng(config.seed)
        self._running = False
        self._threads: list[threading.Thread] = []
        self._conns: set[_Conn] = set()
        self._conns_lock = threading.Lock()
        self._session_counter = 0

        if config.mode is ServerMode.B_COLOCATED_REPLAY:
            self.tree: SumTree | None = SumTree(config.capacity, config.p_min, config.alpha)
            self._commands: queue.Queue = queue.Queue()
            self._pending_batches = 0
            self._pending_lock = threading.Lock()
            # Test hook: clearing this gate stalls the replay thread so the
            # ingress queue can be filled deterministically.
            self.replay_gate = threading.Event()
            self.replay_gate.set()
        else:
            self.tree = None
            self._staged: collections.deque[tuple[Experience, float]] = collections.deque()
            self._staged_lock = threading.Lock()

    # -- lifecycle ---------------------------------------------------------

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.address

    def start(self) -> "ReplayServer":
        self._running = True
        if self.tree is not None:
            replay = threading.Thread(target=self._replay_loop, name="replay", daemon=True)
            replay.start()
            self._threads.append(replay)
        acceptor = threading.Thread(target=self._accept_loop, name="acceptor", daemon=True)
        acceptor.start()
        self._threads.append(acceptor)
        return self

    def stop(self) -> None:
        if not self._running:
            return
        self._running = False
        self._listener.close()
        if self.tree is not None:
            self.replay_gate.set()
            self._commands.put(_STOP)
        with self._conns_lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.sock.close()
        for thread in self._threads:
            thread.join(timeout=5.0)
        if self.config.stats_csv:
            self.stats.write_csv(self.config.stats_csv)

    def run_forever(self) -> None:
        """Serve until stop() is called from a signal handler or another thread."""
        self.start()
        try:
            while self._running:
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # -- accept / per-connection reader ------------------------------------

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock = self._listener.accept()
            except OSError:
                break
            conn = _Conn(sock)
            with self._conns_lock:
                self._conns.add(conn)
            handler = threading.Thread(
                target=self._serve_conn, args=(conn,), name="conn-handler", daemon=True
            )
            handler.start()

    def _serve_conn(self, conn: _Conn) -> None:
        try:
            while self._running:
                try:
                    data = conn.sock.recv(RECV_CHUNK)
                except OSError:
                    break
                if not data:
                    break
                self.stats.inc("bytes_in", len(data))
                conn.decoder.feed(data)
                while True:
                    try:
                        message = conn.decoder.next_message()
                    except (wire.ProtocolViolation, wire.MalformedFrame) as exc:
                        self._send(conn, wire.Error(ErrorCode.PROTOCOL
                                                    if isinstance(exc, wire.ProtocolViolation)
                                                    else ErrorCode.MALFORMED, str(exc)))
                        return
                    if message is None:
                        break
                    if not self._dispatch(conn, message):
                        return
        finally:
            with self._conns_lock:
                self._conns.discard(conn)
            conn.sock.close()

    def _send(self, conn: _Conn, message) -> None:
        data = wire.encode(message)
        try:
            with conn.send_lock:
                conn.sock.sendall(data)
        except OSError:
            return
        self.stats.inc("bytes_out", len(data))
        if conn.role is not None:
            self.stats.inc(f"bytes_out_role_{Role(conn.role).name.lower()}", len(data))

    # -- dispatch ----------------------------------------------------------

    def _dispatch(self, conn: _Conn, message) -> bool:
        """Handle one message; False closes the connection."""
        started = time.perf_counter()
        if conn.role is None:
            if not isinstance(message, wire.Hello):
                self._send(conn, wire.Error(ErrorCode.PROTOCOL, "expected HELLO first"))
                return False
            return self._handle_hello(conn, message)

        if isinstance(message, wire.PushExperiences):
            ok = self._handle_push(conn, message)
            self.stats.observe_latency("push", time.perf_counter() - started)
            return ok
        if isinstance(message, wire.SampleReq):
            ok = self._handle_sample(conn, message)
            self.stats.observe_latency("sample", time.perf_counter() - started)
            return ok
        if isinstance(message, wire.UpdatePriorities):
            ok = self._handle_update(conn, message)
            self.stats.observe_latency("update_priorities", time.perf_counter() - started)
            return ok
        if isinstance(message, wire.SetParams):
            ok = self._handle_set_params(conn, message)
            self.stats.observe_latency("set_params", time.perf_counter() - started)
            return ok
        if isinstance(message, wire.PullParams):
            ok = self._handle_pull_params(conn, message)
            self.stats.observe_latency("pull_params", time.perf_counter() - started)
            return ok
        if isinstance(message, wire.PullExperiences):
            ok = self._handle_pull_experiences(conn, message)
            self.stats.observe_latency("pull_experiences", time.perf_counter() - started)
            return ok
        if isinstance(message, wire.StatsReq):
            counters = sorted(self.stats.snapshot().items())
            self._send(conn, wire.StatsResp(tuple(counters)))
            return True
        self._send(conn, wire.Error(ErrorCode.PROTOCOL, f"unexpected {type(message).__name__}"))
        return False

    def _handle_hello(self, conn: _Conn, message: wire.Hello) -> bool:
        try:
            role = Role(message.role)
        except ValueError:
            self._send(conn, wire.Error(ErrorCode.PROTOCOL, f"unknown role {message.role}"))
            return False
        cfg = self.config
        if message.state_dim != cfg.state_dim or message.action_count != cfg.action_count:
            self._send(conn, wire.Error(
                ErrorCode.PROTOCOL,
                f"dimension mismatch: server has state_dim={cfg.state_dim} "
                f"action_count={cfg.action_count}",
            ))
            return False
        with self._conns_lock:
            self._session_counter += 1
            conn.session_id = self._session_counter
        conn.role = role
        conn.decoder.state_dim = cfg.state_dim
        self.stats.inc("sessions")
        self._send(conn, wire.HelloAck(
            session_id=conn.session_id,
            server_mode=cfg.mode,
            state_dim=cfg.state_dim,
            action_count=cfg.action_count,
            capacity=cfg.capacity,
            alpha=cfg.alpha,
            p_min=cfg.p_min,
        ))
        return True

    def _handle_push(self, conn: _Conn, message: wire.PushExperiences) -> bool:
        if conn.role is not Role.ACTOR:
            self._send(conn, wire.Error(ErrorCode.FORBIDDEN, "only actors push experiences"))
            return True
        count = len(message.experiences)
        self.stats.inc("pushes")
        if count and max(exp.action for exp in message.experiences) >= self.config.action_count:
            self._send(conn, wire.Error(ErrorCode.MALFORMED, "action index out of range"))
            return False
        if count == 0:
            self._send(conn, wire.PushAck(0, self._queue_depth()))
            return True
        self.stats.inc("experiences_pushed", count)
        if self.tree is None:
            with self._staged_lock:
                self._staged.extend(zip(message.experiences, message.priorities))
                depth = len(self._staged)
            self.stats.set_gauge("queue_depth", depth)
            self._send(conn, wire.PushAck(count, min(depth, 0xFFFFFFFF)))
            return True
        with self._pending_lock:
            if self._pending_batches >= self.config.queue_batches:
                full = True
            else:
                full = False
                self._pending_batches += 1
                depth = self._pending_batches
        if full:
            self.stats.inc("experiences_rejected", count)
            self._send(conn, wire.Error(ErrorCode.BACKPRESSURE, "ingress queue full"))
            return True
        self.stats.set_gauge("queue_depth", depth)
        self._commands.put(_AddBatch(message.experiences, message.priorities))
        self._send(conn, wire.PushAck(count, depth))
        return True

    def _handle_sample(self, conn: _Conn, message: wire.SampleReq) -> bool:
        if self.tree is None:
            self._send(conn, wire.Error(ErrorCode.WRONG_MODE, "sampling needs a mode-B server"))
            return True
        if conn.role is not Role.LEARNER:
            self._send(conn, wire.Error(ErrorCode.FORBIDDEN, "only the learner samples"))
            return True
        if message.batch_size < 1:
            self._send(conn, wire.Error(ErrorCode.MALFORMED, "batch_size must be >= 1"))
            return True
        record = wire.sample_record_size(self.config.state_dim)
        if 4 + message.batch_size * record > wire.MAX_PAYLOAD:
            self._send(conn, wire.Error(
                ErrorCode.MALFORMED,
                f"batch of {message.batch_size} would exceed the frame size cap"))
            return True
        cmd = _SampleCmd(message.batch_size)
        self._commands.put(cmd)
        result = cmd.reply.get()
        if result is None:
            self._send(conn, wire.Error(ErrorCode.NOT_READY, "replay memory is empty"))
            return True
        wire_ids, probabilities, experiences = result
        self.stats.inc("samples")
        self.stats.inc("experiences_sampled", len(experiences))
        self.stats.inc(
            "sample_record_bytes_out",
            len(experiences) * wire.sample_record_size(self.config.state_dim),
        )
        self._send(conn, wire.SampleResp(wire_ids, probabilities, experiences))
        return True

    def _handle_update(self, conn: _Conn, message: wire.UpdatePriorities) -> bool:
        if self.tree is None:
            self._send(conn, wire.Error(ErrorCode.WRONG_MODE, "priority updates need a mode-B server"))
            return True
        if conn.role is not Role.LEARNER:
            self._send(conn, wire.Error(ErrorCode.FORBIDDEN, "only the learner updates priorities"))
            return True
        cmd = _UpdateCmd(message.slot_ids, message.priorities)
        self._commands.put(cmd)
        applied, stale = cmd.reply.get()
        self.stats.inc("priority_updates_applied", applied)
        self.stats.inc("priority_updates_stale", stale)
        self._send(conn, wire.UpdateAck(applied, stale))
        return True

    def _handle_set_params(self, conn: _Conn, message: wire.SetParams) -> bool:
        if conn.role is not Role.LEARNER:
            self._send(conn, wire.Error(ErrorCode.FORBIDDEN, "only the learner sets parameters"))
            return True
        version = self.params.set_blob(message.blob)
        self.stats.inc("param_sets")
        self._send(conn, wire.SetAck(version))
        return True

    def _handle_pull_params(self, conn: _Conn, message: wire.PullParams) -> bool:
        version, blob = self.params.current
        self.stats.inc("param_pulls")
        if version > message.min_version:
            self._send(conn, wire.ParamsBlob(version, blob))
        else:
            self._send(conn, wire.ParamsBlob(version, b""))
        return True

    def _handle_pull_experiences(self, conn: _Conn, message: wire.PullExperiences) -> bool:
        if self.tree is not None:
            self._send(conn, wire.Error(
                ErrorCode.WRONG_MODE, "mode B serves samples, not raw drains"))
            return True
        if conn.role is not Role.REPLAY_PULLER:
            self._send(conn, wire.Error(ErrorCode.FORBIDDEN, "only replay pullers drain"))
            return True
        # One response frame must stay under the payload cap.
        record = wire.experience_record_size(self.config.state_dim)
        fit = (wire.MAX_PAYLOAD - 4) // record
        drained: list[tuple[Experience, float]] = []
        with self._staged_lock:
            for _ in range(min(message.max_count, len(self._staged), fit)):
                drained.append(self._staged.popleft())
            depth = len(self._staged)
        self.stats.set_gauge("queue_depth", depth)
        self.stats.inc("experience_pulls")
        self.stats.inc("experiences_drained", len(drained))
        self.stats.inc(
            "drained_record_bytes_out",
            len(drained) * wire.experience_record_size(self.config.state_dim),
        )
        experiences = tuple(exp for exp, _ in drained)
        priorities = tuple(p for _, p in drained)
        self._send(conn, wire.ExperiencesBlob(experiences, priorities))
        return True

    def _queue_depth(self) -> int:
        if self.tree is None:
            with self._staged_lock:
                return min(len(self._staged), 0xFFFFFFFF)
        with self._pending_lock:
            return self._pending_batches

    # -- replay thread (mode B): sole owner of the SumTree ------------------

    def _replay_loop(self) -> None:
        tree = self.tree
        capacity = tree.capacity
        while True:
            cmd = self._commands.get()
            if cmd is _STOP:
                self._drain_commands()
                break
            self.replay_gate.wait()
            if isinstance(cmd, _AddBatch):
                for exp, priority in zip(cmd.experiences, cmd.priorities):
                    tree.insert(exp, priority)
                self.stats.inc("experiences_added", len(cmd.experiences))
                with self._pending_lock:
                    self._pending_batches -= 1
                    depth = self._pending_batches
                self.stats.set_gauge("queue_depth", depth)
            elif isinstance(cmd, _SampleCmd):
                if tree.live_count == 0:
                    cmd.reply.put(None)
                    continue
                result = tree.sample_batch(cmd.batch_size, self._rng, self.config.stratified)
                # Wire ids are the slots' monotone insert indices so a later
                # update can detect ring-wraparound overwrites statelessly.
                wire_ids = tuple(int(g) for g in tree.slot_generation[result.slot_ids])
                cmd.reply.put((wire_ids, tuple(result.probabilities), result.experiences))
            elif isinstance(cmd, _UpdateCmd):
                applied = stale = 0
                for wire_id, priority in zip(cmd.wire_ids, cmd.priorities):
                    slot = wire_id % capacity
                    if slot < tree.live_count and tree.generation(slot) == wire_id:
                        tree.update_priority(slot, priority)
                        applied += 1
                    else:
                        stale += 1
                cmd.reply.put((applied, stale))

    def _drain_commands(self) -> None:
        """Unblock any handler still waiting on a reply during shutdown."""
        while True:
            try:
                cmd = self._commands.get_nowait()
            except queue.Empty:
                return
            if isinstance(cmd, _SampleCmd):
                cmd.reply.put(None)
            elif isinstance(cmd, _UpdateCmd):
                cmd.reply.put((0, len(cmd.wire_ids)))


def serve(config: ServerConfig) -> ReplayServer:
    """Start a server in this process and return it (caller stops it)."""
    return ReplayServer(config).start()
