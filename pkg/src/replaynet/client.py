"""Actor-side and learner-side client logic against the wire protocol.

The SDK is model-free: Q-values, parameter blobs, and new priorities are
produced by the caller. Each client object is single-owner (one thread
drives it) and never spawns hidden threads. Requests are strict
request/response: one in flight per connection.
"""

from __future__ import annotations

import socket
import time
from dataclasses import dataclass

import numpy as np

from . import protocol as wire
from .core import Experience
from .protocol import ErrorCode, Role

BACKOFF_BASE_S = 1e-3
BACKOFF_CAP_S = 1.0


class ClientError(Exception):
    pass


class ServerReplyError(ClientError):
    """The server answered with an ERROR frame."""

    def __init__(self, code: int, detail: str):
        super().__init__(f"server error {ErrorCode(code).name}: {detail}")
        self.code = ErrorCode(code)
        self.detail = detail


class BackpressureError(ServerReplyError):
    pass


class NotReadyError(ServerReplyError):
    """Replay memory has nothing to sample yet; retry later."""


class WrongModeError(ServerReplyError):
    pass


class ForbiddenError(ServerReplyError):
    pass


_ERROR_CLASSES = {
    ErrorCode.BACKPRESSURE: BackpressureError,
    ErrorCode.NOT_READY: NotReadyError,
    ErrorCode.WRONG_MODE: WrongModeError,
    ErrorCode.FORBIDDEN: ForbiddenError,
}


def raise_for_error(message) -> None:
    if isinstance(message, wire.Error):
        cls = _ERROR_CLASSES.get(ErrorCode(message.code), ServerReplyError)
        raise cls(message.code, message.detail)


class Connection:
    """One negotiated session over a stream socket, with latency-timed
    strict request/response."""

    def __init__(self, address: tuple[str, int], role: Role, state_dim: int,
                 action_count: int, client_id: int = 0, timeout: float = 30.0):
        self.role = Role(role)
        self.state_dim = state_dim
        self.action_count = action_count
        self.bytes_sent = 0
        self.bytes_received = 0
        self._decoder = wire.StreamDecoder()
        self._sock = socket.create_connection(address, timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        ack, _ = self.request(wire.Hello(self.role, client_id, state_dim, action_count))
        if not isinstance(ack, wire.HelloAck):
            raise ClientError(f"expected HELLO_ACK, got {type(ack).__name__}")
        self.session = ack
        self._decoder.state_dim = ack.state_dim

    @property
    def server_mode(self) -> wire.ServerMode:
        return wire.ServerMode(self.session.server_mode)

    def request(self, message) -> tuple[wire.Message, float]:
        """Send one message, wait for one reply; returns (reply, seconds from
        first byte out to reply decoded). ERROR replies raise."""
        data = wire.encode(message)
        started = time.perf_counter()
        self._sock.sendall(data)
        self.bytes_sent += len(data)
        while True:
            reply = self._decoder.next_message()
            if reply is not None:
                break
            chunk = self._sock.recv(1 << 20)
            if not chunk:
                raise ClientError("connection closed by server")
            self.bytes_received += len(chunk)
            self._decoder.feed(chunk)
        latency = time.perf_counter() - started
        raise_for_error(reply)
        return reply, latency

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class PushReport:
    count: int
    latency_s: float
    queue_depth: int
    retries: int


@dataclass(frozen=True)
class IterationReport:
    batch_size: int
    sample_latency_s: float
    train_s: float
    update_latency_s: float
    set_latency_s: float
    not_ready_retries: int
    applied: int
    stale: int
    param_version: int


class ActorClient:
    """Buffers (experience, priority) pairs and pushes one batch whenever the
    buffer reaches the actor batch size; pulls fresh parameters every
    ``n_pull`` recorded steps."""

    def __init__(self, conn: Connection, actor_batch_size: int = 200, n_pull: int = 200,
                 epsilon: float = 0.4, gate_param_pulls: bool = False,
                 seed: int | None = None):
        if actor_batch_size < 1 or n_pull < 1:
            raise ValueError("actor_batch_size and n_pull must be >= 1")
        self.conn = conn
        self.actor_batch_size = actor_batch_size
        self.n_pull = n_pull
        self.epsilon = epsilon
        self.gate_param_pulls = gate_param_pulls
        self.step_counter = 0
        self.pulls_issued = 0
        self.pushes_sent = 0
        self.experiences_recorded = 0
        self.experiences_pushed = 0
        self.cached_params: tuple[int, bytes] = (0, b"")
        self._buffer: list[tuple[Experience, float]] = []
        self._rng = np.random.default_rng(seed)

    @property
    def buffered(self) -> int:
        return len(self._buffer)

    def record(self, experience: Experience, priority: float) -> PushReport | None:
        """Buffer one step; returns a push report when this step flushed."""
        if experience.state_dim != self.conn.state_dim:
            raise ValueError(
                f"experience has state_dim {experience.state_dim}, session uses {self.conn.state_dim}")
        if experience.action >= self.conn.action_count:
            raise ValueError(f"action {experience.action} out of range")
        self._buffer.append((experience, float(priority)))
        self.step_counter += 1
        self.experiences_recorded += 1
        if len(self._buffer) >= self.actor_batch_size:
            return self.flush()
        return None

    def flush(self) -> PushReport | None:
        """Push the buffered batch now, retrying backpressure with jittered
        exponential backoff; the buffer is kept intact until the push lands."""
        if not self._buffer:
            return None
        message = wire.PushExperiences(
            tuple(exp for exp, _ in self._buffer),
            tuple(p for _, p in self._buffer),
        )
        retries = 0
        delay = BACKOFF_BASE_S
        while True:
            try:
                ack, latency = self.conn.request(message)
                break
            except BackpressureError:
                time.sleep(delay * self._rng.uniform(0.5, 1.0))
                delay = min(delay * 2.0, BACKOFF_CAP_S)
                retries += 1
        count = len(self._buffer)
        self._buffer.clear()
        self.pushes_sent += 1
        self.experiences_pushed += count
        return PushReport(count, latency, ack.queue_depth, retries)

    def maybe_pull_params(self) -> tuple[int, bytes] | None:
        """Issue a parameter pull when the step counter crosses a multiple of
        n_pull; returns the new (version, blob) when the cache advanced."""
        if self.step_counter == 0 or self.step_counter % self.n_pull != 0:
            return None
        return self.pull_params()

    def pull_params(self) -> tuple[int, bytes] | None:
        min_version = self.cached_params[0] if self.gate_param_pulls else 0
        reply, latency = self.conn.request(wire.PullParams(min_version))
        self.pulls_issued += 1
        self.last_pull_latency_s = latency
        if reply.blob and reply.param_version > self.cached_params[0]:
            self.cached_params = (reply.param_version, reply.blob)
            return self.cached_params
        return None


class LearnerClient:
    """Drives the sample -> train -> write-back-priorities -> publish-params
    loop against a mode-B server."""

    def __init__(self, conn: Connection, train_batch_size: int = 512,
                 retry_interval: float = 0.05):
        if train_batch_size < 1:
            raise ValueError("train_batch_size must be >= 1")
        self.conn = conn
        self.train_batch_size = train_batch_size
        self.retry_interval = retry_interval
        self.step_counter = 0
        self.param_version_out = 0

    def sample(self, stop=None) -> tuple[wire.SampleResp, float, int] | None:
        """Request one training batch, waiting out NOT_READY; returns
        (batch, latency of the successful request, retries). An optional
        ``stop()`` callable is polled between retries; True abandons the
        wait and returns None."""
        retries = 0
        while True:
            try:
                reply, latency = self.conn.request(wire.SampleReq(self.train_batch_size))
                return reply, latency, retries
            except NotReadyError:
                if stop is not None and stop():
                    return None
                retries += 1
                time.sleep(self.retry_interval)

    def update_priorities(self, slot_ids, priorities) -> tuple[wire.UpdateAck, float]:
        return self.conn.request(wire.UpdatePriorities(tuple(slot_ids), tuple(priorities)))

    def set_params(self, blob: bytes) -> tuple[int, float]:
        ack, latency = self.conn.request(wire.SetParams(self.param_version_out + 1, blob))
        self.param_version_out = ack.param_version
        return ack.param_version, latency

    def iteration(self, train_fn, stop=None) -> IterationReport | None:
        """One full training step.

        ``train_fn(batch: SampleResp) -> (param_blob, new_priorities)`` is
        caller-supplied; a wrong-length priority vector aborts the iteration
        before anything is sent back. Returns None only when ``stop()``
        turned true while waiting for the replay to fill.
        """
        sampled = self.sample(stop)
        if sampled is None:
            return None
        batch, sample_latency, retries = sampled
        started = time.perf_counter()
        blob, new_priorities = train_fn(batch)
        train_s = time.perf_counter() - started
        new_priorities = tuple(float(p) for p in new_priorities)
        if len(new_priorities) != len(batch.slot_ids):
            raise ValueError(
                f"train_fn returned {len(new_priorities)} priorities for "
                f"{len(batch.slot_ids)} sampled experiences")
        update_ack, update_latency = self.update_priorities(batch.slot_ids, new_priorities)
        version, set_latency = self.set_params(blob)
        self.step_counter += 1
        return IterationReport(
            batch_size=len(batch.slot_ids),
            sample_latency_s=sample_latency,
            train_s=train_s,
            update_latency_s=update_latency,
            set_latency_s=set_latency,
            not_ready_retries=retries,
            applied=update_ack.applied,
            stale=update_ack.stale,
            param_version=version,
        )


def connect(address: tuple[str, int], role: Role, state_dim: int, action_count: int,
            client_id: int = 0, timeout: float = 30.0) -> Connection:
    return Connection(address, role, state_dim, action_count, client_id, timeout)
