"""Socket sessions against a replay-memory server: actor side pushes
prioritized experience batches, learner side samples, writes back
priorities, and publishes parameter blobs. One session per thread.
"""

from __future__ import annotations

import socket
from collections import namedtuple

from .protocol import ERROR_NAMES, NeedMoreData, decode_frame, encode_message

ROLE_ACTOR = 1
ROLE_LEARNER = 2
ROLE_REPLAY_PULLER = 3

Transition = namedtuple("Transition", ["state", "action", "reward", "next_state"])


class SessionError(Exception):
    pass


class ServerError(SessionError):
    """The server answered with an ERROR frame."""

    def __init__(self, code: int, detail: str):
        super().__init__(f"server error {ERROR_NAMES.get(code, code)}: {detail}")
        self.code = code
        self.code_name = ERROR_NAMES.get(code, str(code))
        self.detail = detail


class NotReadyError(ServerError):
    """Replay memory has nothing to sample yet; safe to retry."""


class BackpressureError(ServerError):
    """Ingress queue full; retry the same push after a short backoff."""


def _error_for(fields) -> ServerError:
    code, detail = fields["code"], fields["detail"]
    if code == 5:
        return NotReadyError(code, detail)
    if code == 3:
        return BackpressureError(code, detail)
    return ServerError(code, detail)


class Session:
    """One negotiated connection; strict request/response."""

    role = ROLE_LEARNER

    def __init__(self, host: str, port: int, state_dim: int, action_count: int,
                 client_id: int = 0, timeout: float = 30.0):
        self.state_dim = state_dim
        self.action_count = action_count
        self._buf = bytearray()
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        kind, ack = self.request("HELLO", {
            "role": self.role, "client_id": client_id,
            "state_dim": state_dim, "action_count": action_count, "proto_flags": 0,
        })
        if kind != "HELLO_ACK":
            raise SessionError(f"expected HELLO_ACK, got {kind}")
        self.session_id = ack["session_id"]
        self.server_mode = ack["server_mode"]
        self.negotiated = ack

    def request(self, type_name: str, fields: dict) -> tuple[str, dict]:
        self._sock.sendall(encode_message(type_name, fields))
        while True:
            try:
                kind, reply, consumed = decode_frame(self._buf, self.state_dim)
            except NeedMoreData:
                chunk = self._sock.recv(1 << 20)
                if not chunk:
                    raise SessionError("connection closed by server") from None
                self._buf += chunk
                continue
            del self._buf[:consumed]
            if kind == "ERROR":
                raise _error_for(reply)
            return kind, reply

    def pull_params(self, min_version: int = 0) -> tuple[int, bytes]:
        _, reply = self.request("PULL_PARAMS", {"min_version": min_version})
        return reply["param_version"], reply["blob"]

    def stats(self) -> dict[str, int]:
        _, reply = self.request("STATS_REQ", {})
        return dict(map(tuple, reply["counters"]))

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class PyActorSession(Session):
    role = ROLE_ACTOR

    def push_experiences(self, states, actions, rewards, next_states, priorities) -> int:
        """Send one batch; returns the accepted count. All five sequences must
        agree in length and every state must match the negotiated dimension
        (checked locally before anything is sent)."""
        n = len(states)
        if not n == len(actions) == len(rewards) == len(next_states) == len(priorities):
            raise ValueError("batch sequences differ in length")
        experiences = []
        for state, action, reward, next_state in zip(states, actions, rewards, next_states):
            if len(state) != self.state_dim or len(next_state) != self.state_dim:
                raise ValueError(f"state length must be {self.state_dim}")
            if not 0 <= int(action) < self.action_count:
                raise ValueError(f"action {action} out of range")
            experiences.append({"state": list(state), "action": int(action),
                                "reward": float(reward), "next_state": list(next_state)})
        _, ack = self.request("PUSH_EXPERIENCES", {
            "experiences": experiences, "priorities": [float(p) for p in priorities]})
        return ack["accepted"]


class PyLearnerSession(Session):
    role = ROLE_LEARNER

    def sample(self, batch_size: int):
        """Returns (slot_ids, probabilities, transitions); raises NotReadyError
        while the replay memory is still empty."""
        _, reply = self.request("SAMPLE_REQ", {"batch_size": batch_size})
        transitions = [Transition(e["state"], e["action"], e["reward"], e["next_state"])
                       for e in reply["experiences"]]
        return reply["slot_ids"], reply["probabilities"], transitions

    def update_priorities(self, slot_ids, priorities) -> tuple[int, int]:
        _, ack = self.request("UPDATE_PRIORITIES", {
            "slot_ids": [int(i) for i in slot_ids],
            "priorities": [float(p) for p in priorities]})
        return ack["applied"], ack["stale"]

    def set_params(self, blob: bytes) -> int:
        _, ack = self.request("SET_PARAMS", {"param_version": 0, "blob": bytes(blob)})
        return ack["param_version"]
