"""Length-prefixed binary wire protocol spoken by actors, the learner, the
replay puller, and the server.

Every frame is a fixed 12-byte header followed by ``payload_len`` payload
bytes; all multi-byte integers are little-endian:

    magic       4s   = b"DRPL"
    version     u8   = 1
    msg_type    u8
    flags       u16  = 0 (reserved)
    payload_len u32  (hard cap 256 MiB)

Per-message payload layouts are documented bit-exactly in docs/protocol.md.
Record lengths inside batch messages are fixed by the HELLO-negotiated state
dimension, so every frame length is computable up front and a decoder can
distinguish "need more bytes" from corruption.

``encode``/``decode`` are pure and reentrant; a ``StreamDecoder`` holds the
reassembly state for one connection and is single-owner.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .core import Experience

MAGIC = b"DRPL"
VERSION = 1
HEADER_LEN = 12
MAX_PAYLOAD = 256 * 1024 * 1024

_HEADER = struct.Struct("<4sBBHI")
# Per-record fixed parts; the two float32 state vectors follow.
_PUSH_REC = struct.Struct("<dIf")  # priority, action, reward
_SAMPLE_REC = struct.Struct("<QdIf")  # slot_id, probability, action, reward
_UPDATE_REC = struct.Struct("<Qd")  # slot_id, priority

_HELLO = struct.Struct("<BIIII")
_HELLO_ACK = struct.Struct("<IBIIQdd")
_PUSH_ACK = struct.Struct("<II")
_BLOB_HEAD = struct.Struct("<QI")  # param_version, blob_len
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_UPDATE_ACK = struct.Struct("<II")
_ERROR_HEAD = struct.Struct("<H")
_COUNTER_HEAD = struct.Struct("<H")  # name length; value u64 follows the name


class MsgType(IntEnum):
    HELLO = 0x01
    HELLO_ACK = 0x02
    PUSH_EXPERIENCES = 0x10
    PUSH_ACK = 0x11
    SET_PARAMS = 0x20
    SET_ACK = 0x21
    PULL_PARAMS = 0x22
    PARAMS_BLOB = 0x23
    SAMPLE_REQ = 0x30
    SAMPLE_RESP = 0x31
    UPDATE_PRIORITIES = 0x32
    UPDATE_ACK = 0x33
    PULL_EXPERIENCES = 0x40
    EXPERIENCES_BLOB = 0x41
    STATS_REQ = 0x50
    STATS_RESP = 0x51
    ERROR = 0x7F


class Role(IntEnum):
    ACTOR = 1
    LEARNER = 2
    REPLAY_PULLER = 3


class ServerMode(IntEnum):
    A_SHARED_MEMORY = 1
    B_COLOCATED_REPLAY = 2

    @classmethod
    def from_letter(cls, letter: str) -> "ServerMode":
        try:
            return {"A": cls.A_SHARED_MEMORY, "B": cls.B_COLOCATED_REPLAY}[letter.upper()]
        except KeyError:
            raise ValueError(f"unknown server mode {letter!r}, expected A or B") from None

    @property
    def letter(self) -> str:
        return "A" if self is ServerMode.A_SHARED_MEMORY else "B"


class ErrorCode(IntEnum):
    PROTOCOL = 1
    MALFORMED = 2
    BACKPRESSURE = 3
    WRONG_MODE = 4
    NOT_READY = 5
    FORBIDDEN = 6
    INTERNAL = 7


class WireError(Exception):
    """Base class for framing and codec failures."""


class NeedMoreData(WireError):
    """Input ends mid-frame; ``needed`` more bytes complete it. Not corruption."""

    def __init__(self, needed: int):
        super().__init__(f"need {needed} more bytes")
        self.needed = needed


class ProtocolViolation(WireError):
    """Frame header is not ours: wrong magic or unsupported version."""


class MalformedFrame(WireError):
    """Header is ours but the contents contradict the declared layout."""


class EncodeError(WireError):
    """Message cannot be serialized (oversize or internally inconsistent)."""


def experience_record_size(state_dim: int) -> int:
    """Bytes per pushed experience record (priority + action + reward + 2 states)."""
    return _PUSH_REC.size + 8 * state_dim


def sample_record_size(state_dim: int) -> int:
    """Bytes per sampled record (slot id + probability + action + reward + 2 states)."""
    return _SAMPLE_REC.size + 8 * state_dim


@dataclass(frozen=True)
class Hello:
    TYPE = MsgType.HELLO
    role: int
    client_id: int
    state_dim: int
    action_count: int
    proto_flags: int = 0

    def _payload(self) -> bytes:
        return _HELLO.pack(self.role, self.client_id, self.state_dim, self.action_count, self.proto_flags)


@dataclass(frozen=True)
class HelloAck:
    """Session grant plus the negotiated config echo (dims, capacity, alpha, p_min)."""

    TYPE = MsgType.HELLO_ACK
    session_id: int
    server_mode: int
    state_dim: int
    action_count: int
    capacity: int
    alpha: float
    p_min: float

    def _payload(self) -> bytes:
        return _HELLO_ACK.pack(
            self.session_id, self.server_mode, self.state_dim,
            self.action_count, self.capacity, self.alpha, self.p_min,
        )


def _check_uniform_dim(experiences) -> None:
    dims = {exp.state_dim for exp in experiences}
    if len(dims) > 1:
        raise EncodeError(f"experiences mix state dimensions: {sorted(dims)}")


@dataclass(frozen=True)
class PushExperiences:
    TYPE = MsgType.PUSH_EXPERIENCES
    experiences: tuple[Experience, ...]
    priorities: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "experiences", tuple(self.experiences))
        object.__setattr__(self, "priorities", tuple(float(p) for p in self.priorities))
        if len(self.experiences) != len(self.priorities):
            raise EncodeError("experience/priority count mismatch")
        _check_uniform_dim(self.experiences)

    def _payload(self) -> bytes:
        return _U32.pack(len(self.experiences)) + _encode_push_records(self.experiences, self.priorities)


@dataclass(frozen=True)
class PushAck:
    TYPE = MsgType.PUSH_ACK
    accepted: int
    queue_depth: int

    def _payload(self) -> bytes:
        return _PUSH_ACK.pack(self.accepted, self.queue_depth)


@dataclass(frozen=True)
class SetParams:
    TYPE = MsgType.SET_PARAMS
    param_version: int
    blob: bytes

    def _payload(self) -> bytes:
        return _BLOB_HEAD.pack(self.param_version, len(self.blob)) + self.blob


@dataclass(frozen=True)
class SetAck:
    TYPE = MsgType.SET_ACK
    param_version: int

    def _payload(self) -> bytes:
        return _U64.pack(self.param_version)


@dataclass(frozen=True)
class PullParams:
    TYPE = MsgType.PULL_PARAMS
    min_version: int = 0  # 0 = send whatever is current

    def _payload(self) -> bytes:
        return _U64.pack(self.min_version)


@dataclass(frozen=True)
class ParamsBlob:
    """Current parameters; an empty blob with the server's version means
    "nothing newer than min_version"."""

    TYPE = MsgType.PARAMS_BLOB
    param_version: int
    blob: bytes

    def _payload(self) -> bytes:
        return _BLOB_HEAD.pack(self.param_version, len(self.blob)) + self.blob


@dataclass(frozen=True)
class SampleReq:
    TYPE = MsgType.SAMPLE_REQ
    batch_size: int

    def _payload(self) -> bytes:
        return _U32.pack(self.batch_size)


@dataclass(frozen=True)
class SampleResp:
    TYPE = MsgType.SAMPLE_RESP
    slot_ids: tuple[int, ...]
    probabilities: tuple[float, ...]
    experiences: tuple[Experience, ...]

    def __post_init__(self):
        object.__setattr__(self, "slot_ids", tuple(int(i) for i in self.slot_ids))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        object.__setattr__(self, "experiences", tuple(self.experiences))
        if not len(self.slot_ids) == len(self.probabilities) == len(self.experiences):
            raise EncodeError("sample response field lengths differ")
        _check_uniform_dim(self.experiences)

    def _payload(self) -> bytes:
        parts = [_U32.pack(len(self.experiences))]
        for slot_id, prob, exp in zip(self.slot_ids, self.probabilities, self.experiences):
            parts.append(_SAMPLE_REC.pack(slot_id, prob, exp.action, exp.reward))
            parts.append(exp.state.tobytes())
            parts.append(exp.next_state.tobytes())
        return b"".join(parts)


@dataclass(frozen=True)
class UpdatePriorities:
    TYPE = MsgType.UPDATE_PRIORITIES
    slot_ids: tuple[int, ...]
    priorities: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "slot_ids", tuple(int(i) for i in self.slot_ids))
        object.__setattr__(self, "priorities", tuple(float(p) for p in self.priorities))
        if len(self.slot_ids) != len(self.priorities):
            raise EncodeError("slot/priority count mismatch")

    def _payload(self) -> bytes:
        parts = [_U32.pack(len(self.slot_ids))]
        parts.extend(_UPDATE_REC.pack(i, p) for i, p in zip(self.slot_ids, self.priorities))
        return b"".join(parts)


@dataclass(frozen=True)
class UpdateAck:
    TYPE = MsgType.UPDATE_ACK
    applied: int
    stale: int

    def _payload(self) -> bytes:
        return _UPDATE_ACK.pack(self.applied, self.stale)


@dataclass(frozen=True)
class PullExperiences:
    TYPE = MsgType.PULL_EXPERIENCES
    max_count: int

    def _payload(self) -> bytes:
        return _U32.pack(self.max_count)


@dataclass(frozen=True)
class ExperiencesBlob:
    TYPE = MsgType.EXPERIENCES_BLOB
    experiences: tuple[Experience, ...]
    priorities: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "experiences", tuple(self.experiences))
        object.__setattr__(self, "priorities", tuple(float(p) for p in self.priorities))
        if len(self.experiences) != len(self.priorities):
            raise EncodeError("experience/priority count mismatch")
        _check_uniform_dim(self.experiences)

    def _payload(self) -> bytes:
        return _U32.pack(len(self.experiences)) + _encode_push_records(self.experiences, self.priorities)


@dataclass(frozen=True)
class StatsReq:
    TYPE = MsgType.STATS_REQ

    def _payload(self) -> bytes:
        return b""


@dataclass(frozen=True)
class StatsResp:
    """Named u64 counters, order-preserving."""

    TYPE = MsgType.STATS_RESP
    counters: tuple[tuple[str, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "counters", tuple((str(n), int(v)) for n, v in self.counters))

    def as_dict(self) -> dict[str, int]:
        return dict(self.counters)

    def _payload(self) -> bytes:
        parts = [_U32.pack(len(self.counters))]
        for name, value in self.counters:
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise EncodeError("counter name too long")
            parts.append(_COUNTER_HEAD.pack(len(raw)))
            parts.append(raw)
            parts.append(_U64.pack(value))
        return b"".join(parts)


@dataclass(frozen=True)
class Error:
    TYPE = MsgType.ERROR
    code: int
    detail: str = ""

    def _payload(self) -> bytes:
        return _ERROR_HEAD.pack(self.code) + self.detail.encode("utf-8")


Message = (
    Hello | HelloAck | PushExperiences | PushAck | SetParams | SetAck
    | PullParams | ParamsBlob | SampleReq | SampleResp | UpdatePriorities
    | UpdateAck | PullExperiences | ExperiencesBlob | StatsReq | StatsResp | Error
)


def _encode_push_records(experiences, priorities) -> bytes:
    parts = []
    for exp, priority in zip(experiences, priorities):
        parts.append(_PUSH_REC.pack(priority, exp.action, exp.reward))
        parts.append(exp.state.tobytes())
        parts.append(exp.next_state.tobytes())
    return b"".join(parts)


def encode(message: Message) -> bytes:
    """Serialize one message to a complete frame (header + payload)."""
    try:
        payload = message._payload()
    except struct.error as exc:
        raise EncodeError(f"field out of range for wire layout: {exc}") from exc
    if len(payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD} cap")
    return _HEADER.pack(MAGIC, VERSION, message.TYPE, 0, len(payload)) + payload


def decode(data, state_dim: int | None = None) -> tuple[Message, int]:
    """Decode one frame from the start of ``data``.

    Returns (message, bytes consumed). Raises NeedMoreData when the input
    ends mid-frame, ProtocolViolation on foreign bytes, MalformedFrame when
    the declared layout and the payload disagree. Batch messages need the
    negotiated ``state_dim`` to fix their record length.
    """
    n = len(data)
    if n < HEADER_LEN:
        raise NeedMoreData(HEADER_LEN - n)
    magic, version, msg_type, flags, payload_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolViolation(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolViolation(f"unsupported version {version}")
    if flags != 0:
        raise MalformedFrame(f"reserved flags set: {flags:#x}")
    if payload_len > MAX_PAYLOAD:
        raise MalformedFrame(f"payload_len {payload_len} exceeds {MAX_PAYLOAD} cap")
    end = HEADER_LEN + payload_len
    if n < end:
        raise NeedMoreData(end - n)
    payload = bytes(data[HEADER_LEN:end])
    decoder = _DECODERS.get(msg_type)
    if decoder is None:
        raise MalformedFrame(f"unknown message type {msg_type:#04x}")
    return decoder(payload, state_dim), end


def _exact(payload: bytes, size: int, what: str) -> None:
    if len(payload) != size:
        raise MalformedFrame(f"{what}: expected {size} payload bytes, got {len(payload)}")


def _decode_hello(payload, state_dim):
    _exact(payload, _HELLO.size, "HELLO")
    return Hello(*_HELLO.unpack(payload))


def _decode_hello_ack(payload, state_dim):
    _exact(payload, _HELLO_ACK.size, "HELLO_ACK")
    return HelloAck(*_HELLO_ACK.unpack(payload))


def _record_count(payload: bytes, what: str) -> int:
    if len(payload) < _U32.size:
        raise MalformedFrame(f"{what}: payload shorter than its count field")
    return _U32.unpack_from(payload)[0]


def _require_state_dim(state_dim, what: str) -> int:
    if state_dim is None:
        raise MalformedFrame(f"{what}: record decoding requires a negotiated state_dim")
    return state_dim


def _decode_push_records(payload: bytes, count: int, state_dim: int, what: str):
    rec = experience_record_size(state_dim)
    if len(payload) != _U32.size + count * rec:
        raise MalformedFrame(
            f"{what}: {count} records of {rec} bytes disagree with payload of {len(payload)}"
        )
    experiences = []
    priorities = []
    offset = _U32.size
    dim_bytes = 4 * state_dim
    for _ in range(count):
        priority, action, reward = _PUSH_REC.unpack_from(payload, offset)
        offset += _PUSH_REC.size
        state = np.frombuffer(payload, dtype="<f4", count=state_dim, offset=offset).copy()
        offset += dim_bytes
        next_state = np.frombuffer(payload, dtype="<f4", count=state_dim, offset=offset).copy()
        offset += dim_bytes
        experiences.append(Experience(state, action, reward, next_state))
        priorities.append(priority)
    return tuple(experiences), tuple(priorities)


def _decode_push(payload, state_dim):
    count = _record_count(payload, "PUSH_EXPERIENCES")
    if count == 0:
        _exact(payload, _U32.size, "PUSH_EXPERIENCES")
        return PushExperiences((), ())
    dim = _require_state_dim(state_dim, "PUSH_EXPERIENCES")
    exps, prios = _decode_push_records(payload, count, dim, "PUSH_EXPERIENCES")
    return PushExperiences(exps, prios)


def _decode_push_ack(payload, state_dim):
    _exact(payload, _PUSH_ACK.size, "PUSH_ACK")
    return PushAck(*_PUSH_ACK.unpack(payload))


def _decode_blob(payload, what: str) -> tuple[int, bytes]:
    if len(payload) < _BLOB_HEAD.size:
        raise MalformedFrame(f"{what}: payload shorter than its blob header")
    version, blob_len = _BLOB_HEAD.unpack_from(payload)
    if len(payload) != _BLOB_HEAD.size + blob_len:
        raise MalformedFrame(f"{what}: blob_len {blob_len} disagrees with payload of {len(payload)}")
    return version, payload[_BLOB_HEAD.size :]


def _decode_set_params(payload, state_dim):
    return SetParams(*_decode_blob(payload, "SET_PARAMS"))


def _decode_set_ack(payload, state_dim):
    _exact(payload, _U64.size, "SET_ACK")
    return SetAck(_U64.unpack(payload)[0])


def _decode_pull_params(payload, state_dim):
    _exact(payload, _U64.size, "PULL_PARAMS")
    return PullParams(_U64.unpack(payload)[0])


def _decode_params_blob(payload, state_dim):
    return ParamsBlob(*_decode_blob(payload, "PARAMS_BLOB"))


def _decode_sample_req(payload, state_dim):
    _exact(payload, _U32.size, "SAMPLE_REQ")
    return SampleReq(_U32.unpack(payload)[0])


def _decode_sample_resp(payload, state_dim):
    count = _record_count(payload, "SAMPLE_RESP")
    if count == 0:
        _exact(payload, _U32.size, "SAMPLE_RESP")
        return SampleResp((), (), ())
    dim = _require_state_dim(state_dim, "SAMPLE_RESP")
    rec = sample_record_size(dim)
    if len(payload) != _U32.size + count * rec:
        raise MalformedFrame(
            f"SAMPLE_RESP: {count} records of {rec} bytes disagree with payload of {len(payload)}"
        )
    slot_ids, probs, exps = [], [], []
    offset = _U32.size
    dim_bytes = 4 * dim
    for _ in range(count):
        slot_id, prob, action, reward = _SAMPLE_REC.unpack_from(payload, offset)
        offset += _SAMPLE_REC.size
        state = np.frombuffer(payload, dtype="<f4", count=dim, offset=offset).copy()
        offset += dim_bytes
        next_state = np.frombuffer(payload, dtype="<f4", count=dim, offset=offset).copy()
        offset += dim_bytes
        slot_ids.append(slot_id)
        probs.append(prob)
        exps.append(Experience(state, action, reward, next_state))
    return SampleResp(tuple(slot_ids), tuple(probs), tuple(exps))


def _decode_update(payload, state_dim):
    count = _record_count(payload, "UPDATE_PRIORITIES")
    if len(payload) != _U32.size + count * _UPDATE_REC.size:
        raise MalformedFrame(
            f"UPDATE_PRIORITIES: {count} pairs disagree with payload of {len(payload)}"
        )
    slot_ids, priorities = [], []
    offset = _U32.size
    for _ in range(count):
        slot_id, priority = _UPDATE_REC.unpack_from(payload, offset)
        offset += _UPDATE_REC.size
        slot_ids.append(slot_id)
        priorities.append(priority)
    return UpdatePriorities(tuple(slot_ids), tuple(priorities))


def _decode_update_ack(payload, state_dim):
    _exact(payload, _UPDATE_ACK.size, "UPDATE_ACK")
    return UpdateAck(*_UPDATE_ACK.unpack(payload))


def _decode_pull_experiences(payload, state_dim):
    _exact(payload, _U32.size, "PULL_EXPERIENCES")
    return PullExperiences(_U32.unpack(payload)[0])


def _decode_experiences_blob(payload, state_dim):
    count = _record_count(payload, "EXPERIENCES_BLOB")
    if count == 0:
        _exact(payload, _U32.size, "EXPERIENCES_BLOB")
        return ExperiencesBlob((), ())
    dim = _require_state_dim(state_dim, "EXPERIENCES_BLOB")
    exps, prios = _decode_push_records(payload, count, dim, "EXPERIENCES_BLOB")
    return ExperiencesBlob(exps, prios)


def _decode_stats_req(payload, state_dim):
    _exact(payload, 0, "STATS_REQ")
    return StatsReq()


def _decode_stats_resp(payload, state_dim):
    count = _record_count(payload, "STATS_RESP")
    counters = []
    offset = _U32.size
    for _ in range(count):
        if len(payload) < offset + _COUNTER_HEAD.size:
            raise MalformedFrame("STATS_RESP: truncated counter entry")
        (name_len,) = _COUNTER_HEAD.unpack_from(payload, offset)
        offset += _COUNTER_HEAD.size
        if len(payload) < offset + name_len + _U64.size:
            raise MalformedFrame("STATS_RESP: truncated counter entry")
        name = payload[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (value,) = _U64.unpack_from(payload, offset)
        offset += _U64.size
        counters.append((name, value))
    if offset != len(payload):
        raise MalformedFrame("STATS_RESP: trailing bytes after last counter")
    return StatsResp(tuple(counters))


def _decode_error(payload, state_dim):
    if len(payload) < _ERROR_HEAD.size:
        raise MalformedFrame("ERROR: payload shorter than its code field")
    (code,) = _ERROR_HEAD.unpack_from(payload)
    try:
        detail = payload[_ERROR_HEAD.size :].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFrame("ERROR: detail is not valid UTF-8") from exc
    return Error(code, detail)


_DECODERS = {
    MsgType.HELLO: _decode_hello,
    MsgType.HELLO_ACK: _decode_hello_ack,
    MsgType.PUSH_EXPERIENCES: _decode_push,
    MsgType.PUSH_ACK: _decode_push_ack,
    MsgType.SET_PARAMS: _decode_set_params,
    MsgType.SET_ACK: _decode_set_ack,
    MsgType.PULL_PARAMS: _decode_pull_params,
    MsgType.PARAMS_BLOB: _decode_params_blob,
    MsgType.SAMPLE_REQ: _decode_sample_req,
    MsgType.SAMPLE_RESP: _decode_sample_resp,
    MsgType.UPDATE_PRIORITIES: _decode_update,
    MsgType.UPDATE_ACK: _decode_update_ack,
    MsgType.PULL_EXPERIENCES: _decode_pull_experiences,
    MsgType.EXPERIENCES_BLOB: _decode_experiences_blob,
    MsgType.STATS_REQ: _decode_stats_req,
    MsgType.STATS_RESP: _decode_stats_resp,
    MsgType.ERROR: _decode_error,
}


class StreamDecoder:
    """Incremental frame reassembly for one connection (single-owner).

    Feed raw socket bytes in any chunking; complete messages come out in
    order. ``state_dim`` starts unset and is assigned once HELLO negotiation
    fixes the record layout.
    """

    def __init__(self, state_dim: int | None = None):
        self.state_dim = state_dim
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf += data

    def next_message(self) -> Message | None:
        """Return the next complete message, or None until more bytes arrive."""
        try:
            message, consumed = decode(self._buf, self.state_dim)
        except NeedMoreData:
            return None
        del self._buf[:consumed]
        return message

    def pending_bytes(self) -> int:
        return len(self._buf)
