"""Standard-library codec for the replay-memory wire protocol.

Implements the byte layout documented in docs/protocol.md of the server
project: a 12-byte little-endian frame header (magic "DRPL", version 1,
message type, reserved flags, payload length) followed by the payload.
Messages are plain ``(type_name, fields dict)`` pairs; experience state
vectors are lists of floats, blobs are ``bytes``.
"""

from __future__ import annotations

import struct

MAGIC = b"DRPL"
VERSION = 1
HEADER_LEN = 12
MAX_PAYLOAD = 256 * 1024 * 1024

_HEADER = struct.Struct("<4sBBHI")
_PUSH_REC = struct.Struct("<dIf")
_SAMPLE_REC = struct.Struct("<QdIf")
_UPDATE_REC = struct.Struct("<Qd")
_HELLO = struct.Struct("<BIIII")
_HELLO_ACK = struct.Struct("<IBIIQdd")
_TWO_U32 = struct.Struct("<II")
_BLOB_HEAD = struct.Struct("<QI")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_U16 = struct.Struct("<H")

TYPE_CODES = {
    "HELLO": 0x01,
    "HELLO_ACK": 0x02,
    "PUSH_EXPERIENCES": 0x10,
    "PUSH_ACK": 0x11,
    "SET_PARAMS": 0x20,
    "SET_ACK": 0x21,
    "PULL_PARAMS": 0x22,
    "PARAMS_BLOB": 0x23,
    "SAMPLE_REQ": 0x30,
    "SAMPLE_RESP": 0x31,
    "UPDATE_PRIORITIES": 0x32,
    "UPDATE_ACK": 0x33,
    "PULL_EXPERIENCES": 0x40,
    "EXPERIENCES_BLOB": 0x41,
    "STATS_REQ": 0x50,
    "STATS_RESP": 0x51,
    "ERROR": 0x7F,
}
TYPE_NAMES = {code: name for name, code in TYPE_CODES.items()}

ERROR_NAMES = {1: "PROTOCOL", 2: "MALFORMED", 3: "BACKPRESSURE", 4: "WRONG_MODE",
               5: "NOT_READY", 6: "FORBIDDEN", 7: "INTERNAL"}


class ProtocolError(Exception):
    """Framing or layout violation."""


class NeedMoreData(Exception):
    """Input ends mid-frame; ``needed`` more bytes complete it."""

    def __init__(self, needed: int):
        super().__init__(f"need {needed} more bytes")
        self.needed = needed


def _pack_f32(values) -> bytes:
    return struct.pack(f"<{len(values)}f", *values)


def _unpack_f32(payload: bytes, offset: int, count: int) -> list[float]:
    return list(struct.unpack_from(f"<{count}f", payload, offset))


def _push_records(fields) -> bytes:
    experiences = fields["experiences"]
    priorities = fields["priorities"]
    if len(experiences) != len(priorities):
        raise ValueError("experience/priority count mismatch")
    parts = [_U32.pack(len(experiences))]
    for exp, priority in zip(experiences, priorities):
        parts.append(_PUSH_REC.pack(priority, exp["action"], exp["reward"]))
        parts.append(_pack_f32(exp["state"]))
        parts.append(_pack_f32(exp["next_state"]))
    return b"".join(parts)


def _decode_push_records(payload, state_dim, what):
    (count,) = _U32.unpack_from(payload)
    if count == 0:
        if len(payload) != _U32.size:
            raise ProtocolError(f"{what}: trailing bytes after empty batch")
        return {"experiences": [], "priorities": []}
    if state_dim is None:
        raise ProtocolError(f"{what}: record decoding requires state_dim")
    record = _PUSH_REC.size + 8 * state_dim
    if len(payload) != _U32.size + count * record:
        raise ProtocolError(f"{what}: payload disagrees with {count} records")
    experiences, priorities = [], []
    offset = _U32.size
    for _ in range(count):
        priority, action, reward = _PUSH_REC.unpack_from(payload, offset)
        offset += _PUSH_REC.size
        state = _unpack_f32(payload, offset, state_dim)
        offset += 4 * state_dim
        next_state = _unpack_f32(payload, offset, state_dim)
        offset += 4 * state_dim
        experiences.append({"state": state, "action": action, "reward": reward,
                            "next_state": next_state})
        priorities.append(priority)
    return {"experiences": experiences, "priorities": priorities}


def _blob_payload(fields) -> bytes:
    blob = fields["blob"]
    return _BLOB_HEAD.pack(fields["param_version"], len(blob)) + blob


def _decode_blob(payload, what):
    version, blob_len = _BLOB_HEAD.unpack_from(payload)
    if len(payload) != _BLOB_HEAD.size + blob_len:
        raise ProtocolError(f"{what}: blob_len disagrees with payload")
    return {"param_version": version, "blob": payload[_BLOB_HEAD.size:]}


def _encode_payload(type_name: str, fields: dict) -> bytes:
    if type_name == "HELLO":
        return _HELLO.pack(fields["role"], fields["client_id"], fields["state_dim"],
                           fields["action_count"], fields.get("proto_flags", 0))
    if type_name == "HELLO_ACK":
        return _HELLO_ACK.pack(fields["session_id"], fields["server_mode"],
                               fields["state_dim"], fields["action_count"],
                               fields["capacity"], fields["alpha"], fields["p_min"])
    if type_name in ("PUSH_EXPERIENCES", "EXPERIENCES_BLOB"):
        return _push_records(fields)
    if type_name == "PUSH_ACK":
        return _TWO_U32.pack(fields["accepted"], fields["queue_depth"])
    if type_name in ("SET_PARAMS", "PARAMS_BLOB"):
        return _blob_payload(fields)
    if type_name == "SET_ACK":
        return _U64.pack(fields["param_version"])
    if type_name == "PULL_PARAMS":
        return _U64.pack(fields.get("min_version", 0))
    if type_name == "SAMPLE_REQ":
        return _U32.pack(fields["batch_size"])
    if type_name == "SAMPLE_RESP":
        ids, probs = fields["slot_ids"], fields["probabilities"]
        experiences = fields["experiences"]
        parts = [_U32.pack(len(ids))]
        for slot_id, prob, exp in zip(ids, probs, experiences):
            parts.append(_SAMPLE_REC.pack(slot_id, prob, exp["action"], exp["reward"]))
            parts.append(_pack_f32(exp["state"]))
            parts.append(_pack_f32(exp["next_state"]))
        return b"".join(parts)
    if type_name == "UPDATE_PRIORITIES":
        ids, priorities = fields["slot_ids"], fields["priorities"]
        parts = [_U32.pack(len(ids))]
        parts.extend(_UPDATE_REC.pack(i, p) for i, p in zip(ids, priorities))
        return b"".join(parts)
    if type_name == "UPDATE_ACK":
        return _TWO_U32.pack(fields["applied"], fields["stale"])
    if type_name == "PULL_EXPERIENCES":
        return _U32.pack(fields["max_count"])
    if type_name == "STATS_REQ":
        return b""
    if type_name == "STATS_RESP":
        parts = [_U32.pack(len(fields["counters"]))]
        for name, value in fields["counters"]:
            raw = name.encode("utf-8")
            parts.append(_U16.pack(len(raw)))
            parts.append(raw)
            parts.append(_U64.pack(value))
        return b"".join(parts)
    if type_name == "ERROR":
        return _U16.pack(fields["code"]) + fields.get("detail", "").encode("utf-8")
    raise ValueError(f"unknown message type {type_name!r}")


def encode_message(type_name: str, fields: dict) -> bytes:
    """Serialize (type, fields) to a complete frame."""
    payload = _encode_payload(type_name, fields)
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError("payload exceeds the frame size cap")
    return _HEADER.pack(MAGIC, VERSION, TYPE_CODES[type_name], 0, len(payload)) + payload


def _decode_payload(type_name: str, payload: bytes, state_dim):
    if type_name == "HELLO":
        keys = ("role", "client_id", "state_dim", "action_count", "proto_flags")
        return dict(zip(keys, _HELLO.unpack(payload)))
    if type_name == "HELLO_ACK":
        keys = ("session_id", "server_mode", "state_dim", "action_count",
                "capacity", "alpha", "p_min")
        return dict(zip(keys, _HELLO_ACK.unpack(payload)))
    if type_name in ("PUSH_EXPERIENCES", "EXPERIENCES_BLOB"):
        return _decode_push_records(payload, state_dim, type_name)
    if type_name == "PUSH_ACK":
        return dict(zip(("accepted", "queue_depth"), _TWO_U32.unpack(payload)))
    if type_name in ("SET_PARAMS", "PARAMS_BLOB"):
        return _decode_blob(payload, type_name)
    if type_name == "SET_ACK":
        return {"param_version": _U64.unpack(payload)[0]}
    if type_name == "PULL_PARAMS":
        return {"min_version": _U64.unpack(payload)[0]}
    if type_name == "SAMPLE_REQ":
        return {"batch_size": _U32.unpack(payload)[0]}
    if type_name == "SAMPLE_RESP":
        (count,) = _U32.unpack_from(payload)
        if count == 0:
            return {"slot_ids": [], "probabilities": [], "experiences": []}
        if state_dim is None:
            raise ProtocolError("SAMPLE_RESP: record decoding requires state_dim")
        record = _SAMPLE_REC.size + 8 * state_dim
        if len(payload) != _U32.size + count * record:
            raise ProtocolError(f"SAMPLE_RESP: payload disagrees with {count} records")
        ids, probs, experiences = [], [], []
        offset = _U32.size
        for _ in range(count):
            slot_id, prob, action, reward = _SAMPLE_REC.unpack_from(payload, offset)
            offset += _SAMPLE_REC.size
            state = _unpack_f32(payload, offset, state_dim)
            offset += 4 * state_dim
            next_state = _unpack_f32(payload, offset, state_dim)
            offset += 4 * state_dim
            ids.append(slot_id)
            probs.append(prob)
            experiences.append({"state": state, "action": action, "reward": reward,
                                "next_state": next_state})
        return {"slot_ids": ids, "probabilities": probs, "experiences": experiences}
    if type_name == "UPDATE_PRIORITIES":
        (count,) = _U32.unpack_from(payload)
        if len(payload) != _U32.size + count * _UPDATE_REC.size:
            raise ProtocolError("UPDATE_PRIORITIES: payload disagrees with count")
        ids, priorities = [], []
        offset = _U32.size
        for _ in range(count):
            slot_id, priority = _UPDATE_REC.unpack_from(payload, offset)
            offset += _UPDATE_REC.size
            ids.append(slot_id)
            priorities.append(priority)
        return {"slot_ids": ids, "priorities": priorities}
    if type_name == "UPDATE_ACK":
        return dict(zip(("applied", "stale"), _TWO_U32.unpack(payload)))
    if type_name == "PULL_EXPERIENCES":
        return {"max_count": _U32.unpack(payload)[0]}
    if type_name == "STATS_REQ":
        if payload:
            raise ProtocolError("STATS_REQ carries no payload")
        return {}
    if type_name == "STATS_RESP":
        (count,) = _U32.unpack_from(payload)
        counters = []
        offset = _U32.size
        for _ in range(count):
            (name_len,) = _U16.unpack_from(payload, offset)
            offset += _U16.size
            name = payload[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (value,) = _U64.unpack_from(payload, offset)
            offset += _U64.size
            counters.append([name, value])
        if offset != len(payload):
            raise ProtocolError("STATS_RESP: trailing bytes")
        return {"counters": counters}
    if type_name == "ERROR":
        (code,) = _U16.unpack_from(payload)
        return {"code": code, "detail": payload[_U16.size:].decode("utf-8")}
    raise ProtocolError(f"unknown message type {type_name!r}")


def decode_frame(data, state_dim: int | None = None):
    """Decode one frame from the start of ``data``.

    Returns (type_name, fields, bytes consumed); raises NeedMoreData on a
    partial frame and ProtocolError on anything inconsistent.
    """
    if len(data) < HEADER_LEN:
        raise NeedMoreData(HEADER_LEN - len(data))
    magic, version, type_code, flags, payload_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if flags != 0:
        raise ProtocolError("reserved flags set")
    if payload_len > MAX_PAYLOAD:
        raise ProtocolError("declared payload exceeds the frame size cap")
    end = HEADER_LEN + payload_len
    if len(data) < end:
        raise NeedMoreData(end - len(data))
    type_name = TYPE_NAMES.get(type_code)
    if type_name is None:
        raise ProtocolError(f"unknown message type {type_code:#04x}")
    try:
        fields = _decode_payload(type_name, bytes(data[HEADER_LEN:end]), state_dim)
    except struct.error as exc:
        raise ProtocolError(f"{type_name}: {exc}") from exc
    return type_name, fields, end
