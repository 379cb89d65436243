"""Standalone client for the replay-memory wire protocol, standard library only."""

from .protocol import NeedMoreData, ProtocolError, decode_frame, encode_message
from .session import (
    BackpressureError,
    NotReadyError,
    PyActorSession,
    PyLearnerSession,
    ServerError,
    Session,
    SessionError,
    Transition,
)

__version__ = "0.1.0"

__all__ = [
    "BackpressureError",
    "NeedMoreData",
    "NotReadyError",
    "ProtocolError",
    "PyActorSession",
    "PyLearnerSession",
    "ServerError",
    "Session",
    "SessionError",
    "Transition",
    "decode_frame",
    "encode_message",
]
