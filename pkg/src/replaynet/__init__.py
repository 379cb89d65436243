"""Networked prioritized experience replay for distributed DQN training.

A replay-memory server deployable in two topologies (shared-memory staging
vs. co-located replay), actor/learner client SDKs speaking a fixed binary
wire protocol, and a latency benchmark harness plus a toy tabular task that
exercises the whole pipeline end to end.
"""

from .client import ActorClient, Connection, LearnerClient
from .core import (
    Experience,
    LearnerConfig,
    PrioritizedBatch,
    ReplayConfig,
    actor_epsilon,
    compute_priority,
    epsilon_greedy,
    q_target,
    sampling_probabilities,
)
from .protocol import ErrorCode, Role, ServerMode
from .server import ReplayServer, ServerConfig
from .sumtree import SampleResult, SumTree

__version__ = "0.1.0"

__all__ = [
    "ActorClient",
    "Connection",
    "ErrorCode",
    "Experience",
    "LearnerClient",
    "LearnerConfig",
    "PrioritizedBatch",
    "ReplayConfig",
    "ReplayServer",
    "Role",
    "SampleResult",
    "ServerConfig",
    "ServerMode",
    "SumTree",
    "actor_epsilon",
    "compute_priority",
    "epsilon_greedy",
    "q_target",
    "sampling_probabilities",
]
