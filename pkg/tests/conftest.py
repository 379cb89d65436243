import numpy as np
import pytest

from replaynet.core import Experience
from replaynet.protocol import ServerMode
from replaynet.server import ReplayServer, ServerConfig

STATE_DIM = 8
ACTION_COUNT = 4


def make_experience(rng: np.random.Generator, state_dim: int = STATE_DIM,
                    action_count: int = ACTION_COUNT) -> Experience:
    return Experience(
        rng.random(state_dim, dtype=np.float32),
        int(rng.integers(action_count)),
        float(rng.random(dtype=np.float32)),
        rng.random(state_dim, dtype=np.float32),
    )


@pytest.fixture
def server_factory():
    """Start in-process servers on ephemeral loopback ports; all stopped at teardown."""
    servers = []

    def start(mode=ServerMode.B_COLOCATED_REPLAY, **overrides) -> ReplayServer:
        settings = dict(mode=mode, state_dim=STATE_DIM, action_count=ACTION_COUNT,
                        capacity=256, seed=7)
        settings.update(overrides)
        server = ReplayServer(ServerConfig(**settings)).start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()
