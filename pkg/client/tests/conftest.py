import socket
import subprocess
import sys
import time

import pytest

STATE_DIM = 8
ACTION_COUNT = 4


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture
def primary_server():
    """Spawn the server from the primary project through its CLI and wait
    until it accepts connections."""
    procs = []

    def start(mode="B", state_dim=STATE_DIM, action_count=ACTION_COUNT, capacity=256):
        port = free_port()
        proc = subprocess.Popen(
            [sys.executable, "-m", "replaynet.cli", "server",
             "--mode", mode, "--listen", f"127.0.0.1:{port}",
             "--capacity", str(capacity), "--state-dim", str(state_dim),
             "--action-count", str(action_count), "--seed", "11"],
            stdout=subprocess.DEVNULL)
        procs.append(proc)
        deadline = time.monotonic() + 10.0
        while time.monotonic() < deadline:
            try:
                with socket.create_connection(("127.0.0.1", port), timeout=0.2):
                    return "127.0.0.1", port
            except OSError:
                if proc.poll() is not None:
                    raise RuntimeError(f"server exited with {proc.returncode}")
                time.sleep(0.05)
        raise RuntimeError("server never became reachable")

    yield start
    for proc in procs:
        proc.terminate()
        proc.wait(timeout=10.0)
