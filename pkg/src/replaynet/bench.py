"""Latency/throughput benchmark harness.

Synthetic actors push correctly-sized random experience batches while a
synthetic learner loops sample -> dummy train -> write-back -> publish; no
model runs anywhere, so the measured time is the network path. In mode A a
replay puller drains the staged queue over the network into a learner-side
replay tree; in mode B the server samples in place. Per-phase wall time is
instrumented so execution-time breakdowns and actor-count sweeps export to
CSV (one row per metric and actor count).
"""

from __future__ import annotations

import csv
import io
import queue
import socket
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import protocol as wire
from .client import ActorClient, Connection, LearnerClient
from .core import Experience
from .protocol import Role, ServerMode
from .server import ReplayServer, ServerConfig
from .stats import latency_summary
from .sumtree import SumTree

DEFAULT_SWEEP = (1, 2, 4, 8)
SMALL_STATE_DIM = 64


@dataclass
class BenchConfig:
    mode: ServerMode = ServerMode.B_COLOCATED_REPLAY
    actor_count: int = 1
    state_dim: int = 28224  # 4 stacked 84x84 frames
    action_count: int = 4
    actor_batch_size: int = 200
    train_batch_size: int = 512
    replay_capacity: int = 65536
    param_blob_bytes: int = 13 * 2**20
    n_pull: int = 200
    alpha: float = 0.6
    p_min: float = 1e-6
    queue_batches: int = 64
    seed: int = 42
    duration_s: float | None = 3.0
    pushes_per_actor: int | None = None  # overrides duration_s when set
    actor_compute_s: float = 0.0  # injected per-push think time
    learner_compute_s: float = 0.0  # injected train time per iteration
    learner_enabled: bool = True
    pull_interval_s: float = 0.1  # mode-A drain cadence
    server_address: tuple[str, int] | None = None  # None spawns a server
    spawn: str = "inprocess"  # "inprocess" | "subprocess"

    def __post_init__(self):
        if self.actor_count < 1:
            raise ValueError("actor_count must be >= 1")
        if self.duration_s is None and self.pushes_per_actor is None:
            raise ValueError("need a duration_s or pushes_per_actor budget")
        if self.spawn not in ("inprocess", "subprocess"):
            raise ValueError(f"unknown spawn mode {self.spawn!r}")


@dataclass
class ActorResult:
    index: int
    pushes: int = 0
    experiences: int = 0
    retries: int = 0
    push_latencies: list = field(default_factory=list)
    pull_latencies: list = field(default_factory=list)
    compute_s: float = 0.0
    push_wait_s: float = 0.0
    pull_wait_s: float = 0.0
    wall_s: float = 0.0
    bytes_sent: int = 0
    bytes_received: int = 0

    def push_latency_stats(self) -> dict[str, float]:
        return latency_summary(self.push_latencies)


@dataclass
class LearnerResult:
    iterations: int = 0
    sample_latencies: list = field(default_factory=list)
    update_latencies: list = field(default_factory=list)
    set_latencies: list = field(default_factory=list)
    compute_s: float = 0.0
    sample_wait_s: float = 0.0
    writeback_wait_s: float = 0.0
    wall_s: float = 0.0
    bytes_sent: int = 0
    bytes_received: int = 0


@dataclass
class PullerResult:
    pulls: int = 0
    experiences_drained: int = 0
    pull_latencies: list = field(default_factory=list)
    wall_s: float = 0.0
    bytes_sent: int = 0
    bytes_received: int = 0


@dataclass
class BenchReport:
    mode: ServerMode
    actor_count: int
    state_dim: int
    wall_s: float
    actors: list[ActorResult]
    learner: LearnerResult | None
    puller: PullerResult | None
    server_stats: dict[str, int]

    def metrics(self) -> dict[str, float]:
        pooled_push = [lat for a in self.actors for lat in a.push_latencies]
        pooled_pull = [lat for a in self.actors for lat in a.pull_latencies]
        total_experiences = sum(a.experiences for a in self.actors)
        push = latency_summary(pooled_push)
        out = {
            "actor_push_latency_mean_s": push["mean"],
            "actor_push_latency_p50_s": push["p50"],
            "actor_push_latency_p99_s": push["p99"],
            "actor_pull_latency_mean_s": latency_summary(pooled_pull)["mean"],
            "push_throughput_exp_per_s": total_experiences / self.wall_s if self.wall_s else 0.0,
            "experiences_pushed_total": float(total_experiences),
            "actor_bytes_sent": float(sum(a.bytes_sent for a in self.actors)),
            "actor_bytes_received": float(sum(a.bytes_received for a in self.actors)),
            "server_bytes_in": float(self.server_stats.get("bytes_in", 0)),
            "server_bytes_out": float(self.server_stats.get("bytes_out", 0)),
        }
        if self.learner is not None:
            out.update({
                "learner_sample_latency_mean_s": latency_summary(self.learner.sample_latencies)["mean"],
                "learner_set_latency_mean_s": latency_summary(self.learner.set_latencies)["mean"],
                "learner_iterations": float(self.learner.iterations),
                "learner_bytes_sent": float(self.learner.bytes_sent),
                "learner_bytes_received": float(self.learner.bytes_received),
            })
        if self.puller is not None:
            out.update({
                "puller_pull_latency_mean_s": latency_summary(self.puller.pull_latencies)["mean"],
                "experiences_pulled_per_s": (
                    self.puller.experiences_drained / self.puller.wall_s
                    if self.puller.wall_s else 0.0),
                "puller_bytes_received": float(self.puller.bytes_received),
            })
        return out

    def breakdown_rows(self) -> list[tuple[int, str, str, float]]:
        """(actor_count, role, phase, seconds) rows; three phases per role."""
        rows = [
            (self.actor_count, "actor", "compute", sum(a.compute_s for a in self.actors)),
            (self.actor_count, "actor", "push", sum(a.push_wait_s for a in self.actors)),
            (self.actor_count, "actor", "pull", sum(a.pull_wait_s for a in self.actors)),
        ]
        if self.learner is not None:
            rows += [
                (self.actor_count, "learner", "compute", self.learner.compute_s),
                (self.actor_count, "learner", "sample", self.learner.sample_wait_s),
                (self.actor_count, "learner", "set", self.learner.writeback_wait_s),
            ]
        return rows


def _random_experience(rng: np.random.Generator, state_dim: int, action_count: int) -> Experience:
    return Experience(
        rng.random(state_dim, dtype=np.float32),
        int(rng.integers(action_count)),
        float(rng.random(dtype=np.float32)),
        rng.random(state_dim, dtype=np.float32),
    )


def _actor_loop(config: BenchConfig, address, index: int, seed_seq,
                stop: threading.Event, start: threading.Barrier, result: ActorResult):
    rng = np.random.default_rng(seed_seq)
    conn = Connection(address, Role.ACTOR, config.state_dim, config.action_count,
                      client_id=index)
    actor = ActorClient(conn, actor_batch_size=config.actor_batch_size,
                        n_pull=config.n_pull, seed=int(rng.integers(2**31)))
    # Pre-generate one batch worth of random experiences and cycle it: the
    # synthetic workload is pure I/O so latency measurements isolate the
    # network path instead of the generator.
    pool = [_random_experience(rng, config.state_dim, config.action_count)
            for _ in range(config.actor_batch_size)]
    pool_priorities = rng.uniform(config.p_min, 1.0, size=config.actor_batch_size)
    cursor = 0
    try:
        start.wait()
        begin = time.perf_counter()
        deadline = None if config.duration_s is None else begin + config.duration_s
        while not stop.is_set():
            if config.pushes_per_actor is not None:
                if result.pushes >= config.pushes_per_actor:
                    break
            elif time.perf_counter() >= deadline:
                break

            t0 = time.perf_counter()
            experience = pool[cursor]
            priority = float(pool_priorities[cursor])
            cursor = (cursor + 1) % config.actor_batch_size
            result.compute_s += time.perf_counter() - t0

            t0 = time.perf_counter()
            report = actor.record(experience, priority)
            if report is not None:
                result.push_wait_s += time.perf_counter() - t0
                result.pushes += 1
                result.experiences += report.count
                result.retries += report.retries
                result.push_latencies.append(report.latency_s)
                if config.actor_compute_s:
                    t1 = time.perf_counter()
                    time.sleep(config.actor_compute_s)
                    result.compute_s += time.perf_counter() - t1

            before = actor.pulls_issued
            t0 = time.perf_counter()
            actor.maybe_pull_params()
            if actor.pulls_issued > before:
                result.pull_wait_s += time.perf_counter() - t0
                result.pull_latencies.append(actor.last_pull_latency_s)
        result.wall_s = time.perf_counter() - begin
        result.bytes_sent = conn.bytes_sent
        result.bytes_received = conn.bytes_received
    except Exception:
        start.abort()
        if not stop.is_set():
            raise
    finally:
        conn.close()


def _learner_loop_mode_b(config: BenchConfig, address, stop: threading.Event,
                         start: threading.Barrier, result: LearnerResult):
    conn = Connection(address, Role.LEARNER, config.state_dim, config.action_count)
    learner = LearnerClient(conn, train_batch_size=config.train_batch_size,
                            retry_interval=0.02)
    rng = np.random.default_rng(config.seed)
    blob = rng.integers(0, 256, config.param_blob_bytes, dtype=np.uint8).tobytes()

    def train_fn(batch):
        if config.learner_compute_s:
            time.sleep(config.learner_compute_s)
        return blob, rng.uniform(config.p_min, 1.0, size=len(batch.slot_ids))

    try:
        start.wait()
        begin = time.perf_counter()
        while not stop.is_set():
            t0 = time.perf_counter()
            report = learner.iteration(train_fn, stop=stop.is_set)
            if report is None:
                break
            iter_wall = time.perf_counter() - t0
            result.iterations += 1
            result.sample_latencies.append(report.sample_latency_s)
            result.update_latencies.append(report.update_latency_s)
            result.set_latencies.append(report.set_latency_s)
            result.compute_s += report.train_s
            result.writeback_wait_s += report.update_latency_s + report.set_latency_s
            # Everything else in the iteration was spent acquiring the batch
            # (including any empty-replay retries).
            result.sample_wait_s += max(
                iter_wall - report.train_s - report.update_latency_s - report.set_latency_s, 0.0)
        result.wall_s = time.perf_counter() - begin
        result.bytes_sent = conn.bytes_sent
        result.bytes_received = conn.bytes_received
    except Exception:
        start.abort()
        if not stop.is_set():
            raise
    finally:
        conn.close()


def _puller_loop_mode_a(config: BenchConfig, address, stop: threading.Event,
                        start: threading.Barrier, local: queue.Queue,
                        result: PullerResult):
    conn = Connection(address, Role.REPLAY_PULLER, config.state_dim, config.action_count)
    try:
        start.wait()
        begin = time.perf_counter()
        while not stop.is_set():
            time.sleep(config.pull_interval_s)
            blob_msg, latency = conn.request(wire.PullExperiences(1_000_000))
            result.pulls += 1
            result.pull_latencies.append(latency)
            if blob_msg.experiences:
                result.experiences_drained += len(blob_msg.experiences)
                local.put((blob_msg.experiences, blob_msg.priorities))
        result.wall_s = time.perf_counter() - begin
        result.bytes_sent = conn.bytes_sent
        result.bytes_received = conn.bytes_received
    except Exception:
        start.abort()
        if not stop.is_set():
            raise
    finally:
        conn.close()


def _learner_loop_mode_a(config: BenchConfig, address, stop: threading.Event,
                         start: threading.Barrier, local: queue.Queue,
                         result: LearnerResult):
    """Learner-side replay: ingest drained batches into a local tree, sample
    locally, publish parameters over the network."""
    conn = Connection(address, Role.LEARNER, config.state_dim, config.action_count)
    rng = np.random.default_rng(config.seed)
    tree = SumTree(config.replay_capacity, config.p_min, config.alpha)
    blob = rng.integers(0, 256, config.param_blob_bytes, dtype=np.uint8).tobytes()
    try:
        start.wait()
        begin = time.perf_counter()
        while not stop.is_set():
            while True:
                try:
                    experiences, priorities = local.get_nowait()
                except queue.Empty:
                    break
                for exp, priority in zip(experiences, priorities):
                    tree.insert(exp, priority)
            if tree.live_count == 0:
                time.sleep(0.02)
                continue
            t0 = time.perf_counter()
            batch = tree.sample_batch(config.train_batch_size, rng)
            sample_s = time.perf_counter() - t0
            result.sample_latencies.append(sample_s)
            result.sample_wait_s += sample_s

            t0 = time.perf_counter()
            if config.learner_compute_s:
                time.sleep(config.learner_compute_s)
            new_priorities = rng.uniform(config.p_min, 1.0, size=len(batch))
            result.compute_s += time.perf_counter() - t0

            t0 = time.perf_counter()
            for slot, priority in zip(batch.slot_ids, new_priorities):
                tree.update_priority(int(slot), float(priority))
            _, set_latency = conn.request(wire.SetParams(0, blob))
            result.set_latencies.append(set_latency)
            result.writeback_wait_s += time.perf_counter() - t0
            result.iterations += 1
        result.wall_s = time.perf_counter() - begin
        result.bytes_sent = conn.bytes_sent
        result.bytes_received = conn.bytes_received
    except Exception:
        start.abort()
        if not stop.is_set():
            raise
    finally:
        conn.close()


# -- server plumbing --------------------------------------------------------


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def _server_config(config: BenchConfig, port: int = 0) -> ServerConfig:
    return ServerConfig(
        mode=config.mode,
        port=port,
        capacity=config.replay_capacity,
        alpha=config.alpha,
        p_min=config.p_min,
        queue_batches=config.queue_batches,
        state_dim=config.state_dim,
        action_count=config.action_count,
        seed=config.seed,
    )


def spawn_server_subprocess(config: BenchConfig) -> tuple[subprocess.Popen, tuple[str, int]]:
    port = free_port()
    cmd = [
        sys.executable, "-m", "replaynet.cli", "server",
        "--mode", config.mode.letter,
        "--listen", f"127.0.0.1:{port}",
        "--capacity", str(config.replay_capacity),
        "--alpha", str(config.alpha),
        "--queue-batches", str(config.queue_batches),
        "--state-dim", str(config.state_dim),
        "--action-count", str(config.action_count),
        "--seed", str(config.seed),
    ]
    proc = subprocess.Popen(cmd)
    address = ("127.0.0.1", port)
    deadline = time.monotonic() + 10.0
    while time.monotonic() < deadline:
        try:
            with socket.create_connection(address, timeout=0.2):
                return proc, address
        except OSError:
            if proc.poll() is not None:
                raise RuntimeError(f"server subprocess exited with {proc.returncode}")
            time.sleep(0.05)
    proc.terminate()
    raise RuntimeError("server subprocess never became reachable")


def fetch_server_stats(address, state_dim: int, action_count: int) -> dict[str, int]:
    conn = Connection(address, Role.LEARNER, state_dim, action_count)
    try:
        reply, _ = conn.request(wire.StatsReq())
        return reply.as_dict()
    finally:
        conn.close()


def wait_for_quiescence(stats_fn, mode: ServerMode = ServerMode.B_COLOCATED_REPLAY,
                        timeout: float = 30.0) -> dict[str, int]:
    """Poll a mode-B server's stats until every accepted push has settled into
    the replay tree (added + rejected == pushed). Mode A is quiescent at rest
    (staged experiences wait in the queue), so its stats return immediately."""
    if mode is ServerMode.A_SHARED_MEMORY:
        return stats_fn()
    deadline = time.monotonic() + timeout
    while True:
        stats = stats_fn()
        pushed = stats.get("experiences_pushed", 0)
        settled = stats.get("experiences_added", 0) + stats.get("experiences_rejected", 0)
        if settled >= pushed:
            return stats
        if time.monotonic() > deadline:
            raise TimeoutError(f"server never quiesced: {stats}")
        time.sleep(0.02)


# -- top-level entry points --------------------------------------------------


def run_bench(config: BenchConfig) -> BenchReport:
    """Run one benchmark point (one actor count) and gather its report."""
    server = None
    proc = None
    if config.server_address is not None:
        address = config.server_address
    elif config.spawn == "subprocess":
        proc, address = spawn_server_subprocess(config)
    else:
        server = ReplayServer(_server_config(config)).start()
        address = server.address

    stop = threading.Event()
    mode_a = config.mode is ServerMode.A_SHARED_MEMORY
    participants = config.actor_count + (2 if mode_a and config.learner_enabled
                                         else 1 if config.learner_enabled else 0)
    start = threading.Barrier(participants + 1)  # +1 for this thread

    actor_results = [ActorResult(i) for i in range(config.actor_count)]
    learner_result = LearnerResult() if config.learner_enabled else None
    puller_result = PullerResult() if (mode_a and config.learner_enabled) else None

    seeds = np.random.SeedSequence(config.seed).spawn(config.actor_count)
    threads = [
        threading.Thread(target=_actor_loop, name=f"bench-actor-{i}", daemon=True,
                         args=(config, address, i, seeds[i], stop, start, actor_results[i]))
        for i in range(config.actor_count)
    ]
    if config.learner_enabled:
        if mode_a:
            local: queue.Queue = queue.Queue()
            threads.append(threading.Thread(
                target=_puller_loop_mode_a, name="bench-puller", daemon=True,
                args=(config, address, stop, start, local, puller_result)))
            threads.append(threading.Thread(
                target=_learner_loop_mode_a, name="bench-learner", daemon=True,
                args=(config, address, stop, start, local, learner_result)))
        else:
            threads.append(threading.Thread(
                target=_learner_loop_mode_b, name="bench-learner", daemon=True,
                args=(config, address, stop, start, learner_result)))

    try:
        for thread in threads:
            thread.start()
        start.wait()
        begin = time.perf_counter()
        if config.pushes_per_actor is not None:
            for thread in threads[: config.actor_count]:
                thread.join()
        else:
            time.sleep(config.duration_s)
        stop.set()
        for thread in threads:
            thread.join(timeout=30.0)
        wall = time.perf_counter() - begin

        stats_fn = (server.stats.snapshot if server is not None
                    else lambda: fetch_server_stats(address, config.state_dim, config.action_count))
        try:
            server_stats = wait_for_quiescence(stats_fn, config.mode, timeout=10.0)
        except TimeoutError:
            server_stats = stats_fn()
    finally:
        stop.set()
        if server is not None:
            server.stop()
        if proc is not None:
            proc.terminate()
            proc.wait(timeout=10.0)

    return BenchReport(
        mode=config.mode,
        actor_count=config.actor_count,
        state_dim=config.state_dim,
        wall_s=wall,
        actors=actor_results,
        learner=learner_result,
        puller=puller_result,
        server_stats=server_stats,
    )


def run_sweep(config: BenchConfig, actor_counts=DEFAULT_SWEEP) -> list[BenchReport]:
    """Run one point per actor count, each against a fresh server."""
    return [run_bench(replace(config, actor_count=count)) for count in actor_counts]


def write_report_csv(reports: list[BenchReport], path_or_file) -> str:
    """One row per (metric, actor_count); returns the CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["metric", "actor_count", "value"])
    metric_names: list[str] = []
    per_report = []
    for report in reports:
        metrics = report.metrics()
        per_report.append((report.actor_count, metrics))
        for name in metrics:
            if name not in metric_names:
                metric_names.append(name)
    for name in metric_names:
        for actor_count, metrics in per_report:
            if name in metrics:
                writer.writerow([name, actor_count, repr(metrics[name])])
    text = buf.getvalue()
    _write_text(path_or_file, text)
    return text


def emit_breakdown_plot_data(reports: list[BenchReport], path_or_file=None) -> str:
    """Stacked-breakdown CSV: actor_count,role,phase,seconds."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["actor_count", "role", "phase", "seconds"])
    for report in reports:
        for actor_count, role, phase, seconds in report.breakdown_rows():
            writer.writerow([actor_count, role, phase, repr(seconds)])
    text = buf.getvalue()
    if path_or_file is not None:
        _write_text(path_or_file, text)
    return text


def _write_text(path_or_file, text: str) -> None:
    if path_or_file is None:
        return
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)
