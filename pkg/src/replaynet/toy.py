"""End-to-end correctness workload: tabular Q-learning on a small grid task
driven through the full actor -> server -> learner pipeline.

Actors play the grid with epsilon-greedy over a Q table pulled from the
server; the learner samples prioritized batches over the network, applies
bootstrap targets, writes back new |TD error| priorities, and publishes the
updated table as the parameter blob. The run succeeds once the greedy
policy reaches the goal in the minimal number of steps.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .client import ActorClient, Connection, LearnerClient
from .core import Experience, actor_epsilon, compute_priority, epsilon_greedy, q_target
from .gridworld import ACTION_COUNT, GridWorld, greedy_rollout
from .protocol import Role, ServerMode
from .server import ReplayServer, ServerConfig


@dataclass
class ToyConfig:
    width: int = 5
    height: int = 5
    actor_count: int = 2
    seed: int = 42
    max_learner_iters: int = 50000
    batch_size: int = 32
    gamma: float = 0.95
    learning_rate: float = 0.2
    n_pull: int = 50
    n_update: int = 20
    eval_every: int = 20
    actor_batch_size: int = 20
    epsilon_base: float = 0.4
    capacity: int = 4096
    alpha: float = 0.6
    p_min: float = 1e-6
    out_csv: str | None = None
    server_address: tuple[str, int] | None = None  # None spawns one in-process

    def __post_init__(self):
        if self.actor_count < 1:
            raise ValueError("need at least one actor")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass
class ToyResult:
    converged: bool
    iterations: int
    optimal_steps: int
    final_greedy_steps: int | None
    curve: list[dict] = field(default_factory=list)
    priority_trace: list[float] = field(default_factory=list)


def blob_to_table(blob: bytes, state_dim: int) -> np.ndarray:
    if not blob:
        return np.zeros((state_dim, ACTION_COUNT), dtype=np.float32)
    return np.frombuffer(blob, dtype=np.float32).reshape(state_dim, ACTION_COUNT).copy()


def tabular_update(q_table: np.ndarray, target_table: np.ndarray, batch,
                   gamma: float, learning_rate: float, p_min: float) -> list[float]:
    """Apply one bootstrap update per sampled experience, in place.

    Returns the recomputed |TD error| of each experience after its update;
    these go back to the replay as the new priorities.
    """
    new_priorities = []
    for exp in batch.experiences:
        s = int(np.argmax(exp.state))
        s_next = int(np.argmax(exp.next_state))
        target = q_target(exp.reward, gamma, float(target_table[s_next].max()))
        q_table[s, exp.action] += learning_rate * (target - q_table[s, exp.action])
        new_priorities.append(compute_priority(target, float(q_table[s, exp.action]), p_min))
    return new_priorities


def _make_experience(env: GridWorld, pos, action, reward, next_pos) -> Experience:
    return Experience(env.one_hot(pos), action, reward, env.one_hot(next_pos))


def _actor_loop(config: ToyConfig, address, index: int, seed_seq, stop: threading.Event):
    env = GridWorld(config.width, config.height)
    rng = np.random.default_rng(seed_seq)
    conn = Connection(address, Role.ACTOR, env.state_dim, ACTION_COUNT, client_id=index)
    actor = ActorClient(
        conn,
        actor_batch_size=config.actor_batch_size,
        n_pull=config.n_pull,
        epsilon=actor_epsilon(index, config.actor_count, config.epsilon_base),
        seed=int(rng.integers(2**31)),
    )
    try:
        actor.pull_params()
        q_table = blob_to_table(actor.cached_params[1], env.state_dim)
        pos = env.reset()
        previous_q = 0.0
        while not stop.is_set():
            s = env.cell_index(pos)
            action = epsilon_greedy(q_table[s], actor.epsilon,
                                    float(rng.random()), int(rng.integers(ACTION_COUNT)))
            next_pos, reward, done = env.step(action)
            experience = _make_experience(env, pos, action, reward, next_pos)
            q_sa = float(q_table[s, action])
            actor.record(experience, compute_priority(q_sa, previous_q, config.p_min))
            previous_q = q_sa
            pulled = actor.maybe_pull_params()
            if pulled is not None:
                q_table = blob_to_table(pulled[1], env.state_dim)
            if done:
                pos = env.reset()
                previous_q = 0.0
            else:
                pos = next_pos
    except Exception:
        # Connection teardown racing the stop flag is expected at shutdown.
        if not stop.is_set():
            raise
    finally:
        conn.close()


def run_toy_training(config: ToyConfig) -> ToyResult:
    env = GridWorld(config.width, config.height)
    state_dim = env.state_dim
    server = None
    if config.server_address is None:
        server = ReplayServer(ServerConfig(
            mode=ServerMode.B_COLOCATED_REPLAY,
            capacity=config.capacity,
            alpha=config.alpha,
            p_min=config.p_min,
            state_dim=state_dim,
            action_count=ACTION_COUNT,
            seed=config.seed,
        )).start()
        address = server.address
    else:
        address = config.server_address

    stop = threading.Event()
    seeds = np.random.SeedSequence(config.seed).spawn(config.actor_count)
    actors = [
        threading.Thread(target=_actor_loop, args=(config, address, i, seeds[i], stop),
                         name=f"toy-actor-{i}", daemon=True)
        for i in range(config.actor_count)
    ]

    result = ToyResult(False, 0, env.optimal_steps, None)
    learner_conn = Connection(address, Role.LEARNER, state_dim, ACTION_COUNT)
    learner = LearnerClient(learner_conn, train_batch_size=config.batch_size)
    q_table = np.zeros((state_dim, ACTION_COUNT), dtype=np.float32)
    target_table = q_table.copy()

    try:
        learner.set_params(q_table.tobytes())
        for thread in actors:
            thread.start()

        def train_fn(batch):
            new_priorities = tabular_update(
                q_table, target_table, batch, config.gamma, config.learning_rate, config.p_min)
            result.priority_trace.append(float(np.mean(new_priorities)))
            return q_table.tobytes(), new_priorities

        eval_env = GridWorld(config.width, config.height)
        for iteration in range(1, config.max_learner_iters + 1):
            if (iteration - 1) % config.n_update == 0:
                target_table = q_table.copy()
            report = learner.iteration(train_fn)
            result.iterations = iteration
            if iteration % config.eval_every == 0:
                steps = greedy_rollout(eval_env, q_table)
                result.curve.append({
                    "iteration": iteration,
                    "greedy_steps": -1 if steps is None else steps,
                    "optimal_steps": env.optimal_steps,
                    "param_version": report.param_version,
                })
                result.final_greedy_steps = steps
                if steps == env.optimal_steps:
                    result.converged = True
                    break
    finally:
        stop.set()
        for thread in actors:
            thread.join(timeout=10.0)
        learner_conn.close()
        if server is not None:
            server.stop()

    if config.out_csv:
        write_curve_csv(result, config.out_csv)
    return result


def write_curve_csv(result: ToyResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["iteration", "greedy_steps", "optimal_steps", "param_version"])
        writer.writeheader()
        writer.writerows(result.curve)
