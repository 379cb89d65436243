"""Command-line entry points: replaynet-server, replaynet-bench, replaynet-toy.

All three are also reachable as subcommands of ``python -m replaynet.cli``.
"""

from __future__ import annotations

import argparse
import signal
import sys

from .bench import (
    DEFAULT_SWEEP,
    SMALL_STATE_DIM,
    BenchConfig,
    emit_breakdown_plot_data,
    run_sweep,
    write_report_csv,
)
from .gridworld import parse_grid
from .protocol import ServerMode
from .server import ReplayServer, ServerConfig
from .toy import ToyConfig, run_toy_training


def _parse_host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def server_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="replaynet-server",
        description="Replay-memory server: mode A stages experiences for a remote "
                    "puller, mode B samples them in place.")
    parser.add_argument("--mode", choices=["A", "B"], default="B")
    parser.add_argument("--listen", type=_parse_host_port, default=("127.0.0.1", 7480),
                        metavar="HOST:PORT")
    parser.add_argument("--capacity", type=int, default=65536)
    parser.add_argument("--alpha", type=float, default=0.6)
    parser.add_argument("--p-min", type=float, default=1e-6)
    parser.add_argument("--queue-batches", type=int, default=64)
    parser.add_argument("--state-dim", type=int, default=64)
    parser.add_argument("--action-count", type=int, default=4)
    parser.add_argument("--stats-csv", default=None, metavar="PATH")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    host, port = args.listen
    server = ReplayServer(ServerConfig(
        mode=ServerMode.from_letter(args.mode),
        host=host,
        port=port,
        capacity=args.capacity,
        alpha=args.alpha,
        p_min=args.p_min,
        queue_batches=args.queue_batches,
        state_dim=args.state_dim,
        action_count=args.action_count,
        stats_csv=args.stats_csv,
        seed=args.seed,
    ))

    def _shutdown(signum, frame):
        server.stop()

    signal.signal(signal.SIGTERM, _shutdown)
    signal.signal(signal.SIGINT, _shutdown)
    server.start()
    print(f"replaynet-server mode {args.mode} listening on "
          f"{server.address[0]}:{server.address[1]}", flush=True)
    try:
        server.run_forever()
    finally:
        server.stop()
    return 0


def _parse_actor_counts(text: str) -> tuple[int, ...]:
    counts = tuple(int(part) for part in text.split(","))
    if any(c < 1 for c in counts):
        raise argparse.ArgumentTypeError("actor counts must be >= 1")
    return counts


def bench_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="replaynet-bench",
        description="Synthetic actor/learner workload; sweeps actor counts and "
                    "writes per-metric CSV rows.")
    parser.add_argument("--mode", choices=["A", "B"], default="B")
    parser.add_argument("--actors", type=_parse_actor_counts, default=DEFAULT_SWEEP,
                        help="single count or comma list, e.g. 8 or 1,2,4,8")
    parser.add_argument("--server", type=_parse_host_port, default=None,
                        metavar="HOST:PORT", help="use an already-running server")
    parser.add_argument("--spawn-server", choices=["inprocess", "subprocess"],
                        default="subprocess", help="how to start a server when --server is absent")
    parser.add_argument("--out", default=None, metavar="PATH", help="report CSV path")
    parser.add_argument("--breakdown-out", default=None, metavar="PATH",
                        help="execution-time breakdown CSV path")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--small", action="store_true",
                        help=f"use state_dim {SMALL_STATE_DIM} instead of the full 28224")
    parser.add_argument("--state-dim", type=int, default=None)
    parser.add_argument("--duration", type=float, default=3.0, metavar="SECONDS")
    parser.add_argument("--pushes", type=int, default=None,
                        help="per-actor push budget (overrides --duration)")
    parser.add_argument("--actor-batch", type=int, default=200)
    parser.add_argument("--train-batch", type=int, default=512)
    parser.add_argument("--capacity", type=int, default=65536)
    parser.add_argument("--param-bytes", type=int, default=13 * 2**20)
    parser.add_argument("--n-pull", type=int, default=200)
    parser.add_argument("--actor-compute", type=float, default=0.0, metavar="SECONDS",
                        help="injected per-push think time")
    parser.add_argument("--learner-compute", type=float, default=0.0, metavar="SECONDS",
                        help="injected per-iteration train time")
    parser.add_argument("--pull-interval", type=float, default=0.1, metavar="SECONDS")
    parser.add_argument("--no-learner", action="store_true")
    args = parser.parse_args(argv)

    if args.state_dim is not None:
        state_dim = args.state_dim
    elif args.small:
        state_dim = SMALL_STATE_DIM
    else:
        state_dim = 28224

    config = BenchConfig(
        mode=ServerMode.from_letter(args.mode),
        actor_count=args.actors[0],
        state_dim=state_dim,
        actor_batch_size=args.actor_batch,
        train_batch_size=args.train_batch,
        replay_capacity=args.capacity,
        param_blob_bytes=args.param_bytes,
        n_pull=args.n_pull,
        seed=args.seed,
        duration_s=args.duration,
        pushes_per_actor=args.pushes,
        actor_compute_s=args.actor_compute,
        learner_compute_s=args.learner_compute,
        learner_enabled=not args.no_learner,
        pull_interval_s=args.pull_interval,
        server_address=args.server,
        spawn=args.spawn_server,
    )
    reports = run_sweep(config, args.actors)
    text = write_report_csv(reports, args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.breakdown_out:
        emit_breakdown_plot_data(reports, args.breakdown_out)
    for report in reports:
        metrics = report.metrics()
        print(f"actors={report.actor_count} mode={report.mode.letter} "
              f"push_mean={metrics['actor_push_latency_mean_s']:.6f}s "
              f"throughput={metrics['push_throughput_exp_per_s']:.0f} exp/s",
              file=sys.stderr)
    return 0


def toy_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="replaynet-toy",
        description="Tabular grid training through the full networked pipeline; "
                    "exits nonzero if the greedy policy never becomes optimal.")
    parser.add_argument("--grid", type=parse_grid, default=(5, 5), metavar="WxH")
    parser.add_argument("--actors", type=int, default=2)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", default=None, metavar="PATH", help="learning-curve CSV")
    parser.add_argument("--iters", type=int, default=50000)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--gamma", type=float, default=0.95)
    parser.add_argument("--lr", type=float, default=0.2)
    parser.add_argument("--eval-every", type=int, default=20)
    args = parser.parse_args(argv)

    width, height = args.grid
    result = run_toy_training(ToyConfig(
        width=width,
        height=height,
        actor_count=args.actors,
        seed=args.seed,
        max_learner_iters=args.iters,
        batch_size=args.batch_size,
        gamma=args.gamma,
        learning_rate=args.lr,
        eval_every=args.eval_every,
        out_csv=args.out,
    ))
    if result.converged:
        print(f"optimal greedy policy ({result.optimal_steps} steps) after "
              f"{result.iterations} learner iterations")
        return 0
    print(f"did not converge within {result.iterations} iterations "
          f"(last greedy rollout: {result.final_greedy_steps})", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    commands = {"server": server_main, "bench": bench_main, "toy": toy_main}
    if not argv or argv[0] not in commands:
        print(f"usage: python -m replaynet.cli {{{'|'.join(commands)}}} [options]",
              file=sys.stderr)
        return 2
    return commands[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
