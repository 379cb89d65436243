#!/usr/bin/env python3
"""Actor-count latency sweep in both server topologies.

Runs the synthetic workload over loopback for actors in {1, 2, 4, 8}, first
against a shared-memory server with a remote replay puller (mode A), then
against a co-located replay server (mode B), and writes per-metric CSV plus
execution-time breakdown CSV for each. Full-scale payloads (state_dim 28224,
13 MiB parameter blob) unless --small.

Usage: python scripts/run_latency_sweep.py [--small] [--duration 3.0] [--out-dir results]
"""

import argparse
import pathlib

from replaynet.bench import (
    SMALL_STATE_DIM,
    BenchConfig,
    emit_breakdown_plot_data,
    run_sweep,
    write_report_csv,
)
from replaynet.protocol import ServerMode


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--small", action="store_true")
    parser.add_argument("--duration", type=float, default=3.0)
    parser.add_argument("--actors", type=lambda s: tuple(int(x) for x in s.split(",")),
                        default=(1, 2, 4, 8))
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out-dir", default="results")
    args = parser.parse_args()

    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for mode in (ServerMode.A_SHARED_MEMORY, ServerMode.B_COLOCATED_REPLAY):
        config = BenchConfig(
            mode=mode,
            state_dim=SMALL_STATE_DIM if args.small else 28224,
            param_blob_bytes=(1 << 20) if args.small else 13 * 2**20,
            duration_s=args.duration,
            seed=args.seed,
            actor_compute_s=0.02,
            learner_compute_s=0.02,
            n_pull=1000,
            spawn="subprocess",
        )
        reports = run_sweep(config, args.actors)
        report_path = out_dir / f"sweep_mode_{mode.letter}.csv"
        breakdown_path = out_dir / f"breakdown_mode_{mode.letter}.csv"
        write_report_csv(reports, report_path)
        emit_breakdown_plot_data(reports, breakdown_path)
        print(f"mode {mode.letter}: wrote {report_path} and {breakdown_path}")
        for report in reports:
            metrics = report.metrics()
            print(f"  actors={report.actor_count}: "
                  f"push mean {metrics['actor_push_latency_mean_s']*1e3:.3f} ms, "
                  f"p99 {metrics['actor_push_latency_p99_s']*1e3:.3f} ms, "
                  f"throughput {metrics['push_throughput_exp_per_s']:.0f} exp/s")


if __name__ == "__main__":
    main()
