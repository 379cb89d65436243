"""Thread-safe server counters, gauges, and fixed-bucket latency histograms,
with the CSV export format used by the server's --stats-csv flag
(columns: timestamp, counter name, value).
"""

from __future__ import annotations

import csv
import threading
import time

import numpy as np

# Log-spaced bucket upper edges from 1 microsecond to 10 seconds.
HISTOGRAM_EDGES = np.logspace(-6, 1, 36)


class LatencyHistogram:
    """Counts observations per fixed log-spaced bucket; last bucket is overflow."""

    def __init__(self):
        self.counts = np.zeros(len(HISTOGRAM_EDGES) + 1, dtype=np.int64)
        self.total = 0
        self.sum_seconds = 0.0

    def record(self, seconds: float) -> None:
        self.counts[int(np.searchsorted(HISTOGRAM_EDGES, seconds, side="left"))] += 1
        self.total += 1
        self.sum_seconds += seconds

    def rows(self, prefix: str):
        yield f"{prefix}_count", self.total
        yield f"{prefix}_sum_us", int(self.sum_seconds * 1e6)
        cumulative = 0
        for edge, count in zip(HISTOGRAM_EDGES, self.counts):
            cumulative += int(count)
            yield f"{prefix}_le_{edge:.3e}", cumulative


class ServerStats:
    """Monotone counters plus gauges; every mutation is lock-protected."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counters: dict[str, int] = {}
        self._gauges: dict[str, int] = {}
        self._histograms: dict[str, LatencyHistogram] = {}

    def inc(self, name: str, delta: int = 1) -> None:
        if delta < 0:
            raise ValueError("counters are monotone")
        with self._lock:
            self._counters[name] = self._counters.get(name, 0) + delta

    def set_gauge(self, name: str, value: int) -> None:
        with self._lock:
            self._gauges[name] = value
            high_water = f"{name}_high_water"
            if value > self._gauges.get(high_water, 0):
                self._gauges[high_water] = value

    def observe_latency(self, op: str, seconds: float) -> None:
        with self._lock:
            hist = self._histograms.get(op)
            if hist is None:
                hist = self._histograms[op] = LatencyHistogram()
            hist.record(seconds)

    def get(self, name: str) -> int:
        with self._lock:
            if name in self._counters:
                return self._counters[name]
            return self._gauges.get(name, 0)

    def snapshot(self) -> dict[str, int]:
        """Counters and gauges only (the wire stats payload)."""
        with self._lock:
            merged = dict(self._counters)
            merged.update(self._gauges)
            return merged

    def csv_rows(self):
        timestamp = f"{time.time():.6f}"
        with self._lock:
            for name in sorted(self._counters):
                yield timestamp, name, self._counters[name]
            for name in sorted(self._gauges):
                yield timestamp, name, self._gauges[name]
            for op in sorted(self._histograms):
                for name, value in self._histograms[op].rows(f"latency_{op}"):
                    yield timestamp, name, value

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp", "counter", "value"])
            writer.writerows(self.csv_rows())


def latency_summary(latencies) -> dict[str, float]:
    """mean/p50/p99 for a list of per-operation latencies in seconds."""
    if len(latencies) == 0:
        return {"mean": 0.0, "p50": 0.0, "p99": 0.0}
    arr = np.asarray(latencies, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "p50": float(np.percentile(arr, 50)),
        "p99": float(np.percentile(arr, 99)),
    }
