"""Runtime scaling of the policy algorithms on chain task graphs.

For growing chain lengths, each algorithm evaluates its policy on fresh
random inputs and the wall time per evaluation is recorded; a log-log
least-squares fit of mean time against graph node count summarises the
scaling.  Construction (graph building, recording, compilation) is
excluded from the timed region.  Trials run strictly sequentially on
one thread.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from rmpkit.leaf_rmps import unit_rmp
from rmpkit.policies import (ConfigState, naive_policy_memory_safe,
                             record_policy)
from rmpkit.rmptree import chain_rmp_tree, rmpflow_policy
from rmpkit.taskmaps import chain_benchmark_graph

__all__ = ["BenchSpec", "BenchRow", "BenchResult", "SlopeFit",
           "fit_loglog_slope", "run_benchmark", "write_csv"]

DEFAULT_LENGTHS = tuple(range(4, 37, 4))
ALGORITHMS = ("rmp2", "naive", "naive_memory_safe", "rmpflow")


@dataclass(frozen=True)
class BenchSpec:
    lengths: tuple = DEFAULT_LENGTHS
    branching: int = 3
    dim: int = 3
    trials: int = 1000
    algorithms: tuple = ("rmp2", "naive")
    seed: int = 0
    warmup: int = 3

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if list(self.lengths) != sorted(self.lengths) or not self.lengths:
            raise ValueError("lengths must be ascending and non-empty")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")


@dataclass(frozen=True)
class BenchRow:
    algorithm: str
    length: int
    node_count: int
    trials: int
    mean_s: float
    std_s: float
    median_s: float


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float


@dataclass
class BenchResult:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def mean_times(self, algorithm: str):
        return [(row.node_count, row.mean_s) for row in self.rows
                if row.algorithm == algorithm]


def fit_loglog_slope(points) -> SlopeFit:
    """Ordinary least squares of log(time) on log(node count)."""
    pts = [(n, t) for n, t in points]
    if len(pts) < 2:
        raise ValueError("need at least two points to fit a slope")
    x = np.log([n for n, _ in pts])
    y = np.log([t for _, t in pts])
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return SlopeFit(float(slope), float(intercept), r2)


def _median_of_means(times: np.ndarray, chunks: int = 10) -> float:
    """Robust location estimate: median over chunk means."""
    chunks = min(chunks, times.size)
    return float(np.median([c.mean() for c in np.array_split(times, chunks)]))


def _calibrate_inner_reps(probe_call, state) -> int:
    """Repeat calls per sample until one sample dwarfs timer resolution."""
    resolution = time.get_clock_info("perf_counter").resolution or 1e-9
    t0 = time.perf_counter()
    probe_call(state)
    elapsed = time.perf_counter() - t0
    inner = 1
    while elapsed * inner < 1e3 * resolution and inner < 10 ** 6:
        inner *= 10
    return inner


def _make_policies(spec: BenchSpec, algorithm: str, rng):
    """One callable per length; construction happens here, outside timing."""
    policies = []
    for length in spec.lengths:
        graph = chain_benchmark_graph(length, spec.branching, spec.dim,
                                      spec.seed)
        expected = 1 + (spec.branching + 1) * length
        if graph.node_count != expected:
            raise AssertionError("node-count bookkeeping broken")
        bindings = [(s.name, unit_rmp(spec.dim)) for s in graph.leaves]
        state0 = ConfigState(rng.uniform(-1, 1, spec.dim),
                             rng.uniform(-1, 1, spec.dim))
        if algorithm in ("rmp2", "naive"):
            policies.append(record_policy(graph, bindings, algorithm, state0))
        elif algorithm == "naive_memory_safe":
            policies.append(
                lambda st, g=graph, b=bindings: naive_policy_memory_safe(
                    g, b, st))
        else:
            tree = chain_rmp_tree(length, spec.branching, spec.dim,
                                  spec.seed, bindings)
            policies.append(lambda st, t=tree: rmpflow_policy(t, st))
    if algorithm in ("rmp2", "naive"):
        # one execution mode across the whole curve, or the per-node cost
        # jump at the code-generation cutoff would distort the slope
        if any(p.tape_length > 60000 for p in policies):
            for p in policies:
                p.use_interpreter()
    return policies


def run_benchmark(spec: BenchSpec) -> BenchResult:
    """Time every (algorithm, length) pair and fit per-algorithm slopes.

    Each trial evaluates the policy once at a fresh uniform state in
    [-1, 1]^dim; input generation and warm-up runs are excluded from
    the timings.  mean/std are over trials; median_s is a
    median-of-means over ten trial chunks.
    """
    result = BenchResult()
    for algorithm in spec.algorithms:
        rng = np.random.default_rng(spec.seed)
        policies = _make_policies(spec, algorithm, rng)
        for length, policy in zip(spec.lengths, policies):
            states = [ConfigState(rng.uniform(-1, 1, spec.dim),
                                  rng.uniform(-1, 1, spec.dim))
                      for _ in range(spec.trials + spec.warmup)]
            for state in states[:spec.warmup]:
                policy(state)
            inner = _calibrate_inner_reps(policy, states[0])
            times = np.empty(spec.trials)
            for i, state in enumerate(states[spec.warmup:]):
                t0 = time.perf_counter()
                for _ in range(inner):
                    policy(state)
                times[i] = (time.perf_counter() - t0) / inner
            result.rows.append(BenchRow(
                algorithm, length, 1 + (spec.branching + 1) * length,
                spec.trials, float(times.mean()), float(times.std()),
                _median_of_means(times)))
        result.slopes[algorithm] = fit_loglog_slope(
            result.mean_times(algorithm))
    return result


def write_csv(result: BenchResult, path: str):
    """Stable-schema CSV: algorithm,length,N,trials,mean_s,std_s,median_s."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "length", "N", "trials",
                         "mean_s", "std_s", "median_s"])
        for row in result.rows:
            writer.writerow([row.algorithm, row.length, row.node_count,
                             row.trials, f"{row.mean_s:.9f}",
                             f"{row.std_s:.9f}", f"{row.median_s:.9f}"])
