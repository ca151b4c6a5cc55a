"""Timing harness for incremental inference, training steps, and scan modes.

Methodology: monotonic clock, 3 warmup runs, median of 11 timed runs for
whole-call measurements; incremental stepping reports the median per-step
latency inside a window around each probe length.
"""

from __future__ import annotations

import time
from statistics import median

import numpy as np

from .data import Batch
from .lru import (EncoderState, HeadParams, head_forward_scan,
                  head_forward_sequential, init_head)
from .model import ExperimentConfig, ModelParams, forward, total_loss

WARMUP = 3
RUNS = 11


def timed(fn, warmup: int = WARMUP, runs: int = RUNS) -> float:
    """Median wall-clock seconds of `fn()` over `runs` calls."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return median(samples)


def _make_heads(d: int, h: int, seed: int) -> list[HeadParams]:
    rng = np.random.default_rng(seed)
    return [init_head(d // h, rng) for _ in range(h)]


def incremental_step_latency(d: int, h: int, probe_lengths, seed: int = 0,
                             window: int = 50) -> dict[int, float]:
    """Median per-step seconds of the full multihead advance, measured while
    continuously expanding the input length; one entry per probe length."""
    state = EncoderState(_make_heads(d, h, seed))
    rng = np.random.default_rng(seed + 1)
    max_n = max(probe_lengths)
    per_step = np.empty(max_n)
    for i in range(max_n):
        x = rng.normal(size=d)
        t0 = time.perf_counter()
        state.step(x)
        per_step[i] = time.perf_counter() - t0
    out = {}
    for n in probe_lengths:
        lo = max(0, n - window)
        out[n] = float(np.median(per_step[lo:n]))
    return out


def scan_vs_sequential(d: int, h: int, n_grid, seed: int = 0) -> list[dict]:
    """Full-sequence forward wall-clock for both recurrence paths."""
    heads = _make_heads(d, h, seed)
    rng = np.random.default_rng(seed + 1)
    rows = []
    m = d // h
    for n in n_grid:
        x = rng.normal(size=(n, m))
        t_seq = timed(lambda: [head_forward_sequential(p, x) for p in heads])
        t_scan = timed(lambda: [head_forward_scan(p, x) for p in heads])
        rows.append({"n": n, "d": d, "H": h,
                     "sequential_s": t_seq, "scan_s": t_scan})
    return rows


def training_step_time(config: ExperimentConfig, n_items: int, n_expls: int,
                       seq_len: int, batch_size: int) -> float:
    """Median seconds for one batch forward+backward on random data."""
    rng = np.random.default_rng(config.seed)
    params = ModelParams(config, n_items, n_expls)
    items = rng.integers(0, n_items, size=(batch_size, seq_len))
    expls = rng.integers(0, n_expls, size=(batch_size, seq_len))
    gaps = rng.integers(1, 10_000, size=(batch_size, seq_len))
    times = np.cumsum(gaps, axis=1)
    lengths = np.full(batch_size, seq_len, dtype=np.int64)
    mask = np.ones((batch_size, seq_len), dtype=bool)
    batch = Batch(items, expls, times, mask, lengths,
                  np.arange(batch_size))

    def run():
        params.zero_grad()
        out = forward(batch, params, config)
        loss, _ = total_loss(out, batch, params, config)
        loss.backward()

    return timed(run, warmup=1, runs=5)


def efficiency_bench(d: int = 240, h_list=(2, 4, 6, 8),
                     probe_lengths=(100, 1000, 5000),
                     n_grid=(256, 1024, 4096),
                     train_seq_len: int = 50, train_batch: int = 32,
                     n_items: int = 500, n_expls: int = 300,
                     seed: int = 0) -> dict:
    """Assemble the full efficiency report: incremental latency per head
    count, scan-vs-sequential forward times, and one training-batch time."""
    incremental = []
    for h in h_list:
        lat = incremental_step_latency(d, h, probe_lengths, seed=seed)
        for n, sec in lat.items():
            incremental.append({"d": d, "H": h, "n": n, "step_seconds": sec})

    scans = []
    for h in h_list:
        scans.extend(scan_vs_sequential(d, h, n_grid, seed=seed))

    training = []
    for h in h_list:
        cfg = ExperimentConfig(d=d, H=h, seed=seed, mi_candidates="sampled")
        sec = training_step_time(cfg, n_items, n_expls, train_seq_len, train_batch)
        training.append({"d": d, "H": h, "batch_size": train_batch,
                         "seq_len": train_seq_len, "batch_seconds": sec})
    return {"incremental": incremental, "scan": scans, "training": training}
