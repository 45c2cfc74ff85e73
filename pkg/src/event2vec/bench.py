"""Throughput and latency benchmarking with a fixed report schema.

Streams are pre-loaded before any timer starts, so file I/O never lands
in a timed region.  Batch mode times whole train/infer steps over >= 10
repetitions; single-stream mode splits each of >= 100 streams into a
pre-processing stage (sampling or clustering) and a forward stage.
Peak resident memory comes from the kernel's VmHWM accounting.
"""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .backbone import EventModel
from .cluster import cluster_events
from .config import RunConfig, cluster_config, geometry, model_config
from .events import SensorGeometry
from .optim import AdamW, clip_global_norm
from .train import batch_arrays, sample_events

# Mirrors the published comparison table: batch throughput for training
# and inference, the single-stream latency decomposition, and memory.
BENCH_REPORT_COLUMNS = (
    "train_samples_per_s",
    "infer_samples_per_s",
    "preprocess_ms",
    "forward_ms",
    "total_ms",
    "memory_mb",
)


def peak_memory_mb() -> float:
    """Peak resident set size of this process, in MiB."""
    with open("/proc/self/status", encoding="ascii") as fh:
        for line in fh:
            if line.startswith("VmHWM:"):
                return int(line.split()[1]) / 1024.0
    return 0.0


def _mean_std(values) -> tuple:
    v = np.asarray(values, np.float64)
    return float(v.mean()), float(v.std())


def _sample_batch(streams, idx, cfg, rng):
    return batch_arrays([sample_events(streams[i], cfg.sample_length, rng)
                         for i in idx])


def bench_batch(model: EventModel, streams, labels, cfg: RunConfig,
                train: bool, reps: int = 10, warmup: int = 2,
                seed: int = 0) -> tuple:
    """Samples/s over timed repetitions of full batch steps."""
    rng = np.random.default_rng(seed)
    params = model.params()
    opt = AdamW(list(params.values()), lr=1e-3) if train else None
    rates = []
    for rep in range(warmup + reps):
        idx = rng.integers(0, len(streams), cfg.batch_size)
        t0 = time.perf_counter()
        arrays = _sample_batch(streams, idx, cfg, rng)
        if train:
            opt.zero_grad()
            logits = model.logits(*arrays, train=True, rng=rng)
            loss = ad.cross_entropy(logits, np.asarray(labels)[idx])
            loss.backward()
            clip_global_norm(params.values(), 1.0)
            opt.step()
        else:
            with ad.no_grad():
                model.logits(*arrays)
        dt = time.perf_counter() - t0
        if rep >= warmup:
            rates.append(cfg.batch_size / dt)
    return _mean_std(rates)


def bench_preprocess(streams, cfg: RunConfig, batch_size: int,
                     reps: int = 10, seed: int = 0) -> tuple:
    """Per-sample sampling latency (ms) when preparing whole batches."""
    rng = np.random.default_rng(seed)
    per_sample = []
    for _ in range(reps):
        idx = rng.integers(0, len(streams), batch_size)
        t0 = time.perf_counter()
        _sample_batch(streams, idx, cfg, rng)
        per_sample.append((time.perf_counter() - t0) * 1000.0 / batch_size)
    return _mean_std(per_sample)


def bench_single(model: EventModel, streams, cfg: RunConfig,
                 n_streams: int = 100, warmup: int = 5,
                 seed: int = 0) -> dict:
    """Per-stream latency decomposition: preprocess, forward, total (ms)."""
    rng = np.random.default_rng(seed)
    geom = geometry(cfg)
    ccfg = cluster_config(cfg)
    pre_ms, fwd_ms, tot_ms = [], [], []
    for rep in range(warmup + n_streams):
        s = streams[rng.integers(0, len(streams))]
        t0 = time.perf_counter()
        if cfg.sampler == "cluster":
            ws = cluster_events(s, ccfg, geom, rng)
            arrays = batch_arrays([ws])
        else:
            arrays = batch_arrays([sample_events(s, cfg.sample_length, rng)])
        t1 = time.perf_counter()
        with ad.no_grad():
            model.logits(*arrays)
        t2 = time.perf_counter()
        if rep >= warmup:
            pre_ms.append((t1 - t0) * 1000.0)
            fwd_ms.append((t2 - t1) * 1000.0)
            tot_ms.append((t2 - t0) * 1000.0)
    return {"preprocess_ms": _mean_std(pre_ms),
            "forward_ms": _mean_std(fwd_ms),
            "total_ms": _mean_std(tot_ms)}


def run_bench(cfg: RunConfig, streams, labels,
              model: EventModel | None = None, reps: int = 10,
              n_single: int = 100, seed: int = 0) -> dict:
    """Full report over the fixed column schema."""
    if model is None:
        geom = geometry(cfg)
        model = EventModel(geom, model_config(cfg),
                           np.random.default_rng(cfg.seed), dt_scale=500.0)
    report = {}
    report["train_samples_per_s"] = bench_batch(
        model, streams, labels, cfg, train=True, reps=reps, seed=seed)
    report["infer_samples_per_s"] = bench_batch(
        model, streams, labels, cfg, train=False, reps=reps, seed=seed)
    single = bench_single(model, streams, cfg, n_streams=n_single, seed=seed)
    report.update(single)
    report["memory_mb"] = (peak_memory_mb(), 0.0)
    assert tuple(report) == BENCH_REPORT_COLUMNS
    return report


def format_report(report: dict) -> str:
    lines = ["metric mean std"]
    for key in BENCH_REPORT_COLUMNS:
        mean, std = report[key]
        lines.append(f"{key} {mean:.3f} {std:.3f}")
    return "\n".join(lines) + "\n"
