"""Training, pretraining, evaluation, and probing loops with run artifacts.

A run directory holds config.snapshot (the resolved key=value config),
metrics.log (one record per line, stable key order), ckpt/ (binary
checkpoints), and analysis/ (figures and reports).  All randomness
derives from the config seed through named SeedSequence spawns, so a run
is reproducible from its snapshot alone; wall-clock fields are the only
nondeterministic values in the log.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .augment import apply_pipeline
from .backbone import EventModel, MaskSpec, SSLHead, probe_features, span_mask, ssl_step
from .checkpoint import load_checkpoint, save_checkpoint
from .cluster import cluster_events, random_sample
from .config import (
    RunConfig,
    augment_config,
    cluster_config,
    config_text,
    geometry,
    model_config,
    schedule,
)
from .events import (
    EventStream,
    SensorGeometry,
    WeightedEventStream,
    quantize_resolution,
)
from .io import load_manifest_streams, synthetic_dataset
from .layers import Linear
from .optim import AdamW, clip_global_norm, lr_at

METRIC_KEYS = ("epoch", "split", "loss", "accuracy", "wall_ms",
               "samples_per_s", "lr")


@dataclass
class LabeledSet:
    streams: list
    labels: np.ndarray

    def __len__(self):
        return len(self.streams)


def _spawn_rngs(seed: int, names) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def build_datasets(cfg: RunConfig):
    """Load manifests from data_dir or synthesize train/test splits."""
    geom = geometry(cfg)
    if cfg.data_dir:
        tr_s, tr_l, man = load_manifest_streams(
            os.path.join(cfg.data_dir, "train", "manifest.txt"))
        te_s, te_l, _ = load_manifest_streams(
            os.path.join(cfg.data_dir, "test", "manifest.txt"))
        geom = SensorGeometry(man.geometry.width, man.geometry.height)
        return LabeledSet(tr_s, tr_l), LabeledSet(te_s, te_l), geom
    tr_s, tr_l = synthetic_dataset(cfg.train_streams, cfg.data_seed, geom,
                                   cfg.rate_per_ms, cfg.duration_ms, cfg.noise)
    te_s, te_l = synthetic_dataset(cfg.test_streams, cfg.data_seed + 1, geom,
                                   cfg.rate_per_ms, cfg.duration_ms, cfg.noise)
    return LabeledSet(tr_s, tr_l), LabeledSet(te_s, te_l), geom


def sample_events(stream: EventStream, L: int, rng) -> EventStream:
    """L events without replacement; short streams upsample to exactly L."""
    s = random_sample(stream, L, rng)
    if len(s) < L:
        if len(s) == 0:
            raise ValueError("cannot sample from an empty stream")
        s = s.take(np.sort(rng.integers(0, len(s), L)))
    return s


def batch_arrays(samples):
    """Stack equal-length (weighted) streams into (B, L) training arrays."""
    xs, ys, ps, tss, rhos = [], [], [], [], []
    for s in samples:
        xs.append(s.x)
        ys.append(s.y)
        ps.append(s.p)
        tss.append(s.t)
        rhos.append(s.rho if isinstance(s, WeightedEventStream)
                    else np.ones(len(s), np.uint32))
    return (np.stack(xs).astype(np.int64), np.stack(ys).astype(np.int64),
            np.stack(ps).astype(np.int64), np.stack(tss),
            np.stack(rhos).astype(np.int64))


def precluster(dataset: LabeledSet, cfg: RunConfig,
               geom: SensorGeometry) -> LabeledSet:
    """Replace each stream by its weighted cluster summary (done once)."""
    ccfg = cluster_config(cfg)
    seeds = np.random.SeedSequence([cfg.seed, len(dataset)]).generate_state(
        len(dataset))
    out = []
    for s, seed in zip(dataset.streams, seeds):
        rng = np.random.default_rng(int(seed))
        out.append(cluster_events(s, ccfg, geom, rng))
    return LabeledSet(out, dataset.labels)


def estimate_dt_scale(dataset: LabeledSet, cfg: RunConfig, limit: int = 64):
    """Mean sampled-sequence dt over a pilot pass; the stored conv scale."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD7]))
    total, count = 0.0, 0
    for s in dataset.streams[:limit]:
        take = sample_events(s, cfg.sample_length, rng)
        if len(take) > 1:
            total += float(take.t[-1] - take.t[0])
            count += len(take) - 1
    return max(total / count, 1.0) if count else 1.0


# ---------------------------------------------------------------------------
# run directory plumbing


def prepare_run_dir(run_dir: str, cfg: RunConfig) -> str:
    os.makedirs(os.path.join(run_dir, "ckpt"), exist_ok=True)
    os.makedirs(os.path.join(run_dir, "analysis"), exist_ok=True)
    with open(os.path.join(run_dir, "config.snapshot"), "w",
              encoding="utf-8") as fh:
        fh.write(config_text(cfg))
    stale = os.path.join(run_dir, "metrics.log")
    if os.path.exists(stale):
        os.remove(stale)
    return run_dir


def append_metrics(run_dir: str, record: dict) -> None:
    parts = []
    for key in METRIC_KEYS:
        v = record[key]
        if isinstance(v, float):
            v = f"{v:.6f}" if key in ("loss", "accuracy", "lr") else f"{v:.1f}"
        parts.append(f"{key}={v}")
    with open(os.path.join(run_dir, "metrics.log"), "a",
              encoding="utf-8") as fh:
        fh.write(" ".join(parts) + "\n")


def read_metrics(run_dir: str) -> list:
    records = []
    path = os.path.join(run_dir, "metrics.log")
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = dict(kv.split("=", 1) for kv in line.split())
            records.append(rec)
    return records


def save_model(path: str, model: EventModel, extra: dict | None = None):
    arrays = {k: t.data for k, t in model.params().items()}
    arrays["_dt_scale"] = np.asarray(model.embedding.temporal.dt_scale
                                     if hasattr(model.embedding.temporal,
                                                "dt_scale") else 1.0)
    if extra:
        arrays.update(extra)
    save_checkpoint(arrays, path)


def load_model(cfg: RunConfig, path: str,
               geom: SensorGeometry | None = None) -> EventModel:
    arrays = load_checkpoint(path)
    geom = geometry(cfg) if geom is None else geom
    dt_scale = float(np.asarray(arrays.get("_dt_scale", 1.0)).reshape(()))
    model = EventModel(geom, model_config(cfg),
                       np.random.default_rng(cfg.seed), dt_scale)
    assign_params(model.params(), arrays)
    return model


def assign_params(params: dict, arrays: dict) -> None:
    for name, t in params.items():
        if name not in arrays:
            raise KeyError(f"checkpoint missing parameter {name}")
        arr = arrays[name]
        if arr.shape != t.data.shape:
            raise ValueError(f"shape mismatch for {name}: "
                             f"{arr.shape} vs {t.data.shape}")
        t.data = arr.astype(t.data.dtype)


# ---------------------------------------------------------------------------
# loops


QUANTIZE_GRIDS = (1, 2)


def make_train_batch(dataset, idx, cfg, geom, aug, rng_aug, rng_sample):
    samples = []
    for i in idx:
        s = dataset.streams[i]
        if aug is not None:
            s = apply_pipeline(s, geom, aug, rng_aug)
            if len(s) == 0:
                s = dataset.streams[i]
            if cfg.quantize_prob > 0.0 and rng_aug.random() < cfg.quantize_prob:
                k = int(rng_aug.choice(QUANTIZE_GRIDS))
                s = quantize_resolution(s, geom, k, k)
        samples.append(sample_events(s, cfg.sample_length, rng_sample))
    return batch_arrays(samples), dataset.labels[idx]


def evaluate_model(model: EventModel, dataset: LabeledSet, cfg: RunConfig,
                   eval_seed: int = 0):
    """Deterministic loss/accuracy over a dataset (no augmentation)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE, eval_seed]))
    total_loss, correct = 0.0, 0
    with ad.no_grad():
        for start in range(0, len(dataset), cfg.batch_size):
            idx = np.arange(start, min(start + cfg.batch_size, len(dataset)))
            samples = [sample_events(dataset.streams[i], cfg.sample_length, rng)
                       for i in idx]
            arrays = batch_arrays(samples)
            labels = dataset.labels[idx]
            logits = model.logits(*arrays)
            loss = ad.cross_entropy(logits, labels, cfg.label_smoothing)
            total_loss += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(1) == labels).sum())
    return total_loss / len(dataset), correct / len(dataset)


def train(cfg: RunConfig, run_dir: str, log=print) -> dict:
    """Supervised training; returns a summary with the best test accuracy."""
    prepare_run_dir(run_dir, cfg)
    rngs = _spawn_rngs(cfg.seed, ("model", "augment", "sample", "order",
                                  "noise"))
    train_set, test_set, geom = build_datasets(cfg)
    if cfg.sampler == "cluster":
        train_set = precluster(train_set, cfg, geom)
        test_set = precluster(test_set, cfg, geom)
    dt_scale = estimate_dt_scale(train_set, cfg)
    model = EventModel(geom, model_config(cfg), rngs["model"], dt_scale)
    params = model.params()
    opt = AdamW(list(params.values()), lr=cfg.lr_base,
                weight_decay=cfg.weight_decay)
    sched = schedule(cfg)
    # event-level augmentation needs raw events, not cluster summaries
    aug = augment_config(cfg) if cfg.augment and cfg.sampler == "random" \
        else None
    best_acc, summary = -1.0, {}
    for epoch in range(cfg.epochs):
        lr = lr_at(sched, epoch)
        t0 = time.perf_counter()
        e_loss, e_correct, e_seen = 0.0, 0, 0
        for _ in range(cfg.repeats):
            order = rngs["order"].permutation(len(train_set))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                (arrays, labels) = make_train_batch(
                    train_set, idx, cfg, geom, aug,
                    rngs["augment"], rngs["sample"])
                opt.zero_grad()
                logits = model.logits(*arrays, train=True, rng=rngs["noise"])
                loss = ad.cross_entropy(logits, labels, cfg.label_smoothing)
                loss.backward()
                clip_global_norm(params.values(), cfg.grad_clip)
                opt.step(lr)
                e_loss += float(loss.data) * len(idx)
                e_correct += int((logits.data.argmax(1) == labels).sum())
                e_seen += len(idx)
        wall = (time.perf_counter() - t0) * 1000.0
        append_metrics(run_dir, {
            "epoch": epoch, "split": "train", "loss": e_loss / e_seen,
            "accuracy": e_correct / e_seen, "wall_ms": wall,
            "samples_per_s": e_seen / (wall / 1000.0), "lr": lr})
        log(f"epoch {epoch}: train loss {e_loss / e_seen:.4f} "
            f"acc {e_correct / e_seen:.4f} lr {lr:.2e}")
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            t1 = time.perf_counter()
            te_loss, te_acc = evaluate_model(model, test_set, cfg)
            te_wall = (time.perf_counter() - t1) * 1000.0
            append_metrics(run_dir, {
                "epoch": epoch, "split": "test", "loss": te_loss,
                "accuracy": te_acc, "wall_ms": te_wall,
                "samples_per_s": len(test_set) / (te_wall / 1000.0),
                "lr": lr})
            log(f"epoch {epoch}: test loss {te_loss:.4f} acc {te_acc:.4f}")
            save_model(os.path.join(run_dir, "ckpt", "last.ev2c"), model)
            if te_acc > best_acc:
                best_acc = te_acc
                save_model(os.path.join(run_dir, "ckpt", "best.ev2c"), model)
            summary = {"epoch": epoch, "test_loss": te_loss,
                       "test_accuracy": te_acc, "best_accuracy": best_acc}
    return summary


def pretrain(cfg: RunConfig, run_dir: str, log=print) -> dict:
    """Masked-coordinate pretraining; pooling is forced off."""
    cfg = replace(cfg, pooling=False)
    prepare_run_dir(run_dir, cfg)
    rngs = _spawn_rngs(cfg.seed, ("model", "head", "augment", "sample",
                                  "order", "mask", "noise"))
    train_set, _, geom = build_datasets(cfg)
    if cfg.sampler == "cluster":
        train_set = precluster(train_set, cfg, geom)
    dt_scale = estimate_dt_scale(train_set, cfg)
    model = EventModel(geom, model_config(cfg), rngs["model"], dt_scale)
    head = SSLHead(cfg.dim, rngs["head"])
    params = {**model.params(), **head.params()}
    opt = AdamW(list(params.values()), lr=cfg.lr_base,
                weight_decay=cfg.weight_decay)
    sched = schedule(cfg)
    spec = MaskSpec(cfg.mask_ratio, cfg.mask_geometric_p)
    aug = augment_config(cfg) if cfg.augment and cfg.sampler == "random" \
        else None
    summary = {}
    for epoch in range(cfg.epochs):
        lr = lr_at(sched, epoch)
        t0 = time.perf_counter()
        e_loss, e_seen = 0.0, 0
        for _ in range(cfg.repeats):
            order = rngs["order"].permutation(len(train_set))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                (arrays, _) = make_train_batch(
                    train_set, idx, cfg, geom, aug,
                    rngs["augment"], rngs["sample"])
                mask = np.stack([span_mask(cfg.sample_length, spec,
                                           rngs["mask"])
                                 for _ in idx])
                opt.zero_grad()
                loss = ssl_step(model, head, *arrays, mask, train=True,
                                rng=rngs["noise"])
                loss.backward()
                clip_global_norm(params.values(), cfg.grad_clip)
                opt.step(lr)
                e_loss += float(loss.data) * len(idx)
                e_seen += len(idx)
        wall = (time.perf_counter() - t0) * 1000.0
        append_metrics(run_dir, {
            "epoch": epoch, "split": "pretrain", "loss": e_loss / e_seen,
            "accuracy": 0.0, "wall_ms": wall,
            "samples_per_s": e_seen / (wall / 1000.0), "lr": lr})
        log(f"epoch {epoch}: pretrain loss {e_loss / e_seen:.4f}")
        extra = {f"_ssl.{k}": t.data for k, t in head.params().items()}
        save_model(os.path.join(run_dir, "ckpt", "last.ev2c"), model, extra)
        summary = {"epoch": epoch, "pretrain_loss": e_loss / e_seen}
    return summary


def linear_probe(cfg: RunConfig, ckpt_path: str, k_blocks: int,
                 log=print) -> dict:
    """Train a fresh linear head on frozen mean-pooled features."""
    train_set, test_set, geom = build_datasets(cfg)
    if cfg.sampler == "cluster":
        train_set = precluster(train_set, cfg, geom)
        test_set = precluster(test_set, cfg, geom)
    model = load_model(cfg, ckpt_path, geom)
    if not 0 <= k_blocks <= cfg.n_blocks:
        raise ValueError(f"k_blocks {k_blocks} outside 0..{cfg.n_blocks}")
    frozen_before = {k: t.data.copy() for k, t in model.params().items()}

    def extract(dataset, tag):
        rng = np.random.default_rng(np.random.SeedSequence(
            [cfg.seed, 0xF, {"train": 1, "test": 2}[tag]]))
        feats = []
        for start in range(0, len(dataset), cfg.batch_size):
            idx = np.arange(start, min(start + cfg.batch_size, len(dataset)))
            samples = [sample_events(dataset.streams[i], cfg.sample_length,
                                     rng) for i in idx]
            feats.append(probe_features(model, *batch_arrays(samples),
                                        k_blocks))
        return np.concatenate(feats, 0)

    tr_f, te_f = extract(train_set, "train"), extract(test_set, "test")
    head = Linear(tr_f.shape[1], cfg.n_classes,
                  np.random.default_rng(cfg.seed + 1))
    opt = AdamW([head.w, head.b], lr=5e-3)
    rng = np.random.default_rng(cfg.seed + 2)
    for step in range(300):
        idx = rng.integers(0, len(tr_f), min(256, len(tr_f)))
        opt.zero_grad()
        loss = ad.cross_entropy(head(ad.Tensor(tr_f[idx])),
                                train_set.labels[idx])
        loss.backward()
        opt.step()
    with ad.no_grad():
        tr_acc = float((head(ad.Tensor(tr_f)).data.argmax(1)
                        == train_set.labels).mean())
        te_acc = float((head(ad.Tensor(te_f)).data.argmax(1)
                        == test_set.labels).mean())
    for k, t in model.params().items():
        if not np.array_equal(frozen_before[k], t.data):
            raise AssertionError(f"frozen parameter {k} changed during probe")
    log(f"probe k={k_blocks}: train acc {tr_acc:.4f} test acc {te_acc:.4f}")
    return {"k_blocks": k_blocks, "train_accuracy": tr_acc,
            "test_accuracy": te_acc}
