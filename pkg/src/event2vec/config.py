"""Flat key=value run configuration with typed fields and strict keys.

Files are UTF-8 lines of "key = value"; '#' starts a comment. Unknown
keys are rejected with the full list of valid ones, so typos fail fast.
The same dataclass feeds the model, sampler, augmentation, and optimizer
constructors, and every run snapshots its resolved config verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .augment import AugmentConfig
from .backbone import ModelConfig
from .cluster import ClusterConfig
from .events import SensorGeometry
from .optim import Schedule, scaled_lr


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data: an existing manifest directory, or a synthetic spec
    data_dir: str = ""
    train_streams: int = 2000
    test_streams: int = 400
    sensor_width: int = 64
    sensor_height: int = 64
    rate_per_ms: float = 20.0
    duration_ms: float = 300.0
    noise: float = 0.1
    data_seed: int = 7
    # sampler
    sampler: str = "random"
    sample_length: int = 512
    cluster_batch: int = 64
    cluster_iters: int = 20
    cluster_tol: float = 1e-6
    # model
    dim: int = 64
    dim_ff: int = 128
    n_heads: int = 2
    n_blocks: int = 4
    n_classes: int = 4
    pooling: bool = True
    spatial_mode: str = "parametric"
    temporal_mode: str = "conv"
    share_directions: bool = True
    drop_path: float = 0.0
    token_mix: bool = False
    # augmentation
    augment: bool = True
    augment_prob: float = 0.6
    resize_min: float = 0.8
    resize_max: float = 1.2
    rotate_deg: float = 10.0
    shear_max: float = 0.02
    translate_px: float = 16.0
    flip_prob: float = 0.0
    erase_prob: float = 0.1
    erase_max: float = 16.0
    chunk_max: int = 8
    chunk_len_max: int = 256
    # per-sample chance of collapsing coordinates to a coarse grid; keeps
    # the temporal pathway trained for resolution-degraded inputs
    quantize_prob: float = 0.1
    # optimizer
    lr_base: float = 0.001
    lr_scale: int = 1
    lr_min: float = 0.0
    epochs: int = 20
    warmup_epochs: int = 4
    batch_size: int = 64
    weight_decay: float = 0.0
    label_smoothing: float = 0.0
    grad_clip: float = 1.0
    repeats: int = 1
    eval_every: int = 1
    # masked pretraining
    mask_ratio: float = 0.30
    mask_geometric_p: float = 0.1
    # misc
    seed: int = 0

    def __post_init__(self):
        if self.sampler not in ("random", "cluster"):
            raise ConfigError(f"sampler must be random or cluster, "
                              f"got {self.sampler!r}")
        for name in ("train_streams", "test_streams", "sample_length",
                     "epochs", "batch_size", "repeats", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.warmup_epochs < 0 or self.warmup_epochs > self.epochs:
            raise ConfigError("warmup_epochs must be in 0..epochs")


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
KNOWN_KEYS = tuple(_FIELDS)


def _parse_value(key: str, text: str):
    typ = _FIELDS[key]
    text = text.strip()
    if typ == "bool":
        if text == "true":
            return True
        if text == "false":
            return False
        raise ConfigError(f"{key}: expected true or false, got {text!r}")
    try:
        if typ == "int":
            return int(text)
        if typ == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Key=value lines -> raw string dict; raises with line numbers."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _check_key(key: str) -> None:
    if key not in _FIELDS:
        valid = ", ".join(KNOWN_KEYS)
        raise ConfigError(f"unknown config key {key!r}; valid keys: {valid}")


def load_config(path: str | None = None, overrides=()) -> RunConfig:
    """Defaults, then the file, then --set style 'key=value' overrides."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = parse_config_text(fh.read())
        for key, text in raw.items():
            _check_key(key)
            values[key] = _parse_value(key, text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        _check_key(key)
        values[key] = _parse_value(key, text)
    return RunConfig(**values)


def config_text(cfg: RunConfig) -> str:
    """Stable key=value rendering, one field per line in declaration order."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# bridges into the domain configs


def geometry(cfg: RunConfig) -> SensorGeometry:
    return SensorGeometry(cfg.sensor_width, cfg.sensor_height)


def model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        dim=cfg.dim, dim_ff=cfg.dim_ff, n_heads=cfg.n_heads,
        n_blocks=cfg.n_blocks, n_classes=cfg.n_classes, pooling=cfg.pooling,
        spatial_mode=cfg.spatial_mode, temporal_mode=cfg.temporal_mode,
        share_directions=cfg.share_directions, drop_path=cfg.drop_path,
        token_mix=cfg.token_mix)


def augment_config(cfg: RunConfig) -> AugmentConfig:
    return AugmentConfig(
        transform_prob=cfg.augment_prob,
        resize_range=(cfg.resize_min, cfg.resize_max),
        rotate_range=(-cfg.rotate_deg, cfg.rotate_deg),
        shear_range=(-cfg.shear_max, cfg.shear_max),
        translate_range=(-cfg.translate_px, cfg.translate_px),
        flip_prob=cfg.flip_prob,
        erase_prob=cfg.erase_prob,
        erase_size_range=(0.0, cfg.erase_max),
        chunk_count_range=(0, cfg.chunk_max),
        chunk_len_range=(1, cfg.chunk_len_max))


def cluster_config(cfg: RunConfig) -> ClusterConfig:
    return ClusterConfig(L=cfg.sample_length, B=cfg.cluster_batch,
                         I_max=cfg.cluster_iters, tol=cfg.cluster_tol,
                         seed=cfg.seed)


def schedule(cfg: RunConfig) -> Schedule:
    return Schedule(
        base_lr=scaled_lr(cfg.lr_base, cfg.batch_size, cfg.lr_scale),
        warmup_epochs=float(cfg.warmup_epochs),
        total_epochs=float(cfg.epochs),
        lr_min=cfg.lr_min)
