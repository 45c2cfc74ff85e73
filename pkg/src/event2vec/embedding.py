"""Event embeddings: spatial (table or parametric), temporal, and fusion.

The fused representation of a weighted event (x, y, p, t, rho) is

    V = (ln rho + 1) * (v_s + v_t)

where v_s embeds the spatial triple (x, y, p) and v_t embeds the local
timestamp rhythm via depthwise convolutions over the first-order
differences dt.  The parametric spatial embedding phi is a small MLP on
normalized coordinates; evaluating it on every cell of the sensor grid
materializes a table interchangeable with the standard lookup table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .events import SensorGeometry, delta_t, flat_index
from .layers import DepthwiseConv1d, LayerNorm, Linear, collect_params, uniform_fan_in

SPATIAL_MODES = ("standard", "parametric")
TEMPORAL_MODES = ("conv", "sin")


def probe_tensors(geom: SensorGeometry):
    """Coordinate triples for every cell c = 0..P*H*W-1 in flat order."""
    c = np.arange(geom.cells, dtype=np.int64)
    x_c = c % geom.width
    y_c = (c // geom.width) % geom.height
    p_c = c // (geom.width * geom.height)
    return x_c, y_c, p_c


def normalize_coords(x, y, p, geom: SensorGeometry, dtype=np.float32) -> np.ndarray:
    """Map integer coordinates into [-1, 1]^3; degenerate axes map to 0."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    p = np.asarray(p, np.float64)
    xn = 2.0 * x / (geom.width - 1) - 1.0 if geom.width > 1 else np.zeros_like(x)
    yn = 2.0 * y / (geom.height - 1) - 1.0 if geom.height > 1 else np.zeros_like(y)
    pn = 2.0 * p - 1.0
    return np.stack([xn, yn, pn], axis=-1).astype(dtype)


def normalized_probe(geom: SensorGeometry, dtype=np.float32) -> np.ndarray:
    """Normalized coordinates of every grid cell, shape (P*H*W, 3)."""
    x_c, y_c, p_c = probe_tensors(geom)
    return normalize_coords(x_c, y_c, p_c, geom, dtype)


class StandardSpatialEmbed:
    """Learnable lookup table with one row per (x, y, p) cell."""

    def __init__(self, geom: SensorGeometry, dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.geom = geom
        self.dim = dim
        scale = 1.0 / np.sqrt(dim)
        self.table = ad.Tensor(
            rng.normal(0.0, scale, size=(geom.cells, dim)).astype(dtype),
            requires_grad=True)

    def embed_coords(self, x, y, p) -> ad.Tensor:
        idx = flat_index(np.asarray(x), np.asarray(y), np.asarray(p), self.geom)
        return ad.gather_rows(self.table, idx)

    def params(self, prefix: str = "spatial") -> dict:
        return {prefix + ".table": self.table}


class ParametricSpatialEmbed:
    """MLP phi on normalized (x, y, p): 3 -> D/4 -> D/2 -> D.

    Layer normalization follows every linear layer; ReLU follows the
    first two normalizations.  phi is continuous in its real inputs.
    """

    def __init__(self, geom: SensorGeometry, dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        if dim % 4:
            raise ValueError(f"embedding dim {dim} must be divisible by 4")
        self.geom = geom
        self.dim = dim
        self.dtype = dtype
        self.l1 = Linear(3, dim // 4, rng, dtype)
        self.n1 = LayerNorm(dim // 4, dtype)
        self.l2 = Linear(dim // 4, dim // 2, rng, dtype)
        self.n2 = LayerNorm(dim // 2, dtype)
        self.l3 = Linear(dim // 2, dim, rng, dtype)
        self.n3 = LayerNorm(dim, dtype)

    def forward(self, coords) -> ad.Tensor:
        """Apply phi to normalized coordinates of shape (..., 3)."""
        h = ad.relu(self.n1(self.l1(coords)))
        h = ad.relu(self.n2(self.l2(h)))
        return self.n3(self.l3(h))

    def embed_coords(self, x, y, p) -> ad.Tensor:
        flat_index(np.asarray(x), np.asarray(y), np.asarray(p), self.geom)
        coords = normalize_coords(x, y, p, self.geom, self.dtype)
        return self.forward(ad.Tensor(coords))

    def params(self, prefix: str = "spatial") -> dict:
        return collect_params({
            f"{prefix}.l1": self.l1, f"{prefix}.n1": self.n1,
            f"{prefix}.l2": self.l2, f"{prefix}.n2": self.n2,
            f"{prefix}.l3": self.l3, f"{prefix}.n3": self.n3,
        })


def materialize_table(phi: ParametricSpatialEmbed) -> np.ndarray:
    """Evaluate phi on every grid cell in flat-index order.

    The whole (P*H*W, 3) probe matrix goes through phi in a single call,
    so row r equals phi of cell r's coordinates for the same batching.
    """
    probe = normalized_probe(phi.geom, phi.dtype)
    return phi.forward(ad.Tensor(probe)).data


class TemporalEmbed:
    """Depthwise conv stack on scaled timestamp differences.

    Channels grow 1 -> D/4 -> D/2 -> D with kernel 3, stride 1; layer
    normalization after each conv, ReLU after the first two.  Input dt is
    divided by a stored scale (mean dt of the training corpus).
    """

    def __init__(self, dim: int, rng: np.random.Generator, dt_scale: float = 1.0,
                 dtype=np.float32):
        if dim % 4:
            raise ValueError(f"embedding dim {dim} must be divisible by 4")
        if dt_scale <= 0:
            raise ValueError(f"dt_scale must be positive, got {dt_scale}")
        self.dim = dim
        self.dtype = dtype
        self.dt_scale = float(dt_scale)
        self.c1 = DepthwiseConv1d(1, dim // 4, rng, dtype)
        self.n1 = LayerNorm(dim // 4, dtype)
        self.c2 = DepthwiseConv1d(dim // 4, 2, rng, dtype)
        self.n2 = LayerNorm(dim // 2, dtype)
        self.c3 = DepthwiseConv1d(dim // 2, 2, rng, dtype)
        self.n3 = LayerNorm(dim, dtype)

    def forward_dt(self, dt) -> ad.Tensor:
        """Embed timestamp differences of shape (B, L) into (B, L, D)."""
        x = (np.asarray(dt, np.float64) / self.dt_scale).astype(self.dtype)
        h = ad.Tensor(x[..., None])
        h = ad.relu(self.n1(self.c1(h)))
        h = ad.relu(self.n2(self.c2(h)))
        return self.n3(self.c3(h))

    def embed_times(self, ts) -> ad.Tensor:
        """Embed sorted timestamps (L,) or (B, L); shift-invariant exactly."""
        ts = np.asarray(ts, np.int64)
        if ts.ndim == 1:
            return self.forward_dt(delta_t(ts)[None])
        dt = np.zeros_like(ts)
        dt[:, :-1] = np.diff(ts, axis=1)
        return self.forward_dt(dt)

    def params(self, prefix: str = "temporal") -> dict:
        return collect_params({
            f"{prefix}.c1": self.c1, f"{prefix}.n1": self.n1,
            f"{prefix}.c2": self.c2, f"{prefix}.n2": self.n2,
            f"{prefix}.c3": self.c3, f"{prefix}.n3": self.n3,
        })


class SinusoidalEmbed:
    """Fixed sinusoidal encoder on absolute timestamps (ablation baseline).

    Channel pair 2k uses period base_period_us * growth^(2k/D), the
    familiar geometric frequency ladder.  Not learnable, not shift
    invariant; exists to contrast with the convolutional dt embedding.
    """

    def __init__(self, dim: int, base_period_us: float = 1000.0,
                 growth: float = 10000.0, dtype=np.float32):
        if dim % 2:
            raise ValueError(f"sinusoidal dim {dim} must be even")
        self.dim = dim
        self.dtype = dtype
        k = np.arange(dim // 2, dtype=np.float64)
        self.omega = 2.0 * np.pi / (base_period_us * growth ** (2.0 * k / dim))

    def embed_times(self, ts) -> ad.Tensor:
        ts = np.asarray(ts, np.float64)
        if ts.ndim == 1:
            ts = ts[None]
        angle = ts[..., None] * self.omega
        out = np.empty((*ts.shape, self.dim), self.dtype)
        out[..., 0::2] = np.sin(angle)
        out[..., 1::2] = np.cos(angle)
        return ad.Tensor(out)

    def params(self, prefix: str = "temporal") -> dict:
        return {}


def intensity_factor(rho, dtype=np.float32) -> np.ndarray:
    """The (ln rho + 1) multiplier of the fused representation."""
    rho = np.asarray(rho)
    if rho.size and rho.min() < 1:
        raise ValueError(f"intensity rho must be >= 1, got min {rho.min()}")
    return (np.log(rho.astype(np.float64)) + 1.0).astype(dtype)


def fuse(v_s: ad.Tensor, v_t: ad.Tensor, rho) -> ad.Tensor:
    """V = (ln rho + 1) * (v_s + v_t)."""
    factor = intensity_factor(rho, v_s.data.dtype)[..., None]
    return ad.mul(ad.add(v_s, v_t), ad.Tensor(factor))


@dataclass
class EmbeddedSequence:
    """Fused embedding V plus the parts needed for masked pretraining."""
    V: ad.Tensor
    v_s: ad.Tensor
    v_t: ad.Tensor
    factor: np.ndarray


class EventEmbedding:
    """Full event2vec front end: spatial + temporal + fusion."""

    def __init__(self, geom: SensorGeometry, dim: int,
                 spatial_mode: str = "parametric", temporal_mode: str = "conv",
                 dt_scale: float = 1.0, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if spatial_mode not in SPATIAL_MODES:
            raise ValueError(f"spatial_mode must be one of {SPATIAL_MODES}")
        if temporal_mode not in TEMPORAL_MODES:
            raise ValueError(f"temporal_mode must be one of {TEMPORAL_MODES}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.geom = geom
        self.dim = dim
        self.spatial_mode = spatial_mode
        self.temporal_mode = temporal_mode
        if spatial_mode == "standard":
            self.spatial = StandardSpatialEmbed(geom, dim, rng, dtype)
        else:
            self.spatial = ParametricSpatialEmbed(geom, dim, rng, dtype)
        if temporal_mode == "conv":
            self.temporal = TemporalEmbed(dim, rng, dt_scale, dtype)
        else:
            self.temporal = SinusoidalEmbed(dim, dtype=dtype)

    def forward(self, x, y, p, ts, rho) -> EmbeddedSequence:
        """Embed batched weighted events; every array is (B, L)."""
        v_s = self.spatial.embed_coords(x, y, p)
        v_t = self.temporal.embed_times(ts)
        factor = intensity_factor(rho, v_s.data.dtype)[..., None]
        V = ad.mul(ad.add(v_s, v_t), ad.Tensor(factor))
        return EmbeddedSequence(V=V, v_s=v_s, v_t=v_t, factor=factor)

    def embed_stream(self, wstream) -> EmbeddedSequence:
        """Embed a single WeightedEventStream as a batch of one."""
        return self.forward(wstream.x[None], wstream.y[None], wstream.p[None],
                            wstream.t[None], wstream.rho[None])

    def params(self) -> dict:
        out = self.spatial.params("spatial")
        out.update(self.temporal.params("temporal"))
        return out
