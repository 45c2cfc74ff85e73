"""Transformer backbone over event embeddings.

Attention uses data-dependent forgetting gates: per head, each position
emits f_l = sigmoid(w_f . x_l + b_f), and the causal softmax logits pick
up an additive bias sum_{l=j+1..i} log f_l that decays attention toward
stale positions.  Every block runs the attention twice, forward and on
the reversed sequence, sharing all projections; only the fused output
projection W_fb (2D -> D) is new, so the bidirectional wrapper costs
almost no extra parameters.  k/v use half as many heads as q
(grouped-query attention, contiguous groups of 2) and are group
normalized right after projection.

Blocks are pre-norm residual: attention, then a two-layer ReLU FFN,
then optional window-2 average pooling that halves the sequence.
Classification mean-pools the surviving positions into a linear head.
Masked pretraining replaces span-masked positions by a learnable token
(scaled by each position's intensity factor), then inverts the fusion on
the backbone output and decodes (x, y, p) with a small tanh MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .embedding import EventEmbedding, intensity_factor, normalize_coords
from .events import SensorGeometry
from .layers import GroupNorm, LayerNorm, Linear, collect_params


@dataclass(frozen=True)
class ModelConfig:
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

    def __post_init__(self):
        if self.dim % 4:
            raise ValueError(f"dim {self.dim} must be divisible by 4")
        if self.n_heads < 2 or self.n_heads % 2:
            raise ValueError(f"n_heads {self.n_heads} must be even and >= 2")
        if self.dim % self.n_heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.n_heads} heads")
        if not 0.0 <= self.drop_path < 1.0:
            raise ValueError(f"drop_path {self.drop_path} out of [0, 1)")


# Reference shapes: 64/128 heads 2 at depths 4 and 2, 192/384 heads 6 at
# depth 16; class counts 11, 24, and 100 match the public gesture, sign
# language, and lip reading event datasets these sizes were tuned for.
PRESET_CONFIGS = {
    "base4": ModelConfig(64, 128, 2, 4, n_classes=11),
    "base2": ModelConfig(64, 128, 2, 2, n_classes=24),
    "large16": ModelConfig(192, 384, 6, 16, n_classes=100),
}


def forgetting_attention(q, k, v, forget_logits) -> ad.Tensor:
    """Causal decay-softmax attention, per head.

    q, k, v: (B, H, L, dh); forget_logits: (B, H, L).  The bias between
    query i and key j <= i is sum_{l=j+1..i} logsigmoid(f_l), zero on the
    diagonal; rows of the attention matrix sum to 1.
    """
    dh = q.shape[-1]
    c = ad.cumsum(ad.logsigmoid(forget_logits), -1)
    # scale q before the product: the small (L, dh) pass, not the (L, L) one
    qs = ad.mul(q, np.asarray(1.0 / np.sqrt(dh), q.data.dtype))
    scores = ad.matmul(qs, ad.transpose(k, (0, 1, 3, 2)))
    return ad.matmul(ad.decay_softmax(scores, c), v)


class _DirectionParams:
    """Projections for one attention pass: q, k, v, forget gate, k/v norms."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, dtype):
        kv_heads = n_heads // 2
        kv_dim = dim // 2
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, kv_dim, rng, dtype)
        self.wv = Linear(dim, kv_dim, rng, dtype)
        self.wf = Linear(dim, n_heads, rng, dtype)
        self.gn_k = GroupNorm(kv_dim, kv_heads, dtype)
        self.gn_v = GroupNorm(kv_dim, kv_heads, dtype)

    def params(self, prefix: str) -> dict:
        return collect_params({
            f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv, f"{prefix}.wf": self.wf,
            f"{prefix}.gn_k": self.gn_k, f"{prefix}.gn_v": self.gn_v,
        })


class AttentionBlock:
    """Bidirectional forgetting attention with shared direction parameters."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator,
                 dtype=np.float32, share_directions: bool = True):
        self.dim = dim
        self.n_heads = n_heads
        self.share_directions = share_directions
        self.fwd = _DirectionParams(dim, n_heads, rng, dtype)
        self.bwd = self.fwd if share_directions else _DirectionParams(
            dim, n_heads, rng, dtype)
        self.w_fb = Linear(2 * dim, dim, rng, dtype)

    def _attend(self, x, dp: _DirectionParams) -> ad.Tensor:
        B, L, D = x.shape
        nh = self.n_heads
        dh = D // nh
        kvh = nh // 2

        def split(t, heads):
            return ad.transpose(ad.reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

        q = split(dp.wq(x), nh)
        k = ad.repeat_heads(split(dp.gn_k(dp.wk(x)), kvh), 2)
        v = ad.repeat_heads(split(dp.gn_v(dp.wv(x)), kvh), 2)
        f = ad.transpose(dp.wf(x), (0, 2, 1))
        o = forgetting_attention(q, k, v, f)
        return ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (B, L, D))

    def forward(self, x) -> ad.Tensor:
        o_f = self._attend(x, self.fwd)
        o_b = ad.reverse(self._attend(ad.reverse(x, 1), self.bwd), 1)
        return self.w_fb(ad.concat([o_f, o_b], -1))

    def params(self, prefix: str) -> dict:
        out = self.fwd.params(f"{prefix}.dir")
        if not self.share_directions:
            out.update(self.bwd.params(f"{prefix}.dir_b"))
        out.update(self.w_fb.params(f"{prefix}.w_fb"))
        return out


class TransformerBlock:
    """Pre-norm residual block: attention, FFN, optional window-2 pooling."""

    def __init__(self, dim: int, dim_ff: int, n_heads: int,
                 rng: np.random.Generator, dtype=np.float32,
                 pooling: bool = False, share_directions: bool = True,
                 drop_path_rate: float = 0.0):
        self.ln1 = LayerNorm(dim, dtype)
        self.attn = AttentionBlock(dim, n_heads, rng, dtype, share_directions)
        self.ln2 = LayerNorm(dim, dtype)
        self.f1 = Linear(dim, dim_ff, rng, dtype)
        self.f2 = Linear(dim_ff, dim, rng, dtype)
        self.pooling = pooling
        self.drop_path_rate = drop_path_rate

    def forward(self, x, train: bool = False,
                rng: np.random.Generator | None = None) -> ad.Tensor:
        a = self.attn.forward(self.ln1(x))
        if train and self.drop_path_rate > 0.0 and rng is not None:
            keep = (rng.random((x.shape[0], 1, 1)) >= self.drop_path_rate)
            scale = keep.astype(x.data.dtype) / (1.0 - self.drop_path_rate)
            a = ad.mul(a, scale)
        h = ad.add(x, a)
        ff = self.f2(ad.relu(self.f1(self.ln2(h))))
        h = ad.add(h, ff)
        return ad.avg_pool_seq(h) if self.pooling else h

    def params(self, prefix: str) -> dict:
        out = collect_params({f"{prefix}.ln1": self.ln1})
        out.update(self.attn.params(f"{prefix}.attn"))
        out.update(collect_params({
            f"{prefix}.ln2": self.ln2,
            f"{prefix}.f1": self.f1, f"{prefix}.f2": self.f2,
        }))
        return out


class EventModel:
    """Embedding front end, transformer blocks, and a linear class head."""

    def __init__(self, geom: SensorGeometry, cfg: ModelConfig,
                 rng: np.random.Generator | None = None,
                 dt_scale: float = 1.0, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.geom = geom
        self.cfg = cfg
        self.dtype = dtype
        self.embedding = EventEmbedding(geom, cfg.dim, cfg.spatial_mode,
                                        cfg.temporal_mode, dt_scale, rng, dtype)
        depth = cfg.n_blocks
        self.blocks = []
        for i in range(depth):
            rate = cfg.drop_path * i / (depth - 1) if depth > 1 else 0.0
            self.blocks.append(TransformerBlock(
                cfg.dim, cfg.dim_ff, cfg.n_heads, rng, dtype,
                pooling=cfg.pooling, share_directions=cfg.share_directions,
                drop_path_rate=rate))
        self.head = Linear(cfg.dim, cfg.n_classes, rng, dtype)

    def _token_mix(self, V, rng: np.random.Generator) -> ad.Tensor:
        """Swap a short token span with the mirrored batch item.

        Mixed sequence i takes positions [s, s+n) from item B-1-i; spans
        stay under a quarter of the length so the original label keeps a
        clear majority.  Applied with probability 0.5 when enabled.
        """
        B, L, _ = V.shape
        if B < 2 or L < 4 or rng.random() >= 0.5:
            return V
        m = np.zeros((B, L, 1), self.dtype)
        for i in range(B):
            n = int(rng.integers(1, max(2, L // 4)))
            s = int(rng.integers(0, L - n + 1))
            m[i, s:s + n] = 1.0
        return ad.add(ad.mul(V, 1.0 - m), ad.mul(ad.reverse(V, 0), m))

    def features(self, x, y, p, ts, rho, k_blocks: int | None = None,
                 train: bool = False,
                 rng: np.random.Generator | None = None) -> ad.Tensor:
        """Run the embedding and the first k blocks (all by default)."""
        n = len(self.blocks) if k_blocks is None else k_blocks
        if not 0 <= n <= len(self.blocks):
            raise ValueError(f"k_blocks {n} outside 0..{len(self.blocks)}")
        h = self.embedding.forward(x, y, p, ts, rho).V
        if train and self.cfg.token_mix and rng is not None:
            h = self._token_mix(h, rng)
        for blk in self.blocks[:n]:
            h = blk.forward(h, train, rng)
        return h

    def logits(self, x, y, p, ts, rho, train: bool = False,
               rng: np.random.Generator | None = None) -> ad.Tensor:
        pooled = ad.mean(self.features(x, y, p, ts, rho, None, train, rng), 1)
        return self.head(pooled)

    def params(self) -> dict:
        out = {f"embed.{k}": v for k, v in self.embedding.params().items()}
        for i, blk in enumerate(self.blocks):
            out.update(blk.params(f"block{i}"))
        out.update(self.head.params("head"))
        return out


def classify(model: EventModel, wstream) -> np.ndarray:
    """Class logits for one weighted event stream."""
    with ad.no_grad():
        out = model.logits(wstream.x[None], wstream.y[None], wstream.p[None],
                           wstream.t[None], wstream.rho[None])
    return out.data[0]


def probe_features(model: EventModel, x, y, p, ts, rho,
                   k_blocks: int) -> np.ndarray:
    """Mean-pooled features after the first k blocks, no gradients."""
    with ad.no_grad():
        h = model.features(x, y, p, ts, rho, k_blocks)
        return ad.mean(h, 1).data


def unshared_variant(cfg: ModelConfig) -> ModelConfig:
    return replace(cfg, share_directions=False)


# ---------------------------------------------------------------------------
# masked self-supervision


@dataclass(frozen=True)
class MaskSpec:
    ratio: float = 0.30
    geometric_p: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"mask ratio {self.ratio} out of [0, 1]")
        if not 0.0 < self.geometric_p <= 1.0:
            raise ValueError(f"geometric p {self.geometric_p} out of (0, 1]")


def span_mask(L: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of consecutive spans covering about ratio * L positions.

    Spans of Geometric(p) length land at uniform starts until the masked
    fraction reaches the ratio, so coverage overshoots by at most a span.
    """
    if L < 1:
        raise ValueError(f"sequence length {L} must be >= 1")
    m = np.zeros(L, bool)
    target = spec.ratio * L
    if target <= 0:
        return m
    while m.sum() < target:
        length = int(rng.geometric(spec.geometric_p))
        start = int(rng.integers(0, L))
        m[start:start + length] = True
    return m


class SSLHead:
    """Mask token plus the coordinate decoder D -> D/2 -> D/4 -> 3 (tanh)."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        if dim % 4:
            raise ValueError(f"dim {dim} must be divisible by 4")
        scale = 1.0 / np.sqrt(dim)
        self.mask_token = ad.Tensor(
            rng.normal(0.0, scale, size=dim).astype(dtype), requires_grad=True)
        self.d1 = Linear(dim, dim // 2, rng, dtype)
        self.n1 = LayerNorm(dim // 2, dtype)
        self.d2 = Linear(dim // 2, dim // 4, rng, dtype)
        self.n2 = LayerNorm(dim // 4, dtype)
        self.d3 = Linear(dim // 4, 3, rng, dtype)

    def decode(self, z) -> ad.Tensor:
        h = ad.relu(self.n1(self.d1(z)))
        h = ad.relu(self.n2(self.d2(h)))
        return ad.tanh(self.d3(h))

    def params(self, prefix: str = "ssl") -> dict:
        out = {f"{prefix}.mask_token": self.mask_token}
        out.update(collect_params({
            f"{prefix}.d1": self.d1, f"{prefix}.n1": self.n1,
            f"{prefix}.d2": self.d2, f"{prefix}.n2": self.n2,
            f"{prefix}.d3": self.d3,
        }))
        return out


def inverse_fusion(v_m_hat, v_t, rho) -> ad.Tensor:
    """Undo the fusion at masked positions: v_m_hat / (ln rho + 1) - v_t."""
    v_m_hat = v_m_hat if isinstance(v_m_hat, ad.Tensor) else ad.Tensor(v_m_hat)
    factor = intensity_factor(rho, v_m_hat.data.dtype)[..., None]
    return ad.sub(ad.div(v_m_hat, ad.Tensor(factor)), v_t)


def ssl_step(model: EventModel, head: SSLHead, x, y, p, ts, rho,
             mask: np.ndarray, train: bool = True,
             rng: np.random.Generator | None = None) -> ad.Tensor:
    """Masked-coordinate reconstruction loss for one batch.

    Masked positions keep their (ln rho + 1) factor but swap v_s + v_t
    for the learned mask token, so inverse fusion on the backbone output
    divides the factor back out.  Loss is MSE between decoded (x, y, p)
    and the normalized ground truth, masked positions only.
    """
    if model.cfg.pooling:
        raise ValueError("masked pretraining needs pooling disabled "
                         "(positions must survive to the output)")
    mask = np.asarray(mask, bool)
    if not mask.any():
        return ad.Tensor(np.asarray(0.0, model.dtype))
    emb = model.embedding.forward(x, y, p, ts, rho)
    m = mask[..., None].astype(model.dtype)
    base = ad.add(emb.v_s, emb.v_t)
    vm = ad.reshape(head.mask_token, (1, 1, model.cfg.dim))
    corrupted = ad.add(ad.mul(base, 1.0 - m), ad.mul(vm, m))
    h = ad.mul(corrupted, ad.Tensor(emb.factor))
    for blk in model.blocks:
        h = blk.forward(h, train, rng)
    out_m = ad.masked_select_rows(h, mask)
    vt_m = ad.masked_select_rows(emb.v_t, mask)
    v_hat_s = ad.sub(ad.div(out_m, ad.Tensor(emb.factor[mask])), vt_m)
    pred = head.decode(v_hat_s)
    gt = normalize_coords(x, y, p, model.geom, model.dtype)[mask]
    return ad.mse(pred, gt)
