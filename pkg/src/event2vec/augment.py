"""Event-level data augmentation.

Geometric transforms run on floating-point copies of the coordinates and
pivot about the image center ((W-1)/2, (H-1)/2), except translation (an
absolute shift) and horizontal flip (x -> (W-1)-x). A full pipeline keeps
coordinates in float across all enabled transforms, rounds once at the end
(half away from zero), and then drops events that left the sensor.
Timestamps and polarities are never modified; chunk dropout removes whole
runs of sequence positions but preserves relative order.

The default `AugmentConfig` reproduces the gesture-recognition recipe:
each geometric transform enabled with probability 0.6, erase with 0.1,
and up to 8 dropped chunks of 1..256 sequence positions each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream, SensorGeometry


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


@dataclass
class _FloatEvents:
    """Pipeline-internal float-coordinate view of a stream."""

    fx: np.ndarray
    fy: np.ndarray
    t: np.ndarray
    p: np.ndarray

    @staticmethod
    def from_stream(s: EventStream) -> "_FloatEvents":
        return _FloatEvents(s.x.astype(np.float64), s.y.astype(np.float64), s.t, s.p)

    def quantized(self, geom: SensorGeometry) -> EventStream:
        qx = _round_half_away(self.fx)
        qy = _round_half_away(self.fy)
        keep = (qx >= 0) & (qx <= geom.width - 1) & (qy >= 0) & (qy <= geom.height - 1)
        return EventStream(qx[keep].astype(np.uint16), qy[keep].astype(np.uint16),
                           self.t[keep], self.p[keep])


def _center(geom: SensorGeometry) -> tuple[float, float]:
    return (geom.width - 1) / 2.0, (geom.height - 1) / 2.0


def _resize_f(ev: _FloatEvents, geom, s_x: float, s_y: float) -> _FloatEvents:
    if s_x <= 0 or s_y <= 0:
        raise ValueError("resize scales must be positive")
    cx, cy = _center(geom)
    return _FloatEvents(s_x * (ev.fx - cx) + cx, s_y * (ev.fy - cy) + cy, ev.t, ev.p)


def _rotate_f(ev: _FloatEvents, geom, degrees: float) -> _FloatEvents:
    cx, cy = _center(geom)
    rad = np.deg2rad(degrees)
    c, s = np.cos(rad), np.sin(rad)
    dx, dy = ev.fx - cx, ev.fy - cy
    return _FloatEvents(c * dx - s * dy + cx, s * dx + c * dy + cy, ev.t, ev.p)


def _shear_f(ev: _FloatEvents, geom, lam_x: float, lam_y: float) -> _FloatEvents:
    cx, cy = _center(geom)
    return _FloatEvents(ev.fx + lam_x * (ev.fy - cy), ev.fy + lam_y * (ev.fx - cx),
                        ev.t, ev.p)


def _translate_f(ev: _FloatEvents, d_x: float, d_y: float) -> _FloatEvents:
    return _FloatEvents(ev.fx + d_x, ev.fy + d_y, ev.t, ev.p)


def _flip_h_f(ev: _FloatEvents, geom) -> _FloatEvents:
    return _FloatEvents((geom.width - 1) - ev.fx, ev.fy, ev.t, ev.p)


def _erase_f(ev: _FloatEvents, center, size) -> _FloatEvents:
    cx, cy = center
    h, w = size
    if h < 0 or w < 0:
        raise ValueError("erase size must be non-negative")
    inside = (np.abs(ev.fx - cx) < w / 2.0) & (np.abs(ev.fy - cy) < h / 2.0)
    keep = ~inside
    return _FloatEvents(ev.fx[keep], ev.fy[keep], ev.t[keep], ev.p[keep])


def _chunk_dropout_f(ev: _FloatEvents, chunks) -> _FloatEvents:
    n = len(ev.fx)
    if n == 0:
        return ev
    pos = np.arange(n) / n
    drop = np.zeros(n, bool)
    for start, length in chunks:
        if not (0.0 <= start <= 1.0 and 0.0 <= length <= 1.0):
            raise ValueError("chunk fractions must lie in [0, 1]")
        drop |= (pos >= start) & (pos < start + length)
    keep = ~drop
    return _FloatEvents(ev.fx[keep], ev.fy[keep], ev.t[keep], ev.p[keep])


def resize(stream: EventStream, geom: SensorGeometry, s_x: float, s_y: float) -> EventStream:
    """Scale coordinates about the image center, then round and refilter."""
    return _resize_f(_FloatEvents.from_stream(stream), geom, s_x, s_y).quantized(geom)


def rotate(stream: EventStream, geom: SensorGeometry, degrees: float) -> EventStream:
    """Rotate coordinates about the image center."""
    return _rotate_f(_FloatEvents.from_stream(stream), geom, degrees).quantized(geom)


def shear(stream: EventStream, geom: SensorGeometry, lam_x: float, lam_y: float) -> EventStream:
    """Shear about the center: x += lam_x*(y-cy), y += lam_y*(x-cx)."""
    return _shear_f(_FloatEvents.from_stream(stream), geom, lam_x, lam_y).quantized(geom)


def translate(stream: EventStream, geom: SensorGeometry, d_x: float, d_y: float) -> EventStream:
    """Shift all coordinates by (d_x, d_y)."""
    return _translate_f(_FloatEvents.from_stream(stream), d_x, d_y).quantized(geom)


def flip_h(stream: EventStream, geom: SensorGeometry) -> EventStream:
    """Mirror horizontally: x -> (W-1) - x."""
    return _flip_h_f(_FloatEvents.from_stream(stream), geom).quantized(geom)


def erase(stream: EventStream, geom: SensorGeometry, center, size) -> EventStream:
    """Remove events strictly inside the h x w rectangle centered at (c_x, c_y)."""
    return _erase_f(_FloatEvents.from_stream(stream), center, size).quantized(geom)


def temporal_chunk_dropout(stream: EventStream, chunks) -> EventStream:
    """Remove events whose sequence-position fraction falls in any chunk.

    `chunks` is a sequence of (start fraction, length fraction) pairs over
    normalized positions i/N.
    """
    n = len(stream)
    if n == 0:
        return stream
    ev = _chunk_dropout_f(_FloatEvents.from_stream(stream), chunks)
    return EventStream(ev.fx.astype(np.uint16), ev.fy.astype(np.uint16), ev.t, ev.p)


@dataclass(frozen=True)
class AugmentConfig:
    """Pipeline recipe; defaults follow the gesture-task settings."""

    transform_prob: float = 0.6
    resize_range: tuple = (0.8, 1.2)
    rotate_range: tuple = (-10.0, 10.0)
    shear_range: tuple = (-0.02, 0.02)
    translate_range: tuple = (-16.0, 16.0)
    flip_prob: float = 0.0
    erase_prob: float = 0.1
    erase_size_range: tuple = (0.0, 16.0)
    chunk_count_range: tuple = (0, 8)
    chunk_len_range: tuple = (1, 256)
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("resize_range", "rotate_range", "shear_range",
                     "translate_range", "erase_size_range",
                     "chunk_count_range", "chunk_len_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered (low <= high)")
        for name in ("transform_prob", "flip_prob", "erase_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @staticmethod
    def disabled() -> "AugmentConfig":
        return AugmentConfig(transform_prob=0.0, flip_prob=0.0, erase_prob=0.0,
                             chunk_count_range=(0, 0))


def apply_pipeline(stream: EventStream, geom: SensorGeometry,
                   config: AugmentConfig, rng=None) -> EventStream:
    """Apply the enabled transforms in a fixed order on float coordinates,
    then quantize once and keep only events still on the sensor.

    Draw order (fixed for reproducibility): resize, rotate, shear,
    translate, flip, erase, chunk dropout.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    ev = _FloatEvents.from_stream(stream)

    if rng.random() < config.transform_prob:
        s_x = rng.uniform(*config.resize_range)
        s_y = rng.uniform(*config.resize_range)
        ev = _resize_f(ev, geom, s_x, s_y)
    if rng.random() < config.transform_prob:
        ev = _rotate_f(ev, geom, rng.uniform(*config.rotate_range))
    if rng.random() < config.transform_prob:
        lam_x = rng.uniform(*config.shear_range)
        lam_y = rng.uniform(*config.shear_range)
        ev = _shear_f(ev, geom, lam_x, lam_y)
    if rng.random() < config.transform_prob:
        d_x = rng.uniform(*config.translate_range)
        d_y = rng.uniform(*config.translate_range)
        ev = _translate_f(ev, d_x, d_y)
    if rng.random() < config.flip_prob:
        ev = _flip_h_f(ev, geom)
    if rng.random() < config.erase_prob:
        center = (rng.uniform(0, geom.width - 1), rng.uniform(0, geom.height - 1))
        size = (rng.uniform(*config.erase_size_range), rng.uniform(*config.erase_size_range))
        ev = _erase_f(ev, center, size)
    lo, hi = config.chunk_count_range
    n_chunks = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    if n_chunks > 0 and len(ev.fx) > 0:
        n = len(ev.fx)
        chunks = []
        for _ in range(n_chunks):
            length = int(rng.integers(config.chunk_len_range[0],
                                      config.chunk_len_range[1] + 1)) / n
            start = rng.uniform(0.0, 1.0)
            chunks.append((start, min(length, 1.0)))
        ev = _chunk_dropout_f(ev, chunks)

    return ev.quantized(geom)
