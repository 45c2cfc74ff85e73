"""Event file codecs, dataset manifests, and the synthetic stream generator.

Binary format (little-endian): magic "EV2V", version u16 = 1, width u16,
height u16, reserved u16 = 0, count u64; then `count` records of
(x u16, y u16, t i64, p u8), 13 bytes each. The weighted variant uses magic
"EV2W" and appends rho u32 to each record (17 bytes). Round trips are
bit-exact.

CSV carries a "x,y,t,p" header row. A dataset manifest is a text file whose
first line is "geometry W H classes C" followed by one "path<TAB>label" line
per stream file.

The synthetic generator stands in for real recordings: a bright bar sweeps
once across the frame (class = sweep direction), its leading edge emitting
ON events and its trailing edge OFF events, with a class-dependent temporal
rhythm and a configurable fraction of uniform noise events.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .events import (
    EventStream,
    SensorGeometry,
    WeightedEventStream,
    check_valid,
    sort_by_time,
)

MAGIC_EVENTS = b"EV2V"
MAGIC_WEIGHTED = b"EV2W"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHHHQ")
_EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "u1")])
_WEIGHTED_DTYPE = np.dtype(_EVENT_DTYPE.descr + [("rho", "<u4")])


class CodecError(ValueError):
    """Base class for decode failures."""


class BadMagicError(CodecError):
    pass


class VersionError(CodecError):
    pass


class TruncatedError(CodecError):
    pass


def _open_sink(sink):
    if hasattr(sink, "write"):
        return sink, False
    return open(sink, "wb"), True


def _open_source(source):
    if hasattr(source, "read"):
        return source, False
    return open(source, "rb"), True


def _pack_records(stream, dtype, with_rho):
    rec = np.empty(len(stream), dtype)
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["t"] = stream.t
    rec["p"] = stream.p
    if with_rho:
        rec["rho"] = stream.rho
    return rec


def _encode(stream, geom, sink, magic, dtype, with_rho) -> int:
    check_valid(stream, geom)
    header = _HEADER.pack(magic, FORMAT_VERSION, geom.width, geom.height, 0, len(stream))
    payload = _pack_records(stream, dtype, with_rho).tobytes()
    f, should_close = _open_sink(sink)
    try:
        f.write(header)
        f.write(payload)
    finally:
        if should_close:
            f.close()
    return len(header) + len(payload)


def _decode(source, magic, dtype, with_rho):
    f, should_close = _open_source(source)
    try:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TruncatedError(f"header truncated: {len(head)} < {_HEADER.size} bytes")
        got_magic, version, width, height, _, count = _HEADER.unpack(head)
        if got_magic != magic:
            raise BadMagicError(f"bad magic {got_magic!r}, expected {magic!r}")
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported version {version}")
        payload = f.read(count * dtype.itemsize)
        if len(payload) < count * dtype.itemsize:
            raise TruncatedError(
                f"payload truncated: {len(payload)} < {count * dtype.itemsize} bytes")
        rec = np.frombuffer(payload, dtype, count)
        geom = SensorGeometry(width, height)
        if with_rho:
            stream = WeightedEventStream(rec["x"], rec["y"], rec["t"], rec["p"], rec["rho"])
        else:
            stream = EventStream(rec["x"], rec["y"], rec["t"], rec["p"])
        return stream, geom
    finally:
        if should_close:
            f.close()


def encode_binary(stream: EventStream, geom: SensorGeometry, sink) -> int:
    """Write a stream in the EV2V binary format; returns bytes written."""
    return _encode(stream, geom, sink, MAGIC_EVENTS, _EVENT_DTYPE, False)


def decode_binary(source) -> tuple[EventStream, SensorGeometry]:
    """Read an EV2V file back into a stream and its geometry."""
    return _decode(source, MAGIC_EVENTS, _EVENT_DTYPE, False)


def encode_weighted(stream: WeightedEventStream, geom: SensorGeometry, sink) -> int:
    """Write a weighted stream in the EV2W binary format."""
    return _encode(stream, geom, sink, MAGIC_WEIGHTED, _WEIGHTED_DTYPE, True)


def decode_weighted(source) -> tuple[WeightedEventStream, SensorGeometry]:
    """Read an EV2W file back into a weighted stream and its geometry."""
    return _decode(source, MAGIC_WEIGHTED, _WEIGHTED_DTYPE, True)


def write_csv(stream: EventStream, sink) -> None:
    """Write a stream as CSV with an x,y,t,p header row."""
    f, should_close = (sink, False) if hasattr(sink, "write") else (open(sink, "w"), True)
    try:
        f.write("x,y,t,p\n")
        for i in range(len(stream)):
            f.write(f"{stream.x[i]},{stream.y[i]},{stream.t[i]},{stream.p[i]}\n")
    finally:
        if should_close:
            f.close()


def read_csv(source) -> EventStream:
    """Parse a x,y,t,p CSV; malformed rows raise with their line number."""
    f, should_close = (source, False) if hasattr(source, "read") else (open(source), True)
    try:
        lines = f.read().splitlines()
    finally:
        if should_close:
            f.close()
    if not lines or lines[0].strip() != "x,y,t,p":
        raise CodecError("missing x,y,t,p header row")
    cols: list[list[int]] = [[], [], [], []]
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise CodecError(f"parse error at line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            values = [int(v) for v in parts]
        except ValueError as e:
            raise CodecError(f"parse error at line {lineno}: {e}") from None
        for c, v in zip(cols, values):
            c.append(v)
    return EventStream(*[np.array(c, np.int64) for c in cols])


@dataclass(frozen=True)
class DatasetManifest:
    """List of (stream file path, class label) with geometry and class count."""

    entries: tuple
    class_count: int
    geometry: SensorGeometry

    def __post_init__(self) -> None:
        paths = [p for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        for p, label in self.entries:
            if not 0 <= label < self.class_count:
                raise ValueError(f"label {label} outside [0, {self.class_count}) for {p}")


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w") as f:
        g = manifest.geometry
        f.write(f"geometry {g.width} {g.height} classes {manifest.class_count}\n")
        for p, label in manifest.entries:
            f.write(f"{p}\t{label}\n")


def read_manifest(path) -> DatasetManifest:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise CodecError("empty manifest")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "geometry" or head[3] != "classes":
        raise CodecError("manifest header must be 'geometry W H classes C'")
    geom = SensorGeometry(int(head[1]), int(head[2]))
    class_count = int(head[4])
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CodecError(f"manifest parse error at line {lineno}")
        entries.append((parts[0], int(parts[1])))
    return DatasetManifest(tuple(entries), class_count, geom)


# ---------------------------------------------------------------------------
# Synthetic moving-bar generator


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of one synthetic stream: class, rate, duration, noise, seed."""

    class_id: int
    rate_per_ms: float = 20.0
    duration_ms: float = 300.0
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rate_per_ms <= 0 or self.duration_ms <= 0:
            raise ValueError("rate and duration must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise fraction must lie in [0, 1]")
        if not 0 <= self.class_id < len(CLASS_NAMES):
            raise ValueError(f"class id must be in [0, {len(CLASS_NAMES)})")


CLASS_NAMES = ("right", "left", "up", "down")
DEFAULT_GEOMETRY = SensorGeometry(64, 64)
# Rate-modulation rhythm: cycles over the stream duration per class pair
# (horizontal movers share one frequency, vertical movers another) and the
# modulation depth. The pairing gives purely temporal evidence of the motion
# axis, while telling left from right (or up from down) needs spatial cues.
RHYTHM_CYCLES = (1.0, 1.0, 4.0, 4.0)
RHYTHM_DEPTH = 0.85
BAR_EDGE_OFFSET = 1.25  # pixels between bar center and each emitting edge
BAR_COVER = 0.25  # fraction of the cross axis the bar segment spans
SWEEP_STRETCH = 1.5  # log-uniform bound on the per-stream sweep warp exponent


def _rhythm_times(rng, n, duration_us, cycles, depth):
    """Draw n event times from rate(t) = 1 + depth*sin(2*pi*cycles*t/T)."""
    grid = np.linspace(0.0, 1.0, 4097)
    density = 1.0 + depth * np.sin(2.0 * np.pi * cycles * grid)
    cdf = np.concatenate([[0.0], np.cumsum((density[1:] + density[:-1]) * 0.5)])
    cdf /= cdf[-1]
    u = rng.random(n)
    frac = np.interp(u, cdf, grid)
    return np.sort((frac * duration_us).astype(np.int64))


def generate_synthetic(spec: SyntheticSpec,
                       geom: SensorGeometry = DEFAULT_GEOMETRY) -> tuple[EventStream, int]:
    """Generate one labeled stream; deterministic given spec.seed."""
    rng = np.random.default_rng(spec.seed)
    duration_us = int(round(spec.duration_ms * 1000.0))
    total = int(round(spec.rate_per_ms * spec.duration_ms))
    n_noise = int(round(total * spec.noise))
    n_signal = total - n_noise

    horizontal = spec.class_id in (0, 1)
    span = geom.width if horizontal else geom.height
    cross = geom.height if horizontal else geom.width

    t = _rhythm_times(rng, n_signal, duration_us,
                      RHYTHM_CYCLES[spec.class_id], RHYTHM_DEPTH)
    # Single full sweep, no wraparound: center runs from just outside one
    # border to just outside the other. A per-stream warp exponent perturbs
    # the position-vs-time profile so timing alone does not pin the bar down.
    margin = 2.0 * BAR_EDGE_OFFSET
    frac = t / max(duration_us, 1)
    warp = np.exp(rng.uniform(-np.log(SWEEP_STRETCH), np.log(SWEEP_STRETCH)))
    center = (frac ** warp) * (span - 1 + 2 * margin) - margin
    if spec.class_id in (1, 2):  # leftward or upward: reverse direction
        center = (span - 1) - center

    # The bar covers only a short segment of the cross axis, placed at a
    # per-stream random offset, so each stream lights a different band of
    # pixels and no single stream reveals the whole sensor.
    seg = min(max(1.0, BAR_COVER * (cross - 1)), float(cross - 1))
    seg_off = rng.uniform(0.0, max(0.0, cross - 1 - seg))
    sign = np.where(rng.random(n_signal) < 0.5, 1.0, -1.0)
    direction = 1.0 if spec.class_id in (0, 3) else -1.0
    along = center + direction * sign * BAR_EDGE_OFFSET + rng.normal(0.0, 0.4, n_signal)
    across = seg_off + rng.uniform(0.0, seg, n_signal)
    polarity = (sign > 0).astype(np.uint8)  # leading edge ON, trailing OFF

    along = np.clip(np.round(along), 0, span - 1)
    across = np.round(across)
    if horizontal:
        x, y = along, across
    else:
        x, y = across, along

    nx = rng.integers(0, geom.width, n_noise)
    ny = rng.integers(0, geom.height, n_noise)
    nt = rng.integers(0, duration_us, n_noise)
    npol = rng.integers(0, 2, n_noise).astype(np.uint8)

    stream = EventStream(
        np.concatenate([x.astype(np.uint16), nx.astype(np.uint16)]),
        np.concatenate([y.astype(np.uint16), ny.astype(np.uint16)]),
        np.concatenate([t, nt.astype(np.int64)]),
        np.concatenate([polarity, npol]),
    )
    return sort_by_time(stream), spec.class_id


def synthetic_dataset(n_streams: int, base_seed: int,
                      geom: SensorGeometry = DEFAULT_GEOMETRY,
                      rate_per_ms: float = 20.0, duration_ms: float = 300.0,
                      noise: float = 0.1):
    """Generate n_streams labeled streams cycling through the classes.

    Returns (streams, labels). Per-stream seeds derive from base_seed via
    SeedSequence spawning, so any (n_streams, base_seed) pair is reproducible.
    """
    seeds = np.random.SeedSequence(base_seed).generate_state(n_streams)
    streams, labels = [], []
    for i in range(n_streams):
        spec = SyntheticSpec(i % len(CLASS_NAMES), rate_per_ms, duration_ms,
                             noise, int(seeds[i]))
        s, label = generate_synthetic(spec, geom)
        streams.append(s)
        labels.append(label)
    return streams, np.array(labels, np.int64)


def write_synthetic_dataset(directory, n_streams: int, base_seed: int,
                            geom: SensorGeometry = DEFAULT_GEOMETRY,
                            **kwargs) -> DatasetManifest:
    """Materialize a synthetic dataset as EV2V files plus a manifest."""
    os.makedirs(directory, exist_ok=True)
    streams, labels = synthetic_dataset(n_streams, base_seed, geom, **kwargs)
    entries = []
    for i, (s, label) in enumerate(zip(streams, labels)):
        name = f"stream_{i:05d}.ev2v"
        encode_binary(s, geom, os.path.join(directory, name))
        entries.append((name, int(label)))
    manifest = DatasetManifest(tuple(entries), len(CLASS_NAMES), geom)
    write_manifest(manifest, os.path.join(directory, "manifest.txt"))
    return manifest


def load_manifest_streams(manifest_path):
    """Load every stream named by a manifest into memory."""
    manifest = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    streams, labels = [], []
    for rel, label in manifest.entries:
        stream, geom = decode_binary(os.path.join(base, rel))
        if (geom.width, geom.height) != (manifest.geometry.width, manifest.geometry.height):
            raise CodecError(f"geometry mismatch for {rel}")
        streams.append(stream)
        labels.append(label)
    return streams, np.array(labels, np.int64), manifest
