"""Core event-stream data model.

Address-event representation: each event is a tuple (x, y, t, p) with pixel
coordinates, a microsecond timestamp, and a polarity bit. Streams store the
four fields as parallel numpy arrays. A weighted stream additionally carries
an intensity count rho per event (how many raw events an aggregated event
stands for).

All operations here are pure functions; streams are treated as immutable
value data after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

X_DTYPE = np.uint16
Y_DTYPE = np.uint16
T_DTYPE = np.int64
P_DTYPE = np.uint8
RHO_DTYPE = np.uint32


@dataclass(frozen=True)
class SensorGeometry:
    """Sensor dimensions: width, height, and polarity count (always 2)."""

    width: int
    height: int
    polarities: int = 2

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"geometry must be positive, got {self.width}x{self.height}")
        if self.polarities != 2:
            raise ValueError(f"polarity count must be 2, got {self.polarities}")

    @property
    def cells(self) -> int:
        """Number of distinct (x, y, p) coordinates."""
        return self.polarities * self.height * self.width


@dataclass(frozen=True)
class EventStream:
    """Parallel arrays of event fields, nominally sorted by timestamp."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=X_DTYPE))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=Y_DTYPE))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=T_DTYPE))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=P_DTYPE))
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == n):
            raise ValueError("event field arrays must have equal length")

    def __len__(self) -> int:
        return len(self.x)

    def take(self, idx: np.ndarray) -> "EventStream":
        return EventStream(self.x[idx], self.y[idx], self.t[idx], self.p[idx])

    def equals(self, other: "EventStream") -> bool:
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    @staticmethod
    def empty() -> "EventStream":
        return EventStream(np.array([], X_DTYPE), np.array([], Y_DTYPE),
                           np.array([], T_DTYPE), np.array([], P_DTYPE))


@dataclass(frozen=True)
class WeightedEventStream:
    """An event stream whose events carry an intensity count rho >= 1."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    rho: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=X_DTYPE))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=Y_DTYPE))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=T_DTYPE))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=P_DTYPE))
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=RHO_DTYPE))
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == len(self.rho) == n):
            raise ValueError("event field arrays must have equal length")
        if n and self.rho.min() < 1:
            raise ValueError("rho must be >= 1 for every event")

    def __len__(self) -> int:
        return len(self.x)

    def take(self, idx: np.ndarray) -> "WeightedEventStream":
        return WeightedEventStream(self.x[idx], self.y[idx], self.t[idx],
                                   self.p[idx], self.rho[idx])

    def unweighted(self) -> EventStream:
        return EventStream(self.x, self.y, self.t, self.p)

    def equals(self, other: "WeightedEventStream") -> bool:
        return self.unweighted().equals(other.unweighted()) and np.array_equal(self.rho, other.rho)

    @staticmethod
    def from_events(stream: EventStream, rho: np.ndarray | None = None) -> "WeightedEventStream":
        if rho is None:
            rho = np.ones(len(stream), RHO_DTYPE)
        return WeightedEventStream(stream.x, stream.y, stream.t, stream.p, rho)


def flat_index(x, y, p, geom: SensorGeometry) -> np.ndarray:
    """Flatten (x, y, p) into p*H*W + y*W + x. Accepts scalars or arrays."""
    x = np.asarray(x, np.int64)
    y = np.asarray(y, np.int64)
    p = np.asarray(p, np.int64)
    if np.any((x < 0) | (x >= geom.width)) or np.any((y < 0) | (y >= geom.height)):
        raise ValueError("coordinate out of sensor range")
    if np.any((p < 0) | (p >= geom.polarities)):
        raise ValueError("polarity out of range")
    return p * (geom.height * geom.width) + y * geom.width + x


def unflatten(c, geom: SensorGeometry):
    """Inverse of flat_index: c -> (x, y, p)."""
    c = np.asarray(c, np.int64)
    if np.any((c < 0) | (c >= geom.cells)):
        raise ValueError("flat index out of range")
    x = c % geom.width
    y = (c // geom.width) % geom.height
    p = c // (geom.height * geom.width)
    return x, y, p


def delta_t(ts: np.ndarray) -> np.ndarray:
    """First-order timestamp differences, padded with a trailing 0."""
    ts = np.asarray(ts, T_DTYPE)
    out = np.zeros(len(ts), T_DTYPE)
    if len(ts) > 1:
        out[:-1] = ts[1:] - ts[:-1]
    return out


def validate(stream, geom: SensorGeometry) -> list[str]:
    """Return a list of violation descriptions; an empty list means valid."""
    report: list[str] = []
    n = len(stream)
    if n == 0:
        return report
    bad_t = np.nonzero(np.diff(stream.t.astype(np.int64)) < 0)[0]
    for i in bad_t:
        report.append(f"sortedness violation at index {i + 1}")
    bad_x = np.nonzero(stream.x.astype(np.int64) >= geom.width)[0]
    for i in bad_x:
        report.append(f"x range violation at index {i}: {stream.x[i]} >= {geom.width}")
    bad_y = np.nonzero(stream.y.astype(np.int64) >= geom.height)[0]
    for i in bad_y:
        report.append(f"y range violation at index {i}: {stream.y[i]} >= {geom.height}")
    bad_p = np.nonzero(stream.p.astype(np.int64) >= geom.polarities)[0]
    for i in bad_p:
        report.append(f"polarity range violation at index {i}: {stream.p[i]}")
    return report


def check_valid(stream, geom: SensorGeometry) -> None:
    """Raise ValueError when validate() reports any violation."""
    report = validate(stream, geom)
    if report:
        raise ValueError("invalid stream: " + "; ".join(report[:5]))


def sort_by_time(stream):
    """Stable sort of a stream (weighted or not) by timestamp."""
    order = np.argsort(stream.t, kind="stable")
    return stream.take(order)


def quantize_resolution(stream: EventStream, geom: SensorGeometry,
                        width: int, height: int) -> EventStream:
    """Degrade spatial resolution: scale coords to width x height, round,
    then scale back to the native geometry and round again.

    Used by robustness evaluations; width = height = 1 collapses every event
    onto one pixel, erasing all spatial information.
    """
    if width < 1 or height < 1:
        raise ValueError("target resolution must be positive")

    def requant(v, native, target):
        lo = np.clip(np.round(v.astype(np.float64) * (target / native)), 0, target - 1)
        return np.clip(np.round(lo * (native / target)), 0, native - 1).astype(v.dtype)

    return EventStream(requant(stream.x, geom.width, width),
                       requant(stream.y, geom.height, height),
                       stream.t, stream.p)
