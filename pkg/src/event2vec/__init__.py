"""event2vec: learned embeddings for event-camera streams.

Raw sensor events (x, y, t, p) or clustered weighted events become
sequences of D-dimensional vectors via spatial + temporal embeddings
fused as V = (ln rho + 1)(v_s + v_t), feeding a small bidirectional
transformer with forgetting-gate attention.  Everything runs on numpy
with a built-in reverse-mode autodiff; no deep-learning framework.
"""

__version__ = "0.1.0"

from .events import EventStream, SensorGeometry, WeightedEventStream  # noqa: F401
