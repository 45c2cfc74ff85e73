"""Embedding-table analysis: PCA projections, color maps, vector fields.

PCA runs a cyclic Jacobi eigensolver written here (no linalg dependency)
on the mean-centered covariance; components are ordered by descending
eigenvalue with the sign fixed so each component's first nonzero entry
is positive.  Images are binary PPM (P6), the dependency-free format;
vector fields are plain CSV.
"""

from __future__ import annotations

import numpy as np

from .events import SensorGeometry


def _jacobi_eigh(C: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(C, np.float64)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.sqrt((A * A).sum()) + 1e-300
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (np.tril(A, -1) ** 2).sum())
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                vcol_p = V[:, p].copy()
                vcol_q = V[:, q].copy()
                V[:, p] = c * vcol_p - s * vcol_q
                V[:, q] = s * vcol_p + c * vcol_q
    return np.diag(A).copy(), V


def pca_project(table: np.ndarray, k: int):
    """Top-k principal projection of rows plus explained-variance ratios."""
    X = np.asarray(table, np.float64)
    if X.ndim != 2:
        raise ValueError("table must be 2-D")
    n, d = X.shape
    if k < 1 or k > d:
        raise ValueError(f"k {k} outside 1..{d}")
    if n < k:
        raise ValueError(f"need at least {k} rows, got {n}")
    Xc = X - X.mean(0)
    C = Xc.T @ Xc / max(n - 1, 1)
    w, V = _jacobi_eigh(C)
    w = np.maximum(w, 0.0)
    order = np.argsort(w)[::-1]
    w = w[order]
    V = V[:, order]
    comps = V[:, :k].copy()
    for j in range(k):
        col = comps[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0:
            comps[:, j] = -col
    total = w.sum()
    ratios = w[:k] / total if total > 0 else np.zeros(k)
    return Xc @ comps, ratios


# ---------------------------------------------------------------------------
# PPM images


def write_ppm(path: str, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("image must be (H, W, 3) uint8")
    H, W = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError("not a binary P6 file")
    W, H = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError("expected 8-bit maxval")
    data = parts[3][:W * H * 3]
    return np.frombuffer(data, np.uint8).reshape(H, W, 3)


def _minmax_u8(channels: np.ndarray) -> np.ndarray:
    out = np.zeros_like(channels)
    for j in range(channels.shape[1]):
        col = channels[:, j]
        lo, hi = col.min(), col.max()
        if hi > lo:
            out[:, j] = (col - lo) / (hi - lo)
    return np.rint(out * 255.0).astype(np.uint8)


def _polarity_rows(table: np.ndarray, geom: SensorGeometry,
                   polarity: int) -> np.ndarray:
    hw = geom.height * geom.width
    if table.shape[0] != geom.cells:
        raise ValueError(f"table rows {table.shape[0]} != cells {geom.cells}")
    if polarity not in (0, 1):
        raise ValueError("polarity must be 0 or 1")
    return np.asarray(table, np.float64)[polarity * hw:(polarity + 1) * hw]


def rgb_map(table: np.ndarray, geom: SensorGeometry, polarity: int,
            path: str | None = None) -> np.ndarray:
    """3-component PCA of one polarity's rows as an RGB image."""
    rows = _polarity_rows(table, geom, polarity)
    proj, _ = pca_project(rows, 3)
    img = _minmax_u8(proj).reshape(geom.height, geom.width, 3)
    if path is not None:
        write_ppm(path, img)
    return img


def cosine_map(table: np.ndarray, geom: SensorGeometry,
               path: str | None = None) -> np.ndarray:
    """Per-pixel cosine between the two polarity rows, as (cos+1)/2 gray."""
    a = _polarity_rows(table, geom, 0)
    b = _polarity_rows(table, geom, 1)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    cos = np.where(denom > 0, (a * b).sum(1) / np.where(denom > 0, denom, 1.0),
                   0.0)
    gray = np.rint((cos + 1.0) / 2.0 * 255.0).astype(np.uint8)
    img = np.repeat(gray.reshape(geom.height, geom.width, 1), 3, axis=2)
    if path is not None:
        write_ppm(path, img)
    return img


def vector_field(table: np.ndarray, geom: SensorGeometry, polarity: int,
                 path: str) -> None:
    """CSV of (x, y, u, v): 2-component PCA projection per coordinate."""
    rows = _polarity_rows(table, geom, polarity)
    proj, _ = pca_project(rows, 2)
    c = np.arange(rows.shape[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,u,v\n")
        for i in range(rows.shape[0]):
            fh.write(f"{c[i] % geom.width},{c[i] // geom.width},"
                     f"{proj[i, 0]:.8g},{proj[i, 1]:.8g}\n")


def neighbor_color_difference(img: np.ndarray) -> float:
    """Mean absolute difference between 4-adjacent pixels, all channels."""
    f = np.asarray(img, np.float64)
    dx = np.abs(f[:, 1:] - f[:, :-1])
    dy = np.abs(f[1:, :] - f[:-1, :])
    return float((dx.sum() + dy.sum()) / (dx.size + dy.size))


def embedding_table(model) -> np.ndarray:
    """The (cells x D) spatial table of a model, materialized if needed."""
    from .embedding import materialize_table
    spatial = model.embedding.spatial
    if hasattr(spatial, "table"):
        return np.array(spatial.table.data)
    return materialize_table(spatial)
