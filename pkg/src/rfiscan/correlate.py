"""Spatial correlation estimation and redundant-baseline lag collapse.

The sample correlation matrix averages snapshot outer products.  Because
the array is redundant, every ordered element pair with the same index
difference (z-difference ``lag_z``, y-difference ``lag_y``) sees the same
phase for a point source, so their correlations are summed into a small
lag matrix.  Only the non-negative lag quadrant is kept; the image
transform works directly on it.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ArrayGeometry, Direction, steering_vector


@dataclass
class SampleCorrelation:
    """Hermitian (n_elements x n_elements) sample correlation matrix."""

    matrix: np.ndarray
    s_count: int

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.ndim != 2 or self.matrix.shape != (n, n):
            raise ValueError("correlation matrix must be square")
        if self.s_count < 1:
            raise ValueError("s_count must be >= 1")


@dataclass
class LagCorrelation:
    """Summed correlations per index difference.

    ``lags[lag_z, lag_k]`` holds the sum over all ordered element pairs with
    z-index difference ``lag_z`` in [0, n_z) and y-index difference ``lag_k``
    in [0, n_y); ``counts`` holds how many pairs contributed to each entry.
    """

    lags: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.lags.shape != self.counts.shape:
            raise ValueError("lags and counts must have matching shapes")


def estimate_correlation(block) -> SampleCorrelation:
    """Average of snapshot outer products, Hermitian-symmetrized.

    The explicit (R + R^H)/2 step removes round-off asymmetry; it is a no-op
    in exact arithmetic.
    """
    data = block.data
    s_count = data.shape[0]
    if s_count < 1:
        raise ValueError("snapshot block is empty")
    matrix = (data.T @ data.conj()) / s_count
    matrix = (matrix + matrix.conj().T) / 2
    return SampleCorrelation(matrix=matrix, s_count=s_count)


def collapse_to_lags(corr: SampleCorrelation, geom: ArrayGeometry) -> LagCorrelation:
    """Sum correlations across redundant element pairs.

    Pairs are accumulated in row-major (n1, m1, n2, m2) order, which keeps
    the result bit-identical to a naive quadruple loop.  No averaging is
    applied here; the image transform divides by the element count.
    """
    n_y, n_z = geom.n_y, geom.n_z
    if corr.matrix.shape != (geom.n_elements, geom.n_elements):
        raise ValueError(
            f"correlation shape {corr.matrix.shape} does not match geometry "
            f"({geom.n_elements} elements)"
        )
    n1, m1, n2, m2 = np.meshgrid(
        np.arange(n_y), np.arange(n_z), np.arange(n_y), np.arange(n_z), indexing="ij"
    )
    lag_k = (n1 - n2).ravel()
    lag_z = (m1 - m2).ravel()
    keep = (lag_k >= 0) & (lag_z >= 0)
    rows = (n1 * n_z + m1).ravel()[keep]
    cols = (n2 * n_z + m2).ravel()[keep]

    lags = np.zeros((n_z, n_y), dtype=complex)
    np.add.at(lags, (lag_z[keep], lag_k[keep]), corr.matrix[rows, cols])
    counts = np.outer(n_z - np.arange(n_z), n_y - np.arange(n_y))
    return LagCorrelation(lags=lags, counts=counts)


def theoretical_correlation(
    geom: ArrayGeometry,
    emitters: list[tuple[Direction, float]],
    noise_power: float,
) -> SampleCorrelation:
    """Exact correlation matrix: sum of rank-one source terms plus noise."""
    n = geom.n_elements
    matrix = noise_power * np.eye(n, dtype=complex)
    for direction, power in emitters:
        a = steering_vector(geom, direction)
        matrix += power * np.outer(a, a.conj())
    return SampleCorrelation(matrix=matrix, s_count=1)


def save_complex64(path, array: np.ndarray, sidecar: dict) -> None:
    """Dump an array as little-endian complex64 with a JSON sidecar."""
    path = Path(path)
    array.astype("<c8").tofile(path)
    meta = dict(sidecar)
    meta["shape"] = list(array.shape)
    meta["dtype"] = "complex64-le"
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_complex64(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    array = np.fromfile(path, dtype="<c8").reshape(meta["shape"])
    return array, meta
