"""Dense linear algebra and deterministic seeded sampling used by every module.

Vectors and matrices are plain float64 numpy arrays throughout the package;
matrices of data points are row-major, one point per row.
"""

from __future__ import annotations

import numpy as np

SYMMETRY_TOL = 1e-10


class RngStream:
    """Deterministic random stream with index-addressable substreams.

    The contract is reproducibility, not a particular generator: the same
    seed always yields the same sequence of draws within one build, and
    ``substream(i)`` derives an independent stream that is stable across
    runs. A stream is single-owner; hand each parallel consumer its own
    substream instead of sharing one.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = tuple(int(k) for k in _key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, self._key + (int(index),))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self._key})"


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")


def sym_eig(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(eigvals, eigvecs)`` with orthonormal eigenvectors in the
    columns of ``eigvecs``. Each eigenvector is sign-fixed so that its
    largest-magnitude entry is positive, making decompositions reproducible
    across runs. Raises ValueError for non-square, non-finite, or
    non-symmetric (beyond 1e-10) input.
    """
    S = np.asarray(matrix, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    _check_finite(S, "matrix")
    if S.size and np.max(np.abs(S - S.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric within 1e-10")

    # Symmetrize exactly before LAPACK so tiny asymmetries cannot leak in.
    S = 0.5 * (S + S.T)
    w, v = np.linalg.eigh(S)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    for j in range(v.shape[1]):
        col = v[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            v[:, j] = -col
    return w, v


def sample_diag_gaussian(rng: RngStream, mean: np.ndarray, var_diag: np.ndarray) -> np.ndarray:
    """Draw ``mean + sqrt(var) * z`` with z standard normal from ``rng``.

    ``var_diag`` must be elementwise nonnegative and finite; zero variance
    returns the mean exactly.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var_diag, dtype=float)
    _check_finite(var, "var_diag")
    if np.any(var < 0):
        raise ValueError("negative variance")
    z = rng.normal(mean.shape)
    return mean + np.sqrt(var) * z
