"""Dense real linear algebra and seeded Gaussian sampling.

All matrices are plain ``numpy.ndarray`` values with 64-bit float entries.
Randomness goes through :class:`Rng`, a counter-based splittable generator
keyed by ``(seed, stream)``: the same key always reproduces the same
sample sequence bit-for-bit, and distinct streams are statistically
independent, so parallel sweeps stay reproducible regardless of
scheduling.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Rng",
    "gaussian_matrix",
    "sym_eig_min",
    "sym_eig_max",
    "operator_norm",
    "frobenius_norm",
    "fro_distance",
    "check_finite",
    "symmetrize",
]

_MASK64 = (1 << 64) - 1
# 64-bit golden-ratio multiplier, the usual mixing constant for
# deriving well-separated child stream ids.
_GOLDEN = 0x9E3779B97F4A7C15


class Rng:
    """Splittable counter-based random generator (Philox under the hood).

    A value of this class is identified by ``(seed, stream)``.  Drawing
    samples advances internal state, so an ``Rng`` is an owned value:
    hand a child (from :meth:`split`) to each parallel task instead of
    sharing one instance.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = (self.stream << 64) | self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, index: int) -> "Rng":
        """Child generator for sub-task ``index``; independent of the parent."""
        child = (self.stream * _GOLDEN + index + 1) & _MASK64
        return Rng(self.seed, child)

    def normal(self, shape) -> np.ndarray:
        """I.i.d. standard normal array of the given shape."""
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Rng(seed={self.seed}, stream={self.stream})"


def check_finite(a: np.ndarray, label: str = "matrix") -> np.ndarray:
    """Raise ``ValueError`` if ``a`` contains NaN or Inf; return ``a``."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{label} contains non-finite entries")
    return a


def gaussian_matrix(rows: int, cols: int, rng: Rng) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. standard normals, deterministic per rng."""
    if rows < 1 or cols < 1:
        raise ValueError("gaussian_matrix requires rows, cols >= 1")
    return rng.normal((rows, cols))


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Exactly symmetric copy of ``a`` (average with its transpose)."""
    a = check_finite(a, "symmetric matrix")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    return 0.5 * (a + a.T)


def sym_eig_min(a: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix (full dense spectrum).

    Sizes in this project are small (n up to a few hundred), so a full
    symmetric eigendecomposition is used for robustness over speed.
    """
    return float(np.linalg.eigvalsh(symmetrize(a))[0])


def sym_eig_max(a: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(symmetrize(a))[-1])


def operator_norm(a: np.ndarray) -> float:
    """Largest singular value via block power iteration on ``A^T A``.

    A single power vector stalls when the top two singular values nearly
    coincide (routine for large Gaussian matrices, whose edge spectrum
    is clustered), so a small orthonormal block is iterated instead: the
    convergence ratio is set by the gap to the first singular value
    *outside* the block.  Converges to relative tolerance 1e-8 with an
    iteration cap of ``10 * max(rows, cols)``; hitting the cap raises
    ``RuntimeError`` carrying the last estimate.
    """
    a = check_finite(a, "operator_norm argument")
    if a.ndim != 2:
        raise ValueError("operator_norm expects a 2-D matrix")
    rows, cols = a.shape
    block = min(4, rows, cols)
    # Deterministic, generic start block (fixed key so repeated calls agree).
    v = Rng(0xC0FFEE, cols).normal((cols, block))
    v, _ = np.linalg.qr(v)
    cap = 10 * max(rows, cols)
    estimate = 0.0
    for _ in range(cap):
        w = a @ v
        s = np.linalg.norm(w, axis=0).max()
        if s == 0.0:
            return 0.0
        v = a.T @ w
        if not np.any(v):
            return float(s)
        v, _ = np.linalg.qr(v)
        # Ritz estimate of the top singular value from the block.
        top = float(np.linalg.norm(a @ v, ord=2))
        if abs(top - estimate) <= 1e-8 * max(top, 1e-300):
            return top
        estimate = top
    raise RuntimeError(
        f"operator_norm power iteration hit cap {cap}; last estimate {estimate!r}"
    )


def frobenius_norm(a: np.ndarray) -> float:
    """Square root of the sum of squared entries."""
    return float(np.linalg.norm(check_finite(a, "frobenius_norm argument")))


def fro_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius norm of ``a - b``; shapes must match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return frobenius_norm(a - b)
