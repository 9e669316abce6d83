"""Dense linear algebra, iterative solvers, and reproducible random streams.

Vectors are 1-d float64 ndarrays, matrices 2-d float64 ndarrays. Everything
here is deterministic given its inputs; randomness only enters through
:class:`SeededRng`, which is counter-based so that separate streams never
interfere with each other.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class EigenConvergenceError(RuntimeError):
    """Symmetric eigendecomposition failed to converge."""


class SeededRng:
    """Reproducible random source backed by a counter-based generator.

    A ``(seed, stream)`` pair fully determines the draw sequence, on any
    platform. Use :meth:`split` to derive an independent stream: drawing
    more (or fewer) values from one stream never perturbs another.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def split(self, stream: int) -> "SeededRng":
        """Independent stream with the same seed."""
        return SeededRng(self.seed, stream)

    def standard_normal(self, shape=None) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k indices drawn uniformly from range(n) without replacement, sorted."""
        idx = self.generator.choice(n, size=k, replace=False)
        return np.sort(idx)


def gaussian_matrix(rng: SeededRng, d: int, m: int) -> np.ndarray:
    """d x m matrix of i.i.d. standard normal entries."""
    if d < 1 or m < 1:
        raise ValueError(f"gaussian_matrix needs d, m >= 1, got d={d}, m={m}")
    return rng.standard_normal((d, m))


def orthonormalize(y: np.ndarray, rank_tol: float = 1e-10) -> tuple[np.ndarray, int]:
    """Orthonormal basis for the numerically significant column space of y.

    Returns ``(q, ell)`` where q is d x ell with orthonormal columns spanning
    the columns of y whose singular values exceed ``rank_tol * sigma_max``.
    An all-zero y yields ``ell = 0`` and an empty q; the caller decides how
    to proceed. Works as QR of y followed by an SVD of the small R factor,
    so no d x d matrix is ever formed.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("y must be a 2-d array")
    d, m = y.shape
    if d < 1 or m < 1:
        raise ValueError("y must be non-empty")
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    if not np.any(y):
        return np.zeros((d, 0)), 0
    q0, r = np.linalg.qr(y, mode="reduced")
    u, s, _ = np.linalg.svd(r)
    if s[0] <= 0.0:
        return np.zeros((d, 0)), 0
    ell = int(np.count_nonzero(s > rank_tol * s[0]))
    q = q0 @ u[:, :ell]
    return q, ell


def symmetric_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a (nearly) symmetric matrix.

    The input is symmetrized as (a + a') / 2 first. Returns ``(v, lam)``
    with orthonormal eigenvector columns v and eigenvalues lam in
    descending order, so that ``a ~= v @ diag(lam) @ v.T``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("a must be square")
    sym = 0.5 * (a + a.T)
    try:
        lam, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(str(exc)) from exc
    order = np.argsort(lam)[::-1]
    return v[:, order], lam[order]


def conjugate_gradient(apply_a: Callable[[np.ndarray], np.ndarray],
                       b: np.ndarray,
                       iters: int,
                       damping: float = 0.0,
                       residual_tol: float = 1e-10) -> np.ndarray:
    """Solve (A + damping*I) x = b for symmetric PSD A given as an operator.

    Runs at most ``iters`` conjugate-gradient steps, stopping early once the
    residual norm drops below ``residual_tol * ||b||``. Returns the iterate
    with the smallest residual seen, so more iterations never yield a worse
    solution (plain CG residual norms can oscillate). A zero right-hand side
    returns the zero vector.
    """
    b = np.asarray(b, dtype=np.float64)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if damping < 0:
        raise ValueError("damping must be >= 0")
    x = np.zeros_like(b)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    best_x, best_rs = x, rs
    threshold = residual_tol * b_norm
    for _ in range(iters):
        ap = np.asarray(apply_a(p), dtype=np.float64) + damping * p
        pap = float(p @ ap)
        if pap <= 0.0:
            break
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        if rs_new < best_rs:
            best_x, best_rs = x, rs_new
        if np.sqrt(rs_new) < threshold:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return best_x


def least_squares(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution X of ||A X - B||_F.

    Requires at least as many rows as columns in A; an underdetermined
    system is rejected.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("a must be 2-d")
    p, q = a.shape
    if p < q:
        raise ValueError(f"underdetermined system: {p} rows < {q} columns")
    x, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    return x
