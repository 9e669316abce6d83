"""Uncertainty-aware trust region: confidence radius, robust penalty,
randomized-subspace update direction, and moving-average sketches.

The update direction solves M v = g restricted to a low-rank subspace of
the operator's range recovered from random projections: sketch Y = M Omega,
orthonormalize to Q, project both sides into span(Q), eigendecompose the
small projected matrix, invert its (floored) spectrum, and map back to
parameter-space coordinates. An exponential moving average of the sketch
carries trust-region information across iterations; the projected matrix is
then recovered from the sketch itself by least squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg


class NoSubspaceError(RuntimeError):
    """No usable subspace: zero sketch or fully degenerate spectrum."""


def radius_sq(n: int, d: int, alpha: float) -> float:
    """Squared confidence radius of the sub-Gaussian mean-estimate ellipsoid.

    (d + 2 sqrt(d log(1/alpha)) + 2 log(1/alpha)) / n  -- decreasing in n,
    increasing in d and in 1/alpha.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    log_term = np.log(1.0 / alpha)
    return float((d + 2.0 * np.sqrt(d * log_term) + 2.0 * log_term) / n)


def robust_lower_bound_penalty(delta: np.ndarray, sigma_product, sigma_rn: float) -> float:
    """Worst-case gradient-uncertainty penalty sigma_rn * sqrt(delta' Sigma delta).

    Equals the gap between the nominal linear improvement term and its
    minimum over the gradient-confidence ellipsoid. A slightly negative
    radicand from round-off clamps to zero.
    """
    delta = np.asarray(delta, dtype=np.float64)
    quad = float(delta @ sigma_product(delta))
    return sigma_rn * np.sqrt(max(quad, 0.0))


def sketch(product, omega: np.ndarray) -> np.ndarray:
    """Random projections of an operator's range: column j is product(omega_j)."""
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 2 or omega.shape[1] < 1:
        raise ValueError("omega must be d x m with m >= 1")
    return np.asarray(product(omega), dtype=np.float64)


@dataclass
class SubspaceModel:
    """Recovered subspace and the spectral solve data inside it.

    eigvals are floored at eig_floor, so inverting the spectrum never blows
    up along nearly-null directions of the projected matrix.
    """

    q: np.ndarray         # d x ell, orthonormal columns
    m_tilde: np.ndarray   # ell x ell symmetric projection of the operator
    eigvecs: np.ndarray
    eigvals: np.ndarray   # descending, floored
    eig_floor: float

    @property
    def subspace_dim(self) -> int:
        return self.q.shape[1]


def build_subspace(y: np.ndarray, *, m_product=None, omega: np.ndarray | None = None,
                   rank_tol: float = 1e-10, eig_floor_rel: float = 1e-8) -> SubspaceModel:
    """Orthonormalize the sketch and project the operator into it.

    Exactly one of ``m_product`` / ``omega`` selects how the projected
    matrix is formed:

    * ``m_product`` -- exact ell operator products, m_tilde = Q' (M Q);
    * ``omega`` -- the operator is only known through the (possibly
      averaged) sketch, so solve m_tilde (Q' Omega) = Q' Y in least squares
      and symmetrize.

    Raises :class:`NoSubspaceError` when the sketch is zero or every
    projected eigenvalue sits below the floor.
    """
    if (m_product is None) == (omega is None):
        raise ValueError("pass exactly one of m_product or omega")
    q, ell = linalg.orthonormalize(y, rank_tol=rank_tol)
    if ell == 0:
        raise NoSubspaceError("sketch has no numerically significant columns")
    if m_product is not None:
        m_tilde = q.T @ np.asarray(m_product(q), dtype=np.float64)
    else:
        # (Q'Omega)' m_tilde' = (Q'Y)'  solved columnwise, rows >= cols since ell <= m
        x = linalg.least_squares((q.T @ omega).T, (q.T @ y).T)
        m_tilde = x.T
    m_tilde = 0.5 * (m_tilde + m_tilde.T)
    eigvecs, eigvals = linalg.symmetric_eig(m_tilde)
    floor = eig_floor_rel * max(float(eigvals[0]), 1.0)
    if not np.any(eigvals >= floor):
        raise NoSubspaceError("projected operator is numerically zero")
    return SubspaceModel(q, m_tilde, eigvecs, np.maximum(eigvals, floor), floor)


def solve_direction(model: SubspaceModel, g_hat: np.ndarray) -> np.ndarray:
    """Solve the projected system and return the direction in parameter space.

    v = Q V diag(1/eigvals) V' Q' g_hat, which always lies in span(Q).
    """
    g_small = model.eigvecs.T @ (model.q.T @ np.asarray(g_hat, dtype=np.float64))
    y = model.eigvecs @ (g_small / model.eigvals)
    return model.q @ y


def update_direction(y: np.ndarray, g_hat: np.ndarray, *, m_product=None,
                     omega: np.ndarray | None = None, rank_tol: float = 1e-10,
                     eig_floor_rel: float = 1e-8) -> tuple[np.ndarray, SubspaceModel]:
    """Range-restricted solve of M v = g via the sketched subspace."""
    model = build_subspace(y, m_product=m_product, omega=omega,
                           rank_tol=rank_tol, eig_floor_rel=eig_floor_rel)
    return solve_direction(model, g_hat), model


class EmaSketch:
    """Bias-corrected exponential moving averages of the two range sketches.

    Curvature and noise-covariance sketches are averaged separately because
    the coefficient combining them changes per iteration. Statistics start
    at zero; dividing by (1 - beta^k) corrects for that, so on the first
    update the combined sketch equals the raw one exactly.
    """

    def __init__(self, d: int, m: int, beta: float):
        if not 0.0 <= beta < 1.0:
            raise ValueError("beta must be in [0, 1)")
        self.y_f = np.zeros((d, m))
        self.y_sigma = np.zeros((d, m))
        self.count = 0
        self.beta = float(beta)

    def update(self, y_f_new: np.ndarray, y_sigma_new: np.ndarray,
               c_rn2: float) -> np.ndarray:
        """Fold in this iteration's sketches; return the combined, corrected Y."""
        b = self.beta
        self.y_f = b * self.y_f + (1.0 - b) * y_f_new
        self.y_sigma = b * self.y_sigma + (1.0 - b) * y_sigma_new
        self.count += 1
        correction = 1.0 - b ** self.count
        return (self.y_f + c_rn2 * self.y_sigma) / correction

    def save(self, path) -> None:
        np.savez(path, y_f=self.y_f, y_sigma=self.y_sigma,
                 count=self.count, beta=self.beta)

    @classmethod
    def load(cls, path) -> "EmaSketch":
        data = np.load(path)
        out = cls(data["y_f"].shape[0], data["y_f"].shape[1], float(data["beta"]))
        out.y_f = data["y_f"]
        out.y_sigma = data["y_sigma"]
        out.count = int(data["count"])
        return out
