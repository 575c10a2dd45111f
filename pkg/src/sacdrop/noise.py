"""Q-Wiener noise with a finite, mean-free eigenbasis.

``W(t) = sum_k a_k beta_k(t) e_k`` where ``e_k`` are the first non-constant
eigenvectors of the discrete Neumann Laplacian, orthonormal in the weighted
inner product, and ``a_k = s k^{-p}``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import EigensolveFailure, ModeCountExceedsGrid


@dataclass(frozen=True)
class CovarianceSpec:
    """Finite eigen-list of the covariance operator Q.

    Attributes
    ----------
    amplitudes : ndarray, shape (K,)
        ``a_k``.
    modes : ndarray, shape (n_nodes, K)
        ``e_k`` as columns, weighted-orthonormal with zero mean.
    eigenvalues : ndarray, shape (K,)
        Discrete Laplacian eigenvalues ``-Delta e_k = lambda_k e_k``.
    grad_sq : ndarray, shape (K,)
        ``||grad e_k||^2``.
    """

    grid: object
    amplitudes: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    grad_sq: np.ndarray
    decay: float = 2.0
    scale: float = 0.0

    @property
    def n_modes(self):
        return self.amplitudes.size

    @property
    def eta0(self):
        return float(np.sum(self.amplitudes**2))

    @property
    def eta1(self):
        return float(np.max(self.amplitudes**2, initial=0.0))

    @property
    def eta2(self):
        return float(np.sum(self.amplitudes**2 * self.grad_sq))

    def summary(self):
        return {
            "n_modes": int(self.n_modes),
            "decay": float(self.decay),
            "amplitude": float(self.scale),
            "eta0": self.eta0,
            "eta1": self.eta1,
            "eta2": self.eta2,
        }

    def with_amplitude(self, scale):
        """Same eigenbasis, amplitudes ``scale * k^-p``."""
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return CovarianceSpec(self.grid, float(scale) * k ** (-self.decay), self.modes,
                              self.eigenvalues, self.grad_sq, self.decay, float(scale))

    def coefficients(self, f):
        """``(f, e_k)`` for all k."""
        return self.modes.T @ (self.grid.weights * self.grid.check(f))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "a_k", "eigenvalue", "grad_sq"])
            for k in range(self.n_modes):
                wr.writerow([k + 1, repr(float(self.amplitudes[k])), repr(float(self.eigenvalues[k])),
                             repr(float(self.grad_sq[k]))])


@dataclass(frozen=True)
class NoiseIncrement:
    """One increment ``dW = sum_k a_k sqrt(dt) g_k e_k`` with its draws ``g_k``."""

    dW: np.ndarray
    dt: float
    draws: np.ndarray


def _laplacian_modes(grid, n):
    s = grid.stiffness.tocsc()
    m = sp.diags(grid.weights).tocsc()
    # deterministic start vector: ARPACK's internal one depends on process history
    v0 = np.cos(0.37 * grid.x + 0.11) + np.sin(0.23 * grid.y + 0.05)
    # shift below zero so that (S - sigma M) is positive definite
    shift = -1e-3 * float(np.min(grid.weights / grid.weights.max())) - 1e-6
    try:
        vals, vecs = eigsh(s, k=n + 1, M=m, sigma=shift, which="LM", v0=v0, tol=1e-12)
    except (ArpackError, ArpackNoConvergence, RuntimeError) as exc:
        raise EigensolveFailure(f"Neumann eigen-solve failed: {exc}") from exc
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def build_covariance(grid, n_modes=16, decay=2.0, amplitude=1.0):
    """Covariance on the first ``n_modes`` non-constant Neumann eigenvectors.

    Raises
    ------
    ModeCountExceedsGrid
        If more modes are requested than the grid can hold.
    EigensolveFailure
        If the sparse eigen-solve does not converge.
    """
    n_modes = int(n_modes)
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if decay <= 1.0:
        raise ValueError("decay exponent must exceed 1")
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    if n_modes + 2 >= grid.n_nodes:
        raise ModeCountExceedsGrid(f"{n_modes} modes requested on a grid of {grid.n_nodes} nodes")
    vals, vecs = _laplacian_modes(grid, n_modes)
    w = grid.weights
    # the lowest eigenvector is the constant; drop it and remove any round-off mean
    e = vecs[:, 1:]
    e = e - (w @ e)[None, :] / w.sum()
    # re-orthonormalise in the weighted inner product (Cholesky of the Gram matrix)
    gram = e.T @ (w[:, None] * e)
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure("eigenvectors are linearly dependent") from exc
    e = np.linalg.solve(chol, e.T).T
    # fix the sign of each mode for reproducibility
    signs = np.sign(e[np.argmax(np.abs(e), axis=0), np.arange(n_modes)])
    e = e * signs[None, :]
    grad_sq = np.einsum("ik,ik->k", e, grid.stiffness @ e)
    k = np.arange(1, n_modes + 1, dtype=float)
    return CovarianceSpec(
        grid=grid,
        amplitudes=float(amplitude) * k ** (-float(decay)),
        modes=np.ascontiguousarray(e),
        eigenvalues=vals[1:].copy(),
        grad_sq=grad_sq,
        decay=float(decay),
        scale=float(amplitude),
    )


def sample_increment(spec, dt, rng):
    """Draw ``dW`` over a step ``dt`` from ``rng`` (a ``numpy.random.Generator``)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = rng.standard_normal(spec.n_modes)
    dW = spec.modes @ (spec.amplitudes * np.sqrt(dt) * g)
    return NoiseIncrement(dW=dW, dt=float(dt), draws=g)


def apply_Q(spec, f):
    """``Q f = sum_k a_k^2 (f, e_k) e_k``."""
    return spec.modes @ (spec.amplitudes**2 * spec.coefficients(f))


def quadratic_form(spec, a, b):
    """``(Q a, b)`` without forming ``Q a`` on the grid."""
    return float(np.sum(spec.amplitudes**2 * spec.coefficients(a) * spec.coefficients(b)))
