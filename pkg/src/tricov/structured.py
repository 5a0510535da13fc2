"""Toeplitz, circulant, persymmetric and diagonal matrix helpers.

Includes the closed-form circulant ML estimator, the mirror embedding of a
Toeplitz matrix into a symmetric circulant, the persymmetric projection and
the subdiagonal-sum map used as the Toeplitz stationarity score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

__all__ = [
    "ToeplitzFactor",
    "CirculantExtension",
    "toeplitz_matrix",
    "embed_toeplitz",
    "circulant_identity",
    "circulant_mle",
    "persym_project",
    "exchange",
    "subdiag_sums",
    "PDCheck",
    "pd_check",
    "is_symmetric",
]


def is_symmetric(m, rtol=1e-10, atol=1e-12) -> bool:
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.allclose(m, m.T, rtol=rtol, atol=atol)


def toeplitz_matrix(first_row) -> np.ndarray:
    """Symmetric Toeplitz matrix with ``T[i, j] = first_row[|i - j|]``."""
    return linalg.toeplitz(np.asarray(first_row, dtype=float))


@dataclass(frozen=True)
class ToeplitzFactor:
    first_row: np.ndarray

    def __post_init__(self):
        row = np.atleast_1d(np.asarray(self.first_row, dtype=float)).copy()
        row.setflags(write=False)
        object.__setattr__(self, "first_row", row)

    @property
    def q(self) -> int:
        return self.first_row.size

    def matrix(self) -> np.ndarray:
        return toeplitz_matrix(self.first_row)

    @classmethod
    def from_matrix(cls, m) -> "ToeplitzFactor":
        return cls(np.asarray(m, dtype=float)[0])


@dataclass(frozen=True)
class CirculantExtension:
    """Symmetric ``l x l`` circulant given by its first column ``c``.

    ``C[i, j] = c[(i - j) mod l]``; symmetry means ``c[m] == c[l - m]``.
    """

    first_col: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.first_col, dtype=float)).copy()
        c.setflags(write=False)
        object.__setattr__(self, "first_col", c)

    @property
    def l(self) -> int:  # noqa: E743
        return self.first_col.size

    def matrix(self) -> np.ndarray:
        return linalg.circulant(self.first_col)

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues (real DFT of the first column), in DFT order."""
        return np.fft.fft(self.first_col).real

    def is_pd(self) -> bool:
        return bool(np.all(self.eigenvalues() > 0))

    def block(self, q: int) -> np.ndarray:
        """Upper-left ``q x q`` (Toeplitz) block."""
        return toeplitz_matrix(self.first_col[:q])

    def inverse(self) -> np.ndarray:
        """Dense inverse, computed through the DFT diagonalization."""
        lam = np.fft.fft(self.first_col)
        inv_col = np.fft.ifft(1.0 / lam).real
        return linalg.circulant(inv_col)

    def scaled(self, s: float) -> "CirculantExtension":
        return CirculantExtension(self.first_col * s)


def embed_toeplitz(t: ToeplitzFactor, l: int | None = None) -> CirculantExtension:
    """Mirror-embed a symmetric Toeplitz matrix into an ``l x l`` circulant.

    ``c[m] = psi[m]`` for ``m < q`` and ``c[m] = c[l - m]`` beyond; entries
    that are not pinned by either rule (only when ``l > 2q - 1``) are zero.
    The result is not guaranteed to be nonnegative definite.
    """
    row = t.first_row
    q = row.size
    if l is None:
        l = 2 * q - 1
    if l < 2 * q - 1:
        raise ValueError(f"embedding dimension l={l} is smaller than 2q-1={2 * q - 1}")
    c = np.zeros(l)
    c[:q] = row
    c[l - q + 1:] = row[1:][::-1]
    return CirculantExtension(c)


def circulant_identity(l: int) -> CirculantExtension:
    c = np.zeros(l)
    c[0] = 1.0
    return CirculantExtension(c)


def circulant_mle(s_hat) -> CirculantExtension:
    """Closed-form ML circulant covariance from a sample covariance.

    Each ``c_u`` is the average of the entries of ``s_hat`` sitting where
    ``c_u`` sits in the circulant, i.e. over ``(i - j) mod l == u``.
    """
    s_hat = np.asarray(s_hat, dtype=float)
    l = s_hat.shape[0]
    if s_hat.shape != (l, l):
        raise ValueError(f"expected a square matrix, got shape {s_hat.shape}")
    i, j = np.indices((l, l))
    c = np.bincount(((i - j) % l).ravel(), weights=s_hat.ravel(), minlength=l) / l
    return CirculantExtension(c)


def exchange(q: int) -> np.ndarray:
    """The ``q x q`` exchange matrix ``J`` (ones on the anti-diagonal)."""
    return np.eye(q)[::-1]


def persym_project(s_hat) -> np.ndarray:
    """``(S + J S J) / 2``: ML persymmetric covariance from a sample covariance."""
    s_hat = np.asarray(s_hat, dtype=float)
    return 0.5 * (s_hat + s_hat[::-1, ::-1])


def subdiag_sums(a) -> np.ndarray:
    """Sums of the entries on each upper subdiagonal, ``G_j = sum_i A[i, i+j]``."""
    a = np.asarray(a, dtype=float)
    q = a.shape[0]
    return np.array([np.trace(a, offset=j) for j in range(q)])


class PDCheck(NamedTuple):
    pd: bool
    min_eig_bound: float | None = None

    def __bool__(self):
        return self.pd


def pd_check(m) -> PDCheck:
    """Cholesky-based positive definiteness test.

    On failure ``min_eig_bound`` holds the smallest eigenvalue of ``m``.
    """
    m = np.asarray(m, dtype=float)
    if not is_symmetric(m):
        raise ValueError("pd_check requires a symmetric matrix")
    try:
        linalg.cholesky(m, lower=True)
    except linalg.LinAlgError:
        return PDCheck(False, float(linalg.eigvalsh(m)[0]))
    return PDCheck(True)
