"""Trial tensors, their matrix unfoldings, whitening and Kronecker helpers.

A subject's recording is held as ``n`` independent samples, each made of
``r`` epochs of ``p`` channels by ``q`` time points.  Internally the data are
stored as an array of shape ``(n, r, p, q)`` so that ``data[k, d]`` is the
``p x q`` epoch matrix.  The flat (serialized) order is channel-fastest::

    index = i + p*j + p*q*d + p*q*r*k

which is the column-stacking ``vec`` of ``X_k = [X_k^(1), ..., X_k^(r)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

__all__ = [
    "TrialTensor",
    "Unfolding",
    "unfold",
    "refold",
    "whiten_y",
    "whiten_epochs",
    "SampleSizeCheck",
    "check_sample_size",
    "kron_frobenius_inner",
]

UNFOLDING_KINDS = ("X", "Y", "Z")


@dataclass(frozen=True)
class TrialTensor:
    """Multi-epoch recording of ``n`` independent samples.

    Parameters
    ----------
    data : ndarray, shape (n, r, p, q)
        ``data[k, d]`` is epoch ``d`` of sample ``k`` (channels x time).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 4:
            raise ValueError(f"expected a 4-d array (n, r, p, q), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def r(self) -> int:
        return self.data.shape[1]

    @property
    def p(self) -> int:
        return self.data.shape[2]

    @property
    def q(self) -> int:
        return self.data.shape[3]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """``(p, q, r, n)``"""
        return self.p, self.q, self.r, self.n

    @classmethod
    def from_serialized(cls, values, p, q, r, n) -> "TrialTensor":
        """Build from a flat channel-fastest vector of length ``p*q*r*n``."""
        values = np.asarray(values, dtype=float)
        if values.size != p * q * r * n:
            raise ValueError(
                f"expected {p * q * r * n} values for dims p={p} q={q} r={r} n={n}, "
                f"got {values.size}"
            )
        # channel-fastest means C-order over (n, r, q, p)
        return cls(values.reshape(n, r, q, p).transpose(0, 1, 3, 2))

    def to_serialized(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(0, 1, 3, 2)).ravel()

    def select_epochs(self, index) -> "TrialTensor":
        return TrialTensor(self.data[:, np.asarray(index, dtype=int)])


@dataclass(frozen=True)
class Unfolding:
    kind: str
    matrix: np.ndarray


def unfold(t: TrialTensor, k: int, kind: str) -> Unfolding:
    """Matrix unfolding of sample ``k`` (0-based).

    ``X`` is ``p x qr`` (epochs side by side), ``Y`` is ``q x pr`` with
    ``Y[j, p*d + i] = X^(d)[i, j]`` and ``Z`` is ``r x pq`` with
    ``Z[d, p*j + i] = X^(d)[i, j]``.
    """
    if not 0 <= k < t.n:
        raise IndexError(f"sample index {k} out of range for n={t.n}")
    xk = t.data[k]  # (r, p, q)
    p, q, r = t.p, t.q, t.r
    if kind == "X":
        mat = xk.transpose(1, 0, 2).reshape(p, r * q)
    elif kind == "Y":
        mat = xk.transpose(2, 0, 1).reshape(q, r * p)
    elif kind == "Z":
        mat = xk.transpose(0, 2, 1).reshape(r, q * p)
    else:
        raise ValueError(f"unknown unfolding kind {kind!r}; expected one of {UNFOLDING_KINDS}")
    return Unfolding(kind, np.ascontiguousarray(mat))


def refold(u: Unfolding, p: int, q: int, r: int) -> np.ndarray:
    """Inverse of :func:`unfold`; returns the ``(r, p, q)`` epoch stack."""
    m = np.asarray(u.matrix)
    if u.kind == "X":
        return m.reshape(p, r, q).transpose(1, 0, 2).copy()
    if u.kind == "Y":
        return m.reshape(q, r, p).transpose(1, 2, 0).copy()
    if u.kind == "Z":
        return m.reshape(r, q, p).transpose(0, 2, 1).copy()
    raise ValueError(f"unknown unfolding kind {u.kind!r}")


def _chol(m, name):
    try:
        return linalg.cholesky(np.asarray(m, dtype=float), lower=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{name} is not positive definite") from exc


def _is_diagonal(m):
    m = np.asarray(m)
    return np.count_nonzero(m - np.diag(np.diag(m))) == 0


def whiten_epochs(x: np.ndarray, gamma=None, delta=None, psi=None) -> np.ndarray:
    """Remove the given factors' correlation from an ``(..., r, p, q)`` stack.

    Each supplied factor is divided out through its Cholesky factor:
    ``gamma`` on the channel axis (``L_gamma^{-1} X``), ``psi`` on the time
    axis (``X L_psi^{-T}``) and ``delta`` across epochs (mixing with
    ``L_delta^{-T}``, which is plain scaling by ``delta_d^{-1/2}`` when
    ``delta`` is diagonal).  Omitted factors are treated as identity.

    With ``gamma`` and ``delta`` given, the ``(d, i, :)`` time fibres of the
    result are independent ``N(0, Psi)`` vectors under the model.
    """
    w = np.asarray(x, dtype=float)
    shape = w.shape
    p, q = shape[-2], shape[-1]
    if gamma is not None:
        lg = _chol(gamma, "gamma")
        flat = np.moveaxis(w.reshape(-1, p, q), 1, 0).reshape(p, -1)
        flat = linalg.solve_triangular(lg, flat, lower=True)
        w = np.moveaxis(flat.reshape(p, -1, q), 0, 1).reshape(shape)
    if psi is not None:
        lp = _chol(psi, "psi")
        flat = linalg.solve_triangular(lp, w.reshape(-1, q).T, lower=True)
        w = flat.T.reshape(shape)
    if delta is None:
        return w

    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    if _is_diagonal(delta):
        dd = np.diag(delta)
        if np.any(dd <= 0):
            raise np.linalg.LinAlgError("delta is not positive definite")
        return w / np.sqrt(dd)[:, None, None]
    ld = _chol(delta, "delta")
    # Ytilde_d = sum_e B[e, d] W_e with B = L_delta^{-T}
    b = linalg.solve_triangular(ld, np.eye(ld.shape[0]), lower=True).T
    return np.einsum("...eiq,ed->...diq", w, b)


def whiten_y(y, gamma, delta) -> np.ndarray:
    """Whiten a ``q x pr`` Y-unfolding by right-multiplication.

    The result has ``pr`` columns that are i.i.d. ``N(0, Psi)`` when
    ``gamma`` and ``delta`` are the true spatial and epoch factors.
    """
    y = np.asarray(y, dtype=float)
    gamma = np.atleast_2d(gamma)
    delta = np.atleast_2d(delta)
    p, r = gamma.shape[0], delta.shape[0]
    q = y.shape[0]
    if y.shape[1] != p * r:
        raise ValueError(f"Y has {y.shape[1]} columns, expected p*r = {p * r}")
    stack = y.reshape(q, r, p).transpose(1, 2, 0)  # (r, p, q)
    white = whiten_epochs(stack, gamma=gamma, delta=delta)
    return white.transpose(2, 0, 1).reshape(q, r * p)


class SampleSizeCheck(NamedTuple):
    admissible: bool
    required_n: float


def check_sample_size(p, q, r, n, psi="toeplitz", delta="diagonal") -> SampleSizeCheck:
    """Minimum number of samples for the ML estimate to exist.

    With a Toeplitz (or persymmetric) temporal factor the requirement is
    ``n >= max(p/(qr), ceil(q/2)/(pr))``.  An unrestricted temporal factor
    needs ``q/(pr)`` instead of ``ceil(q/2)/(pr)``, and an unrestricted epoch
    factor adds ``r/(pq)``.
    """
    if min(p, q, r, n) < 1:
        raise ValueError("dimensions must be positive")
    terms = [p / (q * r)]
    if psi in ("toeplitz", "persymmetric"):
        terms.append(math.ceil(q / 2) / (p * r))
    elif psi == "unrestricted":
        terms.append(q / (p * r))
    else:
        raise ValueError(f"unknown psi structure {psi!r}")
    if delta == "unrestricted":
        terms.append(r / (p * q))
    elif delta not in ("diagonal", "identity"):
        raise ValueError(f"unknown delta structure {delta!r}")
    required = max(terms)
    return SampleSizeCheck(n >= required, required)


def kron_frobenius_inner(a1, b1, c1, a2, b2, c2) -> float:
    """Frobenius inner product of ``a1 (x) b1 (x) c1`` and ``a2 (x) b2 (x) c2``.

    Uses ``<A1 (x) B1, A2 (x) B2> = <A1, A2> <B1, B2>`` so no Kronecker
    product is ever formed.
    """
    out = 1.0
    for u, v in ((a1, a2), (b1, b2), (c1, c2)):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if u.shape != v.shape:
            raise ValueError(f"factor shapes differ: {u.shape} vs {v.shape}")
        out *= float(np.vdot(u, v))
    return out
