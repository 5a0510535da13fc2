"""Maximum-likelihood fitting of ``Delta (x) Psi (x) Gamma`` covariances.

The fit is a flip-flop iteration: starting from ``Gamma = I`` and
``Delta = I``, each outer step updates the temporal factor, then the epoch
factor, then the spatial factor, each conditionally on the current values of
the other two.  A Toeplitz temporal factor has no closed-form update and is
obtained with an EM iteration on a circulant extension of size ``l``
(``2q - 1`` by default), warm-started from the previous outer step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .structured import (
    CirculantExtension,
    ToeplitzFactor,
    circulant_identity,
    circulant_mle,
    pd_check,
    persym_project,
    subdiag_sums,
)
from .tensor import TrialTensor, check_sample_size, whiten_epochs

logger = logging.getLogger(__name__)

__all__ = [
    "AssumptionSet",
    "TABLE1_SETS",
    "FitConfig",
    "FactorSet",
    "FitResult",
    "EMResult",
    "FitError",
    "InadmissibleSampleSize",
    "update_gamma",
    "update_delta",
    "update_psi",
    "psi_scatter",
    "toeplitz_em",
    "toeplitz_residual",
    "normalize",
    "log_likelihood",
    "fixed_point_residuals",
    "fit",
]

PSI_MODES = ("toeplitz", "persymmetric", "unrestricted")
DELTA_MODES = ("diagonal", "unrestricted", "identity")
_LETTER = {
    "unrestricted": "U",
    "toeplitz": "T",
    "persymmetric": "P",
    "diagonal": "D",
    "identity": "I",
}


class InadmissibleSampleSize(ValueError):
    """Too few samples for the requested structure to have an ML estimate."""


class FitError(RuntimeError):
    """A factor update failed numerically (typically lost positive definiteness)."""

    def __init__(self, message, component=None, iteration=None):
        super().__init__(message)
        self.component = component
        self.iteration = iteration


class AssumptionSet(NamedTuple):
    """Structure imposed on (Gamma, Psi, Delta) during estimation."""

    gamma: str = "unrestricted"
    psi: str = "toeplitz"
    delta: str = "diagonal"

    @property
    def code(self) -> str:
        return "".join(_LETTER[s] for s in self)

    @classmethod
    def from_code(cls, code: str) -> "AssumptionSet":
        """Parse a three-letter code such as ``"UTD"`` or ``"U,P,I"``."""
        letters = code.replace(",", "").replace("(", "").replace(")", "").upper()
        inv = {v: k for k, v in _LETTER.items()}
        if len(letters) != 3 or any(c not in inv for c in letters):
            raise ValueError(f"cannot parse assumption code {code!r}")
        out = cls(*(inv[c] for c in letters))
        out.validate()
        return out

    def validate(self):
        if self.gamma != "unrestricted":
            raise ValueError(f"gamma structure must be 'unrestricted', got {self.gamma!r}")
        if self.psi not in PSI_MODES:
            raise ValueError(f"psi structure must be one of {PSI_MODES}, got {self.psi!r}")
        if self.delta not in DELTA_MODES:
            raise ValueError(f"delta structure must be one of {DELTA_MODES}, got {self.delta!r}")


# the seven settings compared in the simulation study, best-specified first
TABLE1_SETS = tuple(
    AssumptionSet.from_code(c) for c in ("UTD", "UPD", "UUD", "UTI", "UUI", "UTU", "UUU")
)


@dataclass(frozen=True)
class FitConfig:
    max_outer_iters: int = 200
    outer_tol: float = 1e-7
    em_max_iters: int = 100
    em_tol: float = 1e-6
    embedding_l: int | None = None

    def __post_init__(self):
        if self.outer_tol <= 0 or self.em_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer_iters < 1 or self.em_max_iters < 1:
            raise ValueError("iteration limits must be >= 1")

    def l_for(self, q: int) -> int:
        return self.embedding_l if self.embedding_l is not None else 2 * q - 1


@dataclass(frozen=True)
class FactorSet:
    """Dense spatial, temporal and epoch factors of ``Delta (x) Psi (x) Gamma``."""

    gamma: np.ndarray
    psi: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "psi", "delta"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float)).copy()
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square, got shape {m.shape}")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def q(self) -> int:
        return self.psi.shape[0]

    @property
    def r(self) -> int:
        return self.delta.shape[0]

    def covariance(self) -> np.ndarray:
        """Materialized ``pqr x pqr`` covariance; small dimensions only."""
        return np.kron(self.delta, np.kron(self.psi, self.gamma))

    def restrict_epochs(self, index) -> "FactorSet":
        idx = np.asarray(index, dtype=int)
        return replace(self, delta=self.delta[np.ix_(idx, idx)])


class EMResult(NamedTuple):
    psi: ToeplitzFactor
    extension: CirculantExtension
    iterations: int
    converged: bool
    loglik_trace: tuple
    restarted: bool


@dataclass(frozen=True)
class FitResult:
    factors: FactorSet
    assumptions: AssumptionSet
    config: FitConfig
    loglik_trace: tuple
    converged: bool
    iters: int
    em_iters: tuple = ()
    g_residual: float | None = None
    gamma_residual: float | None = None
    delta_residual: float | None = None
    extension: CirculantExtension | None = field(default=None, repr=False)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


def _sym(m):
    return 0.5 * (m + m.T)


def _data(t):
    return t.data if isinstance(t, TrialTensor) else np.asarray(t, dtype=float)


def update_gamma(t: TrialTensor, psi, delta) -> np.ndarray:
    """Spatial update ``(1/nqr) sum_k X_k (Delta^-1 (x) Psi^-1) X_k^T``."""
    x = _data(t)
    n, r, p, q = x.shape
    w = whiten_epochs(x, psi=psi, delta=delta)
    g = np.einsum("kdiq,kdjq->ij", w, w) / (n * q * r)
    return _sym(g)


def update_delta(t: TrialTensor, gamma, psi, mode="diagonal") -> np.ndarray:
    """Epoch update ``(1/npq) sum_k Z_k (Psi^-1 (x) Gamma^-1) Z_k^T``.

    In ``diagonal`` mode the off-diagonal entries are dropped; the diagonal
    is then a sum of squares of scaled data and positive for nonzero epochs.
    """
    x = _data(t)
    n, r, p, q = x.shape
    w = whiten_epochs(x, gamma=gamma, psi=psi)
    if mode == "diagonal":
        return np.diag(np.einsum("kdiq,kdiq->d", w, w) / (n * p * q))
    if mode == "unrestricted":
        return _sym(np.einsum("kdiq,keiq->de", w, w) / (n * p * q))
    if mode == "identity":
        return np.eye(r)
    raise ValueError(f"unknown delta mode {mode!r}")


def psi_scatter(t: TrialTensor, gamma, delta) -> np.ndarray:
    """Temporal sample covariance of the whitened columns.

    ``(1/npr) sum_k Y_k (Delta^-1 (x) Gamma^-1) Y_k^T``; this is the
    unrestricted update and the sufficient statistic for the structured ones.
    """
    x = _data(t)
    n, r, p, q = x.shape
    w = whiten_epochs(x, gamma=gamma, delta=delta)
    return _sym(np.einsum("kdis,kdit->st", w, w) / (n * p * r))


def _gaussian_loglik(psi, s, n_eff):
    q = psi.shape[0]
    c = linalg.cho_factor(psi, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    quad = np.trace(linalg.cho_solve(c, s))
    return -0.5 * n_eff * (q * math.log(2 * math.pi) + logdet + quad)


def _em_step(c: CirculantExtension, s, q):
    l = c.l
    if l == q:
        return circulant_mle(s)
    k = c.inverse()
    p_blk = k[q:, :q]
    u = _sym(linalg.inv(k[q:, q:]))  # conditional covariance of the missing block
    m = -u @ p_blk  # conditional mean map x -> E[missing | x]
    sm = s @ m.T
    full = np.empty((l, l))
    full[:q, :q] = s
    full[:q, q:] = sm
    full[q:, :q] = sm.T
    full[q:, q:] = m @ sm + u
    return circulant_mle(full)


def toeplitz_em(s, n_eff, cfg: FitConfig = FitConfig(), warm_start=None) -> EMResult:
    """Approximate Toeplitz ML covariance from a sample covariance via EM.

    The ``q``-dimensional observations are treated as the leading part of
    ``l``-dimensional vectors with a circulant covariance.  Each iteration
    fills in the missing ``l - q`` coordinates by their conditional moments
    and applies the closed-form circulant estimator.  Only ``s`` (the
    observed sample covariance) is needed since the E-step is linear in the
    data.

    Without a usable warm start the iteration begins at ``(tr(s)/q) I``.  A
    non-positive-definite iterate triggers one restart from there; a second
    one raises :class:`FitError`.
    """
    s = np.asarray(s, dtype=float)
    q = s.shape[0]
    l = cfg.l_for(q)
    if l < 2 * q - 1 and q > 1:
        raise ValueError(f"embedding dimension l={l} is smaller than 2q-1={2 * q - 1}")
    # scaled identity keeps the iteration equivariant to rescaling the data
    start = circulant_identity(l).scaled(np.trace(s) / q)
    if warm_start is not None and warm_start.l == l and warm_start.is_pd():
        c = warm_start
    else:
        c = start
    restarted = False
    trace = [_gaussian_loglik(c.block(q), s, n_eff)]
    converged = False
    it = 0
    while it < cfg.em_max_iters:
        it += 1
        c_new = _em_step(c, s, q)
        if not c_new.is_pd():
            if restarted:
                eig = c_new.eigenvalues().min()
                raise FitError(
                    f"EM produced a non-positive-definite circulant twice "
                    f"(min eigenvalue {eig:.3e}, iteration {it})",
                    component="psi",
                )
            logger.debug("EM iterate lost definiteness at step %d; restarting from identity", it)
            restarted = True
            c = start
            continue
        old = c.first_col[:q]
        change = np.linalg.norm(c_new.first_col[:q] - old) / np.linalg.norm(old)
        c = c_new
        trace.append(_gaussian_loglik(c.block(q), s, n_eff))
        if change < cfg.em_tol or l == q:  # l == q: the circulant step is exact
            converged = True
            break
    return EMResult(ToeplitzFactor(c.first_col[:q]), c, it, converged, tuple(trace), restarted)


def toeplitz_residual(psi, s, n_eff) -> np.ndarray:
    """Score of the Toeplitz likelihood: ``G(n Psi^-1 S Psi^-1 - n Psi^-1)``.

    Zero at a stationary point of the likelihood over Toeplitz matrices.
    """
    pinv = linalg.inv(psi)
    return n_eff * subdiag_sums(pinv @ s @ pinv - pinv)


def update_psi(t: TrialTensor, gamma, delta, mode="toeplitz", cfg: FitConfig = FitConfig(),
               warm_start: CirculantExtension | None = None):
    """Temporal update given the spatial and epoch factors.

    Returns ``(psi, info)``.  ``psi`` is a dense ``q x q`` matrix; ``info`` is
    the :class:`EMResult` in Toeplitz mode and ``None`` otherwise.
    """
    s = psi_scatter(t, gamma, delta)
    if mode == "unrestricted":
        return s, None
    if mode == "persymmetric":
        return persym_project(s), None
    if mode == "toeplitz":
        x = _data(t)
        n_eff = x.shape[0] * x.shape[1] * x.shape[2]
        em = toeplitz_em(s, n_eff, cfg, warm_start)
        return em.psi.matrix(), em
    raise ValueError(f"unknown psi mode {mode!r}")


def normalize(factors: FactorSet) -> FactorSet:
    """Rescale so that ``Gamma[0, 0] = Delta[0, 0] = 1``.

    The scale is moved into ``Psi``; the Kronecker product is unchanged.
    """
    g0 = factors.gamma[0, 0]
    d0 = factors.delta[0, 0]
    if g0 <= 0 or d0 <= 0:
        raise ValueError(f"leading entries must be positive (gamma={g0}, delta={d0})")
    s = g0 * d0
    return FactorSet(factors.gamma / g0, factors.psi * s, factors.delta / d0)


def log_likelihood(t: TrialTensor, factors: FactorSet) -> float:
    """Gaussian log-likelihood of all samples under ``Delta (x) Psi (x) Gamma``."""
    x = _data(t)
    n, r, p, q = x.shape
    logdet = 0.0
    for m, weight in ((factors.delta, p * q), (factors.psi, p * r), (factors.gamma, q * r)):
        try:
            lc = linalg.cholesky(m, lower=True)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("factors must be positive definite") from exc
        logdet += weight * 2.0 * np.sum(np.log(np.diag(lc)))
    w = whiten_epochs(x, gamma=factors.gamma, delta=factors.delta, psi=factors.psi)
    quad = float(np.einsum("kdiq,kdiq->", w, w))
    return -0.5 * (n * p * q * r * math.log(2 * math.pi) + n * logdet + quad)


def fixed_point_residuals(t: TrialTensor, factors: FactorSet, assumptions: AssumptionSet):
    """Relative Frobenius residuals of the spatial and epoch likelihood equations
    and the max-abs Toeplitz score (``None`` where not applicable)."""
    g = update_gamma(t, factors.psi, factors.delta)
    g_res = np.linalg.norm(g - factors.gamma) / np.linalg.norm(factors.gamma)
    d_res = None
    if assumptions.delta != "identity":
        d = update_delta(t, factors.gamma, factors.psi, assumptions.delta)
        d_res = float(np.linalg.norm(d - factors.delta) / np.linalg.norm(factors.delta))
    score = None
    if assumptions.psi == "toeplitz":
        x = _data(t)
        s = psi_scatter(t, factors.gamma, factors.delta)
        score = float(np.max(np.abs(toeplitz_residual(factors.psi, s, x.shape[0] * x.shape[1] * x.shape[2]))))
    return float(g_res), d_res, score


def _require_pd(m, component, iteration):
    chk = pd_check(m)
    if not chk.pd:
        raise FitError(
            f"{component} update is not positive definite at outer iteration {iteration} "
            f"(min eigenvalue {chk.min_eig_bound:.3e})",
            component=component,
            iteration=iteration,
        )


def fit(t: TrialTensor, assumptions: AssumptionSet = AssumptionSet(),
        cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit the three-factor covariance by alternating conditional ML updates.

    Parameters
    ----------
    t : TrialTensor
        Zero-mean data.
    assumptions : AssumptionSet
        Structure of the temporal (``toeplitz``, ``persymmetric``,
        ``unrestricted``) and epoch (``diagonal``, ``unrestricted``,
        ``identity``) factors.
    cfg : FitConfig
        Iteration limits and tolerances.

    Returns
    -------
    FitResult
        Normalized factors (``Gamma[0, 0] = Delta[0, 0] = 1``), the
        log-likelihood after each outer iteration and the residuals of the
        likelihood equations at the returned point.

    Raises
    ------
    InadmissibleSampleSize
        If ``n`` is below the existence bound for the chosen structure.
    FitError
        If an update loses positive definiteness.
    """
    assumptions.validate()
    p, q, r, n = t.dims
    chk = check_sample_size(p, q, r, n, psi=assumptions.psi, delta=assumptions.delta)
    if not chk.admissible:
        raise InadmissibleSampleSize(
            f"sample-size condition violated: n={n} but dims p={p} q={q} r={r} "
            f"require n >= {chk.required_n:.4g}"
        )

    gamma = np.eye(p)
    delta = np.eye(r)
    ext = None
    trace = []
    em_iters = []
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iters + 1):
        try:
            psi, em = update_psi(t, gamma, delta, assumptions.psi, cfg, ext)
        except FitError as exc:
            raise FitError(f"{exc} (outer iteration {it})", component="psi", iteration=it) from exc
        except np.linalg.LinAlgError as exc:
            raise FitError(f"psi update failed at outer iteration {it}: {exc}", "psi", it) from exc
        _require_pd(psi, "psi", it)
        if em is not None:
            ext = em.extension
            em_iters.append(em.iterations)
        try:
            if assumptions.delta != "identity":
                delta = update_delta(t, gamma, psi, assumptions.delta)
                _require_pd(delta, "delta", it)
            gamma = update_gamma(t, psi, delta)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"update failed at outer iteration {it}: {exc}", iteration=it) from exc
        _require_pd(gamma, "gamma", it)

        scale = gamma[0, 0] * delta[0, 0]
        factors = normalize(FactorSet(gamma, psi, delta))
        gamma, psi, delta = factors.gamma, factors.psi, factors.delta
        if ext is not None:
            ext = ext.scaled(scale)
        ll = log_likelihood(t, factors)
        trace.append(ll)
        logger.debug("outer iteration %d: loglik %.12g", it, ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= cfg.outer_tol * abs(trace[-1]):
            converged = True
            break

    factors = FactorSet(gamma, psi, delta)
    g_res, d_res, score = fixed_point_residuals(t, factors, assumptions)
    return FitResult(
        factors=factors,
        assumptions=assumptions,
        config=cfg,
        loglik_trace=tuple(trace),
        converged=converged,
        iters=it,
        em_iters=tuple(em_iters),
        g_residual=score,
        gamma_residual=g_res,
        delta_residual=d_res,
        extension=ext,
    )
