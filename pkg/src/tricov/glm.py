"""Epoch regressors, power spectra and voxelwise partial F-tests with FDR control."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal, stats

from .structured import ToeplitzFactor, embed_toeplitz

__all__ = [
    "RegressorSeries",
    "VoxelTestResult",
    "Design",
    "delta_regressor",
    "alpha_regressor",
    "spectrum_from_psi",
    "build_design",
    "partial_f_test",
    "f_tests",
    "bh_fdr",
]


@dataclass(frozen=True)
class RegressorSeries:
    values: np.ndarray
    interpolated_mask: np.ndarray
    kind: str = "other"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.interpolated_mask, dtype=bool)
        if v.shape != m.shape or v.ndim != 1:
            raise ValueError("values and interpolated_mask must be 1-d of equal length")
        if not np.all(np.isfinite(v)):
            raise ValueError("regressor values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "interpolated_mask", m)


class VoxelTestResult(NamedTuple):
    f_stat: float
    p_value: float
    df: tuple
    significant: bool = False
    perfect_fit: bool = False


class Design(NamedTuple):
    matrix: np.ndarray
    roles: tuple
    interest_columns: tuple


def delta_regressor(delta_hat, removed=()) -> RegressorSeries:
    """Per-epoch variance scale with removed epochs filled in.

    Parameters
    ----------
    delta_hat : array_like
        Either the ``r x r`` epoch factor or its diagonal.  Entries at
        ``removed`` positions are ignored and may hold anything (e.g. NaN).
    removed : sequence of int
        0-based indices of epochs that were dropped before fitting.

    A removed epoch takes the mean of the nearest retained epoch on each
    side; at either end of the series the single nearest retained value is
    copied.
    """
    d = np.asarray(delta_hat, dtype=float)
    if d.ndim == 2:
        d = np.diag(d)
    d = d.copy()
    r = d.size
    removed = np.unique(np.asarray(removed, dtype=int))
    if removed.size and (removed.min() < 0 or removed.max() >= r):
        raise ValueError(f"removed epoch indices must lie in [0, {r})")
    mask = np.zeros(r, dtype=bool)
    mask[removed] = True
    kept = np.flatnonzero(~mask)
    if kept.size == 0:
        raise ValueError("all epochs removed")
    for i in removed:
        pos = np.searchsorted(kept, i)
        left = kept[pos - 1] if pos > 0 else None
        right = kept[pos] if pos < kept.size else None
        if left is None:
            d[i] = d[right]
        elif right is None:
            d[i] = d[left]
        else:
            d[i] = 0.5 * (d[left] + d[right])
    return RegressorSeries(d, mask, "delta")


def alpha_regressor(t, channels, band=(8.0, 12.0), fs=256.0) -> RegressorSeries:
    """Per-epoch band power averaged over a channel subset.

    For each epoch and selected channel the one-sided periodogram (power per
    bin, no detrending) is summed over the bins inside ``band``; the
    regressor is the mean of those sums over channels and samples.
    """
    f_lo, f_hi = band
    if not 0 < f_lo < f_hi < fs / 2:
        raise ValueError(f"band {band} must satisfy 0 < f_lo < f_hi < fs/2 = {fs / 2}")
    channels = np.atleast_1d(np.asarray(channels, dtype=int))
    if channels.size == 0:
        raise ValueError("no channels selected")
    x = t.data[:, :, channels, :]  # (n, r, c, q)
    freqs, pxx = signal.periodogram(x, fs=fs, detrend=False, scaling="spectrum", axis=-1)
    in_band = (freqs >= f_lo) & (freqs <= f_hi)
    if not in_band.any():
        raise ValueError(f"no frequency bins between {f_lo} and {f_hi} Hz at q={t.q}, fs={fs}")
    power = pxx[..., in_band].sum(axis=-1).mean(axis=(0, 2))
    return RegressorSeries(power, np.zeros(t.r, dtype=bool), "alpha_power")


def spectrum_from_psi(psi, fs: float):
    """Power spectrum implied by a Toeplitz temporal covariance.

    Returns ``(freqs, power)`` for the non-negative frequencies of the
    ``2q - 1`` circulant mirror extension of the first row, i.e. that
    circulant's eigenvalues, clipped at zero.
    """
    row = psi.first_row if isinstance(psi, ToeplitzFactor) else np.asarray(psi, dtype=float)
    if row.ndim == 2:
        row = row[0]
    c = embed_toeplitz(ToeplitzFactor(row)).first_col
    power = np.clip(np.fft.rfft(c).real, 0.0, None)
    freqs = np.fft.rfftfreq(c.size, d=1.0 / fs)
    return freqs, power


def _shift(v, lag):
    out = np.zeros_like(v)
    if lag >= 0:
        out[lag:] = v[: v.size - lag]
    else:
        out[:lag] = v[-lag:]
    return out


def build_design(interest, shifts=(0,), confounders=None) -> Design:
    """GLM design ``[intercept | confounders | shifted copies of interest]``.

    The copy at lag ``s`` holds ``interest[d - s]`` and zero where that
    index falls outside the series.
    """
    v = interest.values if isinstance(interest, RegressorSeries) else np.asarray(interest, dtype=float)
    r = v.size
    cols = [np.ones(r)]
    roles = ["intercept"]
    if confounders is not None:
        conf = np.asarray(confounders, dtype=float)
        if conf.ndim == 1:
            conf = conf[:, None]
        if conf.shape[0] != r:
            raise ValueError(f"confounders have {conf.shape[0]} rows, expected {r}")
        for j in range(conf.shape[1]):
            cols.append(conf[:, j])
            roles.append(f"confounder_{j}")
    shifts = [int(s) for s in shifts]
    if not shifts:
        raise ValueError("at least one shift is required")
    for s in shifts:
        if abs(s) >= r:
            raise ValueError(f"shift {s} out of range for r={r}")
        cols.append(_shift(v, s))
        roles.append(f"interest_lag_{s}")
    x = np.column_stack(cols)
    if r <= x.shape[1]:
        raise ValueError(f"design with {x.shape[1]} columns needs more than {x.shape[1]} epochs, got {r}")
    rank = np.linalg.matrix_rank(x)
    if rank < x.shape[1]:
        # report columns that add nothing to the span of the earlier ones
        bad, kept = [], []
        for j in range(x.shape[1]):
            if np.linalg.matrix_rank(x[:, kept + [j]]) == len(kept) + 1:
                kept.append(j)
            else:
                bad.append(roles[j])
        raise ValueError(f"design is rank deficient; dependent columns: {', '.join(bad)}")
    n_int = len(shifts)
    interest_cols = tuple(range(x.shape[1] - n_int, x.shape[1]))
    return Design(x, tuple(roles), interest_cols)


def _rss(x, y):
    q, _ = np.linalg.qr(x)
    resid = y - q @ (q.T @ y)
    return np.sum(resid ** 2, axis=0)


def f_tests(y, design, interest_columns=None):
    """Partial F-tests of the interest columns for every column of ``y``.

    ``y`` is ``r x V`` (one column per voxel).  Returns ``(f, p, df1, df2)``
    with ``f`` and ``p`` of length ``V``; a perfect fit of the full model
    gives ``f = inf`` and ``p = 0``.
    """
    if isinstance(design, Design):
        x, interest = design.matrix, design.interest_columns if interest_columns is None else interest_columns
    else:
        x, interest = np.asarray(design, dtype=float), interest_columns
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    r, cols = x.shape
    interest = sorted(int(c) for c in interest)
    df1 = len(interest)
    df2 = r - cols
    if df1 < 1 or df2 < 1:
        raise ValueError(f"non-positive degrees of freedom (df1={df1}, df2={df2})")
    if np.linalg.matrix_rank(x) < cols:
        raise ValueError("design matrix must have full column rank")
    reduced = np.delete(x, interest, axis=1)
    rss1 = _rss(x, y)
    rss0 = _rss(reduced, y) if reduced.shape[1] else np.sum(y ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = ((rss0 - rss1) / df1) / (rss1 / df2)
    perfect = rss1 <= 1e-14 * np.maximum(rss0, np.finfo(float).tiny)
    f = np.where(perfect, np.inf, np.maximum(f, 0.0))
    p = np.where(perfect, 0.0, stats.f.sf(f, df1, df2))
    return f, p, df1, df2


def partial_f_test(y, design, interest_columns=None) -> VoxelTestResult:
    """Nested-model F-test for a single response series."""
    f, p, df1, df2 = f_tests(np.asarray(y, dtype=float)[:, None], design, interest_columns)
    return VoxelTestResult(float(f[0]), float(p[0]), (df1, df2), False, bool(np.isinf(f[0])))


def bh_fdr(p_values, alpha: float = 0.05) -> np.ndarray:
    """Benjamini-Hochberg step-up rule; returns the rejection mask."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    below = p[order] <= alpha * np.arange(1, m + 1) / m
    mask = np.zeros(m, dtype=bool)
    if below.any():
        k = np.flatnonzero(below)[-1]
        mask[order[: k + 1]] = True
    return mask
