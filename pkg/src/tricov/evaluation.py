"""Accuracy metrics, the epoch-subsample validation protocol and rank correlation."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .tensor import kron_frobenius_inner

__all__ = [
    "mse_total",
    "mse_components",
    "split_epochs",
    "validation_measure",
    "run_validation",
    "spearman",
    "REFERENCE_VALIDATION",
]

# Values reported for the real recordings; not reproducible without them.
REFERENCE_VALIDATION = {
    "MEG": {"random_mean": 0.0136, "random_sd": 0.015, "consecutive": (0.020, 0.003, 0.013, 0.005)},
    "EEG_S": {"random_mean": 0.0016, "random_sd": 0.0012, "consecutive": (0.054, 0.020, 0.011, 0.044)},
    "spearman_delta_vs_alpha": {"S": 0.218, "L": 0.316},
}


def _triple(f):
    return f.delta, f.psi, f.gamma


def _check_dims(a, b):
    for name in ("gamma", "psi", "delta"):
        sa, sb = getattr(a, name).shape, getattr(b, name).shape
        if sa != sb:
            raise ValueError(f"{name} dimensions differ: {sa} vs {sb}")


def _relative_kron_error(est, ref) -> float:
    e, t = _triple(est), _triple(ref)
    ee = kron_frobenius_inner(*e, *e)
    et = kron_frobenius_inner(*e, *t)
    tt = kron_frobenius_inner(*t, *t)
    return (ee - 2.0 * et + tt) / tt


def mse_total(est, truth) -> float:
    """Relative squared Frobenius error of the full Kronecker covariance.

    ``||K_est - K_true||^2 / ||K_true||^2`` expanded into factorwise inner
    products, so the ``pqr x pqr`` matrices are never formed.
    """
    _check_dims(est, truth)
    return _relative_kron_error(est, truth)


def _is_normalized(f, tol=1e-9):
    return abs(f.gamma[0, 0] - 1.0) <= tol and abs(f.delta[0, 0] - 1.0) <= tol


def mse_components(est, truth) -> tuple[float, float, float]:
    """Relative squared errors of Gamma, Psi and Delta separately.

    Both arguments must satisfy ``Gamma[0, 0] = Delta[0, 0] = 1``; otherwise
    the split of scale between factors is arbitrary and a ``ValueError`` is
    raised.
    """
    _check_dims(est, truth)
    if not (_is_normalized(est) and _is_normalized(truth)):
        raise ValueError("component MSEs need normalized factors (Gamma[0,0] = Delta[0,0] = 1)")
    out = []
    for name in ("gamma", "psi", "delta"):
        a, b = getattr(est, name), getattr(truth, name)
        out.append(float(np.sum((a - b) ** 2) / np.sum(b ** 2)))
    return tuple(out)


def split_epochs(r: int, mode: str = "random", folds: int = 4, repeats: int = 1,
                 seed: int = 0) -> list[np.ndarray]:
    """Partition epoch indices ``0..r-1`` into ``folds`` near-equal subsets.

    ``random`` mode draws a fresh partition for each of ``repeats``;
    ``consecutive`` mode returns contiguous blocks once.  Subsets are sorted.
    """
    if folds < 1 or r < folds:
        raise ValueError(f"cannot split r={r} epochs into {folds} folds")
    if mode == "consecutive":
        return [blk.copy() for blk in np.array_split(np.arange(r), folds)]
    if mode != "random":
        raise ValueError(f"unknown split mode {mode!r}")
    from .simulate import make_rng

    out = []
    for rep in range(repeats):
        perm = make_rng(seed, rep).permutation(r)
        out.extend(np.sort(blk) for blk in np.array_split(perm, folds))
    return out


def validation_measure(sub_fit, full_fit, subset) -> float:
    """Relative error of a subsample fit against the full fit restricted to it.

    Compares ``Delta_i (x) Psi_i (x) Gamma_i`` from the subset with
    ``Delta[subset, subset] (x) Psi (x) Gamma`` from the full data.
    """
    subset = np.asarray(subset, dtype=int)
    if sub_fit.r != subset.size:
        raise ValueError(f"sub-fit has {sub_fit.r} epochs but subset has {subset.size}")
    if subset.size and (subset.min() < 0 or subset.max() >= full_fit.r):
        raise ValueError("subset indices out of range for the full fit")
    ref = full_fit.restrict_epochs(subset)
    _check_dims(sub_fit, ref)
    return _relative_kron_error(sub_fit, ref)


def run_validation(t, full_fit, assumptions, cfg, mode="random", repeats=10, seed=0,
                   folds=4) -> dict:
    """Refit on each epoch subset and compare against the full-data fit.

    Sub-fits are normalized like every fit result; the comparison is of
    full Kronecker products, so the convention does not affect the values.
    """
    from .estimator import fit

    subsets = split_epochs(t.r, mode, folds, repeats, seed)
    values = []
    for idx in subsets:
        sub = fit(t.select_epochs(idx), assumptions, cfg)
        values.append(validation_measure(sub.factors, full_fit, idx))
    return {
        "mode": mode,
        "folds": folds,
        "repeats": repeats if mode == "random" else 1,
        "seed": seed,
        "assumptions": assumptions.code,
        "values": values,
        "subsets": [idx.tolist() for idx in subsets],
        "mean": float(np.mean(values)),
        "std": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
        "note": "sub-fits normalized with Gamma[0,0] = Delta[0,0] = 1 before comparison",
        "reference_values": REFERENCE_VALIDATION,
    }


def spearman(a, b) -> float:
    """Spearman rank correlation with mid-ranks for ties."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("spearman needs two 1-d series of equal length >= 2")
    ra, rb = stats.rankdata(a), stats.rankdata(b)
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        raise ValueError("rank correlation is undefined for a constant series")
    ra -= ra.mean()
    rb -= rb.mean()
    return float(np.dot(ra, rb) / np.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))
