"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the pytest terminal summary; running this file
directly (``python3 tests/test_acceptance.py``) runs only this suite.
"""

import itertools
import time

import numpy as np
import pytest
from scipy import linalg, stats

from conftest import oracle_delta, oracle_gamma, oracle_loglik, random_factors, random_pd
from tricov.estimator import (
    AssumptionSet,
    FactorSet,
    FitConfig,
    fit,
    log_likelihood,
    update_delta,
    update_gamma,
    update_psi,
)
from tricov.evaluation import REFERENCE_VALIDATION, mse_total, run_validation, validation_measure
from tricov.glm import bh_fdr, build_design, f_tests
from tricov.simulate import REFERENCE_STUDY_MSE, StudyConfig, run_study, sample_dataset, surrogate_truth
from tricov.structured import circulant_mle
from tricov.tensor import TrialTensor, check_sample_size

RESULTS = {}


def record(number, ok, detail):
    RESULTS[number] = f"acceptance criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[number]


def _desk_truth(r=64):
    # oscillatory Toeplitz Psi, smooth diagonal Delta (max/min 4), random PD Gamma
    return surrogate_truth(8, 16, r, fs=128.0, seed=2024, refit=False)


def test_criterion_1_assumption_set_ordering():
    truth = _desk_truth()
    d = np.diag(truth.delta)
    assert d.max() / d.min() >= 4 - 1e-12
    codes = ("UTD", "UPD", "UUD", "UTI", "UUI")
    t0 = time.perf_counter()
    rep = run_study(StudyConfig(truth, n=1, replicates=20, seed=1, assumption_sets=codes))
    elapsed = time.perf_counter() - t0
    m = {row["assumptions"]: row["mse"] for row in rep["summary"]}
    failures = sum(row["failures"] for row in rep["summary"])
    ok = (failures == 0 and m["UTD"] <= m["UPD"] <= m["UUD"] < m["UTI"] <= m["UUI"]
          and m["UTI"] >= 3 * m["UTD"] and elapsed < 300)
    detail = ", ".join(f"{c}={m[c]:.4g}" for c in codes)
    record(1, ok, f"{detail}; UTI/UTD={m['UTI'] / m['UTD']:.2f}; {elapsed:.0f}s")


def test_criterion_2_consistency():
    means = {}
    for r in (100, 400):
        truth = surrogate_truth(4, 8, r, seed=7, refit=False)
        rep = run_study(StudyConfig(truth, n=1, replicates=20, seed=r, assumption_sets=("UTD",)))
        means[r] = rep["summary"][0]["mse"]
    record(2, means[400] < means[100], f"UTD mse r=100: {means[100]:.4g}, r=400: {means[400]:.4g}")


def _random_instances(count=50, seed=1):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        p, q, r = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(2, 17))
        if not check_sample_size(p, q, r, 1).admissible:
            continue
        truth = random_factors(rng, p, q, r)
        out.append(sample_dataset(truth, n=1, seed=int(rng.integers(1 << 31))))
    return out


def test_criterion_3_likelihood_ascent_and_fixed_points():
    # Tight tolerances, and a circulant embedding well beyond the default
    # 2q-1: when the Toeplitz optimum is close to singular its PD circulant
    # extensions are long, and a short embedding stalls the EM short of the
    # score threshold.  The embedding grows from 8q to 40q only if needed.
    instances = _random_instances()
    bad = []
    escalated = 0
    for k, t in enumerate(instances):
        q, n_eff = t.q, t.n * t.p * t.r
        for mult in (8, 40):
            cfg = FitConfig(outer_tol=1e-15, max_outer_iters=1000, em_tol=1e-9, em_max_iters=500,
                            embedding_l=max(2 * q - 1, mult * q))
            res = fit(t, AssumptionSet(), cfg)
            tr = np.array(res.loglik_trace)
            mono = bool(np.all(np.diff(tr) >= -1e-8 * np.abs(tr[1:])))
            fixed = res.gamma_residual < 1e-6 and res.delta_residual < 1e-6
            score = res.g_residual < 1e-4 * n_eff
            if mono and fixed and score:
                break
        escalated += mult > 8
        if not (mono and fixed and score):
            bad.append((k, t.dims, mono, res.gamma_residual, res.delta_residual, res.g_residual / n_eff))
    default_miss = sum(fit(t).g_residual >= 1e-4 * t.p * t.r for t in instances)
    record(3, not bad, f"{len(instances) - len(bad)}/{len(instances)} instances pass, {escalated} needed l=40q"
           f" (info: {default_miss} miss the score bound under the default FitConfig); failures: {bad[:3]}")


def _circ_loglik(c, s):
    m = linalg.circulant(c)
    if np.linalg.eigvalsh(m)[0] <= 0:
        return -np.inf
    return -0.5 * (np.linalg.slogdet(m)[1] + np.trace(np.linalg.solve(m, s)))


def test_criterion_4_oracle_equivalence():
    rng = np.random.default_rng(4)
    worst = 0.0
    for p, q, r, n in itertools.product((1, 2, 3), (1, 2, 3), (1, 2, 3), (1, 2)):
        f = random_factors(rng, p, q, r, diagonal=False, toeplitz=False)
        g = random_factors(rng, p, q, r, diagonal=False, toeplitz=False)
        t = TrialTensor(rng.standard_normal((n, r, p, q)))
        ka, kb = f.covariance(), g.covariance()
        dense_mse = np.sum((ka - kb) ** 2) / np.sum(kb ** 2)
        idx = np.sort(rng.choice(r, size=int(rng.integers(1, r + 1)), replace=False))
        sub = random_factors(rng, p, q, idx.size, diagonal=False, toeplitz=False)
        ks, kf = sub.covariance(), f.restrict_epochs(idx).covariance()
        dense_val = np.sum((ks - kf) ** 2) / np.sum(kf ** 2)
        errs = [
            np.max(np.abs(update_gamma(t, f.psi, f.delta) - oracle_gamma(t, f.psi, f.delta))),
            np.max(np.abs(update_delta(t, f.gamma, f.psi, "unrestricted") - oracle_delta(t, f.gamma, f.psi))),
            abs(log_likelihood(t, f) - oracle_loglik(t, f)) / max(1.0, abs(oracle_loglik(t, f))),
            abs(mse_total(f, g) - dense_mse) / max(1.0, dense_mse),
            abs(validation_measure(sub, f, idx) - dense_val) / max(1.0, dense_val),
        ]
        worst = max(worst, max(errs))
    # circulant ML versus a 5^5 grid around it on 8 x 8 problems
    grid_ok = True
    for _ in range(3):
        x = rng.standard_normal((8, 24)) * rng.uniform(0.5, 2.0, (8, 1))
        s = x @ x.T / 24
        c = circulant_mle(s).first_col
        best = _circ_loglik(c, s)
        free = c[:5]
        h = 0.02 * free[0]
        for step in itertools.product((-2 * h, -h, 0.0, h, 2 * h), repeat=5):
            cand = np.zeros(8)
            for u, v in enumerate(free + np.array(step)):
                cand[u] = cand[(8 - u) % 8] = v
            grid_ok &= _circ_loglik(cand, s) <= best + 1e-12
    record(4, worst < 1e-9 and grid_ok, f"max oracle deviation {worst:.2e}; circulant grid check {grid_ok}")


def test_criterion_5_em_correctness():
    rng = np.random.default_rng(5)
    truth = linalg.toeplitz([1.0, 0.5])
    p, r = 100, 100  # n_eff = p * r = 10^4 whitened columns
    e = rng.standard_normal((1, r, p, 2))
    t = TrialTensor(e @ np.linalg.cholesky(truth).T)
    psi, em = update_psi(t, np.eye(p), np.eye(r), "toeplitz", FitConfig())
    rel = np.max(np.abs(psi - truth) / np.abs(truth))
    tr = np.array(em.loglik_trace)
    mono = bool(np.all(np.diff(tr) >= -1e-8 * np.abs(tr[1:])))
    record(5, rel < 0.05 and mono, f"max elementwise rel error {rel:.4f}; EM trace nondecreasing {mono}")


def test_criterion_6_sampling_correctness():
    psi = linalg.toeplitz([1.0, 0.5, 0.2])
    truth = FactorSet(random_pd(np.random.default_rng(6), 2), psi, np.diag([1.0, 3.0]))
    t = sample_dataset(truth, n=100_000, seed=6)
    v = t.to_serialized().reshape(t.n, -1)
    dense = truth.covariance()
    err = np.linalg.norm(v.T @ v / t.n - dense) / np.linalg.norm(dense)
    record(6, err < 0.03, f"relative Frobenius error {err:.4f}")


def test_criterion_7_validation_protocol():
    truth = _desk_truth()
    t = sample_dataset(truth, n=1, seed=77)
    a, cfg = AssumptionSet(), FitConfig()
    full = fit(t, a, cfg).factors
    rnd = run_validation(t, full, a, cfg, mode="random", repeats=10, seed=7)
    con = run_validation(t, full, a, cfg, mode="consecutive")
    vals = np.array(rnd["values"] + con["values"])
    record(7, len(rnd["values"]) == 40 and np.all(vals < 0.1),
           f"random max {max(rnd['values']):.4f} mean {rnd['mean']:.4f}; "
           f"consecutive {', '.join(f'{v:.4f}' for v in con['values'])}")


def _null_run(rng, r=256, voxels=1000):
    interest = np.exp(0.5 * rng.standard_normal(r))
    conf = rng.standard_normal((r, 5))
    d = build_design(interest, shifts=(0, 1, 2), confounders=conf)
    y = conf @ rng.standard_normal((5, voxels)) + rng.standard_normal((r, voxels))
    return f_tests(y, d)[1]


def test_criterion_8_glm_null_calibration():
    rng = np.random.default_rng(8)
    ks = stats.kstest(_null_run(rng), "uniform").pvalue
    fdp = [float(bh_fdr(_null_run(rng), 0.01).any()) for _ in range(200)]
    record(8, ks > 0.01 and np.mean(fdp) <= 0.02, f"KS p={ks:.3f}; mean FDP {np.mean(fdp):.4f}")


def test_criterion_9_reference_constants():
    ok = (REFERENCE_STUDY_MSE["MEG"]["mse"]["UTD"] == 1.3e-4
          and REFERENCE_VALIDATION["MEG"]["consecutive"] == (0.020, 0.003, 0.013, 0.005)
          and REFERENCE_VALIDATION["spearman_delta_vs_alpha"] == {"S": 0.218, "L": 0.316})
    record(9, ok, "real-data reference values are stored as constants and attached to reports (not reproducible)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
