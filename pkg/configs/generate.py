"""Regenerate the shipped surrogate truth and study config.

The truth is a (U,T,D) fit to one draw from an alpha-like analytic model
(damped 10 Hz temporal autocovariance, smoothly varying epoch variances,
random spatial covariance). It stands in for factors estimated from real
recordings, which are not distributed here.

    python3 configs/generate.py
"""

import json
from pathlib import Path

from tricov.io import write_kcf
from tricov.simulate import surrogate_truth

HERE = Path(__file__).parent


def main():
    out = HERE / "desk"
    out.mkdir(exist_ok=True)
    truth = surrogate_truth(8, 16, 64, fs=128.0, seed=2024, refit=True)
    write_kcf(out / "gamma.kcf", truth.gamma, "dense")
    write_kcf(out / "psi.kcf", truth.psi, "toeplitz")
    write_kcf(out / "delta.kcf", truth.delta, "diagonal")
    study = {
        "truth": {"gamma": "gamma.kcf", "psi": "psi.kcf", "delta": "delta.kcf"},
        "n": 1,
        "replicates": 20,
        "assumption_sets": ["UTD", "UPD", "UUD", "UTI", "UUI", "UTU", "UUU"],
        "seed": 1,
        "fit": {"max_outer_iters": 200, "outer_tol": 1e-7, "em_max_iters": 100, "em_tol": 1e-6},
    }
    (out / "study.json").write_text(json.dumps(study, indent=2) + "\n")


if __name__ == "__main__":
    main()
