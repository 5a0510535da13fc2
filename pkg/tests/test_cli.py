import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from tricov.cli import main
from tricov.glm import bh_fdr
from tricov.io import read_kct, write_kcf, write_kct
from tricov.simulate import surrogate_truth
from tricov.tensor import TrialTensor


@pytest.fixture
def truth_files(tmp_path):
    truth = surrogate_truth(3, 6, 24, seed=0, refit=False)
    write_kcf(tmp_path / "g.kcf", truth.gamma, "dense")
    write_kcf(tmp_path / "s.kcf", truth.psi, "toeplitz")
    write_kcf(tmp_path / "d.kcf", truth.delta, "diagonal")
    return tmp_path


def _simulate(d, seed=7, out="x.kct"):
    return main(["simulate", "--gamma", str(d / "g.kcf"), "--psi", str(d / "s.kcf"),
                 "--delta", str(d / "d.kcf"), "--n", "1", "--seed", str(seed), "--out", str(d / out)])


def _fit(d, data="x.kct", out="fit"):
    return main(["fit", "--data", str(d / data), "--psi", "toeplitz", "--delta", "diagonal",
                 "--out", str(d / out)])


def test_simulate_and_seed(truth_files):
    d = truth_files
    assert _simulate(d) == 0
    t = read_kct(d / "x.kct")
    assert t.dims == (3, 6, 24, 1)
    assert _simulate(d, seed=8, out="y.kct") == 0
    a, b = (d / "x.kct").read_bytes(), (d / "y.kct").read_bytes()
    assert a[:20] == b[:20] and a != b


def test_simulate_requires_seed(truth_files):
    d = truth_files
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--gamma", str(d / "g.kcf"), "--psi", str(d / "s.kcf"),
              "--delta", str(d / "d.kcf"), "--out", str(d / "x.kct")])
    assert info.value.code == 2


def test_simulate_non_pd_truth(truth_files):
    d = truth_files
    write_kcf(d / "bad.kcf", np.array([[1.0, 2.0], [2.0, 1.0]]), "dense")
    code = main(["simulate", "--gamma", str(d / "bad.kcf"), "--psi", str(d / "s.kcf"),
                 "--delta", str(d / "d.kcf"), "--seed", "1", "--out", str(d / "x.kct")])
    assert code == 2


def test_fit_contract_and_determinism(truth_files, capsys):
    d = truth_files
    _simulate(d)
    assert _fit(d, out="fit1") == 0
    assert "converged" in capsys.readouterr().out
    assert sorted(p.name for p in (d / "fit1").iterdir()) == ["delta.kcf", "fit.json", "gamma.kcf", "psi.kcf"]
    assert _fit(d, out="fit2") == 0
    for name in ("delta.kcf", "fit.json", "gamma.kcf", "psi.kcf"):
        assert (d / "fit1" / name).read_bytes() == (d / "fit2" / name).read_bytes()


def test_fit_inadmissible_exit_2(tmp_path, capsys):
    write_kct(tmp_path / "big.kct", TrialTensor(np.random.default_rng(0).standard_normal((1, 2, 100, 4))))
    assert main(["fit", "--data", str(tmp_path / "big.kct")]) == 2
    assert "sample-size" in capsys.readouterr().err


def test_fit_malformed_header_exit_2(tmp_path, capsys):
    (tmp_path / "bad.kct").write_bytes(b"KCT1" + b"\x00" * 16)
    assert main(["fit", "--data", str(tmp_path / "bad.kct")]) == 2
    assert "'p'" in capsys.readouterr().err


def test_fit_numerical_failure_exit_3(tmp_path):
    # 8 identical channels make every spatial update singular
    x = np.repeat(np.random.default_rng(1).standard_normal((1, 20, 1, 4)), 8, axis=2)
    write_kct(tmp_path / "deg.kct", TrialTensor(x))
    assert main(["fit", "--data", str(tmp_path / "deg.kct")]) == 3


def test_unknown_flag_is_error(truth_files):
    with pytest.raises(SystemExit) as info:
        main(["fit", "--data", "x.kct", "--bogus"])
    assert info.value.code == 2


@pytest.mark.parametrize("cmd", ["simulate", "study", "fit", "evaluate", "validate", "regress", "spectrum"])
def test_help_lists_flags(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        main([cmd, "--help"])
    assert info.value.code == 0
    assert "--out" in capsys.readouterr().out


def test_validate_modes(truth_files, capsys):
    d = truth_files
    _simulate(d)
    _fit(d)
    capsys.readouterr()
    assert main(["validate", "--data", str(d / "x.kct"), "--fit", str(d / "fit"), "--mode", "consecutive"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert len(rep["values"]) == 4
    assert main(["validate", "--data", str(d / "x.kct"), "--fit", str(d / "fit"), "--mode", "random",
                 "--repeats", "10", "--seed", "3", "--out", str(d / "v.json")]) == 0
    assert len(json.loads((d / "v.json").read_text())["values"]) == 40
    assert main(["validate", "--data", str(d / "x.kct"), "--fit", str(d / "fit"), "--mode", "random"]) == 2


def test_validate_dimension_mismatch(truth_files, tmp_path):
    d = truth_files
    _simulate(d)
    _fit(d)
    write_kct(d / "other.kct", TrialTensor(np.zeros((1, 5, 3, 6))))
    assert main(["validate", "--data", str(d / "other.kct"), "--fit", str(d / "fit"),
                 "--mode", "consecutive"]) == 2


def test_evaluate_and_spectrum(truth_files, capsys):
    d = truth_files
    _simulate(d)
    _fit(d)
    capsys.readouterr()
    assert main(["evaluate", "--fit", str(d / "fit"), "--gamma", str(d / "g.kcf"),
                 "--psi", str(d / "s.kcf"), "--delta", str(d / "d.kcf")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) == {"mse", "mse_gamma", "mse_psi", "mse_delta"}
    assert main(["spectrum", "--fit", str(d / "fit"), "--fs", "128", "--out", str(d / "spec.csv")]) == 0
    rows = list(csv.reader(open(d / "spec.csv")))
    assert rows[0] == ["frequency_hz", "power"]
    assert len(rows) == 1 + 6  # rfft of a length-11 extension


def test_regress_consistency(truth_files):
    d = truth_files
    _simulate(d)
    _fit(d)
    rng = np.random.default_rng(4)
    r = 24
    bold = rng.standard_normal((1, r, 50, 1))
    write_kct(d / "bold.kct", TrialTensor(bold))
    np.savetxt(d / "conf.csv", rng.standard_normal((r, 2)), delimiter=",", header="hr,motion", comments="")
    code = main(["regress", "--fit", str(d / "fit"), "--bold", str(d / "bold.kct"),
                 "--confounders", str(d / "conf.csv"), "--shifts", "0,1,2", "--fdr", "0.01",
                 "--out", str(d / "glm")])
    assert code == 0
    rows = list(csv.DictReader(open(d / "glm" / "glm_voxels.csv")))
    assert len(rows) == 50
    p = np.array([float(row["p"]) for row in rows])
    sig = np.array([int(row["significant"]) for row in rows], dtype=bool)
    assert_array_equal(sig, bh_fdr(p, 0.01))
    summary = json.loads((d / "glm" / "glm_summary.json").read_text())
    assert summary["significant"] == int(sig.sum())
    reg = list(csv.DictReader(open(d / "glm" / "regressor.csv")))
    assert len(reg) == r


def test_regress_removed_epochs(truth_files):
    d = truth_files
    _simulate(d)
    _fit(d)
    assert main(["regress", "--fit", str(d / "fit"), "--removed", "0,5", "--out", str(d / "reg")]) == 0
    rows = list(csv.DictReader(open(d / "reg" / "regressor.csv")))
    assert len(rows) == 26
    assert [row["interpolated"] for row in rows[:2]] == ["1", "0"]
    assert rows[0]["value"] == rows[1]["value"]


def test_study_counts(truth_files):
    d = truth_files
    (d / "study.json").write_text(json.dumps({
        "truth": {"gamma": "g.kcf", "psi": "s.kcf", "delta": "d.kcf"},
        "replicates": 2, "assumption_sets": ["UTD", "UUI"], "seed": 5,
    }))
    assert main(["study", "--config", str(d / "study.json"), "--out", str(d / "rep")]) == 0
    rep = json.loads((d / "rep" / "study_report.json").read_text())
    assert len(rep["records"]) == 4
    table = list(csv.DictReader(open(d / "rep" / "study_table.csv")))
    assert [row["assumptions"] for row in table] == ["UTD", "UUI"]
    first = (d / "rep" / "study_report.json").read_bytes()
    assert main(["study", "--config", str(d / "study.json"), "--out", str(d / "rep2"), "--threads", "2"]) == 0
    assert (d / "rep2" / "study_report.json").read_bytes() == first


def test_study_requires_seed(truth_files):
    d = truth_files
    (d / "noseed.json").write_text(json.dumps({
        "truth": {"gamma": "g.kcf", "psi": "s.kcf", "delta": "d.kcf"}, "replicates": 1}))
    assert main(["study", "--config", str(d / "noseed.json"), "--out", str(d / "rep")]) == 2
