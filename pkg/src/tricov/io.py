"""File formats: KCT1 tensors, KCF1 factors, fit directories and CSV series.

KCT1 is ``b"KCT1"``, four little-endian uint32 (p, q, r, n) and then
``p*q*r*n`` little-endian float64 in channel-fastest order.  KCF1 is a text
file with a ``KCF1 <kind> <dim>`` header followed by whitespace-separated
values: the first row for ``toeplitz``, the diagonal for ``diagonal`` and
the row-major matrix for ``dense``.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .estimator import FactorSet, FitResult
from .tensor import TrialTensor

__all__ = [
    "FormatError",
    "write_kct",
    "read_kct",
    "write_kcf",
    "read_kcf",
    "save_fit",
    "load_fit",
    "write_regressor_csv",
    "read_regressor_csv",
    "read_matrix_csv",
]

KCT_MAGIC = b"KCT1"
KCF_MAGIC = "KCF1"
KCF_KINDS = ("toeplitz", "diagonal", "dense")
_DIM_FIELDS = ("p", "q", "r", "n")


class FormatError(ValueError):
    """Malformed input file; ``field`` names the offending header field."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_kct(path, t: TrialTensor, sampling_rate=None, channel_labels=None):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(KCT_MAGIC)
        fh.write(struct.pack("<4I", t.p, t.q, t.r, t.n))
        fh.write(t.to_serialized().astype("<f8").tobytes())
    if sampling_rate is not None or channel_labels is not None:
        meta = {}
        if sampling_rate is not None:
            meta["sampling_rate"] = sampling_rate
        if channel_labels is not None:
            meta["channel_labels"] = list(channel_labels)
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_kct(path) -> TrialTensor:
    raw = Path(path).read_bytes()
    if raw[:4] != KCT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {KCT_MAGIC!r}", "magic")
    dims = []
    for i, name in enumerate(_DIM_FIELDS):
        chunk = raw[4 + 4 * i: 8 + 4 * i]
        if len(chunk) < 4:
            raise FormatError(f"{path}: header truncated in field {name!r}", name)
        (v,) = struct.unpack("<I", chunk)
        if v < 1:
            raise FormatError(f"{path}: header field {name!r} must be >= 1, got {v}", name)
        dims.append(v)
    p, q, r, n = dims
    payload = raw[20:]
    expected = 8 * p * q * r * n
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes but header p={p} q={q} r={r} n={n} "
            f"implies {expected}", "payload")
    values = np.frombuffer(payload, dtype="<f8").astype(float)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: payload contains non-finite values", "payload")
    return TrialTensor.from_serialized(values, p, q, r, n)


def read_kct_sidecar(path) -> dict:
    side = Path(path).with_suffix(".json")
    return json.loads(side.read_text()) if side.exists() else {}


def write_kcf(path, matrix, kind="dense"):
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    dim = m.shape[0]
    if kind == "toeplitz":
        body = " ".join(_fmt(v) for v in m[0])
    elif kind == "diagonal":
        body = " ".join(_fmt(v) for v in np.diag(m))
    elif kind == "dense":
        body = "\n".join(" ".join(_fmt(v) for v in row) for row in m)
    else:
        raise ValueError(f"unknown factor kind {kind!r}")
    Path(path).write_text(f"{KCF_MAGIC} {kind} {dim}\n{body}\n")


def read_kcf(path, with_kind=False):
    """Read a factor file into a dense matrix (and its kind if requested)."""
    from scipy.linalg import toeplitz

    text = Path(path).read_text().split("\n", 1)
    header = text[0].split()
    if len(header) != 3 or header[0] != KCF_MAGIC:
        raise FormatError(f"{path}: bad header {text[0]!r}, expected 'KCF1 <kind> <dim>'", "magic")
    kind = header[1]
    if kind not in KCF_KINDS:
        raise FormatError(f"{path}: unknown kind {kind!r}", "kind")
    try:
        dim = int(header[2])
    except ValueError:
        raise FormatError(f"{path}: dim {header[2]!r} is not an integer", "dim") from None
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1", "dim")
    try:
        values = np.array([float(v) for v in (text[1] if len(text) > 1 else "").split()])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}", "values") from None
    want = dim * dim if kind == "dense" else dim
    if values.size != want:
        raise FormatError(f"{path}: expected {want} values for {kind} of dim {dim}, got {values.size}", "values")
    if kind == "toeplitz":
        m = toeplitz(values)
    elif kind == "diagonal":
        m = np.diag(values)
    else:
        m = values.reshape(dim, dim)
    return (m, kind) if with_kind else m


def _factor_kinds(assumptions):
    psi = "toeplitz" if assumptions.psi == "toeplitz" else "dense"
    delta = "dense" if assumptions.delta == "unrestricted" else "diagonal"
    return "dense", psi, delta


def save_fit(result: FitResult, outdir):
    """Write ``gamma.kcf``, ``psi.kcf``, ``delta.kcf`` and ``fit.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    f = result.factors
    kg, kp, kd = _factor_kinds(result.assumptions)
    write_kcf(outdir / "gamma.kcf", f.gamma, kg)
    write_kcf(outdir / "psi.kcf", f.psi, kp)
    write_kcf(outdir / "delta.kcf", f.delta, kd)
    meta = {
        "assumptions": result.assumptions.code,
        "dims": {"p": f.p, "q": f.q, "r": f.r},
        "loglik_trace": list(map(float, result.loglik_trace)),
        "converged": bool(result.converged),
        "iters": int(result.iters),
        "em_iters": list(map(int, result.em_iters)),
        "residuals": {
            "gamma_relative": result.gamma_residual,
            "delta_relative": result.delta_residual,
            "toeplitz_g_max_abs": result.g_residual,
        },
        "config": asdict(result.config),
    }
    (outdir / "fit.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_fit(fitdir):
    """Return ``(FactorSet, metadata)`` from a fit directory."""
    fitdir = Path(fitdir)
    factors = FactorSet(*(read_kcf(fitdir / f"{k}.kcf") for k in ("gamma", "psi", "delta")))
    meta_path = fitdir / "fit.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return factors, meta


def write_regressor_csv(path, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "value", "interpolated"])
        for i, (v, m) in enumerate(zip(series.values, series.interpolated_mask)):
            w.writerow([i, _fmt(v), int(bool(m))])


def read_regressor_csv(path):
    from .glm import RegressorSeries

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"epoch", "value", "interpolated"}:
        raise FormatError(f"{path}: expected header 'epoch,value,interpolated'", "header")
    values = [float(r["value"]) for r in rows]
    mask = [bool(int(r["interpolated"])) for r in rows]
    return RegressorSeries(values, mask)


def read_matrix_csv(path) -> np.ndarray:
    """Numeric CSV (optional non-numeric header row) as a 2-d array."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise FormatError(f"{path}: empty file", "values")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        arr = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}", "values") from None
    return arr.reshape(len(rows), -1)
