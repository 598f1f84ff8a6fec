"""CSV ingestion and the JSON model file."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .ccc import CccResult
from .dependence import CopulaSample, to_copula_scale
from .errors import DataError
from .families import BivariateCopula, Family
from .selection import FittedVine, aic_value
from .structure import Edge, VineStructure

MODEL_KEYS = ("d", "structure", "family", "rotation", "par", "par2", "loglik", "aic", "npars")


def read_table(path) -> tuple[np.ndarray, list]:
    """Comma-separated file with a mandatory header row; all cells numeric."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    values = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}, line {i}: expected {width} fields, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}, line {i}, column {header[j]!r}: "
                                f"not a number: {cell!r}") from None
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: missing or non-finite values")
    return values, header


def load_sample(path, pit: bool = False) -> CopulaSample:
    """Read a data file; with ``pit`` the columns are rank-transformed."""
    values, header = read_table(path)
    if values.shape[1] < 2:
        raise DataError(f"{path}: at least two columns are required, got {values.shape[1]}")
    if pit:
        return to_copula_scale(values, header)
    for j in range(values.shape[1]):
        if np.all(values[:, j] == values[0, j]):
            raise DataError(f"{path}: column {header[j]!r} is constant")
    if not np.all((values > 0) & (values < 1)):
        raise DataError(f"{path}: values must lie strictly inside (0, 1); use --pit for raw data")
    return CopulaSample(values, header)


def format_table(data, labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(labels)
    for row in np.asarray(data):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_table(path, data, labels) -> None:
    Path(path).write_text(format_table(data, labels))


# ---------------------------------------------------------------------------
# model file: lower-triangular matrices, 1-based variable labels.  The copula
# stored at (i, k) takes the diagonal variable M[k, k] as its first argument.
# ---------------------------------------------------------------------------

def _matrix_cells(structure: VineStructure):
    mat = structure.to_matrix()
    d = structure.d
    for k in range(d - 1):
        for i in range(k + 1, d):
            a, b = int(mat[k, k]), int(mat[i, k])
            cond = frozenset(int(x) for x in mat[i + 1:, k])
            yield i, k, a, Edge(d - i, (a, b), cond)


def model_to_dict(vine: FittedVine, metadata: dict | None = None) -> dict:
    d = vine.d
    mat = vine.structure.to_matrix()
    fam = [["" for _ in range(d)] for _ in range(d)]
    rot = [[0] * d for _ in range(d)]
    par = [[0.0] * d for _ in range(d)]
    par2 = [[0.0] * d for _ in range(d)]
    ccc = []
    for i, k, a, e in _matrix_cells(vine.structure):
        cop = vine.copulas[e]
        if a != e.conditioned[0]:
            cop = cop.transposed()
        fam[i][k] = cop.family.value
        rot[i][k] = int(cop.rotation)
        if cop.params:
            par[i][k] = float(cop.params[0])
        if len(cop.params) > 1:
            par2[i][k] = float(cop.params[1])
        if e in vine.ccc:
            r = vine.ccc[e]
            ccc.append({"edge": e.label(), "row": i + 1, "col": k + 1, "p_value": float(r.p_value),
                        "statistic": float(r.statistic), "df": int(r.df)})
    out = {
        "d": d,
        "structure": (mat + 1).tolist(),
        "family": fam,
        "rotation": rot,
        "par": par,
        "par2": par2,
        "loglik": float(vine.loglik),
        "aic": float(vine.aic),
        "npars": int(vine.npars),
    }
    meta = {"method": vine.method, "version": __version__}
    meta.update(vine.info.get("metadata", {}))   # carried over from a loaded file
    if ccc or "ccc" not in meta:
        meta["ccc"] = ccc
    meta.update(metadata or {})
    out["metadata"] = meta
    return out


def model_from_dict(doc: dict) -> FittedVine:
    missing = [k for k in MODEL_KEYS if k not in doc]
    if missing:
        raise DataError(f"model file lacks keys: {', '.join(missing)}")
    d = int(doc["d"])
    mat = np.asarray(doc["structure"], dtype=int) - 1
    if mat.shape != (d, d):
        raise DataError("model structure must be a d x d matrix")
    structure = VineStructure.from_matrix(mat)
    copulas = {}
    for i, k, a, e in _matrix_cells(structure):
        name = doc["family"][i][k]
        params = ()
        if Family(name) is not Family.INDEP:
            params = (doc["par"][i][k],)
            if Family(name) is Family.T:
                params += (doc["par2"][i][k],)
        cop = BivariateCopula(name, doc["rotation"][i][k], params)
        copulas[e] = cop if a == e.conditioned[0] else cop.transposed()
    meta = dict(doc.get("metadata", {}))
    vine = FittedVine(structure, copulas, float(doc["loglik"]), meta.get("method", "dissmann"))
    if int(doc["npars"]) != vine.npars:
        raise DataError("npars in the model file does not match its pair-copulas")
    if not np.isclose(float(doc["aic"]), aic_value(vine.loglik, vine.npars), rtol=0, atol=1e-9):
        raise DataError("aic in the model file is inconsistent with loglik and npars")
    vine.info["metadata"] = meta
    return vine


def save_model(path, vine: FittedVine, metadata: dict | None = None) -> dict:
    doc = model_to_dict(vine, metadata)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


def load_model(path) -> FittedVine:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    return model_from_dict(doc)


def ccc_result_dict(res: CccResult, level: float = 0.05) -> dict:
    out = res.to_dict()
    out["reject"] = bool(res.p_value < level)
    out["level"] = level
    return out
