"""CSV and JSON formats for every artifact the package reads or writes.

Floats in CSV files are printed with 17 significant digits, which round-trips
IEEE doubles exactly. JSON uses Python's shortest round-tripping repr.
``nan`` is written as ``null``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .alloc_t import RedistributionPlan
from .budget import AllocationVector, BudgetSpec
from .errors import InvalidInputError
from .routing import ActivationMask, check_probs
from .sensitivity import SensitivityMatrix


def fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _nan_to_none(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_nan_to_none(obj), indent=2, allow_nan=False) + "\n"


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _csv_rows(text: str, header: list[str]) -> list[list[str]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise InvalidInputError(f"expected CSV header {','.join(header)}")
    return [r for r in rows[1:] if r]


# routing scores

def scores_to_json(probs) -> dict:
    probs = np.asarray(probs, dtype=np.float64)
    return {"T": probs.shape[0], "N": probs.shape[1], "rows": probs.tolist()}


def scores_from_json(data: dict) -> np.ndarray:
    probs = np.array(data["rows"], dtype=np.float64)
    if probs.shape != (data["T"], data["N"]):
        raise InvalidInputError(f"rows have shape {probs.shape}, header says ({data['T']}, {data['N']})")
    return check_probs(probs)


def scores_to_csv(probs) -> str:
    probs = np.asarray(probs, dtype=np.float64)
    T, N = probs.shape
    return _csv_text(["token", "expert", "value"],
                     ((t, e, fmt(probs[t, e])) for t in range(T) for e in range(N)))


def scores_from_csv(text: str) -> np.ndarray:
    rows = _csv_rows(text, ["token", "expert", "value"])
    T = max(int(r[0]) for r in rows) + 1
    N = max(int(r[1]) for r in rows) + 1
    probs = np.full((T, N), np.nan)
    for t, e, v in rows:
        probs[int(t), int(e)] = float(v)
    return check_probs(probs)


def layered_scores_to_json(layers, k_orig: int | None = None) -> dict:
    out = {"layers": [scores_to_json(p) for p in layers]}
    if k_orig is not None:
        out = {"k_orig": k_orig, **out}
    return out


def layered_scores_from_json(data: dict) -> tuple[list[np.ndarray], int | None]:
    if "layers" in data:
        return [scores_from_json(d) for d in data["layers"]], data.get("k_orig")
    return [scores_from_json(data)], data.get("k_orig")


# activation masks and plans

def mask_to_json(mask: ActivationMask) -> dict:
    return {
        "T": mask.num_tokens,
        "N": mask.num_experts,
        "rows": mask.weights.tolist(),
        "active": mask.active.astype(int).tolist(),
    }


def mask_from_json(data: dict) -> ActivationMask:
    weights = np.array(data["rows"], dtype=np.float64)
    active = np.array(data["active"], dtype=bool) if "active" in data else weights > 0
    if weights.shape != (data["T"], data["N"]):
        raise InvalidInputError("mask rows do not match the T/N header")
    return ActivationMask(active, weights)


def mask_to_csv(mask: ActivationMask) -> str:
    """Sparse listing of active pairs with their weights."""
    ts, es = np.nonzero(mask.active)
    return _csv_text(["token", "expert", "value"],
                     ((t, e, fmt(mask.weights[t, e])) for t, e in zip(ts.tolist(), es.tolist())))


def mask_from_csv(text: str, num_experts: int, num_tokens: int | None = None) -> ActivationMask:
    rows = _csv_rows(text, ["token", "expert", "value"])
    T = num_tokens if num_tokens is not None else max(int(r[0]) for r in rows) + 1
    active = np.zeros((T, num_experts), dtype=bool)
    weights = np.zeros((T, num_experts))
    for t, e, v in rows:
        active[int(t), int(e)] = True
        weights[int(t), int(e)] = float(v)
    return ActivationMask(active, weights)


def plan_to_json(plan: RedistributionPlan) -> dict:
    return {
        **mask_to_json(plan.mask),
        "k_base": plan.k_base,
        "total_slots": plan.total_slots,
        "slots_used": plan.slots_used,
    }


def plan_from_json(data: dict) -> RedistributionPlan:
    return RedistributionPlan(mask_from_json(data), int(data["slots_used"]), int(data["k_base"]),
                              int(data["total_slots"]))


# sensitivity

def sensitivity_to_json(S: SensitivityMatrix) -> dict:
    return {
        "L": S.num_layers,
        "k_orig": S.k_orig,
        "S": S.values.tolist(),
        "normalization": S.normalization,
        "protocol": S.protocol,
    }


def sensitivity_from_json(data: dict) -> SensitivityMatrix:
    S = SensitivityMatrix(np.array(data["S"], dtype=np.float64),
                          normalization=data.get("normalization", "none"),
                          protocol=data.get("protocol", "sequential"))
    if S.values.shape != (data["L"], data["k_orig"]):
        raise InvalidInputError("S does not match the L/k_orig header")
    return S


def sensitivity_to_csv(S: SensitivityMatrix) -> str:
    return _csv_text(["layer", "k", "loss"],
                     ((i, k, fmt(S.at(i, k))) for i in range(S.num_layers) for k in range(1, S.k_orig + 1)))


def sensitivity_from_csv(text: str, normalization: str = "none") -> SensitivityMatrix:
    rows = _csv_rows(text, ["layer", "k", "loss"])
    L = max(int(r[0]) for r in rows) + 1
    K = max(int(r[1]) for r in rows)
    S = np.full((L, K), np.nan)
    for i, k, v in rows:
        S[int(i), int(k) - 1] = float(v)
    return SensitivityMatrix(S, normalization=normalization)


def load_sensitivity(path) -> SensitivityMatrix:
    path = Path(path)
    if path.suffix == ".json":
        return sensitivity_from_json(read_json(path))
    text = path.read_text()
    # a sibling JSON carries the normalization tag
    sidecar = path.with_suffix(".json")
    norm = read_json(sidecar).get("normalization", "none") if sidecar.exists() else "none"
    return sensitivity_from_csv(text, normalization=norm)


# budgets

def budget_to_json(spec: BudgetSpec) -> dict:
    return spec.to_dict()


def budget_from_json(data: dict) -> BudgetSpec:
    return BudgetSpec.from_dict(data)


def allocation_to_json(alloc: AllocationVector) -> dict:
    return alloc.to_dict()


def allocation_from_json(data: dict) -> AllocationVector:
    return AllocationVector.from_dict(data)


# metrics

METRIC_COLUMNS = ["layer", "spearman", "entropy_delta", "js"]


def metrics_to_csv(rows: list[dict]) -> str:
    return _csv_text(METRIC_COLUMNS,
                     ([r["layer"]] + [fmt(r[c]) for c in METRIC_COLUMNS[1:]] for r in rows))
