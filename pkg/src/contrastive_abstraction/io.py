"""Dataset ingestion/export (CSV and JSON-lines) and model.json serialisation.

Dataset columns are ``chain, s_1..s_D, sp_1..sp_D, terminal``. Successor
columns are ignored (and written empty/null) when ``terminal`` is 1.

Model files store probabilities and objective values with 12 significant
digits. State bounds and split thresholds are stored exactly (shortest
round-trip repr) so reloaded states assign records identically, and
infinite bounds are ``null``. Rounding is idempotent, so loading and
re-saving a model reproduces it byte for byte. State and window indices
in the file are 1-based.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .analysis import AbstractionResult
from .core import (
    ConditionalTensor,
    DatasetError,
    Hyperrectangle,
    JointTensor,
    Prior,
    SplitNode,
    StateAbstraction,
    TemporalAbstraction,
    TransitionDataset,
)
from .state_abstraction import StateSplitStep
from .temporal_abstraction import WindowSplitStep

FORMAT_VERSION = 1
SIG_DIGITS = 12


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt:
        if fmt not in ("csv", "jsonl"):
            raise DatasetError(f"unknown dataset format {fmt!r}")
        return fmt
    return "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson", ".json") else "csv"


def _dims_from_columns(columns: list[str], where: str) -> int:
    if len(columns) < 4 or columns[0] != "chain" or columns[-1] != "terminal":
        raise DatasetError(f"{where}: expected columns chain,s_1..s_D,sp_1..sp_D,terminal, got {','.join(columns)}")
    D = (len(columns) - 2) // 2
    expected = ["chain", *(f"s_{d}" for d in range(1, D + 1)), *(f"sp_{d}" for d in range(1, D + 1)), "terminal"]
    if columns != expected:
        raise DatasetError(f"{where}: expected columns {','.join(expected)}, got {','.join(columns)}")
    return D


def _parse_number(raw: Any, name: str, where: str) -> float:
    if isinstance(raw, bool):
        raise DatasetError(f"{where}: field {name} must be numeric")
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise DatasetError(f"{where}: field {name} is not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"{where}: field {name} is not finite")
    return value


def _parse_chain(raw: Any, where: str) -> int:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise DatasetError(f"{where}: chain is not an integer: {raw!r}") from None
    if not value.is_integer() or value < 1:
        raise DatasetError(f"{where}: chain must be a positive integer, got {raw!r}")
    return int(value)


def _parse_terminal(raw: Any, where: str) -> bool:
    if raw in (0, 1, "0", "1", False, True):
        return str(int(raw)) == "1"
    raise DatasetError(f"{where}: terminal must be 0 or 1, got {raw!r}")


def _parse_row(fields: dict, D: int, where: str) -> tuple[int, list[float], list[float] | None]:
    chain = _parse_chain(fields.get("chain"), where)
    state = [_parse_number(fields.get(f"s_{d}"), f"s_{d}", where) for d in range(1, D + 1)]
    if _parse_terminal(fields.get("terminal"), where):
        return chain, state, None
    succ = [_parse_number(fields.get(f"sp_{d}"), f"sp_{d}", where) for d in range(1, D + 1)]
    return chain, state, succ


def _assemble(rows: list, D: int, source: str) -> TransitionDataset:
    if not rows:
        raise DatasetError(f"{source}: no transitions")
    chains = sorted({r[0] for r in rows})
    k = chains[-1]
    if len(chains) != k:
        missing = sorted(set(range(1, k + 1)) - set(chains))
        raise DatasetError(f"{source}: chain indices must be contiguous from 1; missing {missing[:5]}")
    n = len(rows)
    chain = np.fromiter((r[0] for r in rows), dtype=np.int64, count=n)
    states = np.array([r[1] for r in rows], dtype=float).reshape(n, D)
    successors = np.full((n, D), np.nan)
    terminal = np.zeros(n, dtype=bool)
    for i, (_, _, succ) in enumerate(rows):
        if succ is None:
            terminal[i] = True
        else:
            successors[i] = succ
    return TransitionDataset(chain, states, successors, terminal, k)


def read_dataset(path, fmt: str | None = None) -> TransitionDataset:
    """Load a dataset; malformed rows raise :class:`DatasetError` naming the line."""
    path = Path(path)
    fmt = _detect_format(path, fmt)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror}") from None
    rows = []
    with handle:
        if fmt == "csv":
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None:
                raise DatasetError(f"{path}: empty file")
            columns = [c.strip() for c in header]
            D = _dims_from_columns(columns, f"{path}:1")
            for values in reader:
                where = f"{path}:{reader.line_num}"
                if not values or all(not v.strip() for v in values):
                    continue
                if len(values) != len(columns):
                    raise DatasetError(f"{where}: expected {len(columns)} fields, got {len(values)}")
                rows.append(_parse_row(dict(zip(columns, (v.strip() for v in values))), D, where))
        else:
            D = None
            for lineno, line in enumerate(handle, 1):
                if not line.strip():
                    continue
                where = f"{path}:{lineno}"
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"{where}: invalid JSON ({exc.msg})") from None
                if not isinstance(obj, dict):
                    raise DatasetError(f"{where}: expected a JSON object")
                if D is None:
                    D = sum(1 for key in obj if key.startswith("s_"))
                    if D < 1:
                        raise DatasetError(f"{where}: no state fields s_1..s_D")
                rows.append(_parse_row(obj, D, where))
            if D is None:
                raise DatasetError(f"{path}: no transitions")
    return _assemble(rows, D, str(path))


def _num(v: float) -> str:
    return repr(float(v))


def dataset_to_text(dataset: TransitionDataset, fmt: str = "csv") -> str:
    D = dataset.D
    lines = []
    if fmt == "csv":
        lines.append(",".join(["chain", *(f"s_{d}" for d in range(1, D + 1)),
                               *(f"sp_{d}" for d in range(1, D + 1)), "terminal"]))
        for c, s, sp, t in zip(dataset.chain, dataset.states, dataset.successors, dataset.terminal):
            succ = [""] * D if t else [_num(v) for v in sp]
            lines.append(",".join([str(int(c)), *(_num(v) for v in s), *succ, "1" if t else "0"]))
    elif fmt == "jsonl":
        for c, s, sp, t in zip(dataset.chain, dataset.states, dataset.successors, dataset.terminal):
            obj: dict[str, Any] = {"chain": int(c)}
            obj.update({f"s_{d + 1}": float(v) for d, v in enumerate(s)})
            obj.update({f"sp_{d + 1}": None if t else float(v) for d, v in enumerate(sp)})
            obj["terminal"] = int(t)
            lines.append(json.dumps(obj))
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}")
    return "\n".join(lines) + "\n"


def write_dataset(dataset: TransitionDataset, path, fmt: str | None = None) -> None:
    path = Path(path)
    path.write_text(dataset_to_text(dataset, _detect_format(path, fmt)), encoding="utf-8")


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def round_sig(x: float) -> float | None:
    """12-significant-digit float, ``None`` for infinities."""
    x = float(x)
    if math.isinf(x):
        return None
    if math.isnan(x):
        raise ModelFormatError("NaN cannot be serialised")
    return float(f"{x:.{SIG_DIGITS}g}")


class _Exact(float):
    """Marks a float that is written at full precision."""


def _clean(obj):
    if isinstance(obj, _Exact):
        return None if math.isinf(obj) else float(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round_sig(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _tree_out(node: SplitNode) -> dict:
    if node.is_leaf:
        return {"state": node.state + 1}
    return {"dim": node.dim + 1, "threshold": _Exact(node.threshold),
            "lower": _tree_out(node.lower), "upper": _tree_out(node.upper)}


def _tree_in(d: dict) -> SplitNode:
    if "state" in d:
        return SplitNode(state=int(d["state"]) - 1)
    return SplitNode(dim=int(d["dim"]) - 1, threshold=float(d["threshold"]),
                     lower=_tree_in(d["lower"]), upper=_tree_in(d["upper"]))


def model_to_dict(result: AbstractionResult, config: dict | None = None, dim_names=None) -> dict:
    a = result.abstraction
    D = a.D
    return {
        "format_version": FORMAT_VERSION,
        "config": dict(config or {}),
        "dim_names": list(dim_names) if dim_names else [f"s_{d}" for d in range(1, D + 1)],
        "k": result.windows.k,
        "m": a.m,
        "n": result.n,
        "has_terminal": a.has_terminal,
        "states": [{"lower": [_Exact(v) for v in box.lower], "upper": [_Exact(v) for v in box.upper]}
                   for box in a.states],
        "tree": _tree_out(a.tree),
        "windows": [{"start": l, "stop": u} for l, u in result.windows.windows],
        "prior": result.prior.weights,
        "joint": {"shape": list(result.joint.probs.shape), "weights": result.joint.weights,
                  "empty": result.joint.empty, "data": result.joint.probs.ravel()},
        "conditional": {"shape": list(result.conditional.probs.shape),
                        "zero_rows": result.conditional.zero_rows,
                        "data": result.conditional.probs.ravel()},
        "state_trace": [{"state": s.state + 1, "dim": s.dim + 1, "threshold": _Exact(s.threshold),
                         "jsd_before": s.jsd_before, "jsd_after": s.jsd_after, "delta": s.delta,
                         "objective": s.objective} for s in result.state_trace],
        "window_trace": [{"window": s.window + 1, "cut": s.cut, "jsd_before": s.jsd_before,
                          "jsd_after": s.jsd_after, "delta": s.delta, "objective": s.objective}
                         for s in result.window_trace],
        "metadata": dict(result.metadata),
    }


def dumps_model(result: AbstractionResult, config: dict | None = None, dim_names=None) -> str:
    """One top-level key per line; values compact. Key order is fixed."""
    data = _clean(model_to_dict(result, config, dim_names))
    body = ",\n".join(f"  {json.dumps(k)}: {json.dumps(v, separators=(',', ':'), ensure_ascii=False)}"
                      for k, v in data.items())
    return "{\n" + body + "\n}\n"


def _require(data: dict, key: str):
    if key not in data:
        raise ModelFormatError(f"model is missing field {key!r}")
    return data[key]


def model_from_dict(data: dict) -> tuple[AbstractionResult, dict, list[str]]:
    version = _require(data, "format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version}")
    try:
        states = tuple(Hyperrectangle(tuple(-math.inf if v is None else float(v) for v in s["lower"]),
                                      tuple(math.inf if v is None else float(v) for v in s["upper"]))
                       for s in _require(data, "states"))
        abstraction = StateAbstraction(states, _tree_in(_require(data, "tree")), bool(_require(data, "has_terminal")))
        windows = TemporalAbstraction(tuple((int(w["start"]), int(w["stop"]))
                                            for w in _require(data, "windows")))
        jd = _require(data, "joint")
        joint = JointTensor(np.array(jd["data"], dtype=float).reshape(jd["shape"]),
                            np.array(jd["weights"], dtype=float), np.array(jd["empty"], dtype=bool))
        cd = _require(data, "conditional")
        conditional = ConditionalTensor(np.array(cd["data"], dtype=float).reshape(cd["shape"]),
                                        np.array(cd["zero_rows"], dtype=bool))
        prior = Prior(np.array(_require(data, "prior"), dtype=float))
        state_trace = tuple(StateSplitStep(s["state"] - 1, s["dim"] - 1, s["threshold"], s["jsd_before"],
                                           s["jsd_after"], s["delta"], s["objective"])
                            for s in data.get("state_trace", []))
        window_trace = tuple(WindowSplitStep(s["window"] - 1, s["cut"], s["jsd_before"], s["jsd_after"],
                                             s["delta"], s["objective"])
                             for s in data.get("window_trace", []))
        result = AbstractionResult(abstraction, windows, joint, conditional, prior, state_trace,
                                   window_trace, dict(data.get("metadata", {})))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"inconsistent model: {exc}") from None
    return result, dict(data.get("config", {})), list(data.get("dim_names", []))


def loads_model(text: str) -> tuple[AbstractionResult, dict, list[str]]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ModelFormatError("model must be a JSON object")
    return model_from_dict(data)


def save_model(path, result: AbstractionResult, config: dict | None = None, dim_names=None) -> None:
    Path(path).write_text(dumps_model(result, config, dim_names), encoding="utf-8")


def load_model(path) -> tuple[AbstractionResult, dict, list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc.strerror}") from None
    return loads_model(text)
