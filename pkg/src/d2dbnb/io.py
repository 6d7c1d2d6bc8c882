"""Versioned text formats for every artifact the pipeline writes.

Structured objects are JSON with a ``schema`` tag and ``version``; floats go
through ``repr`` and reload bit-exactly. Tabular data (datasets) is CSV with a
metadata comment line; model files are a line-oriented text format with one
value per line at 17 significant digits.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .bnb import BnbResult
from .classifiers import FnnModel, SvmModel
from .imitate import LabeledProblem, LabeledSample
from .scenario import Scenario, ScenarioConfig
from .transform import ProblemInstance

SCHEMA_VERSION = 1
MODEL_MAGIC = "d2dbnb-model"
DATASET_MAGIC = "# d2dbnb-dataset"
DATASET_COLUMNS = ["instance_id", "node_id", *[f"f{i}" for i in range(1, 9)], "label", "weight"]


class SchemaError(ValueError):
    """A file does not match the expected schema or version."""


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _tag(kind: str) -> dict:
    return {"schema": f"d2dbnb/{kind}", "version": SCHEMA_VERSION}


def _check(d, kind: str, fields=()):
    if not isinstance(d, dict):
        raise SchemaError(f"{kind}: expected a JSON object")
    if d.get("schema") != f"d2dbnb/{kind}":
        raise SchemaError(f"expected schema 'd2dbnb/{kind}', found {d.get('schema')!r}")
    if d.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"{kind}: unsupported schema version {d.get('version')!r} (expected {SCHEMA_VERSION})")
    for f in fields:
        if f not in d:
            raise SchemaError(f"{kind}: missing field '{f}'")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON ({e})") from None


# --------------------------------------------------------------------------
# scenario / instance / result

_SCENARIO_ARRAYS = ("cu_pos", "d2d_tx_pos", "d2d_rx_pos", "g_cb", "g_cd", "g_d", "g_db")
_SCENARIO_SCALARS = ("noise_mw", "p_max_cu_mw", "p_max_d2d_mw", "r_min_cu")


def scenario_to_dict(sc: Scenario) -> dict:
    d = _tag("scenario")
    for f in _SCENARIO_ARRAYS:
        d[f] = np.asarray(getattr(sc, f)).tolist()
    for f in _SCENARIO_SCALARS:
        d[f] = float(getattr(sc, f))
    d["config"] = None if sc.config is None else sc.config.to_dict()
    return d


def scenario_from_dict(d: dict) -> Scenario:
    _check(d, "scenario", _SCENARIO_ARRAYS + _SCENARIO_SCALARS)
    arrays = {f: np.array(d[f], dtype=float) for f in _SCENARIO_ARRAYS}
    scalars = {f: float(d[f]) for f in _SCENARIO_SCALARS}
    cfg = d.get("config")
    return Scenario(**arrays, **scalars, config=None if cfg is None else ScenarioConfig.from_dict(cfg))


def save_scenario(path, sc: Scenario) -> None:
    Path(path).write_text(_dumps(scenario_to_dict(sc)))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(_read_json(path))


_INSTANCE_FIELDS = ("a", "b", "p_cap", "p_budget", "r_min_cu", "instance_id")


def instance_to_dict(inst: ProblemInstance) -> dict:
    d = _tag("instance")
    d.update(a=inst.a.tolist(), b=inst.b.tolist(), p_cap=inst.p_cap.tolist(),
             p_budget=float(inst.p_budget), r_min_cu=float(inst.r_min_cu), instance_id=inst.instance_id)
    return d


def instance_from_dict(d: dict, scenario: Scenario | None = None) -> ProblemInstance:
    _check(d, "instance", _INSTANCE_FIELDS)
    return ProblemInstance(
        a=np.array(d["a"], dtype=float), b=np.array(d["b"], dtype=float),
        p_cap=np.array(d["p_cap"], dtype=float), p_budget=float(d["p_budget"]),
        r_min_cu=float(d["r_min_cu"]), scenario=scenario, instance_id=d["instance_id"],
    )


_RESULT_FIELDS = ("objective", "rho_star", "p_star", "nodes_explored", "b_u_root")


def result_to_dict(res: BnbResult) -> dict:
    d = _tag("result")
    d.update(
        objective=None if not math.isfinite(res.objective) else float(res.objective),
        rho_star=None if res.rho_star is None else np.asarray(res.rho_star).astype(int).tolist(),
        p_star=None if res.p_star is None else np.asarray(res.p_star).tolist(),
        nodes_explored=int(res.nodes_explored),
        b_u_root=None if res.b_u_root is None else float(res.b_u_root),
        fathomed=sorted(res.fathomed),
    )
    return d


def result_from_dict(d: dict) -> BnbResult:
    _check(d, "result", _RESULT_FIELDS)
    return BnbResult(
        objective=math.nan if d["objective"] is None else float(d["objective"]),
        rho_star=None if d["rho_star"] is None else np.array(d["rho_star"], dtype=np.int8),
        p_star=None if d["p_star"] is None else np.array(d["p_star"], dtype=float),
        nodes_explored=int(d["nodes_explored"]),
        b_u_root=d["b_u_root"],
        fathomed=frozenset(d.get("fathomed", ())),
    )


def save_solved(path, lp: LabeledProblem, meta: dict | None = None) -> None:
    """An instance, its source scenario and its exact solution in one file."""
    d = _tag("solved")
    d["scenario"] = None if lp.inst.scenario is None else scenario_to_dict(lp.inst.scenario)
    d["instance"] = instance_to_dict(lp.inst)
    d["result"] = result_to_dict(lp.exact)
    d["meta"] = meta or {}
    Path(path).write_text(_dumps(d))


def load_solved(path) -> tuple[LabeledProblem, dict]:
    d = _read_json(path)
    _check(d, "solved", ("instance", "result"))
    sc = None if d.get("scenario") is None else scenario_from_dict(d["scenario"])
    return LabeledProblem(instance_from_dict(d["instance"], sc), result_from_dict(d["result"])), d.get("meta", {})


def write_node_log(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


# --------------------------------------------------------------------------
# dataset


def _g(v: float) -> str:
    return "%.17g" % v


def save_dataset(path, samples, meta: dict | None = None) -> None:
    lines = [f"{DATASET_MAGIC} v{SCHEMA_VERSION} {json.dumps(meta or {}, sort_keys=True)}",
             ",".join(DATASET_COLUMNS)]
    for s in samples:
        if "," in s.instance_id:
            raise ValueError(f"instance id {s.instance_id!r} contains a comma")
        lines.append(",".join([s.instance_id, str(s.node_id), *(_g(v) for v in s.features),
                               str(s.label), _g(s.weight)]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> tuple[list, dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(DATASET_MAGIC + " v"):
        raise SchemaError(f"{path}: not a dataset file")
    version, _, meta = lines[0][len(DATASET_MAGIC) + 2 :].partition(" ")
    if version != str(SCHEMA_VERSION):
        raise SchemaError(f"{path}: unsupported dataset version {version}")
    if len(lines) < 2 or lines[1].split(",") != DATASET_COLUMNS:
        raise SchemaError(f"{path}: bad dataset header")
    out = []
    for n, line in enumerate(lines[2:], start=3):
        parts = line.split(",")
        if len(parts) != len(DATASET_COLUMNS):
            raise SchemaError(f"{path}:{n}: expected {len(DATASET_COLUMNS)} columns, found {len(parts)}")
        out.append(LabeledSample(
            features=np.array([float(v) for v in parts[2:10]]),
            label=int(parts[10]),
            weight=float(parts[11]),
            instance_id=parts[0],
            node_id=int(parts[1]),
        ))
    return out, json.loads(meta) if meta else {}


# --------------------------------------------------------------------------
# models


def _model_tensors(model):
    if isinstance(model, SvmModel):
        t = [("mean", model.mean), ("std", model.std), ("bias", np.array(model.bias))]
        if model.kernel == "linear":
            t.append(("w", model.w))
        else:
            t += [("support", model.support), ("dual_coef", model.dual_coef)]
        header = {"kernel": model.kernel, "C": model.C, "gamma": model.gamma, "n_iter": model.n_iter}
        return "svm", header, t
    if isinstance(model, FnnModel):
        t = [("mean", model.mean), ("std", model.std)]
        t += [(f"W{i}", W) for i, W in enumerate(model.weights)]
        t += [(f"b{i}", b) for i, b in enumerate(model.biases)]
        return "fnn", {"dims": list(model.dims), "hyper": model.hyper}, t
    raise TypeError(f"cannot save {type(model).__name__}")


def save_model(path, model, meta: dict | None = None) -> None:
    kind, header, tensors = _model_tensors(model)
    lines = [f"{MODEL_MAGIC} {SCHEMA_VERSION}", f"kind {kind}", f"seed {int(model.seed)}",
             f"header {json.dumps(header, sort_keys=True)}", f"meta {json.dumps(meta or {}, sort_keys=True)}"]
    for name, arr in tensors:
        arr = np.asarray(arr, dtype=float)
        lines.append(f"tensor {name} {' '.join(str(d) for d in arr.shape)}".rstrip())
        lines.extend(_g(v) for v in arr.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    """Returns ``(model, meta)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(MODEL_MAGIC + " "):
        raise SchemaError(f"{path}: not a model file")
    if lines[0].split()[1] != str(SCHEMA_VERSION):
        raise SchemaError(f"{path}: unsupported model version {lines[0].split()[1]}")
    try:
        kind = lines[1].split()[1]
        seed = int(lines[2].split()[1])
        header = json.loads(lines[3][len("header ") :])
        meta = json.loads(lines[4][len("meta ") :])
        tensors = {}
        i = 5
        while i < len(lines):
            parts = lines[i].split()
            if parts[0] != "tensor":
                raise SchemaError(f"{path}:{i + 1}: expected a tensor header")
            shape = tuple(int(v) for v in parts[2:])
            size = int(np.prod(shape)) if shape else 1
            vals = np.array([float(v) for v in lines[i + 1 : i + 1 + size]])
            if vals.size != size:
                raise SchemaError(f"{path}: tensor {parts[1]} is truncated")
            tensors[parts[1]] = vals.reshape(shape)
            i += 1 + size
    except (IndexError, ValueError, json.JSONDecodeError) as e:
        if isinstance(e, SchemaError):
            raise
        raise SchemaError(f"{path}: malformed model file ({e})") from None

    if kind == "svm":
        model = SvmModel(
            kernel=header["kernel"], w=tensors.get("w"), bias=float(tensors["bias"]),
            mean=tensors["mean"], std=tensors["std"], C=header["C"], gamma=header["gamma"],
            seed=seed, support=tensors.get("support"), dual_coef=tensors.get("dual_coef"),
            n_iter=header["n_iter"],
        )
    elif kind == "fnn":
        n = len(header["dims"]) - 1
        model = FnnModel(
            weights=[tensors[f"W{j}"] for j in range(n)], biases=[tensors[f"b{j}"] for j in range(n)],
            mean=tensors["mean"], std=tensors["std"], dims=tuple(header["dims"]),
            hyper=header["hyper"], seed=seed,
        )
    else:
        raise SchemaError(f"{path}: unknown model kind {kind!r}")
    return model, meta


# --------------------------------------------------------------------------
# reports


def render_report(report, fmt: str = "csv", meta: dict | None = None) -> str:
    head = f"# d2dbnb-report v{SCHEMA_VERSION} {json.dumps(meta or {}, sort_keys=True)}\n"
    if fmt == "csv":
        return head + report.to_csv()
    if fmt == "pretty":
        return head + report.to_pretty()
    raise ValueError(f"unknown report format {fmt!r}")


def save_report(path, report, fmt: str = "csv", meta: dict | None = None) -> None:
    Path(path).write_text(render_report(report, fmt, meta))
