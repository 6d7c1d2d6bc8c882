import json

import numpy as np
import pytest

from d2dbnb import io
from d2dbnb.accel import EvalReport
from d2dbnb.bnb import solve_exact
from d2dbnb.classifiers import fnn_init, svm_train
from d2dbnb.imitate import LabeledProblem, LabeledSample
from d2dbnb.scenario import ScenarioConfig, generate_scenario
from d2dbnb.transform import compute_coefficients
from helpers import make_instance


def test_scenario_round_trip_is_bit_exact(tmp_path):
    sc = generate_scenario(ScenarioConfig(K=4, L=2, rng_seed=12))
    io.save_scenario(tmp_path / "s.json", sc)
    back = io.load_scenario(tmp_path / "s.json")
    assert back == sc
    for f in ("g_cb", "g_cd", "g_d", "g_db", "cu_pos"):
        assert getattr(back, f).tobytes() == getattr(sc, f).tobytes()
    assert back.config == sc.config


def test_solved_round_trip(tmp_path):
    inst = make_instance(K=3, L=2, seed=1)
    res = solve_exact(inst)
    io.save_solved(tmp_path / "x.json", LabeledProblem(inst, res), {"note": 1})
    lp, meta = io.load_solved(tmp_path / "x.json")
    assert meta == {"note": 1}
    assert lp.inst.a.tobytes() == inst.a.tobytes()
    assert lp.inst.instance_id == inst.instance_id
    assert lp.exact.objective == res.objective
    assert np.array_equal(lp.exact.rho_star, res.rho_star)
    assert lp.exact.fathomed == res.fathomed
    assert lp.inst.scenario == inst.scenario


def test_missing_gain_field_is_named():
    sc = generate_scenario(ScenarioConfig(K=2, L=1, rng_seed=0))
    d = io.scenario_to_dict(sc)
    del d["g_cd"]
    with pytest.raises(io.SchemaError, match="missing field 'g_cd'"):
        io.scenario_from_dict(d)


def test_version_and_schema_mismatch(tmp_path):
    d = io.scenario_to_dict(generate_scenario(ScenarioConfig(K=2, L=1, rng_seed=0)))
    with pytest.raises(io.SchemaError, match="version"):
        io.scenario_from_dict({**d, "version": 2})
    with pytest.raises(io.SchemaError, match="schema"):
        io.instance_from_dict(d)
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(io.SchemaError):
        io.load_scenario(tmp_path / "bad.json")


def _samples(n, rng):
    return [LabeledSample(rng.normal(size=8) * 10 ** rng.uniform(-5, 5), int(i % 2), float(rng.uniform(0.1, 40)),
                          f"inst{i // 3}", i) for i in range(n)]


def test_dataset_round_trip(tmp_path):
    s = _samples(25, np.random.default_rng(0))
    io.save_dataset(tmp_path / "d.csv", s, {"seed": 3})
    back, meta = io.load_dataset(tmp_path / "d.csv")
    assert meta == {"seed": 3}
    for a, b in zip(s, back):
        assert a.features.tobytes() == b.features.tobytes()
        assert (a.label, a.weight, a.instance_id, a.node_id) == (b.label, b.weight, b.instance_id, b.node_id)
    io.save_dataset(tmp_path / "d2.csv", back, {"seed": 3})
    assert (tmp_path / "d.csv").read_bytes() == (tmp_path / "d2.csv").read_bytes()


def test_empty_dataset(tmp_path):
    io.save_dataset(tmp_path / "e.csv", [])
    back, meta = io.load_dataset(tmp_path / "e.csv")
    assert back == [] and meta == {}


def test_dataset_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("hello\n")
    with pytest.raises(io.SchemaError):
        io.load_dataset(p)
    io.save_dataset(p, _samples(2, np.random.default_rng(1)))
    text = p.read_text().replace("v1", "v9", 1)
    p.write_text(text)
    with pytest.raises(io.SchemaError, match="version"):
        io.load_dataset(p)


@pytest.mark.parametrize("kind", ["linear", "rbf", "fnn"])
def test_model_save_load_save_is_byte_identical(tmp_path, kind):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 8))
    y = (X[:, 0] > 0).astype(int)
    model = fnn_init(3) if kind == "fnn" else svm_train(X, y, kernel=kind, seed=2)
    io.save_model(tmp_path / "a.model", model, {"k": kind})
    back, meta = io.load_model(tmp_path / "a.model")
    assert meta == {"k": kind}
    io.save_model(tmp_path / "b.model", back, meta)
    assert (tmp_path / "a.model").read_bytes() == (tmp_path / "b.model").read_bytes()
    if kind != "fnn":
        assert np.array_equal(back.decision_function(X), model.decision_function(X))


def test_model_errors(tmp_path):
    p = tmp_path / "m"
    p.write_text("not a model\n")
    with pytest.raises(io.SchemaError):
        io.load_model(p)
    io.save_model(p, fnn_init(0))
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(io.SchemaError, match="truncated"):
        io.load_model(p)
    with pytest.raises(TypeError):
        io.save_model(p, object())


def test_report_header_and_format():
    rep = EvalReport(0.1, 2.0, 1.0, 0.5)
    text = io.render_report(rep, "csv", {"seed": 1})
    first = text.splitlines()[0]
    assert first.startswith("# d2dbnb-report v1 ")
    assert json.loads(first.split(" ", 3)[3]) == {"seed": 1}
    with pytest.raises(ValueError):
        io.render_report(rep, "xml")
