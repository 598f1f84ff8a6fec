import csv
import json

import numpy as np
import pytest

from vinegrow.cli import main
from vinegrow.errors import DataError
from vinegrow.io import load_model, load_sample, model_from_dict, model_to_dict, read_table, save_model
from vinegrow.selection import SelectionConfig, fit, vine_loglik_aic
from vinegrow.simulation import sample_from_vine, sample_vine_spec
from vinegrow.structure import VineStructure


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "sample.csv"
    assert main(["simulate", "--d", "4", "--n", "400", "--seed", "3", "--out", str(path)]) == 0
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_is_byte_deterministic(tmp_path, data_file):
    other = tmp_path / "again.csv"
    main(["simulate", "--d", "4", "--n", "400", "--seed", "3", "--out", str(other)])
    assert other.read_bytes() == data_file.read_bytes()
    values, header = read_table(other)
    assert header == ["V1", "V2", "V3", "V4"] and values.shape == (400, 4)


def test_count_command(capsys):
    assert run(capsys, "count", "--d", 10, "--kind", "rvine")[1].strip() == "487049291366400"
    assert run(capsys, "count", "--d", 5, "--kind", "cvine")[1].strip() == "60"
    assert run(capsys, "count", "--d", 1)[0] == 2


def test_fit_writes_a_valid_model_matching_in_process_refit(tmp_path, capsys, data_file):
    model = tmp_path / "m.json"
    code, out, _ = run(capsys, "fit", data_file, "--method", "dissmann", "--out", model)
    assert code == 0 and "AIC" in out
    doc = json.loads(model.read_text())
    vine = load_model(model)
    assert vine.structure.is_valid()
    ref = fit(load_sample(data_file), SelectionConfig(method="dissmann"))
    assert doc["aic"] == ref.aic
    assert doc["structure"] == (ref.structure.to_matrix() + 1).tolist()
    assert doc["metadata"]["method"] == "dissmann"


def test_alg1_alpha_zero_matches_dissmann_arrays(tmp_path, capsys, data_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "fit", data_file, "--method", "alg1", "--alpha", 0, "--out", a)
    run(capsys, "fit", data_file, "--method", "dissmann", "--out", b)
    assert json.loads(a.read_text())["structure"] == json.loads(b.read_text())["structure"]


def test_model_roundtrip_preserves_document(tmp_path, data_file):
    vine = fit(load_sample(data_file), SelectionConfig(method="alg2"))
    path = tmp_path / "model.json"
    doc = save_model(path, vine, {"note": "x"})
    again = load_model(path)
    assert model_to_dict(again) == doc
    assert vine_loglik_aic(again, load_sample(data_file))[0] == pytest.approx(doc["loglik"], abs=1e-9)
    assert sorted(vine.info["root_order"]) == [0, 1, 2, 3]


def test_quarter_rotations_survive_the_matrix_layout(tmp_path):
    rng = np.random.default_rng(12)
    spec = sample_vine_spec(5, rng, families=("clayton", "gumbel", "joe"))
    data = sample_from_vine(spec, 300, rng)
    from vinegrow.selection import FittedVine

    truth = FittedVine(spec.structure, spec.copulas, 0.0, "truth")
    truth.loglik = vine_loglik_aic(truth, data)[0]
    back = model_from_dict(model_to_dict(truth))
    assert back.copulas == truth.copulas
    assert any(c.rotation in (90, 270) for c in spec.copulas.values())


def test_model_file_consistency_checks(tmp_path, data_file):
    vine = fit(load_sample(data_file), SelectionConfig(method="dissmann", diagnostics=False))
    doc = model_to_dict(vine)
    bad = dict(doc, aic=doc["aic"] + 1)
    with pytest.raises(DataError, match="aic"):
        model_from_dict(bad)
    with pytest.raises(DataError, match="npars"):
        model_from_dict(dict(doc, npars=doc["npars"] + 1))
    with pytest.raises(DataError, match="lacks"):
        model_from_dict({k: v for k, v in doc.items() if k != "par2"})


def test_ccc_test_command_pair_and_model(tmp_path, capsys, data_file):
    code, out, _ = run(capsys, "ccc-test", data_file, "--u", 1, "--v", "V2", "--cond", "3,4")
    res = json.loads(out)
    assert code == 0 and {"statistic", "df", "p_value", "reject"} <= set(res)
    model = tmp_path / "m.json"
    run(capsys, "fit", data_file, "--method", "alg2", "--out", model, "--quiet")
    code, out, _ = run(capsys, "ccc-test", data_file, "--model", model)
    res = json.loads(out)
    assert code == 0 and len(res["edges"]) == 3
    assert res["aic"] == pytest.approx(json.loads(model.read_text())["aic"], abs=1e-8)


def test_usage_and_data_errors(tmp_path, capsys, data_file, monkeypatch):
    assert run(capsys, "fit", data_file, "--alpha", 2)[0] == 2
    assert run(capsys, "ccc-test", data_file, "--u", 1)[0] == 2
    assert run(capsys, "ccc-test", data_file, "--u", 9, "--v", 1, "--cond", 2)[0] == 2
    assert run(capsys, "fit", tmp_path / "missing.csv")[0] == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n0.1,0.2\n0.3,oops\n")
    code, _, err = run(capsys, "fit", bad)
    assert code == 3 and "line 3" in err
    raw = tmp_path / "raw.csv"
    raw.write_text("a,b\n" + "\n".join(f"{i},{i * i % 7}" for i in range(30)) + "\n")
    assert run(capsys, "fit", raw)[0] == 3
    assert run(capsys, "fit", raw, "--pit", "--quiet")[0] == 0
    monkeypatch.setenv("VINEGROW_THREADS", "lots")
    assert run(capsys, "fit", data_file)[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["fit"])
    assert exc.value.code == 2


def test_threads_env_is_honoured(capsys, data_file, monkeypatch):
    monkeypatch.setenv("VINEGROW_THREADS", "2")
    code, out_env, _ = run(capsys, "fit", data_file, "--method", "alg2")
    monkeypatch.delenv("VINEGROW_THREADS")
    _, out_one, _ = run(capsys, "fit", data_file, "--method", "alg2", "--threads", 1)
    assert code == 0 and out_env == out_one


def test_benchmark_and_sweep_outputs(tmp_path, capsys):
    report, table = tmp_path / "r.json", tmp_path / "t.csv"
    code, out, _ = run(capsys, "benchmark", "--d", 3, "--n", 200, "--reps", 2,
                       "--methods", "alg1", "--out", report, "--table", table)
    assert code == 0 and "better-or-equal" in out
    doc = json.loads(report.read_text())
    assert doc["completed"] == 2 and "alg1" in doc["methods"]
    rows = list(csv.DictReader(table.open()))
    assert rows[0]["alg1"] == "100.0 (100.0)"
    sweep = tmp_path / "s.csv"
    code, _, _ = run(capsys, "alpha-sweep", "--d", 3, "--n", 200, "--reps", 1,
                     "--alphas", "0,1", "--out", sweep)
    lines = sweep.read_text().splitlines()
    assert code == 0 and lines[0] == "alpha,mean_aic" and len(lines) == 3


def test_structure_matrix_is_one_based_in_json(tmp_path, data_file):
    vine = fit(load_sample(data_file), SelectionConfig(method="dissmann", diagnostics=False))
    doc = model_to_dict(vine)
    m = np.array(doc["structure"])
    assert sorted(np.diag(m)) == [1, 2, 3, 4]
    assert VineStructure.from_matrix(m - 1) == vine.structure
