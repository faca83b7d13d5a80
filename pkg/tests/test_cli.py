import json
import re

import pytest

from huntbranch import cli
from huntbranch.cli import SpecError, dispatch, load_spec, main


def read_manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_minimal_spec():
    spec = load_spec({"fixture": "yule2", "command": "spectrum"})
    assert spec.command == "spectrum" and spec.fixture == "yule2" and spec.seed is None


def test_spec_from_string_round_trip():
    doc = {"command": "verify", "fixture": "asym3", "seed": 3, "replicates": 10,
           "params": {"mode": "martingale", "horizon": 1.0}}
    spec = load_spec(json.dumps(doc))
    assert load_spec(spec.to_json()) == spec
    assert load_spec(json.dumps(spec.to_json())) == spec


@pytest.mark.parametrize("doc, field", [
    ({"fixture": "yule2", "command": "simulate"}, "seed"),
    ({"fixture": "yule2", "command": "spectrum", "colour": 1}, "colour"),
    ({"fixture": "nope", "command": "spectrum"}, "fixture"),
    ({"command": "spectrum"}, "fixture"),
    ({"fixture": "yule2", "command": "dance"}, "command"),
    ({"fixture": "yule2", "command": "spectrum", "params": {"horizon": 1}}, "params.horizon"),
    ({"fixture": "yule2", "command": "verify", "seed": 1, "params": {"mode": "x"}}, "params.mode"),
    ({"fixture": "yule2", "command": "simulate", "seed": -1}, "seed"),
    ({"fixture": "yule2", "command": "simulate", "seed": 1, "replicates": 0}, "replicates"),
])
def test_spec_errors_name_the_field(doc, field):
    with pytest.raises(SpecError, match=re.escape(field)):
        load_spec(doc)


def test_malformed_json():
    with pytest.raises(SpecError):
        load_spec("{not json")


def test_inline_model_negative_rate():
    model = {"motion": {"states": 2, "rates": [[0, -1], [1, 0]]},
             "law": {"beta": [1, 1], "offspring": [0, 0, 1]}}
    with pytest.raises(SpecError, match="model.motion"):
        load_spec({"command": "spectrum", "model": model})


def test_inline_model_runs(tmp_path):
    model = {"motion": {"states": 2, "rates": [[0, 1], [1, 0]]},
             "law": {"beta": [1, 1], "offspring": [0, 0, 1]}}
    assert dispatch(load_spec({"command": "spectrum", "model": model}), tmp_path) == 0
    doc = json.loads((tmp_path / "spectrum.json").read_text())
    assert doc["triple"]["lambda1"] == pytest.approx(1.0, abs=1e-12)


def test_spectrum_yule(tmp_path):
    assert dispatch(load_spec({"fixture": "yule2", "command": "spectrum"}), tmp_path) == 0
    doc = json.loads((tmp_path / "spectrum.json").read_text())
    assert doc["triple"]["lambda1"] == pytest.approx(1.0, abs=1e-12)
    assert doc["iu_fit"]["nu"] == pytest.approx(2.0, rel=0.05)
    assert doc["assumptions"]["supercritical"]


def test_manifest_references_existing_files_with_run_id(tmp_path):
    spec = load_spec({"fixture": "asym3", "command": "simulate", "seed": 5, "replicates": 3,
                      "params": {"horizon": 1.0, "checkpoints": [0.5, 1.0]}})
    assert dispatch(spec, tmp_path) == 0
    man = read_manifest(tmp_path)
    assert man["exit_status"] == 0 and "PCG64" in man["generator"]
    assert man["fixture_hash"] and man["outputs"]
    for name in man["outputs"]:
        text = (tmp_path / name).read_text()
        if name.endswith(".csv"):
            assert text.splitlines()[0] == f"# run_id: {man['run_id']}"
        else:
            assert json.loads(text)["run_id"] == man["run_id"]


def test_csv_byte_identical(tmp_path):
    doc = {"fixture": "asym3", "command": "simulate", "seed": 7, "replicates": 5,
           "params": {"horizon": 2.0, "checkpoints": [1.0, 2.0]}}
    dispatch(load_spec(doc), tmp_path / "a")
    dispatch(load_spec(doc), tmp_path / "b")
    a = (tmp_path / "a" / "snapshots.csv").read_bytes()
    assert a == (tmp_path / "b" / "snapshots.csv").read_bytes()
    assert a.count(b"\n") > 5


def test_csv_identical_across_workers(tmp_path):
    base = {"fixture": "yule2", "command": "verify", "seed": 8, "replicates": 30,
            "params": {"mode": "martingale", "horizon": 2.0, "checkpoints": [1.0, 2.0]}}
    outs = []
    for w in (1, 2):
        doc = json.loads(json.dumps(base))
        doc["params"]["workers"] = w
        dispatch(load_spec(doc), tmp_path / str(w))
        outs.append((tmp_path / str(w) / "summary.csv").read_bytes())
    assert outs[0] == outs[1]


def test_verify_slln_passes(tmp_path):
    spec = load_spec({"fixture": "yule2", "command": "verify", "seed": 1, "replicates": 300,
                      "params": {"mode": "slln", "horizon": 6.0, "checkpoints": [2.0, 4.0, 6.0],
                                 "tolerance": 0.05, "B": [0]}})
    assert dispatch(spec, tmp_path) == 0
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert verdict["passed"] and verdict["target"] == 0.5
    assert "ratio_limit" in verdict
    assert read_manifest(tmp_path)["acceptance"] == {"slln": "pass"}


def test_verify_fail_exit_one(tmp_path):
    # an impossible tolerance turns the verdict red without being a config error
    spec = load_spec({"fixture": "yule2", "command": "verify", "seed": 1, "replicates": 150,
                      "params": {"mode": "slln", "horizon": 2.0, "tolerance": 1e-9}})
    assert dispatch(spec, tmp_path) == 1


def test_dichotomy_small_kmax_refused(tmp_path):
    spec = load_spec({"fixture": "heavy", "command": "verify", "seed": 1, "replicates": 20,
                      "params": {"mode": "dichotomy", "kmax": 10, "horizon": 6.0,
                                 "checkpoints": [2.0, 4.0, 6.0]}})
    assert dispatch(spec, tmp_path) == 3
    assert read_manifest(tmp_path)["acceptance"] == {"dichotomy": "refused"}


def test_overflow_exit_three(tmp_path):
    spec = load_spec({"fixture": "yule2", "command": "simulate", "seed": 1, "replicates": 3,
                      "params": {"horizon": 12.0, "cap": 20}})
    assert dispatch(spec, tmp_path) == 3


def test_config_error_inside_handler(tmp_path):
    spec = load_spec({"fixture": "asym3", "command": "verify", "seed": 1, "replicates": 150,
                      "params": {"mode": "slln", "f": [1, 0]}})
    assert dispatch(spec, tmp_path) == 2


def test_spine_command(tmp_path):
    spec = load_spec({"fixture": "asym3", "command": "spine", "seed": 2, "replicates": 20,
                      "params": {"horizon": 1.0, "checkpoints": [0.5, 1.0]}})
    assert dispatch(spec, tmp_path) == 0
    checks = json.loads((tmp_path / "spine_checks.json").read_text())
    assert checks["unit_mass_max_error"] <= 1e-12
    recs = json.loads((tmp_path / "spine_records.json").read_text())["records"]
    assert len(recs) == 20


def test_fixtures_listing(tmp_path):
    assert dispatch(load_spec({"command": "fixtures"}), tmp_path) == 0
    doc = json.loads((tmp_path / "fixtures.json").read_text())
    assert set(doc["fixtures"]) == {"yule2", "asym3", "heavy", "griddiff"}


def test_main_entry(tmp_path, capsys, monkeypatch):
    spec_file = tmp_path / "run.json"
    spec_file.write_text(json.dumps({"fixture": "yule2", "command": "simulate",
                                     "params": {"horizon": 1.0}}))
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env-out"))
    assert main(["simulate", "--spec", str(spec_file)]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["simulate", "--spec", str(spec_file), "--seed", "4"]) == 0
    assert (tmp_path / "env-out" / "snapshots.csv").exists()
    assert main(["spectrum", "--spec", str(spec_file)]) == 2
    assert main(["simulate", "--spec", str(tmp_path / "missing.json")]) == 2
