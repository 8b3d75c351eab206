"""Config validation, artifact generation, reproducibility, subcommands."""

import json
import subprocess
import sys

import pytest

from gruschin.cli import ConfigError, ExperimentConfig, main, run_experiment

MINIMAL = {
    "model": {"builtin": "power_law", "m": 1, "d": 1, "l": 1.0},
    "run": {
        "horizons": [1.0],
        "points": [[1.0, 1.0]],
        "directions": [[[1.0], [0.0]]],
        "n_paths": 2000,
        "n_steps": 50,
        "master_seed": 99,
        "functions": ["y_squared"],
    },
    "suite": {"checks": ["bismut_vs_fd"]},
    "output": {"directory": "out", "formats": ["csv", "json", "markdown"]},
}


def write_config(tmp_path, body, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return path


def test_missing_master_seed_names_the_field(tmp_path):
    body = json.loads(json.dumps(MINIMAL))
    del body["run"]["master_seed"]
    with pytest.raises(ConfigError, match="master_seed"):
        ExperimentConfig.from_file(write_config(tmp_path, body))


@pytest.mark.parametrize("mutate,needle", [
    (lambda b: b["run"].update(n_paths=50), "n_paths"),
    (lambda b: b["run"].update(n_steps=1), "n_steps"),
    (lambda b: b["run"].update(horizons=[]), "horizons"),
    (lambda b: b["run"].update(points=[]), "points"),
    (lambda b: b["run"].update(directions=[]), "directions"),
    (lambda b: b["suite"].update(checks=["nope"]), "nope"),
    (lambda b: b["output"].update(formats=["xml"]), "xml"),
    (lambda b: b["run"].update(functions=["mystery"]), "mystery"),
    (lambda b: b["model"].update(builtin="mystery"), "model.builtin"),
])
def test_validation_errors_name_offending_fields(tmp_path, mutate, needle):
    body = json.loads(json.dumps(MINIMAL))
    mutate(body)
    with pytest.raises(ConfigError, match=needle):
        ExperimentConfig.from_file(write_config(tmp_path, body))


def test_config_round_trip_is_identity():
    cfg = ExperimentConfig.from_dict(MINIMAL)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert cfg == again


def test_minimal_run_produces_expected_artifacts(tmp_path):
    cfg = ExperimentConfig.from_dict(MINIMAL)
    code, lines = run_experiment(cfg, out_dir=str(tmp_path / "out"))
    assert code == 0
    assert any("BismutVsFD" in ln for ln in lines)
    csv_text = (tmp_path / "out" / "results.csv").read_text()
    rows = csv_text.strip().splitlines()
    assert rows[0].startswith("experiment_id,quantity,mean")
    body = rows[1:]
    assert len(body) == 2  # one combo: a weight row and a finite-difference row
    assert any(",grad_bismut," in r for r in body)
    assert any(",grad_fd," in r for r in body)
    payload = json.loads((tmp_path / "out" / "results.json").read_text())
    assert len(payload["rows"]) == 2
    assert payload["checks"][0]["verdict"] == "BoundedConstantFound"
    assert (tmp_path / "out" / "report.md").exists()


def test_rerun_and_worker_count_are_byte_identical(tmp_path):
    cfg = ExperimentConfig.from_dict(MINIMAL)
    run_experiment(cfg, workers=1, out_dir=str(tmp_path / "a"))
    run_experiment(cfg, workers=1, out_dir=str(tmp_path / "b"))
    run_experiment(cfg, workers=4, out_dir=str(tmp_path / "c"))
    ref = (tmp_path / "a" / "results.csv").read_bytes()
    assert (tmp_path / "b" / "results.csv").read_bytes() == ref
    assert (tmp_path / "c" / "results.csv").read_bytes() == ref
    refj = (tmp_path / "a" / "results.json").read_bytes()
    assert (tmp_path / "c" / "results.json").read_bytes() == refj


def test_harnack_only_suite_runs_internal_fit(tmp_path):
    body = json.loads(json.dumps(MINIMAL))
    body["suite"] = {"checks": ["harnack"],
                     "overrides": {"harnack": {"n_paths": 2000, "n_steps": 30}}}
    cfg = ExperimentConfig.from_dict(body)
    code, lines = run_experiment(cfg, out_dir=str(tmp_path / "out"))
    assert code == 0
    assert any("A8" in ln for ln in lines)


def test_harnack_gaussian_model_uses_exact_constant(tmp_path):
    body = json.loads(json.dumps(MINIMAL))
    body["model"] = {"builtin": "constant_identity", "m": 1, "d": 1}
    body["suite"] = {"checks": ["harnack"],
                     "overrides": {"harnack": {"n_paths": 2000, "n_steps": 30}}}
    cfg = ExperimentConfig.from_dict(body)
    code, lines = run_experiment(cfg, out_dir=str(tmp_path / "out"))
    assert code == 0
    assert any("BoundedConstantFound" in ln for ln in lines)


def test_a5_on_constant_identity_is_a_config_error(tmp_path):
    body = json.loads(json.dumps(MINIMAL))
    body["model"] = {"builtin": "constant_identity", "m": 1, "d": 1}
    body["suite"] = {"checks": ["a5"]}
    cfg_path = write_config(tmp_path, body)
    assert main(["run", str(cfg_path), "--out", str(tmp_path / "out")]) == 2


def test_extended_demo_suite_runs(tmp_path):
    body = json.loads(json.dumps(MINIMAL))
    body["model"] = {"builtin": "extended_demo", "m": 1, "d": 1}
    body["run"]["n_paths"] = 1000
    body["run"]["n_steps"] = 30
    body["suite"] = {"checks": ["bismut_vs_fd", "reduction"]}
    cfg = ExperimentConfig.from_dict(body)
    code, lines = run_experiment(cfg, out_dir=str(tmp_path / "out"))
    assert code == 0
    assert any("skipped: model already extended" in ln for ln in lines)


def test_cli_run_exit_codes(tmp_path):
    cfg_path = write_config(tmp_path, MINIMAL)
    code = main(["run", str(cfg_path), "--out", str(tmp_path / "out")])
    assert code == 0
    bad = json.loads(json.dumps(MINIMAL))
    del bad["run"]["master_seed"]
    bad_path = write_config(tmp_path, bad, "bad.json")
    assert main(["run", str(bad_path)]) == 2


def test_list_builtins_catalogue(capsys):
    assert main(["list-builtins"]) == 0
    out = capsys.readouterr().out
    for needle in ("power_law", "constant_identity", "extended_demo",
                   "y^2 + x^2 T + T^2/2", "constant_unit", "adapted_cos",
                   "sigma_row"):
        assert needle in out


def test_dump_paths(tmp_path):
    cfg_path = write_config(tmp_path, MINIMAL)
    code = main(["dump-paths", str(cfg_path), "--out", str(tmp_path / "dump"),
                 "--max-paths", "100"])
    assert code == 0
    lines = (tmp_path / "dump" / "paths.csv").read_text().strip().splitlines()
    assert lines[0] == ("path_index,B_T,X_T,Y_T,min_eig_QT,valid,"
                        "term_drift,term_trace,term_inner,M_T")
    assert len(lines) == 101


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "gruschin", "list-builtins"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "power_law" in proc.stdout
