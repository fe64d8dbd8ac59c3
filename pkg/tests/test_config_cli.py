import hashlib
import json
from importlib import resources

import pytest
import yaml

from levymv.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, EXIT_THRESHOLD, OUT_ENV, main
from levymv.config import ConfigError, parse_config, validate_config

SHIPPED = sorted(p.name for p in resources.files("levymv").joinpath("configs").iterdir() if p.name.endswith(".yaml"))


def write(tmp_path, data, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def tiny_poc(**over):
    data = {
        "kind": "poc", "seed": 4,
        "model": {"type": "stable", "alpha": 1.5},
        "coefficients": {"type": "stable_ou", "A": -1.0, "A_prime": 0.0},
        "initial": {"type": "point", "value": 1.0},
        "grid": {"horizon": 1.0, "steps": 5},
        "plan": {"law": "thm3", "index": 1.5, "n_grid": [4, 8, 16, 32], "replications": 50, "reference_factor": 2},
    }
    data.update(over)
    return data


@pytest.mark.parametrize("name", SHIPPED)
@pytest.mark.parametrize("preset", [None, "quick", "full"])
def test_shipped_configs_validate(name, preset):
    cfg = parse_config(resources.files("levymv").joinpath("configs", name), preset=preset)
    assert cfg.seed >= 0 and cfg.kind


def test_all_problems_are_reported_at_once():
    bad = tiny_poc()
    del bad["seed"]
    bad["model"]["alpha"] = 2.5
    bad["plan"]["replications"] = 3
    bad["plan"]["colour"] = "red"
    bad["extra"] = 1
    with pytest.raises(ConfigError) as info:
        validate_config(bad)
    errs = info.value.errors
    assert any(e.startswith("seed") for e in errs)
    assert any("alpha out of (0,2)" in e for e in errs)
    assert any(e.startswith("plan.replications") for e in errs)
    assert "plan.colour: unknown key" in errs
    assert "extra: unknown key" in errs


def test_section_rules():
    data = tiny_poc(picard={"particles": 10})
    with pytest.raises(ConfigError, match="not used"):
        validate_config(data)
    data = tiny_poc()
    del data["plan"]
    with pytest.raises(ConfigError, match="plan: section required"):
        validate_config(data)
    data = tiny_poc(model={"type": "stable", "alpha": 1.5, "beta": 1.6})
    with pytest.raises(ConfigError, match="below alpha"):
        validate_config(data)


def test_presets_override_and_are_checked():
    data = tiny_poc(presets={"full": {"plan": {"replications": 80}}})
    assert validate_config(data, preset="full").sections["plan"]["replications"] == 80
    assert validate_config(data).sections["plan"]["replications"] == 50
    with pytest.raises(ConfigError, match="cannot be overridden"):
        validate_config(tiny_poc(presets={"quick": {"seed": 3}}), preset="quick")


def test_malformed_yaml(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("kind: [poc\n")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(p)


def test_invalid_config_exits_with_code_two(tmp_path, capsys):
    bad = tiny_poc()
    bad["model"]["alpha"] = 3
    bad["seed"] = -1
    assert main(["run", write(tmp_path, bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "alpha out of (0,2)" in err and "seed" in err
    assert not (tmp_path / "o").exists()
    assert main(["run", write(tmp_path, tiny_poc()), "--threads", "0"]) == EXIT_CONFIG


def test_poc_run_writes_hashed_manifest(tmp_path):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, tiny_poc()), "--out", str(out)]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_status"] == 0
    assert man["config"]["seed"] == 4 and man["config"]["plan"]["n_grid"] == [4, 8, 16, 32]
    names = {f["path"] for f in man["files"]}
    assert {"rate.csv", "rate.json", "trajectory_summary.csv"} <= names
    for f in man["files"]:
        assert hashlib.sha256((out / f["path"]).read_bytes()).hexdigest() == f["sha256"]
    assert man["build"]


def test_rate_csv_is_byte_identical_across_runs_and_threads(tmp_path):
    data = tiny_poc(coefficients={"type": "stable_ou", "A": -1.0, "A_prime": 0.5})
    cfg = write(tmp_path, data)
    codes = [main(["run", cfg, "--out", str(tmp_path / d), "--threads", t]) for d, t in (("a", "1"), ("b", "1"), ("c", "2"))]
    assert codes[0] == codes[1] == codes[2]
    first = (tmp_path / "a" / "rate.csv").read_bytes()
    assert first == (tmp_path / "b" / "rate.csv").read_bytes() == (tmp_path / "c" / "rate.csv").read_bytes()


def test_output_directory_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    cfg = write(tmp_path, tiny_poc(output=str(tmp_path / "cfg")))
    assert main(["run", cfg]) == EXIT_OK
    assert (tmp_path / "env" / "manifest.json").exists()
    assert main(["run", cfg, "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "manifest.json").exists()
    monkeypatch.delenv(OUT_ENV)
    assert main(["run", cfg]) == EXIT_OK
    assert (tmp_path / "cfg" / "manifest.json").exists()


def test_blow_up_exits_with_code_three(tmp_path):
    data = tiny_poc(coefficients={"type": "stable_ou", "A": 1e300, "A_prime": 0.0})
    out = tmp_path / "o"
    assert main(["run", write(tmp_path, data), "--out", str(out)]) == EXIT_BLOWUP
    assert json.loads((out / "manifest.json").read_text())["exit_status"] == EXIT_BLOWUP


def test_missed_threshold_exits_with_code_four(tmp_path):
    data = {"kind": "nonuniqueness", "seed": 0, "grid": {"horizon": 1.0, "steps": 200},
            "nonuniqueness": {"beta": 0.5, "endpoint_tolerance": 1e-12}}
    out = tmp_path / "o"
    assert main(["run", write(tmp_path, data), "--out", str(out)]) == EXIT_THRESHOLD
    res = json.loads((out / "residuals.json").read_text())
    assert res["endpoint_ok"] is False and res["passed"] is True


def test_other_kinds_run(tmp_path):
    picard = {"kind": "picard", "seed": 5,
              "model": {"type": "compound_poisson", "atoms": [[[2.0], 1.0], [[-2.0], 1.0]]},
              "coefficients": {"type": "sine_interaction", "a": 1.0, "kappa": 1.0},
              "initial": {"type": "gaussian", "mean": 1.0, "std": 1.0},
              "grid": {"horizon": 0.5, "steps": 10}, "picard": {"particles": 300}}
    assert main(["run", write(tmp_path, picard, "p.yaml"), "--out", str(tmp_path / "p")]) == EXIT_OK
    assert (tmp_path / "p" / "flow_means.csv").read_bytes().startswith(b"t,mean_0\r\n")

    trunc = {"kind": "truncation", "seed": 1, "model": {"type": "stable", "alpha": 1.5},
             "coefficients": {"type": "stable_ou", "A_prime": 0.5}, "initial": {"type": "point", "value": 1.0},
             "grid": {"horizon": 1.0, "steps": 5},
             "truncation": {"levels": [2, 4, 8, 16], "particles": 8, "replications": 50, "tolerance": 2.0},
             "moment_curve": {"levels": [4, 8, 16, 32], "samples": 20000, "steps": 5, "min_r_squared": 0.0}}
    assert main(["run", write(tmp_path, trunc, "t.yaml"), "--out", str(tmp_path / "t")]) == EXIT_OK
    for name in ("truncation.csv", "truncation.json", "moment_curve.csv", "moment_curve.svg"):
        assert (tmp_path / "t" / name).exists()

    val = {"kind": "noise-validate", "seed": 3, "model": {"type": "stable", "alpha": 1.5},
           "validate": {"n_paths": 2000, "cf_samples": 20000}}
    code = main(["run", write(tmp_path, val, "v.yaml"), "--out", str(tmp_path / "v")])
    res = json.loads((tmp_path / "v" / "noise_validation.json").read_text())
    assert code == (EXIT_OK if res["passed"] else EXIT_THRESHOLD)
