import json

import numpy as np
import pytest

from pfmcmc.cli import main
from pfmcmc.errors import ConfigError
from pfmcmc.io import load_dataset, read_json, read_table
from pfmcmc.studies import run_study


def _simulate(tmp_path, name="d.csv", *extra):
    path = tmp_path / name
    assert main(["simulate", "--model", "ar1", "--T", "50", "--seed", "3", "--out", str(path), *extra]) == 0
    return path


def test_simulate_is_deterministic(tmp_path, capsys):
    a = _simulate(tmp_path, "a.csv").read_bytes()
    b = _simulate(tmp_path, "b.csv").read_bytes()
    assert a == b
    assert main(["simulate", "--model", "ar1", "--T", "50", "--seed", "3"]) == 0
    assert capsys.readouterr().out.encode() == a
    c = _simulate(tmp_path, "c.csv", "--theta", "sigma2=0.01").read_bytes()
    assert c != a


def test_simulate_model_options(tmp_path):
    path = tmp_path / "b.csv"
    assert main(["simulate", "--model", "binomial", "--model-option", "trials=20", "--T", "30", "--out", str(path)]) == 0
    y = load_dataset(path).y
    assert np.all((y >= 0) & (y <= 20) & (y == np.round(y)))


def test_filter_fully_adapted_beats_bootstrap(tmp_path, capsys):
    data = _simulate(tmp_path, "d.csv", "--theta", "sigma2=0.01")
    out = tmp_path / "f.json"
    rc = main(["filter", "--data", str(data), "--theta", "sigma2=0.01", "--variant", "sir", "fapf", "kalman",
               "--M", "200", "50", "0", "--reps", "40", "--out", str(out)])
    assert rc == 0
    assert capsys.readouterr().out.startswith("variant,M,median_loglik,sd_loglik")
    report = read_json(out)
    sir, fapf, exact = report["cells"]
    assert fapf["sd_loglik"] < sir["sd_loglik"]
    assert exact["sd_loglik"] == 0.0
    assert exact["median_loglik"] == pytest.approx(report["exact_loglik"], abs=1e-9)


def test_sample_diag_evidence(tmp_path, capsys):
    data = _simulate(tmp_path)
    cfg = {"model": "ar1", "data": str(data), "fixed": {"phi": 0.8, "tau2": 1.0, "sigma2": 1.0},
           "variant": "kalman", "sampler": "aimh", "n_iter": 400, "burn_in": 100, "warmup": 300,
           "checkpoints": [200, 300], "stage2_at": None, "seed": 4}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    outdir = tmp_path / "run"
    assert main(["sample", "--config", str(tmp_path / "run.json"), "--out", str(outdir)]) == 0
    chain = outdir / "chain.csv"
    side = read_json(outdir / "chain.json")
    assert side["run_config"]["output"] == str(outdir)
    assert side["target"]["free"] == ["mu"]

    assert main(["diag", "--chain", str(chain), "--out", str(tmp_path / "diag.csv")]) == 0
    rows = read_table(tmp_path / "diag.csv")
    assert [r["parameter"] for r in rows] == ["mu"]
    assert rows[0]["IF"] >= 1.0

    assert main(["evidence", "--chain", str(chain), "--seed", "2"]) == 0
    ev = read_json(outdir / "evidence.json")
    assert abs(ev["log_BS"] - ev["log_IS"]) < 0.1
    assert ev["burn_in"] == 100
    capsys.readouterr()


def test_flags_override_config(tmp_path):
    data = _simulate(tmp_path)
    (tmp_path / "run.json").write_text(json.dumps({"data": str(data), "variant": "kalman", "n_iter": 10,
                                                   "sampler": "arwm", "fixed": {"phi": 0.8}}))
    outdir = tmp_path / "o"
    rc = main(["sample", "--config", str(tmp_path / "run.json"), "--n-iter", "30", "--fixed", "tau2=1",
               "--out", str(outdir)])
    assert rc == 0
    run = read_json(outdir / "chain.json")["run_config"]
    assert run["n_iter"] == 30 and run["fixed"] == {"phi": 0.8, "tau2": 1.0}


@pytest.mark.parametrize("argv", [[], ["nope"], ["simulate", "--T", "x"], ["filter"], ["study", "unknown-study"]])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_config_errors_exit_2(tmp_path, capsys):
    data = _simulate(tmp_path)
    assert main(["sample", "--data", str(data), "--fixed", "rho=1"]) == 2
    assert "configuration error" in capsys.readouterr().err
    (tmp_path / "bad.json").write_text(json.dumps({"modle": "ar1"}))
    assert main(["sample", "--config", str(tmp_path / "bad.json")]) == 2
    assert "[modle]" in capsys.readouterr().err
    assert main(["sample", "--model", "ar1"]) == 2
    (tmp_path / "broken.csv").write_text("t,y\n1,0.5\n3,0.1\n")
    assert main(["filter", "--data", str(tmp_path / "broken.csv")]) == 2
    assert "line 3" in capsys.readouterr().err
    assert main(["filter", "--model", "sv", "--data", str(data), "--variant", "kalman"]) == 2
    assert main(["simulate", "--theta", "phi=2"]) == 2


def test_runtime_errors_exit_3(tmp_path, capsys):
    assert main(["simulate", "--T", "5", "--out", str(tmp_path)]) == 3
    assert "pfmcmc:" in capsys.readouterr().err


def test_workers_from_environment(tmp_path, monkeypatch, capsys):
    data = _simulate(tmp_path)
    args = ["filter", "--data", str(data), "--variant", "sir", "--M", "50", "--reps", "8"]
    assert main(args) == 0
    serial = capsys.readouterr().out
    monkeypatch.setenv("PFMCMC_WORKERS", "3")
    assert main(args) == 0
    assert capsys.readouterr().out == serial
    monkeypatch.setenv("PFMCMC_WORKERS", "zero")
    assert main(args) == 2


def test_study_smoke(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["study", "ar1-high-snr", "--scale", "smoke", "--out", str(out)]) == 0
    rows = read_table(out / "sd_table.csv")
    assert set(rows[0]) >= {"variant", "M", "median_loglik", "iqr_loglik", "median_sd", "iqr_sd", "datasets"}
    assert {r["variant"] for r in rows} >= {"sir", "fapf"}
    assert (out / "mcmc_table.csv").exists() and (out / "study.json").exists()


def test_run_study_rejects_unknown(tmp_path):
    with pytest.raises(ConfigError):
        run_study("nope", "smoke", outdir=tmp_path)
    with pytest.raises(ConfigError):
        run_study("ar1-high-snr", "huge", outdir=tmp_path)
