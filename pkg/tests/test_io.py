import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfmcmc.config import RunConfig, parse_prior
from pfmcmc.errors import ConfigError, IngestError
from pfmcmc.io import fmt, load_chain, load_dataset, read_json, read_table, write_chain, write_dataset, write_json, write_table
from pfmcmc.likelihood import FilterConfig, Target
from pfmcmc.models import DEFAULT_THETA, Dataset, make_model, simulate_data
from pfmcmc.params import InverseGamma, Normal
from pfmcmc.rng import RandomStream
from pfmcmc.samplers import SamplerConfig, run_chain


def test_three_row_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("t,y\n1,0.5\n2,-1\n3,2e-3\n")
    d = load_dataset(p)
    assert d.T == 3 and d.y.tolist() == [0.5, -1.0, 0.002]


@pytest.mark.parametrize(
    "text, line",
    [
        ("1,0.5\n2,1\n", 1),
        ("time,y\n1,0.5\n", 1),
        ("t,y\n1,0.5\n3,1\n", 3),
        ("t,y\n1,0.5,7\n", 2),
        ("t,y\n1,abc\n", 2),
        ("t,y\n1,nan\n", 2),
        ("t,y\nx,1\n", 2),
        ("t,y\n", 2),
    ],
)
def test_malformed_csv_names_line(tmp_path, text, line):
    p = tmp_path / "d.csv"
    p.write_text(text)
    with pytest.raises(IngestError) as info:
        load_dataset(p)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_missing_file_is_ingest_error(tmp_path):
    with pytest.raises(IngestError):
        load_dataset(tmp_path / "absent.csv")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_dataset_roundtrip_is_exact(tmp_path_factory, y):
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(Dataset(y), p)
    assert np.array_equal(load_dataset(p).y, y)


def test_simulated_dataset_roundtrip(tmp_path):
    model = make_model("sv-lev")
    d = simulate_data(model, DEFAULT_THETA["sv-lev"], 200, RandomStream(7))
    write_dataset(d, tmp_path / "d.csv")
    assert np.array_equal(load_dataset(tmp_path / "d.csv").y, d.y)


def test_fmt_cells():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(-math.inf) == "-inf" and fmt(math.nan) == "nan"
    assert fmt(True) == "1" and fmt(np.int64(3)) == "3"


def test_table_and_json_roundtrip(tmp_path):
    rows = [{"variant": "sir", "M": 100, "sd": 0.25}, {"variant": "fapf", "M": 50, "sd": math.inf}]
    write_table(rows, tmp_path / "t.csv")
    back = read_table(tmp_path / "t.csv")
    assert back[0] == rows[0] and back[1]["sd"] == math.inf
    write_json({"a": np.float64(1.5), "b": [np.int32(2)], "c": -math.inf}, tmp_path / "x.json")
    assert read_json(tmp_path / "x.json") == {"a": 1.5, "b": [2], "c": "-inf"}


def test_chain_roundtrip(tmp_path, ar1, ar1_data):
    target = Target(ar1, ar1_data, FilterConfig("fapf", 20))
    rec = run_chain(target, SamplerConfig("aimh", n_iter=150, warmup=120), seed=1)
    write_chain(rec, tmp_path / "chain.csv", extra={"note": "x"})
    back = load_chain(tmp_path / "chain.csv")
    assert np.array_equal(back.z, rec.z) and np.array_equal(back.natural, rec.natural)
    assert np.array_equal(back.log_target, rec.log_target) and np.array_equal(back.accepted, rec.accepted)
    assert np.array_equal(back.pf_seed, rec.pf_seed)
    assert back.proposal.to_dict() == rec.proposal.to_dict()
    assert read_json(tmp_path / "chain.json")["note"] == "x"
    write_chain(rec, tmp_path / "c2.csv", timings=False)
    assert "timings" not in read_json(tmp_path / "c2.json")


def test_chain_header_mismatch(tmp_path, ar1, ar1_data):
    target = Target(ar1, ar1_data, FilterConfig("kalman"))
    rec = run_chain(target, SamplerConfig("arwm", n_iter=20), seed=1)
    write_chain(rec, tmp_path / "chain.csv")
    text = (tmp_path / "chain.csv").read_text().replace("log_target", "lt", 1)
    (tmp_path / "chain.csv").write_text(text)
    with pytest.raises(IngestError):
        load_chain(tmp_path / "chain.csv")


def test_run_config_roundtrip_and_errors(ar1_data):
    cfg = RunConfig(model="ar1", data="d.csv", fixed={"phi": 0.6}, variant="papf", particles=50)
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.filter_config().variant == "papf"
    assert cfg.build_target(ar1_data).free == ("mu", "tau2", "sigma2")
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict({"modle": "ar1"})
    assert info.value.key == "modle"
    with pytest.raises(ConfigError) as info:
        RunConfig(variant="exact")
    assert info.value.key == "variant"
    with pytest.raises(ConfigError) as info:
        RunConfig(sampler="arwm", mode="MP1")
    assert info.value.key == "mode"


def test_parse_prior():
    base = make_model("ar1").default_prior()
    p = parse_prior({"mu": ["normal", 1, 4], "tau2": ["invgamma", 2, 1]}, base)
    assert p.marginals["mu"] == Normal(1.0, 4.0) and p.marginals["tau2"] == InverseGamma(2.0, 1.0)
    for bad in ({"nu": ["normal", 0, 1]}, {"mu": ["cauchy", 0, 1]}, {"mu": ["normal", 0]}, {"mu": "normal"}):
        with pytest.raises(ConfigError):
            parse_prior(bad, base)
