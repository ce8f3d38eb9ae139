import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from dtnprobe.cli import main
from dtnprobe.config import ConfigError, RunConfig, dump_config, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
QUICK = CONFIGS / "quick.toml"


def test_shipped_configs_validate():
    for p in CONFIGS.glob("*.toml"):
        load_config(p)


@settings(max_examples=30)
@given(N=st.integers(17, 65), r0=st.floats(0.3, 0.45), gap=st.floats(0.01, 0.1), tau=st.floats(0.1, 3.0),
       n_t=st.sampled_from([3, 5, 9, 11]), seed=st.integers(0, 2**32), corrector=st.booleans())
def test_round_trip(tmp_path_factory, N, r0, gap, tau, n_t, seed, corrector):
    cfg = RunConfig(seed=seed)
    cfg.geometry.N, cfg.geometry.r0, cfg.geometry.r1 = N, r0, r0 + gap
    cfg.probes.min_factor, cfg.probes.corrector = 2.0, corrector
    cfg.sweep.tau, cfg.sweep.n_t = tau, n_t
    cfg.validate()
    p = tmp_path_factory.mktemp("cfg") / "c.toml"
    dump_config(cfg, p)
    assert load_config(p) == cfg


@pytest.mark.parametrize("patch, field", [
    ({"geometry": {"r0": 0.5, "r1": 0.4}}, "geometry.r0"),
    ({"geometry": {"N": "x"}}, "geometry.N"),
    ({"geometry": {"bogus": 1}}, "geometry.bogus"),
    ({"sweep": {"n_t": 4}}, "sweep.n_t"),
    ({"A": [[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]}, "A"),
    ({"stability": {"base": {"name": "quartic"}}}, "stability.base.name"),
    ({"probes": {"deltas": [0.001]}}, "probes.deltas"),
    ({"solver": {"method": "magic"}}, "solver.method"),
    ({"seed": -1}, "seed"),
])
def test_field_errors(patch, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(patch)
    assert exc.value.field == field


def test_cli_validate_config(tmp_path, capsys):
    assert main(["validate-config", str(QUICK)]) == 0
    bad = tmp_path / "bad.toml"
    bad.write_text("[geometry]\nN = 4\n")
    assert main(["validate-config", str(bad)]) == 2
    assert "geometry.N" in capsys.readouterr().err
    broken = tmp_path / "broken.toml"
    broken.write_text("[geometry\n")
    assert main(["validate-config", str(broken)]) == 2


def test_cli_argument_errors(tmp_path):
    assert main(["run", "--config", str(QUICK), "--experiment", "nope", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2
    assert main(["report", str(tmp_path / "missing")]) == 2


def test_cli_run_and_report(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DTN_PROBE_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(QUICK), "--experiment", "lambda1"]) == 0
    report = json.loads((tmp_path / "env" / "report.json").read_text())
    assert report["schema_version"] == "1.0" and report["prng"] == "numpy.PCG64"
    assert report["passed"] and "lambda1" in report["experiments"]
    assert (tmp_path / "env" / "config.toml").exists()
    out = capsys.readouterr().out
    assert "[PASS] lambda1" in out
    # --out beats the environment
    assert main(["run", "--config", str(QUICK), "--experiment", "lambda1", "--out", str(tmp_path / "flag"),
                 "--no-plots"]) == 0
    assert (tmp_path / "flag" / "report.json").exists()


def test_determinism_and_report(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code = main(["run", "--config", str(QUICK), "--experiment", "frechet", "--out", str(d)])
        assert code in (0, 1)
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    for svg in a.glob("*.svg"):
        svg.unlink()
    assert main(["report", str(a)]) == 0
    assert list(a.glob("*.svg"))
    svgs = sorted(a.glob("*.svg"))
    assert svgs[0].read_bytes() == (b / svgs[0].name).read_bytes()


def test_all_experiments_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "--config", str(QUICK), "--experiment", "all", "--out", str(d), "--no-plots"]) in (0, 1)
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert {"identity.csv", "frechet.csv", "scaling.csv", "recover_sigma.csv", "recover_aprime.csv",
            "stability.csv"} <= set(csvs)
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
