"""CLI: config parsing, subcommand verdicts, artifacts, determinism."""

import json
import os

import pytest

from spdo.cli import ConfigError, main, parse_config


def _run(tmp_path, command, cfg_text=None, seed=1234, name="run"):
    out = tmp_path / name
    argv = [command, "--out", str(out), "--seed", str(seed)]
    if cfg_text is not None:
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(cfg_text)
        argv += ["--config", str(cfg)]
    code = main(argv)
    return code, out


def test_config_parsing(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("# comment\ngrid.n = 1\nsymbol = xi\n\nmu_list=50,100\n")
    cfg = parse_config(str(p))
    assert cfg == {"grid.n": "1", "symbol": "xi", "mu_list": "50,100"}


def test_config_malformed_line(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("grid.n = 1\nthis line has no equals\n")
    with pytest.raises(ConfigError) as e:
        parse_config(str(p))
    assert ":2:" in str(e.value)


def test_malformed_config_exit_code(tmp_path):
    code, _ = _run(tmp_path, "verify-symbol", "grid.N = not_an_int\n")
    assert code == 1


def test_unknown_symbol_name_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "verify-symbol", "symbol = zzz&&&\n")
    assert code == 1
    assert "config error" in capsys.readouterr().err


def test_verify_symbol_pass(tmp_path):
    code, out = _run(tmp_path, "verify-symbol", "symbol = bessel1\ngrid.N = 64\n")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] is True
    assert (out / "data" / "estimate.csv").exists()
    assert (out / "meta.json").exists()


def test_verify_symbol_fail_misdeclared(tmp_path):
    code, out = _run(tmp_path, "verify-symbol",
                     "symbol = xi**2\nsymbol.order = 1\ngrid.N = 64\n")
    assert code == 2
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] is False


def test_quantize_demo(tmp_path):
    code, out = _run(tmp_path, "quantize-demo", "grid.N = 32\n")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["report"]["max_extraction_error"] <= 1e-8


def test_quantize_demo_random_symbols(tmp_path):
    code, out = _run(tmp_path, "quantize-demo",
                     "random_symbols = 3\ngrid.N = 32\n")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["report"]["random_symbols"] == 3
    assert rep["report"]["max_extraction_error"] <= 1e-8


def test_cz_sweep_mode(tmp_path):
    code, out = _run(tmp_path, "cz",
                     "cases = 1x16,2x8\ndraws = 3\nensemble.M = 2\n"
                     "time.K = 4\n")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["report"]["total_draws"] == 6
    assert all(rep["report"]["properties"].values())
    assert (out / "data" / "cz_sweep.csv").exists()


def test_garding_exact_check(tmp_path):
    code, out = _run(tmp_path, "garding",
                     "trials = 3\nensemble.M = 4\ntime.K = 8\n"
                     "exact_check = 1\nexact_trials = 3\n")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["report"]["exact_passed"] is True
    assert all(c <= 1.0 + 1e-9
               for c in rep["report"]["exact_constants"].values())


def test_integrator_subcommand(tmp_path):
    code, out = _run(tmp_path, "integrator",
                     "ensemble.M = 2000\ntime.K = 100\nunitary.K = 200\n"
                     "drift_tol = 1e-6\n", seed=1)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["report"]["ito_isometry"]["rel_error"] <= 0.05
    assert rep["report"]["unitary"]["norm_drift"] <= 1e-6


def test_compose_example_prints_expansion(tmp_path, capsys):
    code, out = _run(tmp_path, "compose", "b = xi\na = x\n")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    text = rep["report"]["expansion"]
    assert "x" in text and "xi" in text


def test_compose_random_pairs(tmp_path):
    code, out = _run(tmp_path, "compose", "random_pairs = 3\ntrials = 5\n")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["report"]["worst_relative_error"] <= 1e-9


def test_cz_subcommand(tmp_path):
    code, out = _run(tmp_path, "cz", "grid.N = 32\nensemble.M = 3\ntime.K = 8\n")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert all(rep["report"]["properties"].values())


def test_uniqueness_emits_decay_csv(tmp_path):
    code, out = _run(tmp_path, "uniqueness",
                     "equation = wave\ngrid.N = 32\nensemble.M = 8\n"
                     "time.K = 64\n")
    assert code == 0
    lines = (out / "data" / "decay.csv").read_text().splitlines()
    assert lines[0].startswith("mu,")
    assert len(lines) >= 4


def test_determinism_byte_identical_reports(tmp_path):
    cfg = "grid.N = 32\nensemble.M = 3\ntime.K = 8\n"
    code1, out1 = _run(tmp_path, "cz", cfg, seed=7, name="r1")
    code2, out2 = _run(tmp_path, "cz", cfg, seed=7, name="r2")
    assert code1 == code2 == 0
    b1 = (out1 / "report.json").read_bytes()
    b2 = (out2 / "report.json").read_bytes()
    assert b1 == b2


def test_seed_changes_report(tmp_path):
    cfg = "grid.N = 32\nensemble.M = 3\ntime.K = 8\n"
    _, out1 = _run(tmp_path, "cz", cfg, seed=7, name="s1")
    _, out2 = _run(tmp_path, "cz", cfg, seed=8, name="s2")
    r1 = json.loads((out1 / "report.json").read_text())
    r2 = json.loads((out2 / "report.json").read_text())
    assert r1["seed"] != r2["seed"]


def test_config_seed_respected_unless_flag(tmp_path):
    out = tmp_path / "cfgseed"
    cfg = tmp_path / "seed.cfg"
    cfg.write_text("grid.N = 32\nensemble.M = 3\ntime.K = 8\nseed = 99\n")
    code = main(["cz", "--out", str(out), "--config", str(cfg)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["seed"] == 99


def test_unknown_command_exit_one():
    assert main(["definitely-not-a-command"]) == 1
