import json

import numpy as np
import pytest

from aclab import io
from aclab.cli import ConfigError, main, parse_config, parse_config_text, parse_number

MIN = "[problem]\np = 3\n[gamma]\npreset = constant-iso\n"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, MIN))
    assert cfg.p == 3.0
    assert cfg.get("domain", "lo") == (-0.5, -0.5, -0.5)
    assert cfg.get("solver", "tol") is None  # solver defaults live in SolverOptions
    assert cfg.get("asymptotics", "eps_list") == (0.125, 0.0625, 0.03125, 0.015625)


@pytest.mark.parametrize("p", ["2", "1", "0.5", "2.0"])
def test_p_message(p):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(f"[problem]\np = {p}\n")
    assert "p must lie in (1,2)∪(2,∞)" in exc.value.errors


def test_eps_list_parsing():
    cfg = parse_config_text(MIN + "[asymptotics]\neps_list = 0.125, 0.0625\n")
    assert cfg.get("asymptotics", "eps_list") == (0.125, 0.0625)
    with pytest.raises(ConfigError, match="descending"):
        parse_config_text(MIN + "[asymptotics]\neps_list = 0.0625, 0.125\n")


def test_all_errors_collected():
    text = "[problem]\np = 2\ncolour = red\n[mesh]\nn = 3\n[domain]\nn_per_axis = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    errs = exc.value.errors
    assert "unknown key 'colour' in section [problem]" in errs
    assert "unknown section [mesh]" in errs
    assert any("n_per_axis" in e for e in errs)
    assert len(errs) == 4


def test_number_syntax():
    assert parse_number("pi") == np.pi
    assert parse_number("-pi/2") == -np.pi / 2
    assert parse_number("0.5*pi") == 0.5 * np.pi
    assert parse_number("2pi") == 2 * np.pi
    assert parse_number("1e-3") == 1e-3
    with pytest.raises(ValueError):
        parse_number("tau")


def test_vectors_and_comments():
    cfg = parse_config_text(MIN + "[reconstruct]\nxi_list = pi,0,0 ; 0, pi, 0  # two slices\n")
    assert cfg.get("reconstruct", "xi_list") == ((np.pi, 0, 0), (0, np.pi, 0))


def test_gamma_hat_closed_form(tmp_path):
    cfg = write(tmp_path, MIN + "[domain]\nlo = 0,0,0\nhi = 1,1,1\n[gamma-hat]\nxi_list = pi,0,0\n")
    assert main(["gamma-hat", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    header, rows = io.read_csv(tmp_path / "o" / "gamma_hat_direct.csv")
    assert header == ["xi", "entry_label", "re", "im"]
    assert max(abs(float(r[2])) + abs(float(r[3])) for r in rows) <= 1e-12


def test_reconstruct_oracle_constant_aniso(tmp_path):
    cfg = write(tmp_path, "[problem]\np = 3\n[gamma]\npreset = constant-aniso\n[domain]\nn_per_axis = 7\n"
                          "[reconstruct]\nxi_list = 0.4,0,0.2 ; 1,0.5,-0.3\n")
    out = tmp_path / "o"
    assert main(["reconstruct", "--config", str(cfg), "--out", str(out), "--mode", "oracle"]) == 0
    header, rows = io.read_csv(out / "gamma_hat_slices.csv")
    assert header == ["xi", "entry_label", "re", "im", "re_oracle", "im_oracle", "rel_error", "provenance", "mode"]
    assert len(rows) == 12
    assert max(float(r[6]) for r in rows) <= 1e-8
    man = json.loads((out / "manifest.json").read_text())
    assert {a["path"] for a in man["artifacts"]} == {"gamma_hat_slices.csv"}
    assert man["artifacts"][0]["sha256"] == io.sha256(out / "gamma_hat_slices.csv")


def test_verify_algebra(tmp_path, capsys):
    cfg = write(tmp_path, MIN)
    assert main(["verify-algebra", "--config", str(cfg), "--seed", "1", "--trials", "50"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "check,p,family,trials,max_residual,tolerance,pass"
    assert all(line.endswith(",1") for line in lines[1:])


def test_report_reproduces_summary(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\np = 3\n[gamma]\npreset = bump-iso\n[domain]\nn_per_axis = 5\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", "--manifest", str(out / "manifest.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["matches_manifest"] and rep["summary"]["telemetry_rows"] >= 1
    assert (out / "solution.json").exists() and (out / "solution.bin").exists()
    (out / "telemetry.csv").write_text("run_id,iter,residual,energy\n")
    assert main(["report", "--manifest", str(out / "manifest.json")]) == 1


@pytest.mark.parametrize("cmd", ["asymptotics", "linearize"])
def test_experiment_subcommands(tmp_path, cmd):
    cfg = write(tmp_path, "[problem]\np = 3\n[gamma]\npreset = bump-iso\n[domain]\nn_per_axis = 5\n")
    assert main([cmd, "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "manifest.json").exists()


def test_error_json(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\np = 2\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) != 0
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and err["subcommand"] == "solve"
    assert err["errors"] == ["p must lie in (1,2)∪(2,∞)"]
    assert json.loads((out / "error.json").read_text(encoding="utf-8")) == err


def test_runtime_error_json(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\np = 3\n[gamma]\npreset = bump-aniso\namplitude = 10\nwidth = 0.1\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "NonEllipticPresetError"


def test_workers_env_and_determinism(tmp_path, monkeypatch):
    cfg = write(tmp_path, "[problem]\np = 4\n[gamma]\npreset = bump-aniso\n[domain]\nn_per_axis = 5\n")
    outs = []
    for k, w in enumerate(("1", "3")):
        monkeypatch.setenv("ACL_WORKERS", w)
        out = tmp_path / f"o{k}"
        assert main(["reconstruct", "--config", str(cfg), "--out", str(out), "--mode", "oracle"]) == 0
        outs.append((out / "gamma_hat_slices.csv").read_bytes())
        assert json.loads((out / "manifest.json").read_text())["workers"] == int(w)
    assert outs[0] == outs[1]
    monkeypatch.setenv("ACL_WORKERS", "zero")
    assert main(["reconstruct", "--config", str(cfg), "--out", str(tmp_path / "x"), "--mode", "oracle"]) == 2
