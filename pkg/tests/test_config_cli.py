import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmctorus import pipeline
from gmctorus.cli import main
from gmctorus.config import RunConfig, merge, parse_shells, read_config_file
from gmctorus.errors import ScaleUnresolvable, SchemaMismatch

SMALL = ["--dim", "1", "--grid-log2", "9", "--levels", "5", "--replicas", "4", "--gamma", "0.5"]


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# demo\ndim = 2\ngamma = 0.7\ngrid-log2 = 8\nshells = 1:4\nspectrum_csv = yes\n")
    values = read_config_file(path)
    assert values == {"d": 2, "gamma": 0.7, "grid_log2": 8, "shells": (1, 4), "spectrum_csv": True}
    cfg = merge(values, {"gamma": 0.3, "levels": None})
    assert cfg.gamma == 0.3 and cfg.d == 2 and cfg.levels is None


def test_config_file_errors(tmp_path):
    (tmp_path / "a.cfg").write_text("colour = red\n")
    with pytest.raises(ValueError, match="unknown key"):
        read_config_file(tmp_path / "a.cfg")
    (tmp_path / "b.cfg").write_text("gamma 0.5\n")
    with pytest.raises(ValueError, match="key=value"):
        read_config_file(tmp_path / "b.cfg")


@given(lo=st.integers(0, 20), hi=st.integers(0, 20))
def test_parse_shells(lo, hi):
    assert parse_shells(f"{lo}:{hi}") == (lo, hi)
    assert parse_shells(f"{lo},{hi}") == (lo, hi)


def test_resolved_defaults():
    c = RunConfig(d=1, gamma=0.5).resolved()
    assert (c.grid_log2, c.levels, c.replicas) == (12, 9, 64)
    assert c.tau == pytest.approx(0.375)
    c2 = RunConfig(d=2, gamma=0.5).resolved()
    assert (c2.grid_log2, c2.levels, c2.replicas) == (9, 6, 32)
    assert RunConfig(d=3, gamma=0.5).resolved().trend_only
    back = RunConfig.from_dict(json.loads(json.dumps(c.to_dict())))
    assert back == c


def test_resolved_rejects_unresolvable_levels():
    with pytest.raises(ScaleUnresolvable, match="level 8 .* M=512"):
        RunConfig(d=1, gamma=0.5, grid_log2=9, levels=8).resolved()


def test_resolved_rejects_large_tau():
    with pytest.raises(ValueError, match="no admissible q"):
        RunConfig(d=1, gamma=0.5, tau=0.9).resolved()


def test_predict(capsys):
    assert main(["predict", "--dim", "1", "--gamma", "0.5"]) == 0
    out = capsys.readouterr().out
    assert "D = 0.750000" in out and "q = " in out


def test_predict_rejects_near_critical(capsys):
    assert main(["predict", "--gamma", "1.4142", "--dim", "1"]) == 2
    err = capsys.readouterr().err
    assert "sqrt(2d)" in err and "1.414214" in err


def test_simulate_analyze_deterministic(tmp_path, capsys):
    a = tmp_path / "a"
    names = ("config.json", "summaries.json", "estimates.json", "regression.csv", "spectrum_r0.csv")
    outputs = []
    for _ in range(2):
        assert main(["simulate", *SMALL, "--seed", "3", "--out", str(a), "--spectrum-csv", "--dump-fields"]) == 0
        assert main(["analyze", str(a)]) == 0
        outputs.append({name: (a / name).read_bytes() for name in names})
    assert outputs[0] == outputs[1]
    est = json.loads((a / "estimates.json").read_text())
    assert [d["j"] for d in est["field_dumps"]] == [1, 2, 3, 4, 5]
    assert est["replicas"] == 4
    assert "mass_within_4_stderr" in est["verdicts"]
    assert "fourier_sup" in capsys.readouterr().out


def test_parallel_workers_match_serial(tmp_path, monkeypatch):
    cfg = RunConfig(d=1, gamma=0.5, grid_log2=9, levels=5, replicas=4, seed=2)
    serial = pipeline.simulate(cfg, out=tmp_path / "s")
    monkeypatch.setenv("GMC_WORKERS", "2")
    par = pipeline.simulate(cfg, out=tmp_path / "p")
    assert (serial / "summaries.json").read_bytes() == (par / "summaries.json").read_bytes()


def test_worker_env_validation(monkeypatch):
    monkeypatch.setenv("GMC_WORKERS", "many")
    with pytest.raises(ValueError):
        pipeline.worker_count()


def test_schema_mismatch_refused(tmp_path, capsys):
    run = tmp_path / "r"
    main(["simulate", *SMALL, "--out", str(run)])
    cfg = json.loads((run / "config.json").read_text())
    cfg["schema_version"] = 99
    (run / "config.json").write_text(json.dumps(cfg))
    with pytest.raises(SchemaMismatch):
        pipeline.analyze(run)
    assert main(["analyze", str(run)]) == 2
    assert "schema version 99" in capsys.readouterr().err


def test_simulate_unresolvable_levels(tmp_path, capsys):
    code = main(["simulate", "--dim", "1", "--grid-log2", "8", "--levels", "6", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "level 6" in capsys.readouterr().err


def test_report(tmp_path, capsys):
    runs = []
    for g in (0.3, 0.6):
        run = tmp_path / f"g{g}"
        main(["simulate", *SMALL[:-2], "--gamma", str(g), "--out", str(run)])
        runs.append(str(run))
    capsys.readouterr()
    assert main(["report", *runs, "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert [r["gamma"] for r in rep["rows"]] == [0.3, 0.6]
    assert rep["rows"][0]["predicted"] == pytest.approx(0.91)
    assert main(["report", *runs]) == 0
    assert "monotone decreasing d=1:fourier" in capsys.readouterr().out


def test_kernel_check_cli(tmp_path, capsys):
    assert main(["kernel-check", "--dim", "1", "--grid-log2", "11", "--levels", "8", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS kernel_level_8" in out and "PASS log_law_resolved_octaves" in out
    rep = json.loads((tmp_path / "kernel_report.json").read_text())
    assert rep["passed"]
    assert (tmp_path / "kernel_j3.csv").exists()


def test_kernel_check_tampered_npz(kernels1, tmp_path, capsys):
    good = tmp_path / "good.npz"
    kernels1[2].save(good)
    assert main(["kernel-check", "--load", str(good)]) == 0
    with np.load(good) as z:
        data = dict(z)
    data["eigenvalues"] = data["eigenvalues"].copy()
    data["eigenvalues"][7] = -1e-3
    bad = tmp_path / "bad.npz"
    np.savez(bad, **data)
    capsys.readouterr()
    assert main(["kernel-check", "--load", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "nonnegative_spectrum" in err and "min eigenvalue -1.000e-03" in err


def test_pou_check_cli(tmp_path, capsys):
    code = main(["pou-check", "--dim", "1", "--grid-log2", "10", "--levels", "7", "--replicas", "16", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0, out
    assert "PASS decoupling_identity" in out
    rep = json.loads((tmp_path / "pou_report.json").read_text())
    assert max(r["max_relative_error"] for r in rep["decoupling"]) <= 1e-10
    assert len(rep["tracked_frequencies"]) == 8


def test_config_file_on_cli(tmp_path, capsys):
    path = tmp_path / "c.cfg"
    path.write_text("dim = 1\ngamma = 1.0\n")
    assert main(["predict", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert f"D = {(math.sqrt(2) - 1) ** 2:.6f}" in out
