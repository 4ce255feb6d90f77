import json
from pathlib import Path

import numpy as np
import pytest

from mfgan import cli, networks

TINY = """
problem = ergodic_explicit
dim = 1
outer_iters = 40
log_stride = 20
eval_points = 64
grid_n = 128
"""


def write_cfg(tmp_path, text=TINY, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_config_text():
    raw = cli.parse_config_text(
        "a = 1\nb = 2.5e-3  # trailing comment\n# full comment\nc = hello\n"
        "d = true\n")
    assert raw == {"a": 1, "b": 2.5e-3, "c": "hello", "d": True}


def test_parse_config_errors():
    with pytest.raises(cli.ConfigError):
        cli.parse_config_text("just a line without equals")
    with pytest.raises(cli.ConfigError):
        cli.parse_config_text("a = 1\na = 2\n")


def test_load_config_rejects_unknown_keys(tmp_path):
    path = write_cfg(tmp_path, "problem = ergodic_explicit\nbogus_key = 3\n")
    with pytest.raises(cli.ConfigError):
        cli.load_config(path)


def test_load_config_rejects_bad_values(tmp_path):
    path = write_cfg(tmp_path, "outer_iters = -5\n")
    with pytest.raises(cli.ConfigError):
        cli.load_config(path)
    with pytest.raises(cli.ConfigError):
        cli.load_config(str(tmp_path / "missing.cfg"))


def test_run_writes_report_and_checkpoints(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out)]) == 0
    csv = (out / "report.csv").read_text().splitlines()
    assert csv[0] == cli.CSV_HEADER
    assert len(csv) == 4  # iterations 0, 20, 40
    summary = json.loads((out / "report.json").read_text())
    assert summary["aborted"] is False
    assert summary["final"]["iteration"] == 40
    up = networks.load_params(out / "value.ckpt")
    assert "hbar" in up.extra_scalars
    networks.load_params(out / "density.ckpt")


def test_run_malformed_config_exits_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "no_such_key = 1\n")
    out = tmp_path / "out"
    assert cli.main(["run", cfg, "--out", str(out)]) == 1
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_run_deterministic_csv(tmp_path):
    cfg = write_cfg(tmp_path)
    cli.main(["run", cfg, "--out", str(tmp_path / "a")])
    cli.main(["run", cfg, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/report.csv").read_bytes() \
        == (tmp_path / "b/report.csv").read_bytes()


def test_run_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path)
    cli.main(["run", cfg, "--out", str(tmp_path / "a")])
    cli.main(["run", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a/report.csv").read_bytes() \
        != (tmp_path / "b/report.csv").read_bytes()


def test_run_nonfinite_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY + "lr_d = 1e4\nlr_g = 1e4\n"
                    "density_mode = penalty\nbeta_mf = 1e3\nouter_iters = 200\n")
    with pytest.raises(cli.ConfigError):
        cli.load_config(cfg)  # duplicate outer_iters key
    cfg2 = write_cfg(tmp_path, TINY.replace("outer_iters = 40",
                                            "outer_iters = 200")
                     + "lr_d = 1e4\nlr_g = 1e4\ndensity_mode = penalty\n"
                     + "beta_mf = 1e3\n", name="blowup.cfg")
    code = cli.main(["run", cfg2, "--out", str(tmp_path / "boom")])
    assert code == 2
    # partial report still written for post-mortem
    assert (tmp_path / "boom/report.json").exists()


def test_checkpoint_stride(tmp_path):
    cfg = write_cfg(tmp_path, TINY + "checkpoint_stride = 20\n")
    out = tmp_path / "out"
    cli.main(["run", cfg, "--out", str(out)])
    assert (out / "value_0000020.ckpt").exists()
    assert (out / "density_0000040.ckpt").exists()


def test_sweep_empty_values_exits_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert cli.main(["sweep", cfg, "--parameter", "alpha_g"]) == 1


def test_sweep_writes_summary(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "sweep"
    code = cli.main(["sweep", cfg, "--parameter", "alpha_g",
                     "--values", "1e-3", "5e-3", "--out", str(out)])
    assert code == 0
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0] == "value,rel_err_u,rel_err_m,oscillation"
    assert len(lines) == 3
    assert (out / "alpha_g_1e-3/report.csv").exists()


def test_sweep_batch_sets_both_batch_sizes(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "sweep"
    assert cli.main(["sweep", cfg, "--parameter", "batch",
                     "--values", "8", "--out", str(out)]) == 0
    summary = json.loads((out / "batch_8/report.json").read_text())
    assert summary["config"]["batch_g"] == 8
    assert summary["config"]["batch_d"] == 8


def test_verify_unknown_suite_exits_1(capsys):
    assert cli.main(["verify", "nonsense"]) == 1


def test_verify_game_suite_passes(capsys):
    assert cli.main(["verify", "game"]) == 0
    out = capsys.readouterr().out
    assert "pass" in out and "FAIL" not in out


def test_verify_closed_form_suite_passes(capsys):
    assert cli.main(["verify", "closed-form"]) == 0


def test_fd_solve_writes_grid_csv(tmp_path, capsys):
    out = tmp_path / "fd.csv"
    assert cli.main(["fd-solve", "--n", "128", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x,u,m,hbar"
    assert len(lines) == 129
    hbar = float(lines[1].split(",")[3])
    assert abs(hbar - 0.8240) < 5e-3


def test_oscillation_metric():
    vals = np.concatenate([np.zeros(90), np.array([1.0, -1.0] * 5)])
    assert cli.oscillation_metric(vals) == pytest.approx(1.0)
    assert cli.oscillation_metric([3.0]) == 0.0


@pytest.mark.parametrize("name", ["ergodic1d.cfg", "ergodic1d_smoke.cfg",
                                  "congestion2d.cfg"])
def test_bundled_configs_parse(name):
    path = Path(__file__).resolve().parent.parent / "configs" / name
    cfg, extras = cli.load_config(path)
    assert cfg.outer_iters > 0
    assert extras["output_dir"].startswith("out/")


def test_thread_cap_env(monkeypatch, capsys):
    monkeypatch.setenv("MFGAN_THREADS", "not-a-number")
    cli._apply_thread_cap()
    assert "MFGAN_THREADS" in capsys.readouterr().err
    monkeypatch.setenv("MFGAN_THREADS", "1")
    cli._apply_thread_cap()  # should not raise
