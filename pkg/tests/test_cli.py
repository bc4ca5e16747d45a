import shutil
import subprocess
import sys

import pytest

from helmdef.cli import EXIT_CONFIG, EXIT_OK, main


def test_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"problem = mp2b\nk = 10\nnx = 33\nny = 33\ncoarse_mode = direct\n"
                   f"output_dir = {tmp_path}\ntag = cli\n")
    assert main(["run", "--config", str(cfg), "--set", "deflation=ADEF1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "deflation=ADEF1" in out and "outer_iters=" in out
    for name in ("results.csv", "cli_history.txt", "cli.json"):
        assert (tmp_path / name).exists()


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("k = 10\nfrequency = 3\n")
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    assert main(["run", "--set", "k=40", "--set", "nx=33", "--set", "ny=33"]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_derive_stencils(capsys):
    assert main(["derive-stencils"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "980" in out and "entry sum: 0" in out and "1960" in out


def test_optimize_9pt(capsys):
    assert main(["optimize-9pt", "--k", "80"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "i=18 j=18" in out and "-4.496" in out
    assert "a0=4.632 as=-1.316 ac=0.158" in out


@pytest.mark.skipif(shutil.which("helmdef") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["helmdef", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("run", "scale", "derive-stencils", "optimize-9pt"):
        assert cmd in proc.stdout


def test_module_entry():
    proc = subprocess.run([sys.executable, "-m", "helmdef", "optimize-9pt", "--k", "80"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ac=0.158" in proc.stdout
