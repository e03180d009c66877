import filecmp
import json
import time

import pytest

from conclab.cli import main


def _tree(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_unknown_flag_exits_2(capsys):
    assert main(["torus", "--no-such-flag"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_and_key(tmp_path, capsys):
    assert main(["nope"]) == 2
    assert main(["torus", "--set", "Q=1", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "unknown config keys: Q" in err and "usage" in err


def test_invalid_parameters_exit_2(tmp_path):
    assert main(["torus", "--set", "T=0.05", "--set", "h=0.2", "--out", str(tmp_path)]) == 2
    assert main(["sde", "--set", "drift=shear", "--set", "dt=0.1", "--out", str(tmp_path)]) == 2
    assert main(["experiment", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2


def test_torus_outputs(tmp_path):
    out = tmp_path / "torus"
    assert main(["torus", "--set", "T=0.05", "--set", "h=0.002", "--out", str(out)]) == 0
    for name in ("lowmode.csv", "l2ratio.csv", "verdict.json", "run.log"):
        assert (out / name).exists()
    v = json.loads((out / "verdict.json").read_text())
    assert v["status"] == "found" and v["T"] == 0.05 and v["h"] == 0.002
    log = (out / "run.log").read_text()
    assert "numpy" in log and "param T = 0.05" in log and "status pass" in log and "elapsed" in log


def test_torus_control_fails(tmp_path):
    assert main(["torus", "--set", "T=0.05", "--set", "h=0", "--set", "t_max=1", "--out", str(tmp_path)]) == 1


def test_identical_invocations_identical_trees(tmp_path):
    for k in "ab":
        assert main(["torus", "--set", "T=0.05", "--set", "h=0.002", "--out", str(tmp_path / k)]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    files = [p for p in _tree(a) if p.name != "run.log"]
    assert files == [p for p in _tree(b) if p.name != "run.log"]
    _, mismatch, errors = filecmp.cmpfiles(a, b, [str(p) for p in files], shallow=False)
    assert not mismatch and not errors


def test_experiment_config_passes(tmp_path):
    cfg = tmp_path / "shear.cfg"
    cfg.write_text("experiment = ordering\ndrift = shear\ndrift.lambda = 1\nt.list = 0.05, 0.1\n")
    out = tmp_path / "run"
    assert main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
    assert "status: pass" in (out / "report.txt").read_text()
    assert (out / "assertions.csv").exists() and (out / "run.log").exists()


def test_experiment_failure_exit_1(tmp_path):
    # a coarse grid cannot resolve the margin: honest failure, not a crash
    args = ["experiment", "--set", "N=32", "--set", "t.list=0.02", "--set", "analysis.refine=2", "--out", str(tmp_path)]
    assert main(args) == 1


def test_experiment_invalid_exit_2(tmp_path):
    args = ["experiment", "--set", "N=32", "--set", "t.list=0.2", "--set", "richardson=false", "--out", str(tmp_path)]
    with pytest.warns(Warning):
        assert main(args) == 2


def test_multiple_configs_threads(tmp_path, monkeypatch):
    paths = []
    for k in "ab":
        p = tmp_path / f"{k}.cfg"
        p.write_text("experiment = dissipation\nN = 32\nt.list = 0.02\nanalysis.refine = 2\nrichardson = false\n")
        paths.append(p)
    monkeypatch.setenv("CONCLAB_THREADS", "2")
    out = tmp_path / "out"
    code = main(["experiment", "--config", str(paths[0]), "--config", str(paths[1]), "--out", str(out)])
    assert code == 0
    assert (out / "a" / "report.txt").read_bytes() == (out / "b" / "report.txt").read_bytes()


def test_selftest_fast(capsys):
    t0 = time.perf_counter()
    assert main(["selftest"]) == 0
    assert time.perf_counter() - t0 < 60
    assert "selftest: " in capsys.readouterr().out


@pytest.mark.parametrize(
    "cmd,sets,files",
    [
        ("rearrange", ["N=32", "datum=bumps"], ["concentration.csv", "gamma.csv", "input.bin", "rearranged.bin"]),
        ("evolve", ["N=32", "t.list=0.02,0.05", "drift.lambda=1"], ["direct/manifest", "direct/moments.csv", "direct/dissipation.csv"]),
        ("pulsed", ["N=32", "t.list=0.02", "delta=0.005", "drift.lambda=1"], ["pulsed/manifest", "pulsed/moments.csv"]),
        ("sde", ["M=10000", "dt=0.01", "t.list=0.5", "drift=shear", "check=true", "dump=true"], ["variance.csv", "ensemble.bin"]),
        ("ns2d", ["N=32", "t.list=0.02", "richardson=false"], ["report.txt", "assertions.csv", "vorticity/manifest"]),
    ],
)
def test_subcommand_smoke(tmp_path, cmd, sets, files):
    args = [cmd, "--out", str(tmp_path)]
    for s in sets:
        args += ["--set", s]
    assert main(args) == 0
    for f in files + ["run.log"]:
        assert (tmp_path / f).exists(), f
