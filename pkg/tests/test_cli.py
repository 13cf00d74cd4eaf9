import json

import numpy as np
import pytest

from hrsync.cli import main
from test_config import MINIMAL, PARAMS


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), np.array([[float(x) for x in l.split(",")] for l in lines[1:]])


TINY = """[parameters]
a = 1e-30
b = 29
alpha = 1e-30
beta = 5
q = 1e-30
r = 1
c = 0
J = 1e-30
d = 0.1
p = 10

[mesh]
dimension = 1
extent = 1
resolution = 11

[step]
dt = 0.1
t_end = 1
"""


def test_constants_table(tmp_path, capsys):
    assert main(["constants", "--config", _write(tmp_path, TINY), "--out", str(tmp_path)]) == 0
    out = dict(line.split(None, 1) for line in capsys.readouterr().out.splitlines())
    assert out["C1"].strip() == "1" and out["C2"].strip() == "32" and out["rStar"].strip() == "0.5"
    assert out["M"].strip() == "128.125"


def test_constants_classic_twelve_digits(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL.replace("resolution = 11", "resolution = 401") + "\n[partition]\nm = 2\n")
    assert main(["constants", "--config", cfg]) == 0
    out = dict(line.split(None, 1) for line in capsys.readouterr().out.splitlines())
    assert out["C1"].strip() == "29"
    assert out["C2"].strip() == "40373124646.1"      # 12 significant digits
    assert out["rStar"].strip() == "0.003"


def test_simulate_t_end_zero(tmp_path):
    cfg = _write(tmp_path, MINIMAL.replace("t_end = 1", "t_end = 0"))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    cols, rows = _csv(tmp_path / "timeseries.csv")
    assert rows.shape[0] == 1
    assert cols[:5] == ["t", "u_norm_0", "v_norm_0", "w_norm_0", "grad_u_norm_0"]
    assert cols[-3:] == ["boundary_U2_1", "lyapunov", "S_1"]
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["status"] == "ok" and doc["partial"] is False
    assert set(doc["constants"]) >= {"C1", "C2", "rStar", "K", "M", "Q", "R", "eta1", "eta2", "mu"}
    assert doc["run_spec"]["step"]["t_end"] == 0.0


def test_identical_fields_have_zero_sync_energy(tmp_path):
    cfg = _write(tmp_path, MINIMAL.replace("t_end = 1", "t_end = 2") +
                 "\n[partition]\nm = 2\n\n[initial]\nall = cosine 2 0.8 -1 -4 0.5\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    cols, rows = _csv(tmp_path / "timeseries.csv")
    for k, c in enumerate(cols):
        if c.startswith("S_"):
            assert np.abs(rows[:, k]).max() <= 1e-14


def test_sync_report_identical_data(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL + "\n[initial]\nall = cosine 1 0.8 -1 -4 0.5\n")
    assert main(["sync-report", "--config", cfg, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "sync_report.json").read_text())
    assert rep["sync"]["deg_s_estimate"] <= 1e-14
    assert "deg_s estimate" in capsys.readouterr().out


def test_sync_report_needs_neighbours(tmp_path):
    cfg = _write(tmp_path, MINIMAL + "\n[partition]\nm = 0\n")
    assert main(["sync-report", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 2
    cfg = _write(tmp_path, MINIMAL.replace("b = 1\n", ""))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "'b'" in capsys.readouterr().err
    seg = _write(tmp_path, MINIMAL + "\n[partition]\nm = 1\nsegments = x-:1\n", "seg.ini")
    assert main(["simulate", "--config", seg, "--out", str(tmp_path)]) == 2


def test_divergence_exit_3_with_partial_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL.replace("dt = 0.01", "dt = 0.1").replace("t_end = 1", "t_end = 5")
                 + "\n[initial]\nall = constant 1000 0 0\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert "discretization artifact" in err and "partial" in err
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["status"] == "diverged" and doc["partial"] is True
    assert doc["divergence"]["field"] in ("u", "u_1", "v", "v_1", "w", "w_1")
    _, rows = _csv(tmp_path / "timeseries.csv")
    assert np.all(np.isfinite(rows))


def test_seed_override_changes_random_data(tmp_path):
    cfg = _write(tmp_path, MINIMAL.replace("t_end = 1", "t_end = 0")
                 + "\n[initial]\nseed = 1\nall = random -1 1\n")
    outs = []
    for seed in (None, "1", "2"):
        d = tmp_path / f"o{seed}"
        args = ["simulate", "--config", cfg, "--out", str(d), "--quiet"]
        if seed:
            args += ["--seed", seed]
        assert main(args) == 0
        outs.append((d / "timeseries.csv").read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]


def test_convergence_subcommand(tmp_path, capsys):
    cfg = _write(tmp_path, PARAMS + """
[mesh]
dimension = 1
extent = 1
resolution = 21

[initial]
neuron0 = cosine 1 1 0 0 0
neuron1 = cosine 2 0.5 0 0 0

[step]
dt = 0.05
t_end = 0.5
reaction = false

[convergence]
study = temporal
levels = 3
reference_factor = 16
""")
    assert main(["convergence", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "temporal study" in out and "fitted order" in out


def test_bad_seed_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["simulate", "--config", "x.ini", "--seed", "-4"])
