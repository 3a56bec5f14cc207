import os
import struct

import numpy as np
import pytest

from plmx import scalar
from plmx.cli import main
from plmx.config import ConfigError, load_config

SCALAR_INI = """\
[model]
kind = scalar
[params]
p = {p}
dt = 1e-3
r_order = 2.0
[x0]
type = constant
value = 2.0
[schedule]
times = 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0
eps_grid = 1.0, 0.6, 0.36, 0.2, 0.12
[ensemble]
n_paths = {n_paths}
seed = 42
[output]
dir = {out}
"""

FIELD_INI = """\
[model]
kind = field
[params]
p = 2.0
dim = 1
n_grid = 24
dt = 1e-3
r_order = 2.0
[noise]
coeffs = 0.3, 0.0, 0.1
[x0]
type = sine
amplitude = 1.0
mode = 1
[schedule]
times = 0.1, 0.2, 0.3, 0.4
[ensemble]
n_paths = 6
seed = 11
[output]
dir = {out}
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_unknown_keys_rejected(tmp_path):
    text = SCALAR_INI.format(p=2.0, n_paths=8, out=tmp_path / "o").replace(
        "dt = 1e-3", "dt = 1e-3\nbogus = 1"
    )
    cfg = _write(tmp_path, "bad.ini", text)
    with pytest.raises(ConfigError, match="bogus"):
        load_config(cfg)
    assert main(["run-ode", "--config", cfg]) == 2
    # duplicate sections are malformed, not silently merged
    dup = _write(
        tmp_path,
        "dup.ini",
        SCALAR_INI.format(p=2.0, n_paths=8, out=tmp_path / "o") + "\n[params]\np = 3\n",
    )
    assert main(["run-ode", "--config", dup]) == 2


def test_unknown_section_rejected(tmp_path):
    cfg = _write(
        tmp_path,
        "bad2.ini",
        SCALAR_INI.format(p=2.0, n_paths=8, out=tmp_path / "o") + "\n[mystery]\nx = 1\n",
    )
    assert main(["run-ode", "--config", cfg]) == 2


def test_missing_config_file_exit_code(tmp_path):
    assert main(["run-ode", "--config", str(tmp_path / "nope.ini")]) == 2


def test_schedule_validation(tmp_path):
    text = SCALAR_INI.format(p=2.0, n_paths=8, out=tmp_path / "o").replace(
        "times = 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0", "times = 1.0, 0.5"
    )
    cfg = _write(tmp_path, "bad3.ini", text)
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_sine_x0_rejected_for_scalar(tmp_path):
    text = SCALAR_INI.format(p=2.0, n_paths=8, out=tmp_path / "o").replace(
        "type = constant", "type = sine"
    )
    cfg = _write(tmp_path, "bad4.ini", text)
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_x0_file_round_trip(tmp_path):
    vals = np.linspace(-1, 1, 24)
    x0file = tmp_path / "x0.csv"
    np.savetxt(x0file, vals, delimiter=",")
    text = FIELD_INI.format(out=tmp_path / "o").replace(
        "type = sine\namplitude = 1.0\nmode = 1", f"type = file\npath = {x0file}"
    )
    cfg = load_config(_write(tmp_path, "file.ini", text))
    assert np.allclose(cfg.x0_field_values(), vals)


def test_run_ode_matches_closed_form(tmp_path):
    out = tmp_path / "ode"
    cfg = _write(
        tmp_path,
        "ode.ini",
        SCALAR_INI.format(p=4.0, n_paths=1, out=out).replace("value = 2.0", "value = 1.0"),
    )
    assert main(["run-ode", "--config", cfg]) == 0
    rows = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    for t, v in rows:
        assert abs(v - scalar.ode_exact(1.0, 4.0, t)) <= 1e-6


def test_emit_tables_byte_stable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["emit-tables", "--out", str(a)]) == 0
    assert main(["emit-tables", "--out", str(b)]) == 0
    for name in ("convergence_table.csv", "mixing_table.csv"):
        assert _read(a / name) == _read(b / name)
    text = (a / "mixing_table.csv").read_text()
    assert "t^(-1/(p-2)),C eps^(2-p)" in text
    assert "C + (1/lambda) log(1/eps)" in text


def test_mixing_time_rerun_identical(tmp_path):
    cfg = _write(tmp_path, "mix.ini", SCALAR_INI.format(p=2.0, n_paths=500, out=tmp_path / "m1"))
    assert main(["mixing-time", "--config", cfg]) == 0
    assert main(["mixing-time", "--config", cfg, "--out", str(tmp_path / "m2")]) == 0
    assert _read(tmp_path / "m1" / "report.csv") == _read(tmp_path / "m2" / "report.csv")
    assert _read(tmp_path / "m1" / "curve.csv") == _read(tmp_path / "m2" / "curve.csv")
    header = (tmp_path / "m1" / "report.csv").read_text().splitlines()[0]
    assert header == "eps,tau,bound_upper,bound_lower,fit_family,fit_param,source"


def test_worker_count_invariance_scalar(tmp_path):
    cfg = _write(tmp_path, "w.ini", SCALAR_INI.format(p=2.0, n_paths=300, out=tmp_path / "w1"))
    assert main(["distance-curve", "--config", cfg, "--workers", "1"]) == 0
    assert main(
        ["distance-curve", "--config", cfg, "--workers", "3", "--out", str(tmp_path / "w3")]
    ) == 0
    assert _read(tmp_path / "w1" / "curve.csv") == _read(tmp_path / "w3" / "curve.csv")


def test_worker_count_invariance_field(tmp_path):
    cfg = _write(tmp_path, "fw.ini", FIELD_INI.format(out=tmp_path / "f1"))
    over = ["--override", "ensemble.n_paths=16", "--override", "schedule.times=0.0, 0.1, 0.3"]
    assert main(["distance-curve", "--config", cfg, "--workers", "1"] + over) == 0
    assert main(
        ["distance-curve", "--config", cfg, "--workers", "4", "--out", str(tmp_path / "f4")]
        + over
    ) == 0
    assert _read(tmp_path / "f1" / "curve.csv") == _read(tmp_path / "f4" / "curve.csv")


def test_spde_resume_bitwise(tmp_path):
    cfg = _write(tmp_path, "spde.ini", FIELD_INI.format(out=tmp_path / "full"))
    assert main(["run-spde", "--config", cfg]) == 0
    assert main(
        [
            "run-spde",
            "--config",
            cfg,
            "--out",
            str(tmp_path / "half"),
            "--override",
            "schedule.times=0.1, 0.2",
        ]
    ) == 0
    assert main(
        [
            "resume",
            "--config",
            cfg,
            "--checkpoint",
            str(tmp_path / "half" / "ensemble.plmx"),
            "--out",
            str(tmp_path / "resumed"),
        ]
    ) == 0
    assert _read(tmp_path / "full" / "final_states.csv") == _read(
        tmp_path / "resumed" / "final_states.csv"
    )
    assert _read(tmp_path / "full" / "ensemble.plmx") == _read(
        tmp_path / "resumed" / "ensemble.plmx"
    )


def test_resume_corrupted_magic_and_version(tmp_path):
    cfg = _write(tmp_path, "spde2.ini", FIELD_INI.format(out=tmp_path / "base"))
    assert main(["run-spde", "--config", cfg]) == 0
    ck = tmp_path / "base" / "ensemble.plmx"
    raw = bytearray(_read(ck))
    bad_magic = tmp_path / "bad_magic.plmx"
    bad_magic.write_bytes(b"XXXX" + bytes(raw[4:]))
    assert main(["resume", "--config", cfg, "--checkpoint", str(bad_magic)]) == 2
    bad_version = tmp_path / "bad_version.plmx"
    bad_version.write_bytes(bytes(raw[:4]) + struct.pack("<I", 99) + bytes(raw[8:]))
    assert main(["resume", "--config", cfg, "--checkpoint", str(bad_version)]) == 2


def test_resume_hash_mismatch(tmp_path):
    cfg = _write(tmp_path, "spde3.ini", FIELD_INI.format(out=tmp_path / "h1"))
    assert main(["run-spde", "--config", cfg]) == 0
    # different physics (seed) must be refused
    assert (
        main(
            [
                "resume",
                "--config",
                cfg,
                "--checkpoint",
                str(tmp_path / "h1" / "ensemble.plmx"),
                "--seed",
                "99",
            ]
        )
        == 2
    )


def test_run_pde_outputs(tmp_path):
    cfg = _write(tmp_path, "pde.ini", FIELD_INI.format(out=tmp_path / "pde"))
    assert main(["run-pde", "--config", cfg]) == 0
    trace = (tmp_path / "pde" / "trace.csv").read_text().splitlines()
    assert trace[0] == "t,l2,lm,linf,w1p"
    snap = (tmp_path / "pde" / "final_state.csv").read_text().splitlines()
    assert snap[0] == "z,value"
    assert len(snap) == 25


def test_run_sde_trajectories(tmp_path):
    out = tmp_path / "sde"
    cfg = _write(tmp_path, "sde.ini", SCALAR_INI.format(p=2.0, n_paths=3, out=out))
    assert main(["run-sde", "--config", cfg]) == 0
    assert sorted(os.listdir(out))[:3] == [
        "effective_config.ini",
        "final_states.csv",
        "trajectory_00000.csv",
    ]
    rows = np.loadtxt(out / "trajectory_00001.csv", delimiter=",", skiprows=1)
    assert rows.shape == (7, 2)


def test_check_disintegration_reports(tmp_path):
    out = tmp_path / "dis"
    code = main(["check-disintegration", "--out", str(out), "--instances", "20"])
    lines = (out / "disintegration.csv").read_text().splitlines()
    assert lines[0] == "instance,r,lhs,rhs,holds,lhs_pow_r,rhs_pow_r,holds_pow_r"
    assert len(lines) == 41
    # order-1 rows always hold; the power form always holds
    for line in lines[1:]:
        parts = line.split(",")
        if parts[1] == "1.0":
            assert parts[4] == "true"
        assert parts[7] == "true"
    # exit 1 exactly when some instance reported a violation
    any_false = any(line.split(",")[4] == "false" for line in lines[1:])
    assert code == (1 if any_false else 0)


def test_effective_config_echo(tmp_path):
    out = tmp_path / "echo"
    cfg = _write(tmp_path, "echo.ini", SCALAR_INI.format(p=2.0, n_paths=2, out=out))
    assert main(["run-ode", "--config", cfg, "--seed", "7"]) == 0
    text = (out / "effective_config.ini").read_text()
    assert "seed = 7" in text
