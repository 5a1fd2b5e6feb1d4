"""Command-line interface: exit codes, file IO, determinism."""

import numpy as np
import pytest

from pvdyn import save_constraints, save_model
from pvdyn.cli import cmd_verify, main
from pvdyn.scenarios import pendulum, quadruped, quadruped_foot_constraints
from pvdyn.verify import DebugHooks


def _write_pendulum(tmp_path):
    path = tmp_path / "pendulum.json"
    save_model(pendulum(), path)
    return str(path)


def _write_quadruped(tmp_path, soft=None):
    model = quadruped()
    mpath = tmp_path / "quadruped.json"
    save_model(model, mpath)
    cpath = tmp_path / "feet.json"
    save_constraints(quadruped_foot_constraints(model, soft_weight=soft), model, cpath)
    return str(mpath), str(cpath)


def test_verify_default_run_passes(capsys):
    assert cmd_verify(seed=0) == 0
    out = capsys.readouterr().out
    assert "verification: PASS" in out
    assert "FAIL" not in out.replace("PASS/FAIL", "")


def test_verify_flags_injected_sign_error(capsys):
    hooks = DebugHooks(constraint_force_sign=-1.0)
    assert cmd_verify(seed=0, hooks=hooks) == 1
    out = capsys.readouterr().out
    assert "verification: FAIL" in out
    failing = [l for l in out.splitlines() if l.startswith("FAIL")]
    assert failing
    assert all("stationarity" in l for l in failing)


def test_verify_rejects_nonpositive_count(capsys):
    assert main(["verify", "--count", "0"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")


def test_bench_chain_medians_increase(tmp_path):
    out = tmp_path / "bench.csv"
    code = main(
        [
            "bench",
            "--family",
            "chain",
            "--sizes",
            "16,32,64,128",
            "--solvers",
            "pv",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "scenario,n,m,d,solver,median_ns,p10_ns,p90_ns,iterations,checksum"
    rows = [l.split(",") for l in lines[1:]]
    assert len(rows) == 4
    medians = [float(r[5]) for r in rows]
    assert medians == sorted(medians)
    assert all(int(r[8]) >= 100 for r in rows)


def test_bench_report_deterministic_apart_from_timings(tmp_path):
    argv = [
        "bench",
        "--family",
        "branched",
        "--sizes",
        "2,3",
        "--solvers",
        "pv,pv-early,kkt",
        "--seed",
        "7",
    ]
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert main(argv + ["--out", str(path)]) == 0
        outs.append(path.read_text().strip().splitlines())
    assert outs[0][0] == outs[1][0]
    for row_a, row_b in zip(outs[0][1:], outs[1][1:]):
        a, b = row_a.split(","), row_b.split(",")
        # Everything except the three timing columns must match exactly.
        assert a[:5] == b[:5]
        assert a[8:] == b[8:]


def test_bench_hard_solvers_share_checksums(tmp_path):
    path = tmp_path / "bench.csv"
    assert (
        main(
            [
                "bench",
                "--family",
                "chain",
                "--sizes",
                "8",
                "--solvers",
                "pv,pv-early,kkt",
                "--out",
                str(path),
            ]
        )
        == 0
    )
    rows = [l.split(",") for l in path.read_text().strip().splitlines()[1:]]
    checksums = {r[4]: r[9] for r in rows}
    assert checksums["pv"] == checksums["pv-early"] == checksums["kkt"]


def test_bench_rejects_unknown_family(capsys):
    with pytest.raises(SystemExit):
        main(["bench", "--family", "star", "--sizes", "4"])


def test_bench_rejects_descending_sizes(capsys):
    assert main(["bench", "--family", "chain", "--sizes", "8,4", "--solvers", "pv"]) == 2
    assert "error:" in capsys.readouterr().err


def test_simulate_writes_expected_row_count(tmp_path, capsys):
    model_file = _write_pendulum(tmp_path)
    out = tmp_path / "traj.csv"
    code = main(
        ["simulate", "--model", model_file, "--dt", "0.001", "--duration", "1.0", "--out", str(out)]
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1002  # header + initial sample + 1000 steps
    assert lines[0].split(",")[0] == "t"


def test_simulate_is_byte_deterministic(tmp_path, capsys):
    model_file = _write_pendulum(tmp_path)
    blobs = []
    for name in ("one.csv", "two.csv"):
        out = tmp_path / name
        assert (
            main(
                [
                    "simulate",
                    "--model",
                    model_file,
                    "--dt",
                    "0.001",
                    "--duration",
                    "0.2",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]


def test_simulate_quadruped_with_soft_feet_keeps_contact(tmp_path, capsys):
    model_file, cons_file = _write_quadruped(tmp_path, soft=1e6)
    out = tmp_path / "quad.csv"
    code = main(
        [
            "simulate",
            "--model",
            model_file,
            "--constraints",
            cons_file,
            "--solver",
            "pv-soft",
            "--dt",
            "0.001",
            "--duration",
            "0.5",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    header = lines[0].split(",")
    pos_col = header.index("con_pos_err")
    final = float(lines[-1].split(",")[pos_col])
    assert final < 1e-3


def test_simulate_missing_constraint_file_is_usage_error(tmp_path, capsys):
    model_file = _write_pendulum(tmp_path)
    code = main(["simulate", "--model", model_file, "--constraints", str(tmp_path / "nope.json")])
    assert code == 2
    err = capsys.readouterr().err
    assert "error:" in err and "not found" in err


def test_simulate_requires_model(capsys):
    with pytest.raises(SystemExit):
        main(["simulate"])


def test_osim_prints_symmetric_matrix(tmp_path):
    model_file, cons_file = _write_quadruped(tmp_path)
    out = tmp_path / "osim.csv"
    code = main(["osim", "--model", model_file, "--constraints", cons_file, "--out", str(out)])
    assert code == 0
    mat = np.array(
        [[float(v) for v in line.split(",")] for line in out.read_text().strip().splitlines()]
    )
    assert mat.shape == (12, 12)
    assert np.max(np.abs(mat - mat.T)) < 1e-8


def test_verify_through_main_with_model_file(tmp_path, capsys):
    model_file = _write_pendulum(tmp_path)
    assert main(["verify", "--model", model_file, "--count", "4"]) == 0
    assert "verification: PASS" in capsys.readouterr().out
