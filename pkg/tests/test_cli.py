import json

import numpy as np
import pytest

from qsynth import circuit as cm
from qsynth.cli import (
    RunConfig,
    format_matrix,
    load_config,
    main,
    parse_depth_range,
    parse_matrix,
)
from qsynth.targets import named_target


def smoke_config(tmp_path, **overrides):
    doc = {
        "architecture": {"n_data": 1, "ancilla": False, "connectivity": "all",
                         "single_qubit_sites": "all"},
        "gates": ["H", "T"],
        "agent": {
            "n_mcts_train": 16,
            "n_mcts_eval": 32,
            "games_per_epoch": 4,
            "epochs_per_depth": 2,
            "competition_games": 4,
            "batch_size": 8,
        },
        "network": {"channels": 4, "blocks": 1, "policy_channels": 3, "value_channels": 2},
        "curriculum": {"mu_start": 1, "mu_end": 1, "sigma": 0.5, "d_min": 1, "d_max": 3},
        "seed": 7,
        "run_dir": str(tmp_path / "run"),
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


# -- config handling -----------------------------------------------------------


def test_config_round_trip(tmp_path):
    path = smoke_config(tmp_path)
    cfg = load_config(path)
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg


def test_config_errors_are_line_precise(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "architecture": {},\n  "gates": [,]\n}\n')
    assert main(["train", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "bad.json:3" in err


def test_config_unknown_key_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"architecture": {"n_data": 1}, "gates": ["H"], "wat": 1}))
    assert main(["train", "--config", str(bad)]) == 2
    assert "wat" in capsys.readouterr().err


def test_missing_config_file(capsys):
    assert main(["train", "--config", "/nonexistent/cfg.json"]) == 2
    assert "no such config" in capsys.readouterr().err


# -- matrix files ----------------------------------------------------------------


def test_matrix_round_trip():
    m = named_target("CS")
    assert np.allclose(parse_matrix(format_matrix(m)), m)
    h = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    assert np.abs(parse_matrix(format_matrix(h)) - h).max() == 0.0


def test_matrix_parse_errors():
    with pytest.raises(ValueError, match="line 1"):
        parse_matrix("1+0i nope\n0+0i 1+0i\n")
    with pytest.raises(ValueError, match="square"):
        parse_matrix("1+0i 0+0i\n")


def test_depth_range_parsing():
    assert parse_depth_range("1:4") == [1, 2, 3, 4]
    assert parse_depth_range("2,5,9") == [2, 5, 9]


# -- synth / verify ---------------------------------------------------------------


def test_synth_mcts_only_cs(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "architecture": {"n_data": 2},
        "gates": ["H", "S", "Sdg", "T", "Tdg", "CNOT"],
        "agent": {"n_mcts_eval": 400},
    }))
    out = tmp_path / "out"
    rc = main([
        "synth", "--config", str(cfg), "--mcts-only", "--target", "CS",
        "--max-steps", "5", "--seed", "0", "--out", str(out),
    ])
    assert rc == 0
    circ = cm.from_json((out / "circuit.json").read_text())
    assert circ.depth <= 5 and circ.t_count == 3
    qasm = (out / "circuit.qasm").read_text()
    assert qasm.startswith("OPENQASM 2.0;")
    # verify the emitted files against the named target
    assert main(["verify", "--circuit", str(out / "circuit.json"), "--target", "CS"]) == 0
    assert main(["verify", "--circuit", str(out / "circuit.qasm"), "--target", "CS"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_synth_rejects_dimension_mismatch(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "architecture": {"n_data": 1},
        "gates": ["H", "T"],
    }))
    rc = main(["synth", "--config", str(cfg), "--mcts-only", "--target", "CS",
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "does not match" in capsys.readouterr().err


def test_synth_rejects_nonunitary_matrix_file(tmp_path, capsys):
    bad = tmp_path / "m.txt"
    bad.write_text("1+0i 1+0i\n0+0i 1+0i\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"architecture": {"n_data": 1}, "gates": ["H", "T"]}))
    rc = main(["synth", "--config", str(cfg), "--mcts-only", "--target", str(bad),
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "not unitary" in capsys.readouterr().err


def test_verify_detects_broken_circuit(tmp_path, capsys):
    ops = (("T", (0,)), ("CNOT", (0, 1)), ("Tdg", (1,)), ("CNOT", (0, 1)), ("T", (1,)))
    good = cm.Circuit(ops=ops, n_data=2, gate_names=frozenset({"T", "Tdg", "CNOT"}))
    broken = cm.Circuit(ops=ops[:-1], n_data=2, gate_names=frozenset({"T", "Tdg", "CNOT"}))
    gp, bp = tmp_path / "good.json", tmp_path / "bad.json"
    gp.write_text(cm.to_json(good))
    bp.write_text(cm.to_json(broken))
    assert main(["verify", "--circuit", str(gp), "--target", "CS"]) == 0
    assert main(["verify", "--circuit", str(bp), "--target", "CS"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out


def test_verify_dynamic_circuit_both_branches(tmp_path):
    # T gadget with its Sdg correction: both branches realize Tdg.
    circ = cm.Circuit(
        ops=(("H", (1,)), ("T", (1,)), ("CNOT", (0, 1)), ("Tdg", (1,)), ("CNOT", (0, 1))),
        n_data=1,
        has_ancilla=True,
        gate_names=frozenset({"H", "T", "Tdg", "CNOT"}),
        correction=(("Tdg", (0,)), ("Tdg", (0,))),
    )
    target = tmp_path / "tdg.txt"
    target.write_text(format_matrix(np.diag([1.0, np.exp(-1j * np.pi / 4)])))
    path = tmp_path / "dyn.json"
    path.write_text(cm.to_json(circ))
    assert main(["verify", "--circuit", str(path), "--target", str(target)]) == 0
    # qasm round trip too
    qasm = tmp_path / "dyn.qasm"
    qasm.write_text(cm.to_qasm(circ))
    assert main(["verify", "--circuit", str(qasm), "--target", str(target)]) == 0


def test_verify_parse_error_reports_location(tmp_path, capsys):
    bad = tmp_path / "bad.qasm"
    bad.write_text("OPENQASM 2.0;\nqreg q[2];\nzap q[0];\n")
    assert main(["verify", "--circuit", str(bad), "--target", "CS"]) == 2
    assert "line 3" in capsys.readouterr().err


# -- bench ------------------------------------------------------------------------


def bench_args(tmp_path, out_name, seed=3):
    cfg = tmp_path / "cfg.json"
    if not cfg.exists():
        cfg.write_text(json.dumps({
            "architecture": {"n_data": 1},
            "gates": ["H", "S", "T"],
            "agent": {"n_mcts_eval": 64},
        }))
    return [
        "bench", "--config", str(cfg), "--mcts-only", "--depths", "1:2", "--n", "5",
        "--seed", str(seed), "--out", str(tmp_path / out_name), "--budget", "64",
    ]


def test_bench_csv_deterministic(tmp_path):
    assert main(bench_args(tmp_path, "a.csv")) == 0
    assert main(bench_args(tmp_path, "b.csv")) == 0
    a = (tmp_path / "a.csv").read_bytes()
    b = (tmp_path / "b.csv").read_bytes()
    assert a == b
    text = a.decode()
    assert "depth,n,successes,mean_found_depth,mean_seconds" in text
    rows = [r for r in text.splitlines() if r and not r.startswith("#") and not r.startswith("depth")]
    assert len(rows) == 2
    for row in rows:
        depth, n, succ, mean_depth, mean_secs = row.split(",")
        assert int(succ) <= int(n)
        assert mean_secs == ""  # timing off by default
        if mean_depth:
            assert float(mean_depth) <= float(depth)


def test_bench_timing_flag_fills_column(tmp_path):
    assert main(bench_args(tmp_path, "t.csv") + ["--timing"]) == 0
    rows = [
        r for r in (tmp_path / "t.csv").read_text().splitlines()
        if r and not r.startswith("#") and not r.startswith("depth")
    ]
    assert all(float(r.split(",")[4]) >= 0.0 for r in rows)


# -- train ------------------------------------------------------------------------


def test_train_smoke_and_resume(tmp_path, capsys):
    cfg_path = smoke_config(tmp_path)
    assert main(["train", "--config", str(cfg_path)]) == 0
    run_dir = tmp_path / "run"
    cks = sorted(run_dir.glob("ckpt-*.npz"))
    assert len(cks) == 2  # one level, two epochs
    metrics = (run_dir / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "mu,epoch,games,wins,win_rate,mean_loss,best_replaced"
    assert len(metrics) == 3
    # resuming with everything finished adds nothing
    assert main(["train", "--config", str(cfg_path)]) == 0
    assert sorted(run_dir.glob("ckpt-*.npz")) == cks


def test_synth_from_trained_checkpoint(tmp_path):
    cfg_path = smoke_config(tmp_path)
    assert main(["train", "--config", str(cfg_path)]) == 0
    ck = sorted((tmp_path / "run").glob("ckpt-*.npz"))[-1]
    h = tmp_path / "h.txt"
    h.write_text(format_matrix(np.array([[1, 1], [1, -1]]) / np.sqrt(2)))
    rc = main([
        "synth", "--checkpoint", str(ck), "--target", str(h),
        "--max-steps", "3", "--out", str(tmp_path / "synth-out"), "--budget", "32",
    ])
    assert rc == 0
    circ = cm.from_json((tmp_path / "synth-out" / "circuit.json").read_text())
    assert circ.depth >= 1


def test_checkpoint_dir_env(tmp_path, monkeypatch):
    cfg_path = smoke_config(tmp_path)
    assert main(["train", "--config", str(cfg_path)]) == 0
    run_dir = tmp_path / "run"
    ck = sorted(run_dir.glob("ckpt-*.npz"))[-1]
    monkeypatch.setenv("QSYNTH_CHECKPOINT_DIR", str(run_dir))
    h = tmp_path / "h.txt"
    h.write_text(format_matrix(np.array([[1, 1], [1, -1]]) / np.sqrt(2)))
    rc = main([
        "synth", "--checkpoint", ck.name, "--target", str(h),
        "--max-steps", "3", "--out", str(tmp_path / "o2"), "--budget", "16",
    ])
    assert rc == 0
