import json
from pathlib import Path

import pytest

from dpfl.cli import main

SMALL = """mode = {mode}
num_clients = 6
budget = 2
rounds = {rounds}
seed = 3
tau_init = 2
dataset.samples_per_class = 60
partition.alpha = 1.0
"""


def write_config(tmp_path, mode="dpfl", rounds=5, name="run.conf"):
    path = tmp_path / name
    path.write_text(SMALL.format(mode=mode, rounds=rounds))
    return path


def snapshot(folder: Path) -> dict:
    return {str(p.relative_to(folder)): p.read_bytes() for p in sorted(folder.rglob("*")) if p.is_file()}


def test_local_only_single_round_has_no_graphs(tmp_path):
    cfg = write_config(tmp_path, "local_only", rounds=1)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    out = tmp_path / "out"
    assert not (out / "graphs").exists()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("1,")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rounds_recorded"] == 1


def test_run_twice_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, rounds=12)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--snapshot-every", "5"])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--snapshot-every", "5", "--threads", "3"])
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert a == b
    graphs = sorted(k for k in a if k.startswith("graphs/") and k.endswith(".json"))
    assert graphs == ["graphs/round_0000.json", "graphs/round_0005.json", "graphs/round_0010.json"]
    assert all(b"\r\n" not in v for v in a.values())


def test_missing_key_exits_nonzero(tmp_path, capsys):
    path = tmp_path / "bad.conf"
    path.write_text("mode = dpfl\nnum_clients = 3\nrounds = 4\nseed = 1\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "missing required key 'budget'" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unwritable_output(tmp_path):
    cfg = write_config(tmp_path, "local_only", rounds=1)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", str(cfg), "--out", str(blocker / "sub")]) == 3


def test_seed_override(tmp_path):
    cfg = write_config(tmp_path, "local_only", rounds=1)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "42"])
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["seed"] == 42
    assert "seed = 42" in (tmp_path / "o" / "config.txt").read_text()


def test_partition_preview(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["partition-preview", "--config", str(cfg)]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert len(rows) == 7 and rows[0].startswith("client_id,n_train")


def test_greedy_validate_zero_trials(tmp_path, capsys):
    assert main(["greedy-validate", "--trials", "0", "--out", str(tmp_path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["trials"] == 0 and report["mean_ratio"] is None
    assert (tmp_path / "greedy_validate.json").exists()


def test_equivalence_check_command(capsys):
    assert main(["equivalence-check", "--trials", "12"]) == 0
    assert json.loads(capsys.readouterr().out)["equal"] == 12


def test_synergy_command(capsys):
    assert main(["synergy"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_run_requires_out(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--config", str(write_config(tmp_path))])
