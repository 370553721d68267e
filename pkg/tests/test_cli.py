import csv
import json
import subprocess
import sys

import pytest

from pathlets import toy
from pathlets.analysis import report
from pathlets.cli import EXIT_CODES, main
from pathlets.env import PathletDictionary

EXAMPLE_FINAL = {
    "p1+p3+p4": ["t5"], "p2": ["t2", "t3"], "p5+p8": ["t1", "t4"],
    "p6": ["t4"], "p7": ["t1", "t6"], "p9": ["t1", "t6"],
}


@pytest.fixture
def toy_files(tmp_path):
    net = tmp_path / "net.csv"
    trajs = tmp_path / "trajs.txt"
    script = tmp_path / "script.txt"
    net.write_text(toy.NETWORK)
    trajs.write_text(toy.TRAJECTORIES)
    script.write_text(toy.FORCED_SCRIPT)
    return net, trajs, script


def _config(tmp_path, name="cfg.json", **raw):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_memory_path_graph(tmp_path, capsys):
    cfg = _config(tmp_path, memory={"path_graph_edges": 5})
    assert main(["--config", cfg, "--mode", "memory", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out.split("\n")
    assert out[:3] == ["topdown 15", "bottomup 5", "ratio 3"]
    assert json.loads((tmp_path / "o" / "memory.json").read_text())["topdown"] == 15


def test_memory_budget_refusal(tmp_path, capsys):
    cfg = _config(tmp_path, memory={"path_graph_edges": 30, "budget": 10})
    assert main(["--config", cfg, "--mode", "memory", "--out", str(tmp_path)]) == EXIT_CODES["E_BUDGET"]
    assert _err(capsys)["error"] == "E_BUDGET"


def test_forced_toy_run_emits_example_dictionary(tmp_path, toy_files):
    net, trajs, script = toy_files
    out = tmp_path / "out"
    cfg = _config(tmp_path, paths={"network_file": str(net), "trajectory_file": str(trajs)})
    assert main(["--config", cfg, "--out", str(out), "--force-actions", str(script)]) == 0
    d = json.loads((out / "dictionary.json").read_text())
    got = {p["pathlet_id"]: p["traversal_traj_ids"] for p in d["pathlets"]}
    assert got == EXAMPLE_FINAL
    assert d["representability"] == {"t1": [4, 4], "t2": [1, 3], "t3": [1, 2], "t4": [3, 4],
                                     "t5": [3, 3], "t6": [2, 3]}
    with open(out / "report.csv") as fh:
        row = next(csv.DictReader(fh))
    assert int(row["size"]) == 6 and float(row["L_traj"]) == 0.0
    assert json.loads((out / "report_histogram.json").read_text()) == {"1": 4, "2": 1, "3": 1}
    with open(out / "trace.csv") as fh:
        trace = list(csv.DictReader(fh))
    # the last merge drops mu_bar to 0.708, under the default 0.8 threshold
    assert trace[-1]["termination_reason"] == "mu_below"


def test_reruns_identical_and_inputs_untouched(tmp_path, toy_files):
    net, trajs, script = toy_files
    before = [net.read_bytes(), trajs.read_bytes(), script.read_bytes()]
    cfg = _config(tmp_path, paths={"network_file": str(net), "trajectory_file": str(trajs)},
                  train={"iterations": 2, "episodes_per_iteration": 2, "batch_size": 4})
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["--config", cfg, "--out", str(d), "--seed", "3"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
    assert {"checkpoint.json", "dictionary.json", "returns.csv", "report.csv", "trace.csv"} <= set(outs[0])
    assert [net.read_bytes(), trajs.read_bytes(), script.read_bytes()] == before


def test_dictionary_round_trip_report(tmp_path, toy_files):
    net, trajs, script = toy_files
    out = tmp_path / "out"
    cfg = _config(tmp_path, paths={"network_file": str(net), "trajectory_file": str(trajs)})
    main(["--config", cfg, "--out", str(out), "--force-actions", str(script)])
    d = PathletDictionary.from_json((out / "dictionary.json").read_text())
    with open(out / "report.csv") as fh:
        row = next(csv.DictReader(fh))
    rep = report(d, toy.trajectories())
    assert (str(rep.size), str(rep.phi), str(rep.loss), str(rep.mu_bar)) == \
        (row["size"], row["phi"], row["L_traj"], row["mu_bar"])


def test_evaluate_writes_curve(tmp_path, toy_files, capsys):
    net, trajs, script = toy_files
    out = tmp_path / "out"
    cfg = _config(tmp_path, paths={"network_file": str(net), "trajectory_file": str(trajs)})
    main(["--config", cfg, "--out", str(out), "--force-actions", str(script)])
    capsys.readouterr()
    assert main(["--config", cfg, "--out", str(out), "--mode", "evaluate"]) == 0
    lines = capsys.readouterr().out.split()
    assert len(lines) == 10 and lines[-1].startswith("1.0,")
    with open(out / "curve.csv") as fh:
        assert next(csv.reader(fh)) == ["x", "fraction"]


def test_sweep_mode(tmp_path, toy_files):
    net, trajs, _ = toy_files
    out = tmp_path / "out"
    cfg = _config(tmp_path, paths={"network_file": str(net), "trajectory_file": str(trajs)},
                  policy="random", sweep={"grid": {"k": [1, 4]}},
                  train={"iterations": 1, "episodes_per_iteration": 1})
    assert main(["--config", cfg, "--out", str(out), "--mode", "sweep"]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["1", "4"]
    assert rows[0]["size"] == "9"  # k = 1 cannot merge, every network edge stays a pathlet


def test_generate_mode(tmp_path, capsys):
    cfg = _config(tmp_path, world={"grid_width": 2, "grid_height": 2, "n_trajectories": 5,
                                   "walk_length_range": [1, 3]})
    assert main(["--config", cfg, "--mode", "generate", "--out", str(tmp_path / "w")]) == 0
    assert len((tmp_path / "w" / "network.csv").read_text().splitlines()) == 12
    assert len((tmp_path / "w" / "trajectories.txt").read_text().splitlines()) == 5


def test_missing_network_file(tmp_path, capsys):
    cfg = _config(tmp_path, paths={"network_file": str(tmp_path / "nope.csv"),
                                   "trajectory_file": str(tmp_path / "nope.txt")})
    rc = main(["--config", cfg, "--out", str(tmp_path)])
    assert rc == EXIT_CODES["E_MISSING_INPUT"] != 0
    err = _err(capsys)
    assert err["error"] == "E_MISSING_INPUT" and "nope.csv" in err["message"]


def test_ingestion_error_code(tmp_path, capsys):
    net = tmp_path / "net.csv"
    net.write_text("e1,a,a\n")
    trajs = tmp_path / "t.txt"
    trajs.write_text("t1:e1\n")
    cfg = _config(tmp_path, paths={"network_file": str(net), "trajectory_file": str(trajs)})
    assert main(["--config", cfg, "--out", str(tmp_path)]) == EXIT_CODES["E_INGEST"]


@pytest.mark.parametrize("raw", [{"bogus": 1}, {"env": {"k": 0}}, {"env": {"nope": 1}},
                                 {"split_fraction": 1.0}, {"policy": "greedy"},
                                 {"scalarizer": {"kind": "pareto"}}])
def test_bad_config_rejected(tmp_path, capsys, raw):
    cfg = _config(tmp_path, **raw)
    assert main(["--config", cfg, "--mode", "memory"]) == EXIT_CODES["E_CONFIG"]
    assert _err(capsys)["error"] == "E_CONFIG"


def test_bad_mode_is_usage_error(capsys):
    assert main(["--mode", "dance"]) == EXIT_CODES["E_USAGE"]


def test_force_actions_outside_train(tmp_path, capsys):
    assert main(["--mode", "memory", "--force-actions", "x"]) == EXIT_CODES["E_USAGE"]


def test_console_entry_point(tmp_path):
    cfg = _config(tmp_path, memory={"path_graph_edges": 4})
    proc = subprocess.run([sys.executable, "-m", "pathlets.cli", "--config", cfg, "--mode", "memory",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "topdown 10"
