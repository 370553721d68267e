"""Command-line driver: train, evaluate, sweep, memory and generate modes.

Configuration is one JSON file; ``--mode``, ``--seed`` and ``--out`` override
it. Set ``PATHLET_LOG`` (DEBUG, INFO, WARNING, ...) for log verbosity.

Errors print a one-line JSON object ``{"error": CODE, "message": ...}`` on
stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import analysis
from .dqn import TrainConfig, run_training, save_checkpoint
from .env import EnvConfig, MergeEnv, PathletDictionary, parse_forced_script, run_forced
from .graph import (IngestionError, build_initial_pathlet_graph, load_road_network,
                    load_trajectories)
from .rewards import ScalarizerConfig
from .worlds import SyntheticWorldSpec, generate_world, split_ids

log = logging.getLogger("pathlets")

MODES = ("train", "evaluate", "sweep", "memory", "generate")
EXIT_CODES = {
    "E_USAGE": 2,
    "E_CONFIG": 3,
    "E_MISSING_INPUT": 4,
    "E_INGEST": 5,
    "E_BUDGET": 6,
    "E_IO": 7,
    "E_RUNTIME": 8,
}
TRACE_COLUMNS = ["step", "action", "valid", "S1", "S2", "S3", "S4", "reward", "termination_reason"]


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class ExperimentConfig:
    paths: dict = field(default_factory=lambda: {"network_file": None, "trajectory_file": None,
                                                 "output_dir": "out"})
    env: EnvConfig = field(default_factory=EnvConfig)
    scalarizer: ScalarizerConfig = field(default_factory=ScalarizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split_fraction: float = 0.7
    split_seed: int = 0
    mode: str = "train"
    policy: str = "dqn"
    world: SyntheticWorldSpec = field(default_factory=SyntheticWorldSpec)
    sweep: dict = field(default_factory=dict)
    memory: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"paths": dict(self.paths), "env": self.env.to_dict(),
                "scalarizer": _plain(asdict(self.scalarizer)), "train": self.train.to_dict(),
                "split_fraction": self.split_fraction, "split_seed": self.split_seed,
                "mode": self.mode, "policy": self.policy,
                "world": _plain(asdict(self.world)), "sweep": self.sweep, "memory": self.memory}


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _build(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise CliError("E_CONFIG", f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise CliError("E_CONFIG", f"{section}: {exc}") from exc


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise CliError("E_MISSING_INPUT", f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError("E_CONFIG", f"{p}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise CliError("E_CONFIG", "config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise CliError("E_CONFIG", f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig()
    paths = dict(cfg.paths)
    paths.update(raw.get("paths", {}))
    env = _build(EnvConfig, raw.get("env", {}), "env")
    sc_raw = dict(raw.get("scalarizer", {}))
    # thresholds and weights default to the environment's
    sc_raw.setdefault("alphas", env.alphas)
    sc_raw.setdefault("M", env.M)
    sc_raw.setdefault("mu_threshold", env.mu_threshold)
    scalarizer = _build(ScalarizerConfig, sc_raw, "scalarizer")
    train = _build(TrainConfig, raw.get("train", {}), "train")
    world = _build(SyntheticWorldSpec, raw.get("world", {}), "world")
    split_fraction = float(raw.get("split_fraction", cfg.split_fraction))
    if not 0.0 < split_fraction < 1.0:
        raise CliError("E_CONFIG", f"split_fraction must lie in (0, 1), got {split_fraction}")
    mode = raw.get("mode", cfg.mode)
    if mode not in MODES:
        raise CliError("E_CONFIG", f"unknown mode {mode!r}")
    policy = raw.get("policy", cfg.policy)
    if policy not in ("dqn", "random"):
        raise CliError("E_CONFIG", f"unknown policy {policy!r}")
    return ExperimentConfig(paths, env, scalarizer, train, split_fraction,
                            int(raw.get("split_seed", 0)), mode, policy, world,
                            dict(raw.get("sweep", {})), dict(raw.get("memory", {})))


def apply_overrides(cfg: ExperimentConfig, mode=None, seed=None, out=None) -> ExperimentConfig:
    if mode is not None:
        cfg.mode = mode
    if seed is not None:
        cfg.env = replace(cfg.env, rng_seed=seed)
        cfg.train = replace(cfg.train, rng_seed=seed)
        cfg.world = replace(cfg.world, seed=seed)
    if out is not None:
        cfg.paths = {**cfg.paths, "output_dir": out}
    return cfg


# ------------------------------------------------------------------ writers

def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.paths.get("output_dir") or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("E_IO", f"cannot create output directory {out}: {exc}") from exc
    return out


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_trace(path: Path, trace) -> None:
    write_csv(path, TRACE_COLUMNS, ([row[c] for c in TRACE_COLUMNS] for row in trace))


def write_report(out: Path, rep: analysis.DictionaryReport, stem: str = "report") -> None:
    r = rep.row()
    write_csv(out / f"{stem}.csv", ["size", "phi", "L_traj", "mu_bar"],
              [[r["size"], r["phi"], r["loss"], r["mu_bar"]]])
    (out / f"{stem}_histogram.json").write_text(
        json.dumps({str(k): v for k, v in rep.length_histogram.items()}, indent=2) + "\n")


# ------------------------------------------------------------------- inputs

def _input_path(cfg: ExperimentConfig, key: str) -> Path:
    value = cfg.paths.get(key)
    if not value:
        raise CliError("E_CONFIG", f"paths.{key} is required in mode {cfg.mode}")
    p = Path(value)
    if not p.is_file():
        raise CliError("E_MISSING_INPUT", f"{key} not found: {p}")
    return p


def load_inputs(cfg: ExperimentConfig):
    net_path = _input_path(cfg, "network_file")
    traj_path = _input_path(cfg, "trajectory_file")
    try:
        net = load_road_network(net_path)
        trajs = load_trajectories(traj_path, net)
    except IngestionError as exc:
        raise CliError("E_INGEST", str(exc)) from exc
    return net, trajs


def split_records(cfg: ExperimentConfig, trajs) -> tuple:
    try:
        train_ids, test_ids = split_ids([t.traj_id for t in trajs], cfg.split_fraction,
                                        cfg.split_seed)
    except ValueError as exc:
        raise CliError("E_CONFIG", str(exc)) from exc
    by_id = {t.traj_id: t for t in trajs}
    return [by_id[t] for t in train_ids], [by_id[t] for t in test_ids]


# -------------------------------------------------------------------- modes

def run_train(cfg: ExperimentConfig, force_actions: str | None = None) -> int:
    net, trajs = load_inputs(cfg)
    out = _out_dir(cfg)
    if force_actions is not None:
        # scripted replay runs on the full trajectory set, no learning
        p = Path(force_actions)
        if not p.is_file():
            raise CliError("E_MISSING_INPUT", f"forced-action script not found: {p}")
        try:
            script = parse_forced_script(p.read_text())
        except ValueError as exc:
            raise CliError("E_CONFIG", f"{p}: {exc}") from exc
        env = MergeEnv(cfg.env, build_initial_pathlet_graph(net, trajs), cfg.scalarizer,
                       record_trace=True)
        env.reset()
        try:
            results = run_forced(env, script)
        except KeyError as exc:
            raise CliError("E_RUNTIME", f"forced action not applicable: {exc}") from exc
        dictionary, trace, used = env.dictionary(), env.trace, trajs
        write_csv(out / "returns.csv", ["iteration", "mean_return", "min_return", "max_return"],
                  [[0, *([sum(r.reward for r in results)] * 3)]])
    else:
        used, _ = split_records(cfg, trajs)
        template = build_initial_pathlet_graph(net, used)
        result = run_training(lambda: MergeEnv(cfg.env, template, record_trace=True),
                              cfg.train, cfg.scalarizer, policy=cfg.policy)
        dictionary, trace = result.dictionary, result.trace
        write_csv(out / "returns.csv", ["iteration", "mean_return", "min_return", "max_return"],
                  ([i, *r] for i, r in enumerate(result.returns)))
        if result.agent is not None:
            save_checkpoint(result.agent, out / "checkpoint.json")
    (out / "dictionary.json").write_text(dictionary.to_json() + "\n")
    write_trace(out / "trace.csv", trace)
    write_report(out, analysis.report(dictionary, used, cfg.env.variant))
    log.info("final dictionary: %d pathlets (%s)", len(dictionary.pathlets),
             dictionary.summary.get("termination_reason"))
    return 0


def run_evaluate(cfg: ExperimentConfig) -> int:
    net, trajs = load_inputs(cfg)
    out = _out_dir(cfg)
    dict_path = Path(cfg.paths.get("dictionary_file") or out / "dictionary.json")
    if not dict_path.is_file():
        raise CliError("E_MISSING_INPUT", f"dictionary not found: {dict_path}")
    try:
        dictionary = PathletDictionary.from_json(dict_path.read_text())
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError("E_INGEST", f"{dict_path}: malformed dictionary ({exc})") from exc
    train, held_out = split_records(cfg, trajs)
    curve = analysis.reconstruction_curve(dictionary, held_out, seed=cfg.train.rng_seed)
    write_csv(out / "curve.csv", ["x", "fraction"], curve.rows())
    write_report(out, analysis.report(dictionary, train, cfg.env.variant), "evaluate_report")
    for x, f in curve.rows():
        print(f"{x:.1f},{f:.6f}")
    return 0


def run_sweep(cfg: ExperimentConfig) -> int:
    grid = cfg.sweep.get("grid")
    if not grid:
        raise CliError("E_CONFIG", "sweep.grid is required in sweep mode")
    net, trajs = load_inputs(cfg)
    out = _out_dir(cfg)
    train, _ = split_records(cfg, trajs)
    template = build_initial_pathlet_graph(net, train)
    try:
        rows = analysis.sweep(grid, cfg.env, template, cfg.train, cfg.scalarizer,
                              policy=cfg.policy, trajectories=train)
    except ValueError as exc:
        raise CliError("E_CONFIG", str(exc)) from exc
    write_csv(out / "sweep.csv", ["parameter", "value", "size", "phi", "L_traj", "mu_bar"],
              ([r.parameter, r.value, *r.report.row().values()] for r in rows))
    hist = [{"parameter": r.parameter, "value": r.value,
             "length_histogram": {str(k): v for k, v in r.report.length_histogram.items()}}
            for r in rows]
    (out / "sweep_histograms.json").write_text(json.dumps(hist, indent=2) + "\n")
    return 0


def run_memory(cfg: ExperimentConfig) -> int:
    m = cfg.memory
    if "path_graph_edges" in m:
        net = analysis.path_graph(int(m["path_graph_edges"]))
    else:
        try:
            net = load_road_network(_input_path(cfg, "network_file"))
        except IngestionError as exc:
            raise CliError("E_INGEST", str(exc)) from exc
    try:
        counts = analysis.memory_comparison(net, m.get("k"), int(m.get("budget", 10_000_000)),
                                            m.get("bytes_per_record"))
    except analysis.MemoryBudgetExceeded as exc:
        raise CliError("E_BUDGET", str(exc)) from exc
    out = _out_dir(cfg)
    (out / "memory.json").write_text(json.dumps(counts, indent=2) + "\n")
    print(f"topdown {counts['topdown']}")
    print(f"bottomup {counts['bottomup']}")
    print(f"ratio {counts['ratio']:.6g}")
    return 0


def run_generate(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    try:
        net_path, traj_path = generate_world(cfg.world, out)
    except OSError as exc:
        raise CliError("E_IO", f"cannot write world files to {out}: {exc}") from exc
    except RuntimeError as exc:
        raise CliError("E_RUNTIME", str(exc)) from exc
    print(net_path)
    print(traj_path)
    return 0


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pathlets", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--seed", type=int, help="seed for environment, training and world generation")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--force-actions", metavar="PATH",
                    help="replay 'current,target' lines instead of training (train mode)")
    return ap


def _setup_logging() -> None:
    level = os.environ.get("PATHLET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0; argparse errors map to the usage code
        return 0 if not exc.code else EXIT_CODES["E_USAGE"]
    try:
        cfg = apply_overrides(load_config(args.config), args.mode, args.seed, args.out)
        if args.force_actions and cfg.mode != "train":
            raise CliError("E_USAGE", "--force-actions only applies to train mode")
        log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
        if cfg.mode == "train":
            return run_train(cfg, args.force_actions)
        return {"evaluate": run_evaluate, "sweep": run_sweep, "memory": run_memory,
                "generate": run_generate}[cfg.mode](cfg)
    except CliError as exc:
        print(json.dumps({"error": exc.code, "message": exc.message}), file=sys.stderr)
        return EXIT_CODES[exc.code]
    except OSError as exc:
        print(json.dumps({"error": "E_IO", "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES["E_IO"]


if __name__ == "__main__":
    sys.exit(main())
