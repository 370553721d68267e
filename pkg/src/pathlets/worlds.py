"""Synthetic grid road networks, random-walk trajectories and train/test splits."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import RoadNetwork, TrajectoryRecord, natural_key, parse_trajectories


@dataclass
class SyntheticWorldSpec:
    """``grid_width`` x ``grid_height`` cells, i.e. (w+1)(h+1) intersections."""

    grid_width: int = 6
    grid_height: int = 6
    n_trajectories: int = 200
    walk_length_range: tuple = (3, 8)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.walk_length_range
        self.walk_length_range = (int(lo), int(hi))
        if self.grid_width < 1 or self.grid_height < 1:
            raise ValueError("grid dimensions must be positive")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be positive")
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid walk length range {self.walk_length_range}")


def grid_rows(width: int, height: int) -> list:
    """Edge rows of a grid with ``width`` x ``height`` cells; 2wh + w + h edges."""
    rows = []
    for y in range(height + 1):
        for x in range(width):
            rows.append((f"n{x}_{y}", f"n{x + 1}_{y}"))
    for x in range(width + 1):
        for y in range(height):
            rows.append((f"n{x}_{y}", f"n{x}_{y + 1}"))
    return [(f"e{i}", u, v) for i, (u, v) in enumerate(rows, start=1)]


def grid_network(width: int, height: int) -> RoadNetwork:
    return RoadNetwork.from_rows(grid_rows(width, height))


def random_walks(net: RoadNetwork, n: int, length_range: tuple, rng,
                 max_tries: int = 1000) -> list:
    """Node-self-avoiding random walks with lengths drawn uniformly from the range."""
    incident = net.incident()
    nodes = sorted(net.nodes, key=natural_key)
    lo, hi = length_range
    walks = []
    for _ in range(n):
        target = int(rng.integers(lo, hi + 1))
        for _attempt in range(max_tries):
            here = nodes[rng.integers(len(nodes))]
            visited = {here}
            edges = []
            while len(edges) < target:
                options = [e for e in incident[here] if net.other_end(e, here) not in visited]
                if not options:
                    break
                e = options[rng.integers(len(options))]
                here = net.other_end(e, here)
                visited.add(here)
                edges.append(e)
            if len(edges) == target:
                walks.append(edges)
                break
        else:
            raise RuntimeError(f"could not place a self-avoiding walk of length {target}")
    return walks


def network_text(net: RoadNetwork) -> str:
    lines = [f"{eid},{net.edges[eid].u},{net.edges[eid].v}" for eid in sorted(net.edges, key=natural_key)]
    return "\n".join(lines) + "\n"


def trajectories_text(pairs) -> str:
    """Serialize ``(traj_id, edge_seq)`` pairs or trajectory records."""
    lines = []
    for item in pairs:
        if isinstance(item, TrajectoryRecord):
            tid, seq = item.traj_id, item.edge_seq
        else:
            tid, seq = item
        lines.append(f"{tid}:{','.join(seq)}")
    return "\n".join(lines) + "\n"


def make_world(spec: SyntheticWorldSpec) -> tuple:
    """In-memory world: (network, [(traj_id, edge_seq), ...])."""
    net = grid_network(spec.grid_width, spec.grid_height)
    rng = np.random.default_rng(spec.seed)
    walks = random_walks(net, spec.n_trajectories, spec.walk_length_range, rng)
    return net, [(f"t{i}", w) for i, w in enumerate(walks, start=1)]


def generate_world(spec: SyntheticWorldSpec, out_dir) -> tuple:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net, trajs = make_world(spec)
    net_path = out_dir / "network.csv"
    traj_path = out_dir / "trajectories.txt"
    net_path.write_text(network_text(net))
    traj_path.write_text(trajectories_text(trajs))
    return net_path, traj_path


def _hash_key(seed: int, traj_id: str) -> str:
    return hashlib.sha256(f"{seed}:{traj_id}".encode()).hexdigest()


def split_ids(ids, fraction: float, seed: int) -> tuple:
    """Deterministic id-hash split into (train_ids, test_ids)."""
    ids = list(ids)
    if len(ids) < 2:
        raise ValueError("need at least two trajectories to split")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    n_train = int(round(fraction * len(ids)))
    if n_train in (0, len(ids)):
        raise ValueError(f"split of {len(ids)} trajectories at {fraction} leaves one side empty")
    ranked = sorted(ids, key=lambda t: _hash_key(seed, t))
    train = set(ranked[:n_train])
    return [t for t in ids if t in train], [t for t in ids if t not in train]


def split(traj_path, fraction: float, seed: int, out_dir=None) -> tuple:
    traj_path = Path(traj_path)
    pairs = parse_trajectories(traj_path.read_text())
    train_ids, test_ids = split_ids([tid for tid, _ in pairs], fraction, seed)
    lookup = dict(pairs)
    out_dir = traj_path.parent if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = out_dir / f"{traj_path.stem}.train.txt"
    test_path = out_dir / f"{traj_path.stem}.test.txt"
    train_path.write_text(trajectories_text((t, lookup[t]) for t in train_ids))
    test_path.write_text(trajectories_text((t, lookup[t]) for t in test_ids))
    return train_path, test_path
