"""Dictionary metrics, held-out reconstruction, path-count memory estimates and sweeps.

Everything here recomputes from the raw trajectories and the final pathlet
partition; nothing reads the environment's incremental bookkeeping, which
makes :func:`report` usable as an oracle for the environment.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .env import EnvConfig, MergeEnv, PathletDictionary
from .graph import PathletGraph, RoadNetwork, natural_key
from .rewards import ScalarizerConfig

MU_CUTOFF = 0.75
SAMPLE_FRACTIONS = tuple(i / 10 for i in range(1, 11))
SWEEPABLE = ("alpha1", "alpha2", "alpha3", "alpha4", "k", "mu_threshold", "M")


class MemoryBudgetExceeded(RuntimeError):
    """Raised instead of silently truncating a path enumeration."""


# ----------------------------------------------------------------- tiling

def _edge_owner(pathlets) -> dict:
    owner = {}
    for p in pathlets:
        seq = tuple(p["edge_seq"])
        for e in seq:
            owner[e] = seq
    return owner


def tile(edge_seq, owner: dict) -> tuple:
    """Greedy left-to-right tiling of a trajectory by whole pathlets.

    A pathlet covers positions ``i..i+l-1`` when the trajectory runs through
    it end to end in either direction. Returns ``(covered_edges, n_segments)``.
    Pathlets are edge-disjoint, so the tiling is unique.
    """
    covered = segments = 0
    i, n = 0, len(edge_seq)
    while i < n:
        seq = owner.get(edge_seq[i])
        if seq is not None:
            l = len(seq)
            window = tuple(edge_seq[i:i + l])
            if window == seq or window == seq[::-1]:
                covered += l
                segments += 1
                i += l
                continue
        i += 1
    return covered, segments


# ----------------------------------------------------------------- report

@dataclass
class DictionaryReport:
    size: int
    phi: float
    loss: float
    mu_bar: float | None  # None for the no-representability-loss variant
    length_histogram: dict
    config_echo: dict = field(default_factory=dict)
    mu: dict = field(default_factory=dict)  # traj_id -> Fraction, alive only

    def row(self) -> dict:
        return {"size": self.size, "phi": self.phi, "loss": self.loss,
                "mu_bar": "n/a" if self.mu_bar is None else self.mu_bar}


def _as_pairs(trajectories) -> list:
    out = []
    for t in trajectories:
        if hasattr(t, "edge_seq"):
            out.append((t.traj_id, list(t.edge_seq)))
        else:
            out.append((t[0], list(t[1])))
    return out


def report(dictionary: PathletDictionary, trajectories, variant: str | None = None) -> DictionaryReport:
    """Recompute |S|, phi, trajectory loss and mean representability from scratch.

    Standard and UNW runs keep a trajectory alive while any of it is covered;
    NR runs keep only fully covered trajectories and report no mean
    representability.
    """
    cfg = dictionary.summary.get("config", {})
    variant = variant or cfg.get("variant", "standard")
    owner = _edge_owner(dictionary.pathlets)
    pairs = _as_pairs(trajectories)
    mu = {}
    seg_counts = []
    for tid, seq in pairs:
        covered, segs = tile(seq, owner)
        alive = covered == len(seq) if variant == "NR" else covered > 0
        if alive:
            mu[tid] = Fraction(covered, len(seq))
            seg_counts.append(segs)
    n_total = len(pairs)
    if mu:
        phi = sum(seg_counts) / len(seg_counts)
        mu_bar = math.fsum(float(m) for m in mu.values()) / len(mu)
    else:
        phi = 0.0
        mu_bar = 0.0 if n_total else 1.0
    loss = (n_total - len(mu)) / n_total if n_total else 0.0
    hist = Counter(len(p["edge_seq"]) for p in dictionary.pathlets)
    return DictionaryReport(
        size=len(dictionary.pathlets), phi=phi, loss=loss,
        mu_bar=None if variant == "NR" else mu_bar,
        length_histogram=dict(sorted(hist.items())), config_echo=cfg, mu=mu)


# --------------------------------------------------------- reconstruction

@dataclass
class ReconstructionCurve:
    sample_fractions: list
    reconstructable_fraction: list
    mu_cutoff: float = MU_CUTOFF
    seed: int = 0

    def rows(self) -> list:
        return list(zip(self.sample_fractions, self.reconstructable_fraction))


def reconstruction_curve(dictionary: PathletDictionary, held_out, seed: int = 0,
                         mu_cutoff: float = MU_CUTOFF,
                         fractions=SAMPLE_FRACTIONS) -> ReconstructionCurve:
    """Share of held-out trajectories with mu >= cutoff against nested pathlet samples."""
    pairs = _as_pairs(held_out)
    if not pairs:
        raise ValueError("held-out trajectory set is empty")
    pathlets = sorted(dictionary.pathlets, key=lambda p: natural_key(p["pathlet_id"]))
    order = np.random.default_rng(seed).permutation(len(pathlets))
    out = []
    for x in fractions:
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"sample fraction {x} outside [0, 1]")
        n = math.floor(x * len(pathlets) + 1e-9)
        owner = _edge_owner(pathlets[i] for i in order[:n])
        hits = sum(1 for _, seq in pairs
                   if Fraction(tile(seq, owner)[0], len(seq)) >= Fraction(mu_cutoff))
        out.append(hits / len(pairs))
    return ReconstructionCurve(list(fractions), out, mu_cutoff, seed)


# ----------------------------------------------------------------- memory

def memory_estimate_bottomup(net: RoadNetwork) -> int:
    return len(net.edges)


def memory_estimate_topdown(net: RoadNetwork, k: int | None = None,
                            budget: int = 10_000_000) -> int:
    """Number of distinct simple paths with 1..k edges, by depth-first enumeration.

    Each undirected path is found once from each end, hence the halving.
    """
    incident = net.incident()
    limit = math.inf if k is None else k
    count = 0
    for start in sorted(net.nodes, key=natural_key):
        visited = {start}
        stack = [(start, iter(incident[start]), 0)]
        while stack:
            node, edges, depth = stack[-1]
            e = next(edges, None)
            if e is None:
                stack.pop()
                visited.discard(node)
                continue
            nxt = net.other_end(e, node)
            if nxt in visited:
                continue
            count += 1
            if count > 2 * budget:
                raise MemoryBudgetExceeded(
                    f"more than {budget} candidate paths; raise the budget or bound k")
            if depth + 1 < limit:
                visited.add(nxt)
                stack.append((nxt, iter(incident[nxt]), depth + 1))
    return count // 2


def adjacency_matrix(net: RoadNetwork) -> tuple:
    nodes = sorted(net.nodes, key=natural_key)
    index = {v: i for i, v in enumerate(nodes)}
    A = np.zeros((len(nodes), len(nodes)), dtype=np.int64)
    for seg in net.edges.values():
        A[index[seg.u], index[seg.v]] += 1
        A[index[seg.v], index[seg.u]] += 1
    return A, nodes


def walk_count(net: RoadNetwork, length: int) -> int:
    """Walks of exactly ``length`` edges between distinct endpoints, unordered.

    Half the off-diagonal mass of A^length. Equals the simple-path count for
    length <= 2 and over-counts beyond, where walks may revisit nodes.
    """
    A, _ = adjacency_matrix(net)
    P = np.linalg.matrix_power(A, length)
    return int((P.sum() - np.trace(P)) // 2)


def simple_path_count_matrix(net: RoadNetwork, k: int | None = None) -> int:
    """Simple-path count via repeated multiplication in the path algebra.

    Entry (i, j) of the l-th power holds the node sequences of the simple
    i-to-j paths with l edges; multiplying by the adjacency drops any
    extension that revisits a node.
    """
    A, nodes = adjacency_matrix(net)
    n = len(nodes)
    nbrs = [[(j, int(A[i, j])) for j in range(n) if A[i, j]] for i in range(n)]
    # frontier: (path node tuple) -> multiplicity from parallel edges
    frontier = Counter({(i,): 1 for i in range(n)})
    limit = n - 1 if k is None else min(k, n - 1)
    total = 0
    for _ in range(limit):
        nxt = Counter()
        for path, mult in frontier.items():
            for j, m in nbrs[path[-1]]:
                if j not in path:
                    nxt[path + (j,)] += mult * m
        total += sum(nxt.values())
        frontier = nxt
    return total // 2


def path_graph(n_edges: int) -> RoadNetwork:
    return RoadNetwork.from_rows((f"e{i}", f"v{i - 1}", f"v{i}") for i in range(1, n_edges + 1))


def memory_comparison(net: RoadNetwork, k: int | None = None, budget: int = 10_000_000,
                      bytes_per_record: float | None = None) -> dict:
    top = memory_estimate_topdown(net, k, budget)
    bottom = memory_estimate_bottomup(net)
    out = {"topdown": top, "bottomup": bottom, "ratio": top / bottom if bottom else math.inf}
    if bytes_per_record is not None:
        out["topdown_bytes"] = top * bytes_per_record
        out["bottomup_bytes"] = bottom * bytes_per_record
    return out


# ------------------------------------------------------------------ sweeps

@dataclass
class SweepRow:
    parameter: str
    value: float
    report: DictionaryReport
    dictionary: PathletDictionary
    mean_returns: list


def apply_sweep_value(config: EnvConfig, parameter: str, value) -> EnvConfig:
    """Copy of ``config`` with one swept parameter set.

    Sweeping alpha_i puts the remaining mass (1 - alpha_i) evenly on the
    other three objectives.
    """
    if parameter not in SWEEPABLE:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {SWEEPABLE}")
    if parameter.startswith("alpha"):
        a = float(value)
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"{parameter} = {a} outside [0, 1]")
        i = int(parameter[-1]) - 1
        alphas = [(1.0 - a) / 3.0] * 4
        alphas[i] = a
        return replace(config, alphas=tuple(alphas))
    if parameter == "k":
        return replace(config, k=int(value))
    return replace(config, **{parameter: float(value)})


def sweep(grid: dict, base: EnvConfig, template: PathletGraph, train_config,
          scalarizer: ScalarizerConfig | None = None, policy: str = "dqn",
          trajectories=None) -> list:
    """Train one run per grid cell and report each final dictionary.

    ``grid`` maps a parameter name to the values to try; several names form
    a Cartesian product. Every cell reuses the same training seed, so rows
    are reproducible independently of each other.
    """
    from .dqn import run_training

    names = list(grid)
    if sum(n.startswith("alpha") for n in names) > 1:
        raise ValueError("sweep at most one alpha at a time")
    cells = list(itertools.product(*(grid[n] for n in names)))
    if not cells or any(len(grid[n]) == 0 for n in names):
        raise ValueError("empty sweep grid")
    trajs = trajectories if trajectories is not None else list(template.trajectories.values())
    base_sc = scalarizer or ScalarizerConfig()
    rows = []
    for cell in cells:
        cfg = base
        for name, value in zip(names, cell):
            cfg = apply_sweep_value(cfg, name, value)
        sc = replace(base_sc, alphas=cfg.alphas, M=cfg.M, mu_threshold=cfg.mu_threshold)
        result = run_training(lambda: MergeEnv(cfg, template), train_config, sc, policy=policy)
        rep = report(result.dictionary, trajs, cfg.variant)
        label = "x".join(names)
        value = cell[0] if len(cell) == 1 else cell
        rows.append(SweepRow(label, value, rep, result.dictionary, result.mean_returns))
    return rows
