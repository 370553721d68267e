"""Bottom-up pathlet merging as a reinforcement-learning environment.

One episode starts from the unit pathlet graph and repeatedly either keeps
the current pathlet (marking it processed) or merges it with one of its
unprocessed neighbours. Trajectories that stop traversing a constituent lose
that part of their representation; their representability is the covered
pathlet length over the initial pathlet length.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Pathlet, PathletGraph, natural_key
from .rewards import MetricSnapshot, Scalarizer, ScalarizerConfig, check_alphas

KEEP = 0
VARIANTS = ("standard", "NR", "UNW")
STATE_MODES = ("base", "enhanced")


class EnvUsageError(RuntimeError):
    pass


@dataclass
class EnvConfig:
    k: int = 10
    M: float = 0.25
    mu_threshold: float = 0.80
    alphas: tuple = (0.25, 0.25, 0.25, 0.25)
    variant: str = "standard"
    state_mode: str = "base"
    n_max_neighbors: int = 8
    rng_seed: int = 0
    normalize_reward_inputs: bool = True

    def __post_init__(self):
        self.alphas = check_alphas(self.alphas)
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if not 0.0 <= self.M <= 1.0:
            raise ValueError(f"M must lie in [0, 1], got {self.M}")
        if not 0.0 <= self.mu_threshold <= 1.0:
            raise ValueError(f"mu_threshold must lie in [0, 1], got {self.mu_threshold}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.state_mode not in STATE_MODES:
            raise ValueError(f"unknown state mode {self.state_mode!r}")
        if self.n_max_neighbors < 1:
            raise ValueError("n_max_neighbors must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        return d


@dataclass(frozen=True)
class EnvState:
    S1: int
    S2: float
    S3: float
    S4: float
    current: str | None = None
    current_weight: float | None = None
    neighbor_weights: tuple | None = None


@dataclass
class StepResult:
    observation: EnvState
    reward: float
    done: bool
    info: dict


@dataclass
class PathletDictionary:
    """Final pathlets with their traversal sets, plus the episode summary."""

    pathlets: list
    summary: dict
    representability: dict = field(default_factory=dict)  # traj_id -> [covered, initial]

    def by_id(self) -> dict:
        return {p["pathlet_id"]: p for p in self.pathlets}

    def to_json(self) -> str:
        return json.dumps({"pathlets": self.pathlets, "summary": self.summary,
                           "representability": self.representability}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PathletDictionary":
        d = json.loads(text)
        return cls(d["pathlets"], d["summary"], d.get("representability", {}))


def join_pathlets(a: Pathlet, b: Pathlet):
    """Concatenate two pathlets at a shared endpoint.

    Returns ``(nodes, edges)`` or ``None`` when they share no endpoint.
    """
    if a.end_node == b.start_node:
        return a.nodes + b.nodes[1:], a.edge_seq + b.edge_seq
    if a.end_node == b.end_node:
        return a.nodes + b.nodes[-2::-1], a.edge_seq + b.edge_seq[::-1]
    if a.start_node == b.end_node:
        return b.nodes + a.nodes[1:], b.edge_seq + a.edge_seq
    if a.start_node == b.start_node:
        return a.nodes[::-1] + b.nodes[1:], a.edge_seq[::-1] + b.edge_seq
    return None


def merged_id(edges) -> str:
    return "+".join(sorted(edges, key=natural_key))


class MergeEnv:
    """Mutable pathlet graph driven by KEEP / MERGE-with-j-th-neighbour actions.

    Action 0 keeps the current pathlet. Action ``j >= 1`` merges with the
    j-th eligible neighbour (unprocessed, ordered by descending weight then
    id); when no such neighbour exists or the merge would break the length
    bound or path simplicity, the step is executed as a keep.
    """

    def __init__(self, config: EnvConfig, template: PathletGraph,
                 scalarizer: ScalarizerConfig | None = None, record_trace: bool = False):
        self.config = config
        self.template = template
        if scalarizer is None:
            scalarizer = ScalarizerConfig(alphas=config.alphas, M=config.M,
                                          mu_threshold=config.mu_threshold)
        self.scalarizer = Scalarizer(scalarizer)
        self.record_trace = record_trace
        self.n_actions = 1 + config.n_max_neighbors
        self.obs_dim = 4 if config.state_mode == "base" else 5 + config.n_max_neighbors
        self.graph: PathletGraph | None = None
        self.done = True
        self.trace: list = []

    # ------------------------------------------------------------------ reset

    def reset(self, seed: int | None = None) -> EnvState:
        if not self.template.pathlets:
            raise EnvUsageError("cannot start an episode on an empty pathlet graph")
        self.rng = np.random.default_rng(self.config.rng_seed if seed is None else seed)
        self.graph = self.template.copy()
        self.graph.processed.clear()
        if self.config.variant == "UNW":
            for p in self.graph.pathlets.values():
                p.weight = 1.0
        self._pool: list = sorted(self.graph.pathlets, key=natural_key)
        self._pool_pos = {pid: i for i, pid in enumerate(self._pool)}
        self.n_initial = len(self.graph.pathlets)
        self.n_total = self.graph.n_trajectories
        self.phi0 = self._raw_metrics()[1] or 1.0
        self.current = self._pool[self.rng.integers(len(self._pool))]
        self.done = False
        self.steps = 0
        self.termination_reason = None
        self.trace = []
        self._snap = self.snapshot()
        return self.observe()

    # ------------------------------------------------------------ bookkeeping

    def _pool_remove(self, pid: str) -> None:
        i = self._pool_pos.pop(pid)
        last = self._pool.pop()
        if last != pid:
            self._pool[i] = last
            self._pool_pos[last] = i

    def _pool_add(self, pid: str) -> None:
        self._pool_pos[pid] = len(self._pool)
        self._pool.append(pid)

    def _weight(self, pid: str) -> float:
        return self.graph.pathlets[pid].weight

    def _refresh_weight(self, p: Pathlet) -> None:
        if self.config.variant == "UNW":
            p.weight = 1.0
        else:
            self.graph.refresh_weight(p)

    @property
    def unprocessed(self) -> list:
        return sorted(self._pool, key=natural_key)

    def _raw_metrics(self) -> tuple:
        """(|S|, phi, L_traj, mu_bar) computed from the trajectory states."""
        alive = [t for t in self.graph.trajectories.values() if t.alive]
        n_total = self.graph.n_trajectories
        if alive:
            phi = sum(len(t.segments) for t in alive) / len(alive)
            mu_bar = math.fsum(t.covered_length / t.initial_pathlet_length for t in alive) / len(alive)
        else:
            phi = 0.0
            mu_bar = 0.0 if n_total else 1.0
        loss = (n_total - len(alive)) / n_total if n_total else 0.0
        return len(self.graph.pathlets), phi, loss, mu_bar

    def snapshot(self) -> MetricSnapshot:
        size, phi, loss, mu_bar = self._raw_metrics()
        if self.config.normalize_reward_inputs:
            return MetricSnapshot(size / self.n_initial, phi / self.phi0, loss, mu_bar)
        return MetricSnapshot(float(size), phi, loss, mu_bar)

    def observe(self) -> EnvState:
        size, phi, loss, mu_bar = self._raw_metrics()
        if self.config.state_mode == "base":
            return EnvState(size, phi, loss, mu_bar, self.current)
        if self.current is None:
            return EnvState(size, phi, loss, mu_bar, None, 0.0,
                            (0.0,) * self.config.n_max_neighbors)
        weights = [self._weight(q) for q in self.eligible_neighbors()]
        weights += [0.0] * (self.config.n_max_neighbors - len(weights))
        return EnvState(size, phi, loss, mu_bar, self.current,
                        self._weight(self.current), tuple(weights))

    def observation_vector(self, state: EnvState | None = None) -> np.ndarray:
        s = self.observe() if state is None else state
        vec = [s.S1 / self.n_initial, s.S2 / self.phi0, s.S3, s.S4]
        if self.config.state_mode == "enhanced":
            vec.append(s.current_weight)
            vec.extend(s.neighbor_weights)
        return np.asarray(vec, dtype=np.float64)

    # ------------------------------------------------------------- neighbours

    def eligible_neighbors(self, current: str | None = None) -> list:
        current = self.current if current is None else current
        g = self.graph
        cands = [q for q in g.neighbors(current) if q not in g.processed]
        cands.sort(key=lambda q: (-g.pathlets[q].weight, natural_key(q)))
        return cands[: self.config.n_max_neighbors]

    def can_merge(self, a_id: str, b_id: str) -> bool:
        a, b = self.graph.pathlets[a_id], self.graph.pathlets[b_id]
        if a.length + b.length > self.config.k:
            return False
        joined = join_pathlets(a, b)
        if joined is None:
            return False
        nodes = joined[0]
        return len(set(nodes)) == len(nodes)

    def valid_action_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_actions, dtype=bool)
        mask[KEEP] = True
        if self.done or self.current is None:
            return mask
        for j, q in enumerate(self.eligible_neighbors(), start=1):
            mask[j] = self.can_merge(self.current, q)
        return mask

    # ------------------------------------------------------------------- step

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EnvUsageError("step() called on a finished episode; call reset()")
        action = int(action)
        if action < 0:
            raise ValueError(f"action must be nonnegative, got {action}")
        prev = self._snap
        valid = True
        merged = None
        exhausted = False
        if action == KEEP:
            exhausted = self._keep()
        else:
            elig = self.eligible_neighbors()
            target = elig[action - 1] if action - 1 < len(elig) else None
            if target is not None and self.can_merge(self.current, target):
                merged = self._merge(self.current, target)
            else:
                valid = False
                exhausted = self._keep()
        self.steps += 1
        self._snap = self.snapshot()
        size, phi, loss, mu_bar = self._raw_metrics()
        reason = None
        if loss > self.config.M:
            reason = "loss_exceeded"
        elif mu_bar < self.config.mu_threshold:
            reason = "mu_below"
        elif exhausted:
            reason = "exhausted"
        self.done = reason is not None
        self.termination_reason = reason
        reward = self.scalarizer(prev, self._snap, self.done)
        obs = self.observe()
        info = {"action_was_valid": valid, "merged_id": merged, "termination_reason": reason}
        if self.record_trace:
            self.trace.append({"step": self.steps, "action": action, "valid": valid,
                               "S1": size, "S2": phi, "S3": loss, "S4": mu_bar,
                               "reward": reward, "termination_reason": reason or ""})
        return StepResult(obs, reward, self.done, info)

    def _keep(self) -> bool:
        """Mark the current pathlet processed; returns True when none remain."""
        self.graph.processed.add(self.current)
        self._pool_remove(self.current)
        if not self._pool:
            self.current = None
            return True
        self.current = self._pool[self.rng.integers(len(self._pool))]
        return False

    def _merge(self, a_id: str, b_id: str) -> str:
        g = self.graph
        a, b = g.pathlets[a_id], g.pathlets[b_id]
        nodes, edges = join_pathlets(a, b)
        new_id = merged_id(edges)
        nr = self.config.variant == "NR"
        pair = (a_id, b_id)
        touched: set = set()
        traversal: set = set()
        for tid in sorted(a.traversal_set | b.traversal_set, key=natural_key):
            t = g.trajectories[tid]
            segs = t.segments
            kept = []
            lost = 0
            joined = False
            i = 0
            while i < len(segs):
                pid, s, e = segs[i]
                if pid in pair:
                    if i + 1 < len(segs):
                        nid, ns, ne = segs[i + 1]
                        if nid in pair and nid != pid and ns == e:
                            kept.append([new_id, s, ne])
                            joined = True
                            i += 2
                            continue
                    lost += e - s
                else:
                    kept.append(segs[i])
                i += 1
            if lost and nr:
                for pid, _, _ in kept:
                    if pid != new_id:
                        other = g.pathlets[pid]
                        other.traversal_set.discard(tid)
                        touched.add(pid)
                t.kill()
                continue
            t.segments = kept
            t.covered_length -= lost
            if t.covered_length == 0:
                t.kill()
            elif joined:
                traversal.add(tid)
        for pid in pair:
            g.remove(pid)
            self._pool_remove(pid)
        p = Pathlet(new_id, edges, nodes, traversal)
        self._refresh_weight(p)
        g.add(p)
        self._pool_add(new_id)
        for pid in touched:
            self._refresh_weight(g.pathlets[pid])
        self.current = new_id
        return new_id

    # ------------------------------------------------------------ test hooks

    def set_current(self, pathlet_id: str) -> None:
        """Force the current pathlet (replay of scripted episodes)."""
        if self.done:
            raise EnvUsageError("episode is finished")
        if pathlet_id not in self.graph.pathlets or pathlet_id in self.graph.processed:
            raise KeyError(f"{pathlet_id!r} is not a live unprocessed pathlet")
        self.current = pathlet_id

    def action_for(self, neighbor_id: str | None) -> int:
        if neighbor_id is None:
            return KEEP
        elig = self.eligible_neighbors()
        if neighbor_id not in elig:
            raise KeyError(f"{neighbor_id!r} is not an eligible neighbour of {self.current!r}")
        return elig.index(neighbor_id) + 1

    # ---------------------------------------------------------------- output

    def dictionary(self) -> PathletDictionary:
        g = self.graph
        size, phi, loss, mu_bar = self._raw_metrics()
        pathlets = [g.pathlets[pid].to_dict() for pid in sorted(g.pathlets, key=natural_key)]
        summary = {"S1": size, "phi": phi, "L_traj": loss, "mu_bar": mu_bar,
                   "termination_reason": self.termination_reason,
                   "config": self.config.to_dict()}
        rep = {tid: [t.covered_length, t.initial_pathlet_length]
               for tid, t in sorted(g.trajectories.items(), key=lambda kv: natural_key(kv[0]))}
        return PathletDictionary(pathlets, summary, rep)


def run_forced(env: MergeEnv, script, keep_rest: bool = True) -> list:
    """Replay ``(current, neighbour-or-None)`` pairs, then keep until done.

    Returns the list of :class:`StepResult`.
    """
    results = []
    for current, target in script:
        if env.done:
            break
        env.set_current(current)
        results.append(env.step(env.action_for(target)))
    while keep_rest and not env.done:
        results.append(env.step(KEEP))
    return results


def parse_forced_script(text: str) -> list:
    """Lines ``current,target`` where target ``KEEP`` (or empty) keeps."""
    script = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) == 1:
            parts.append("KEEP")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'current,target', got {raw!r}")
        current, target = parts
        script.append((current, None if target.upper() in ("", "KEEP") else target))
    return script
