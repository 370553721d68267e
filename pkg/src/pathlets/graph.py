"""Road networks, unit pathlets and trajectory representations.

A road network is an undirected multigraph of intersections joined by
segments with unique ids. The initial pathlet graph holds one length-1
pathlet per segment; trajectories are map-matched walks over segment ids.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable


class IngestionError(ValueError):
    """Malformed or inconsistent network / trajectory input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def natural_key(token: str):
    """Sort key that orders ``e2`` before ``e10``."""
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", str(token))]


@dataclass(frozen=True)
class Segment:
    edge_id: str
    u: str
    v: str


@dataclass
class RoadNetwork:
    nodes: set
    edges: dict  # edge_id -> Segment

    def __post_init__(self):
        for seg in self.edges.values():
            if seg.u == seg.v:
                raise IngestionError(f"edge {seg.edge_id!r} is a self-loop")
            if seg.u not in self.nodes or seg.v not in self.nodes:
                raise IngestionError(f"edge {seg.edge_id!r} has an unknown endpoint")

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, str]]) -> "RoadNetwork":
        nodes: set = set()
        edges: dict = {}
        for edge_id, u, v in rows:
            if edge_id in edges:
                raise IngestionError(f"duplicate edge id {edge_id!r}")
            if u == v:
                raise IngestionError(f"edge {edge_id!r} is a self-loop")
            edges[edge_id] = Segment(edge_id, u, v)
            nodes.update((u, v))
        return cls(nodes, edges)

    def incident(self) -> dict:
        """Map node -> list of incident edge ids (natural order)."""
        out: dict = {n: [] for n in self.nodes}
        for eid in sorted(self.edges, key=natural_key):
            seg = self.edges[eid]
            out[seg.u].append(eid)
            out[seg.v].append(eid)
        return out

    def other_end(self, edge_id: str, node: str) -> str:
        seg = self.edges[edge_id]
        if node == seg.u:
            return seg.v
        if node == seg.v:
            return seg.u
        raise KeyError(f"{node!r} is not an endpoint of {edge_id!r}")


def parse_road_network(text: str) -> RoadNetwork:
    """Parse ``edge_id,node_u,node_v`` rows; ``#`` starts a comment line."""
    rows = []
    seen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or not all(parts):
            raise IngestionError(f"expected 'edge_id,node_u,node_v', got {raw!r}", lineno)
        edge_id, u, v = parts
        if edge_id in seen:
            raise IngestionError(
                f"duplicate edge id {edge_id!r} (first seen on line {seen[edge_id]})", lineno
            )
        if u == v:
            raise IngestionError(f"edge {edge_id!r} is a self-loop", lineno)
        seen[edge_id] = lineno
        rows.append((edge_id, u, v))
    return RoadNetwork.from_rows(rows)


def load_road_network(path) -> RoadNetwork:
    return parse_road_network(Path(path).read_text())


def parse_trajectories(text: str) -> list[tuple[str, list[str]]]:
    """Parse ``traj_id:e1,e2,...`` lines into (traj_id, edge_seq) pairs."""
    out = []
    ids: set = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise IngestionError(f"expected 'traj_id:edge,edge,...', got {raw!r}", lineno)
        tid, _, body = line.partition(":")
        tid = tid.strip()
        seq = [e.strip() for e in body.split(",")]
        if not tid or not seq or not all(seq):
            raise IngestionError(f"empty trajectory id or edge token in {raw!r}", lineno)
        if tid in ids:
            raise IngestionError(f"duplicate trajectory id {tid!r}", lineno)
        ids.add(tid)
        out.append((tid, seq))
    return out


def load_trajectories(path, net: RoadNetwork | None = None) -> list["TrajectoryRecord"]:
    return trajectories_from_text(Path(path).read_text(), net)


def trajectories_from_text(text: str, net: RoadNetwork | None = None) -> list["TrajectoryRecord"]:
    records = [TrajectoryRecord(tid, seq) for tid, seq in parse_trajectories(text)]
    if net is not None:
        for rec in records:
            walk_nodes(net, rec.edge_seq, rec.traj_id)
    return records


def walk_nodes(net: RoadNetwork, edge_seq: list[str], traj_id: str = "?") -> list[str]:
    """Node sequence of a contiguous walk; raises if the walk is broken."""
    for eid in edge_seq:
        if eid not in net.edges:
            raise IngestionError(f"trajectory {traj_id!r} references unknown edge {eid!r}")
    first = net.edges[edge_seq[0]]
    if len(edge_seq) == 1:
        return [first.u, first.v]
    nxt = net.edges[edge_seq[1]]
    # orient the first edge so that its far end touches the second edge
    if first.v in (nxt.u, nxt.v):
        nodes = [first.u, first.v]
    elif first.u in (nxt.u, nxt.v):
        nodes = [first.v, first.u]
    else:
        raise IngestionError(f"trajectory {traj_id!r} is not contiguous at position 1")
    for pos, eid in enumerate(edge_seq[1:], start=1):
        seg = net.edges[eid]
        here = nodes[-1]
        if here == seg.u:
            nodes.append(seg.v)
        elif here == seg.v:
            nodes.append(seg.u)
        else:
            raise IngestionError(f"trajectory {traj_id!r} is not contiguous at position {pos}")
    return nodes


@dataclass
class Pathlet:
    pathlet_id: str
    edge_seq: list
    nodes: list  # node sequence, len(edge_seq) + 1
    traversal_set: set = field(default_factory=set)
    weight: float = 0.0

    @property
    def start_node(self) -> str:
        return self.nodes[0]

    @property
    def end_node(self) -> str:
        return self.nodes[-1]

    @property
    def length(self) -> int:
        return len(self.edge_seq)

    def copy(self) -> "Pathlet":
        return Pathlet(self.pathlet_id, list(self.edge_seq), list(self.nodes),
                       set(self.traversal_set), self.weight)

    def to_dict(self) -> dict:
        return {
            "pathlet_id": self.pathlet_id,
            "edge_seq": list(self.edge_seq),
            "start_node": self.start_node,
            "end_node": self.end_node,
            "length": self.length,
            "traversal_traj_ids": sorted(self.traversal_set, key=natural_key),
            "weight": self.weight,
        }


class TrajectoryRecord:
    """A map-matched trajectory and its live pathlet-based representation.

    The representation is kept as segments ``[pathlet_id, start, end]``
    over positions of ``edge_seq`` so that gaps left by lost pathlets are
    visible when deciding whether two constituents are traversed back to back.
    """

    __slots__ = ("traj_id", "edge_seq", "initial_pathlet_length", "segments",
                 "covered_length", "alive")

    def __init__(self, traj_id: str, edge_seq: list[str]):
        if not edge_seq:
            raise IngestionError(f"trajectory {traj_id!r} is empty")
        self.traj_id = traj_id
        self.edge_seq = list(edge_seq)
        self.initial_pathlet_length = len(self.edge_seq)
        self.segments = [[eid, i, i + 1] for i, eid in enumerate(self.edge_seq)]
        self.covered_length = self.initial_pathlet_length
        self.alive = True

    @property
    def representation(self) -> list[str]:
        return [s[0] for s in self.segments]

    @property
    def mu_exact(self) -> Fraction:
        return Fraction(self.covered_length, self.initial_pathlet_length)

    @property
    def representability(self) -> float:
        return self.covered_length / self.initial_pathlet_length

    def kill(self) -> None:
        self.segments = []
        self.covered_length = 0
        self.alive = False

    def copy(self) -> "TrajectoryRecord":
        new = TrajectoryRecord.__new__(TrajectoryRecord)
        new.traj_id = self.traj_id
        new.edge_seq = self.edge_seq  # never mutated
        new.initial_pathlet_length = self.initial_pathlet_length
        new.segments = [list(s) for s in self.segments]
        new.covered_length = self.covered_length
        new.alive = self.alive
        return new

    def __repr__(self):
        return (f"TrajectoryRecord({self.traj_id!r}, mu={self.mu_exact}, "
                f"rep={self.representation})")


class PathletGraph:
    """Live pathlets, their node incidence, the processed set and trajectories."""

    def __init__(self, pathlets: dict, trajectories: dict):
        self.pathlets: dict = pathlets
        self.trajectories: dict = trajectories
        self.n_trajectories = len(trajectories)
        self.processed: set = set()
        self.node_index: dict = {}
        for p in pathlets.values():
            self._index(p)

    def _index(self, p: Pathlet) -> None:
        self.node_index.setdefault(p.start_node, set()).add(p.pathlet_id)
        self.node_index.setdefault(p.end_node, set()).add(p.pathlet_id)

    def _unindex(self, p: Pathlet) -> None:
        for node in (p.start_node, p.end_node):
            bucket = self.node_index.get(node)
            if bucket is not None:
                bucket.discard(p.pathlet_id)
                if not bucket:
                    del self.node_index[node]

    def add(self, p: Pathlet) -> None:
        self.pathlets[p.pathlet_id] = p
        self._index(p)

    def remove(self, pathlet_id: str) -> Pathlet:
        p = self.pathlets.pop(pathlet_id)
        self._unindex(p)
        self.processed.discard(pathlet_id)
        return p

    def refresh_weight(self, p: Pathlet) -> None:
        n = self.n_trajectories
        p.weight = len(p.traversal_set) / n if n else 0.0

    def neighbors(self, pathlet_id: str) -> set:
        if pathlet_id not in self.pathlets:
            raise KeyError(f"pathlet {pathlet_id!r} is not live")
        p = self.pathlets[pathlet_id]
        out = set(self.node_index.get(p.start_node, ())) | set(self.node_index.get(p.end_node, ()))
        out.discard(pathlet_id)
        return out

    def copy(self) -> "PathletGraph":
        new = PathletGraph.__new__(PathletGraph)
        new.pathlets = {pid: p.copy() for pid, p in self.pathlets.items()}
        new.trajectories = {tid: t.copy() for tid, t in self.trajectories.items()}
        new.n_trajectories = self.n_trajectories
        new.processed = set(self.processed)
        new.node_index = {n: set(b) for n, b in self.node_index.items()}
        return new

    def covered_edges(self) -> list:
        return [e for p in self.pathlets.values() for e in p.edge_seq]


def neighbors(g: PathletGraph, pathlet_id: str) -> set:
    return g.neighbors(pathlet_id)


def build_initial_pathlet_graph(net: RoadNetwork, trajs: Iterable[TrajectoryRecord]) -> PathletGraph:
    trajs = list(trajs)
    pathlets = {}
    for eid in sorted(net.edges, key=natural_key):
        seg = net.edges[eid]
        pathlets[eid] = Pathlet(eid, [eid], [seg.u, seg.v])
    by_id = {}
    for t in trajs:
        if t.traj_id in by_id:
            raise IngestionError(f"duplicate trajectory id {t.traj_id!r}")
        walk_nodes(net, t.edge_seq, t.traj_id)
        by_id[t.traj_id] = t
        for eid in t.edge_seq:
            pathlets[eid].traversal_set.add(t.traj_id)
    g = PathletGraph(pathlets, by_id)
    for p in pathlets.values():
        g.refresh_weight(p)
    return g
