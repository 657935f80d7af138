"""Word lattices: DAGs of competing recognition hypotheses.

A node carries one word hypothesis (word id, posterior, acoustic and
language-model scores, duration); directed edges connect consecutive
hypotheses. Valid lattices are acyclic, have a unique entry and exit
node, and every node lies on some entry-to-exit path.

Text file format, one item per line, nodes first:

    word_id posterior am_score lm_score duration_s      (5 fields)
    from_index to_index                                 (2 fields)
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingFileError


@dataclass
class LatticeNode:
    word_id: int
    posterior: float
    am_score: float
    lm_score: float
    duration_s: float

    def __post_init__(self):
        self.word_id = int(self.word_id)
        if self.word_id < 0:
            raise FormatError(f"format error: negative word_id {self.word_id}")
        if not 0.0 <= self.posterior <= 1.0:
            raise FormatError(f"format error: posterior {self.posterior} outside [0, 1]")
        if self.duration_s < 0.0:
            raise FormatError(f"format error: negative node duration {self.duration_s}")
        if not (np.isfinite(self.am_score) and np.isfinite(self.lm_score)):
            raise FormatError("format error: non-finite node scores")


@dataclass
class Lattice:
    nodes: list[LatticeNode]
    edges: list[tuple[int, int]]
    start: int = field(default=-1)
    end: int = field(default=-1)

    def __post_init__(self):
        # -1 sentinels mean "derive from edge degrees"
        if self.start < 0 or self.end < 0:
            self.start, self.end = _derive_endpoints(len(self.nodes), self.edges)
        validate_lattice(self)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


def _derive_endpoints(n: int, edges: list[tuple[int, int]]) -> tuple[int, int]:
    in_deg = [0] * n
    out_deg = [0] * n
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise FormatError(f"format error: edge ({u}, {v}) references a missing node")
        out_deg[u] += 1
        in_deg[v] += 1
    starts = [i for i in range(n) if in_deg[i] == 0]
    ends = [i for i in range(n) if out_deg[i] == 0]
    if len(starts) != 1 or len(ends) != 1:
        raise FormatError(
            f"format error: lattice needs exactly one entry and one exit node, "
            f"found {len(starts)} and {len(ends)}"
        )
    return starts[0], ends[0]


def validate_lattice(lat: Lattice) -> None:
    """Enforce the DAG + unique-endpoints + full-coverage invariants."""
    n = len(lat.nodes)
    if n == 0:
        raise FormatError("format error: empty lattice")
    if not (0 <= lat.start < n and 0 <= lat.end < n):
        raise FormatError("format error: start/end index out of range")

    succ: list[list[int]] = [[] for _ in range(n)]
    pred: list[list[int]] = [[] for _ in range(n)]
    in_deg = [0] * n
    for u, v in lat.edges:
        if not (0 <= u < n and 0 <= v < n):
            raise FormatError(f"format error: edge ({u}, {v}) references a missing node")
        if u == v:
            raise FormatError(f"format error: self-loop at node {u}")
        succ[u].append(v)
        pred[v].append(u)
        in_deg[v] += 1

    if in_deg[lat.start] != 0:
        raise FormatError("format error: entry node has incoming edges")
    if succ[lat.end]:
        raise FormatError("format error: exit node has outgoing edges")

    # Kahn's algorithm: anything left over sits on a cycle
    queue = deque(i for i in range(n) if in_deg[i] == 0)
    remaining = list(in_deg)
    seen = 0
    while queue:
        u = queue.popleft()
        seen += 1
        for v in succ[u]:
            remaining[v] -= 1
            if remaining[v] == 0:
                queue.append(v)
    if seen != n:
        raise FormatError("format error: lattice contains a cycle")

    reachable = _bfs(lat.start, succ)
    co_reachable = _bfs(lat.end, pred)
    for i in range(n):
        if not (reachable[i] and co_reachable[i]):
            raise FormatError(f"format error: node {i} is not on any entry-to-exit path")


def _bfs(root: int, adj: list[list[int]]) -> list[bool]:
    seen = [False] * len(adj)
    seen[root] = True
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def save_lattice(lat: Lattice, path: str | Path) -> None:
    lines = []
    for node in lat.nodes:
        lines.append(
            f"{node.word_id} {node.posterior:.6f} {node.am_score:.6f} "
            f"{node.lm_score:.6f} {node.duration_s:.6f}"
        )
    for u, v in lat.edges:
        lines.append(f"{u} {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_lattice(path: str | Path) -> Lattice:
    if not Path(path).is_file():
        raise MissingFileError(f"missing file: {path}")
    nodes: list[LatticeNode] = []
    edges: list[tuple[int, int]] = []
    seen_edge = False
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) == 5:
            if seen_edge:
                raise FormatError(f"format error: node after edges at {path}:{lineno}")
            try:
                nodes.append(
                    LatticeNode(
                        int(fields[0]),
                        float(fields[1]),
                        float(fields[2]),
                        float(fields[3]),
                        float(fields[4]),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"format error: bad node line at {path}:{lineno}") from exc
        elif len(fields) == 2:
            seen_edge = True
            try:
                edges.append((int(fields[0]), int(fields[1])))
            except ValueError as exc:
                raise FormatError(f"format error: bad edge line at {path}:{lineno}") from exc
        else:
            raise FormatError(
                f"format error: expected 5 node fields or 2 edge fields at {path}:{lineno}"
            )
    if not nodes:
        raise FormatError(f"format error: no nodes in {path}")
    return Lattice(nodes, edges)
