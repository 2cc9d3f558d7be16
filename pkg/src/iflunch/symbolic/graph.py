"""Causal DAGs: text and JSON input, acyclicity, parents and ancestors."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Tuple


class NotIdentifiable(ValueError):
    """The estimand cannot be identified from the graph (reported as FAIL)."""


_EDGE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(->|<->)\s*([A-Za-z_][A-Za-z0-9_]*)\s*$")
_NODE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*$")


@dataclass(frozen=True)
class CausalGraph:
    """Directed acyclic graph over named variables.

    Node names are case-insensitive and stored in lower case, which is also
    how they appear in expressions.  ``bidirected`` marks latent confounding;
    such graphs load fine but every identification request on them fails.
    """

    nodes: Tuple[str, ...]
    edges: Tuple[Tuple[str, str], ...]
    bidirected: Tuple[Tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        raw = [str(n) for n in self.nodes]
        lowered = [n.lower() for n in raw]
        if len(set(lowered)) != len(lowered):
            raise ValueError(f"node names must be unique (case-insensitive): {raw}")
        nodes = tuple(sorted(lowered))
        known = set(nodes)
        edges = []
        for a, b in self.edges:
            a, b = str(a).lower(), str(b).lower()
            for v in (a, b):
                if v not in known:
                    raise ValueError(f"edge refers to unknown node {v!r}")
            if a == b:
                raise ValueError(f"self-loop on {a!r}")
            edges.append((a, b))
        bi = []
        for a, b in self.bidirected:
            a, b = str(a).lower(), str(b).lower()
            for v in (a, b):
                if v not in known:
                    raise ValueError(f"edge refers to unknown node {v!r}")
            bi.append(tuple(sorted((a, b))))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(sorted(set(edges))))
        object.__setattr__(self, "bidirected", tuple(sorted(set(bi))))
        self.topological_order()

    def parents(self, v: str) -> Tuple[str, ...]:
        v = v.lower()
        return tuple(sorted(a for a, b in self.edges if b == v))

    def topological_order(self) -> Tuple[str, ...]:
        indeg = {n: 0 for n in self.nodes}
        for _, b in self.edges:
            indeg[b] += 1
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for a, b in self.edges:
                if a == n:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        ready.append(b)
            ready.sort()
        if len(order) != len(self.nodes):
            raise ValueError("graph has a directed cycle")
        return tuple(order)

    def ancestors(self, targets: Iterable[str], cut: Iterable[str] = ()) -> set:
        """Ancestors of ``targets`` (inclusive) after removing edges into ``cut``."""
        cut = {c.lower() for c in cut}
        seen = set()
        stack = [t.lower() for t in targets]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if v in cut:
                continue
            stack.extend(self.parents(v))
        return seen

    def require(self, *names: str):
        for n in names:
            if n.lower() not in self.nodes:
                raise ValueError(f"unknown node {n!r}")

    def to_json(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges],
                "bidirected": [list(e) for e in self.bidirected]}


def parse_graph_text(text: str) -> CausalGraph:
    """Read ``A -> B`` (and ``A <-> B`` for latent confounding) lines.

    Blank lines and ``#`` comments are ignored; a line holding just a name
    declares an isolated node.
    """
    nodes, edges, bi = [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        m = _EDGE.match(line)
        if m:
            a, arrow, b = m.groups()
            (edges if arrow == "->" else bi).append((a, b))
            nodes += [a, b]
            continue
        m = _NODE.match(line)
        if m:
            nodes.append(m.group(1))
            continue
        raise ValueError(f"line {lineno}: cannot parse {line.strip()!r}")
    uniq = list(dict.fromkeys(n.lower() for n in nodes))
    return CausalGraph(tuple(uniq), tuple(edges), tuple(bi))


def graph_from_json(data) -> CausalGraph:
    if isinstance(data, str):
        data = json.loads(data)
    nodes = list(data.get("nodes", []))
    edges = [tuple(e) for e in data.get("edges", [])]
    bi = [tuple(e) for e in data.get("bidirected", [])]
    for a, b in edges + bi:
        nodes += [a, b]
    uniq = list(dict.fromkeys(str(n).lower() for n in nodes))
    return CausalGraph(tuple(uniq), tuple(edges), tuple(bi))


def load_graph(text: str) -> CausalGraph:
    """Parse either JSON or the edge-list text format."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return graph_from_json(stripped)
    return parse_graph_text(text)
