"""Sub-question DAG: wire format, validation and execution order.

Edges point from a parent question to the child sub-questions it depends on.
A parent is answered only after all of its children, so
:func:`execution_order` yields children first and the root last.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, ClassVar

from .errors import CycleDetected, Unparseable
from .prompts import extract_tagged_block, parse_structured_lenient

ROOT_ID = "root"
QUESTION = "question"
SUB_QUESTION = "sub-question"

INITIAL_NODE_LIMIT = 6
REFINED_NODE_LIMIT = 8
DEPTH_LIMIT = 3


@dataclass
class PlanNode:
    id: str
    task: str
    node_type: str = SUB_QUESTION
    children: list[str] = field(default_factory=list)


@dataclass
class PlanningGraph:
    nodes: dict[str, PlanNode]
    edges: set[tuple[str, str]]
    revision: int = 0
    warnings: list[Violation] = field(default_factory=list, compare=False)

    @property
    def root(self) -> PlanNode:
        return self.nodes[ROOT_ID]

    def children(self, node_id: str) -> list[str]:
        return list(self.nodes[node_id].children)

    def to_wire(self) -> dict[str, Any]:
        edges = []
        for node in self.nodes.values():
            for child in node.children:
                edges.append({"from": node.id, "to": child})
        listed = {(e["from"], e["to"]) for e in edges}
        edges.extend({"from": a, "to": b} for a, b in sorted(self.edges - listed))
        return {
            "nodes": [
                {"id": n.id, "task": n.task, "type": n.node_type, "children": list(n.children)}
                for n in self.nodes.values()
            ],
            "edges": edges,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_wire(), indent=2, ensure_ascii=False)


@dataclass(frozen=True)
class Violation:
    fatal: ClassVar[bool] = True

    def __str__(self) -> str:
        fields = ", ".join(repr(v) for v in self.__dict__.values())
        return f"{type(self).__name__}({fields})"


@dataclass(frozen=True)
class CycleFound(Violation):
    nodes: tuple[str, ...]


@dataclass(frozen=True)
class DanglingEdge(Violation):
    node_id: str


@dataclass(frozen=True)
class DuplicateId(Violation):
    node_id: str


@dataclass(frozen=True)
class MissingRoot(Violation):
    pass


@dataclass(frozen=True)
class MisplacedRoot(Violation):
    """A question-typed node other than ``root``, or a root that is not question-typed."""

    node_id: str


@dataclass(frozen=True)
class RootHasParent(Violation):
    """The root is the original question, so nothing may list it as a child."""

    parent_id: str


@dataclass(frozen=True)
class DepthExceeded(Violation):
    fatal: ClassVar[bool] = False
    depth: int
    limit: int = DEPTH_LIMIT


@dataclass(frozen=True)
class NodeCountExceeded(Violation):
    fatal: ClassVar[bool] = False
    count: int
    limit: int


@dataclass(frozen=True)
class RefinementDeltaOutOfRange(Violation):
    fatal: ClassVar[bool] = False
    delta: int


@dataclass
class RawDag:
    """Parsed but unvalidated DAG, kept separate so duplicates can be reported."""

    nodes: list[PlanNode]
    edges: list[tuple[str, str]]


def parse_dag_object(data: Any) -> RawDag:
    if not isinstance(data, dict) or not isinstance(data.get("nodes"), list):
        raise Unparseable("DAG must be an object with a 'nodes' list")
    nodes = []
    for i, raw in enumerate(data["nodes"]):
        if not isinstance(raw, dict):
            raise Unparseable(f"nodes[{i}] is not an object")
        nid, task = raw.get("id"), raw.get("task")
        if not isinstance(nid, str) or not nid:
            raise Unparseable(f"nodes[{i}] has no string id")
        if not isinstance(task, str):
            raise Unparseable(f"node {nid!r} has no string task")
        children = raw.get("children", [])
        if not isinstance(children, list) or not all(isinstance(c, str) for c in children):
            raise Unparseable(f"node {nid!r}: children must be a list of ids")
        node_type = raw.get("type", QUESTION if nid == ROOT_ID else SUB_QUESTION)
        nodes.append(PlanNode(nid, task, str(node_type), list(dict.fromkeys(children))))
    edges = []
    for i, raw in enumerate(data.get("edges", []) or []):
        if not isinstance(raw, dict) or not isinstance(raw.get("from"), str) or not isinstance(raw.get("to"), str):
            raise Unparseable(f"edges[{i}] must be {{'from': id, 'to': id}}")
        edges.append((raw["from"], raw["to"]))
    return RawDag(nodes, edges)


def parse_dag_text(text: str) -> RawDag:
    """Extract the ``<dag>`` block from model output and parse it."""
    return parse_dag_object(parse_structured_lenient(extract_tagged_block(text, "dag")))


def _find_cycle(nodes: list[str], adjacency: dict[str, list[str]]) -> tuple[str, ...] | None:
    white, grey, black = 0, 1, 2
    color = {n: white for n in nodes}
    stack_path: list[str] = []

    def visit(n: str) -> tuple[str, ...] | None:
        color[n] = grey
        stack_path.append(n)
        for m in adjacency.get(n, []):
            if color.get(m) == grey:
                return tuple(stack_path[stack_path.index(m):])
            if color.get(m) == white:
                found = visit(m)
                if found:
                    return found
        stack_path.pop()
        color[n] = black
        return None

    for n in nodes:
        if color[n] == white:
            found = visit(n)
            if found:
                return found
    return None


def _depth(graph: PlanningGraph) -> int:
    """Longest path length counted in nodes (a lone root has depth 1)."""
    memo: dict[str, int] = {}

    def depth(n: str) -> int:
        if n not in memo:
            memo[n] = 1 + max((depth(c) for c in graph.nodes[n].children), default=0)
        return memo[n]

    return max((depth(n) for n in graph.nodes), default=0)


def build_planning_graph(raw: RawDag, revision: int = 0) -> tuple[PlanningGraph, list[Violation]]:
    """Merge ``children`` lists and ``edges`` into one consistent graph and validate it."""
    violations: list[Violation] = []
    nodes: dict[str, PlanNode] = {}
    for node in raw.nodes:
        if node.id in nodes:
            violations.append(DuplicateId(node.id))
            continue
        nodes[node.id] = PlanNode(node.id, node.task, node.node_type, list(node.children))
    for parent, child in raw.edges:
        if parent in nodes and child not in nodes[parent].children:
            nodes[parent].children.append(child)
        elif parent not in nodes:
            violations.append(DanglingEdge(parent))
    edges = {(n.id, c) for n in nodes.values() for c in n.children}
    graph = PlanningGraph(nodes, edges, revision)
    violations.extend(v for v in validate_planning_graph(graph) if v not in violations)
    return graph, violations


def validate_planning_graph(pg: PlanningGraph) -> list[Violation]:
    """Hard violations (``fatal``) first, then soft limit warnings."""
    hard: list[Violation] = []
    dangling = sorted({b for a, b in pg.edges if b not in pg.nodes} | {a for a, b in pg.edges if a not in pg.nodes})
    dangling += sorted({c for n in pg.nodes.values() for c in n.children if c not in pg.nodes} - set(dangling))
    hard.extend(DanglingEdge(d) for d in dangling)
    if ROOT_ID not in pg.nodes:
        hard.append(MissingRoot())
    for node in pg.nodes.values():
        is_root = node.id == ROOT_ID
        if is_root != (node.node_type == QUESTION):
            hard.append(MisplacedRoot(node.id))
    hard.extend(RootHasParent(a) for a, b in sorted(pg.edges) if b == ROOT_ID and a in pg.nodes)
    adjacency: dict[str, list[str]] = {n: [] for n in pg.nodes}
    for a, b in sorted(pg.edges):
        if a in pg.nodes and b in pg.nodes:
            adjacency[a].append(b)
    for n in pg.nodes.values():
        for c in n.children:
            if c in pg.nodes and c not in adjacency[n.id]:
                adjacency[n.id].append(c)
    cycle = _find_cycle(list(pg.nodes), adjacency)
    if cycle:
        hard.append(CycleFound(cycle))
    if hard:
        return hard

    soft: list[Violation] = []
    limit = INITIAL_NODE_LIMIT if pg.revision == 0 else REFINED_NODE_LIMIT
    if len(pg.nodes) > limit:
        soft.append(NodeCountExceeded(len(pg.nodes), limit))
    depth = _depth(pg)
    if depth > DEPTH_LIMIT:
        soft.append(DepthExceeded(depth))
    return soft


def fatal(violations: list[Violation]) -> list[Violation]:
    return [v for v in violations if v.fatal]


def execution_order(pg: PlanningGraph) -> list[str]:
    """Kahn's algorithm over child->parent dependencies.

    Every node appears after all of its children; ties go to the smallest id
    and the root is always last.
    """
    pending = {nid: len(set(n.children)) for nid, n in pg.nodes.items()}
    parents: dict[str, list[str]] = {nid: [] for nid in pg.nodes}
    for nid, n in pg.nodes.items():
        for c in set(n.children):
            parents[c].append(nid)

    def key(nid: str) -> tuple[bool, str]:
        return (nid == ROOT_ID, nid)

    ready = [key(nid) for nid, count in pending.items() if count == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        _, nid = heapq.heappop(ready)
        order.append(nid)
        for p in parents[nid]:
            pending[p] -= 1
            if pending[p] == 0:
                heapq.heappush(ready, key(p))
    if len(order) != len(pg.nodes):
        raise CycleDetected("planning graph contains a cycle")
    return order


def planning_graph_to_dot(pg: PlanningGraph, answers: dict[str, str] | None = None) -> str:
    lines = [f"digraph plan_r{pg.revision} {{", "  rankdir=TB;"]
    for node in pg.nodes.values():
        label = node.task if len(node.task) <= 60 else node.task[:57] + "..."
        if answers and node.id in answers:
            ans = answers[node.id]
            label += "\\n=> " + (ans if len(ans) <= 40 else ans[:37] + "...")
        shape = "doubleoctagon" if node.id == ROOT_ID else "box"
        lines.append(f"  {json.dumps(node.id)} [shape={shape}, label={json.dumps(f'{node.id}: ' + label)}];")
    for a, b in sorted(pg.edges):
        lines.append(f"  {json.dumps(a)} -> {json.dumps(b)};")
    lines.append("}")
    return "\n".join(lines) + "\n"
