"""The multimodal content graph: nodes over atomic units, two edge layers.

Structural edges link units within a sliding reading-order window and never
change after construction. Semantic edges are owned by evolution and are
replaced per node. Edges are unordered pairs stored as ``(a, b)`` with
``rank(a) < rank(b)``.
"""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .client import VISUAL_TEXT_PREFIX, ChatRequest, ModelClient, Role
from .document import AtomicUnit, ParsedCorpus
from .errors import DimensionMismatch, DualGraphError, MalformedInput, Unparseable
from .prompts import ask_with_repair, parse_structured_lenient, render_template

logger = logging.getLogger(__name__)

SENTINEL = "No meaningful information"
DEFAULT_WINDOW = 2

Edge = tuple[str, str]


@dataclass
class NodeAttributes:
    summary: str
    keywords: list[str]
    tags: list[str] = field(default_factory=list)
    meaningful: bool = True

    def __post_init__(self) -> None:
        if not self.summary.strip():
            raise ValueError("summary must be non-empty")
        self.keywords = list(dict.fromkeys(k for k in self.keywords if k))
        if not self.keywords:
            raise ValueError("at least one keyword is required")

    @classmethod
    def create(cls, summary: str, keywords: Iterable[str], tags: Iterable[str] = ()) -> NodeAttributes:
        """Build attributes, deriving ``meaningful`` from the sentinel phrase."""
        return cls(summary, list(keywords), list(tags), SENTINEL not in summary)


@dataclass(eq=False)
class GraphNode:
    node_id: str
    unit: AtomicUnit
    attrs: NodeAttributes
    embedding: np.ndarray
    version: int = 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphNode):
            return NotImplemented
        return (
            self.node_id == other.node_id
            and self.unit == other.unit
            and self.attrs == other.attrs
            and self.version == other.version
            and self.embedding.shape == other.embedding.shape
            and bool(np.array_equal(self.embedding, other.embedding))
        )


class FrozenGraphError(DualGraphError):
    pass


class ContentGraph:
    """Nodes keyed by id in global reading order, plus both edge layers."""

    def __init__(self, nodes: Iterable[GraphNode], structural_edges: Iterable[Edge], d: int, w: int, epoch: int = 0):
        self.nodes: dict[str, GraphNode] = {}
        for node in nodes:
            if node.node_id in self.nodes:
                raise MalformedInput(f"duplicate node id {node.node_id!r}")
            self.nodes[node.node_id] = node
        self._rank = {nid: i for i, nid in enumerate(self.nodes)}
        self.d = d
        self.w = w
        self.epoch = epoch
        self.structural_edges: set[Edge] = {self.edge(a, b) for a, b in structural_edges}
        self.semantic_edges: set[Edge] = set()
        self.frozen = False

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContentGraph):
            return NotImplemented
        return (
            list(self.nodes) == list(other.nodes)
            and all(self.nodes[k] == other.nodes[k] for k in self.nodes)
            and self.structural_edges == other.structural_edges
            and self.semantic_edges == other.semantic_edges
            and (self.d, self.w, self.epoch) == (other.d, other.w, other.epoch)
        )

    def rank(self, node_id: str) -> int:
        return self._rank[node_id]

    def edge(self, a: str, b: str) -> Edge:
        if a not in self._rank or b not in self._rank:
            missing = a if a not in self._rank else b
            raise MalformedInput(f"edge endpoint {missing!r} is not a node")
        if a == b:
            raise MalformedInput(f"self-loop on {a!r}")
        return (a, b) if self._rank[a] < self._rank[b] else (b, a)

    def _adjacent(self, edges: set[Edge], node_id: str) -> set[str]:
        out = set()
        for a, b in edges:
            if a == node_id:
                out.add(b)
            elif b == node_id:
                out.add(a)
        return out

    def neighbors(self, node_id: str) -> list[str]:
        """Current neighbors over both layers, in reading order."""
        adj = self._adjacent(self.structural_edges, node_id) | self._adjacent(self.semantic_edges, node_id)
        return sorted(adj, key=self._rank.__getitem__)

    def semantic_neighbors(self, node_id: str) -> list[str]:
        return sorted(self._adjacent(self.semantic_edges, node_id), key=self._rank.__getitem__)

    def set_semantic_edges(self, node_id: str, targets: Iterable[str]) -> None:
        """Replace the semantic edges incident to ``node_id``."""
        self._check_mutable()
        new = {self.edge(node_id, t) for t in targets}
        self.semantic_edges = {e for e in self.semantic_edges if node_id not in e} | new

    def _check_mutable(self) -> None:
        if self.frozen:
            raise FrozenGraphError("graph is frozen after evolution")

    def freeze(self) -> None:
        self.frozen = True

    def copy(self) -> ContentGraph:
        clone = copy.copy(self)
        clone.nodes = {
            k: GraphNode(n.node_id, n.unit, copy.deepcopy(n.attrs), n.embedding.copy(), n.version)
            for k, n in self.nodes.items()
        }
        clone._rank = dict(self._rank)
        clone.structural_edges = set(self.structural_edges)
        clone.semantic_edges = set(self.semantic_edges)
        clone.frozen = False
        return clone

    def embedding_matrix(self) -> np.ndarray:
        return np.vstack([n.embedding for n in self.nodes.values()]) if self.nodes else np.zeros((0, self.d))

    def check_invariants(self) -> None:
        """Raise :class:`MalformedInput` on any broken graph invariant."""
        for node in self.nodes.values():
            if node.embedding.shape != (self.d,):
                raise MalformedInput(f"node {node.node_id!r}: embedding shape {node.embedding.shape} != ({self.d},)")
        for layer in (self.structural_edges, self.semantic_edges):
            for a, b in layer:
                if self.edge(a, b) != (a, b):
                    raise MalformedInput(f"edge {(a, b)} is not stored in rank order")
        expected = window_pairs(list(self.nodes), self.w)
        if self.structural_edges != expected:
            raise MalformedInput("structural edges do not match the reading-order window")


def window_pairs(ordered_ids: list[str], w: int) -> set[Edge]:
    if w < 1:
        raise ValueError("window size must be >= 1")
    n = len(ordered_ids)
    return {(ordered_ids[i], ordered_ids[j]) for i in range(n) for j in range(i + 1, min(n, i + w + 1))}


def init_structural_edges(corpus: ParsedCorpus, w: int = DEFAULT_WINDOW) -> set[Edge]:
    """All unit pairs whose global reading-order ranks differ by 1..w."""
    return window_pairs([u.unit_id for u in corpus], w)


def cosine_similarity(a: Any, b: Any) -> float:
    """Cosine of two equal-length vectors; 0.0 when either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(a.shape[0] if a.ndim else 0, b.shape[0] if b.ndim else 0)
    na = float(np.dot(a, a))
    nb = float(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        if not (np.any(a) and np.any(b)):
            return 0.0
        na = float("inf")
    denom = np.sqrt(na * nb)
    if denom == 0.0 or not np.isfinite(denom):
        # tiny or huge magnitudes: rescale (cosine is scale-invariant) and retry
        a = a / np.max(np.abs(a))
        b = b / np.max(np.abs(b))
        na, nb = float(np.dot(a, a)), float(np.dot(b, b))
        denom = np.sqrt(na * nb)
    # sqrt of the product keeps cos(a, a) exactly 1.0
    value = float(np.dot(a, b)) / denom
    return float(min(1.0, max(-1.0, value)))


def similarities(graph: ContentGraph, query: np.ndarray) -> dict[str, float]:
    return {nid: cosine_similarity(node.embedding, query) for nid, node in graph.nodes.items()}


def top_k_similar(graph: ContentGraph, node_id: str, k: int) -> list[tuple[str, float]]:
    """The ``k`` nodes most similar to ``node_id`` (itself excluded), ties by rank."""
    h = graph.nodes[node_id].embedding
    scored = [
        (nid, cosine_similarity(h, node.embedding)) for nid, node in graph.nodes.items() if nid != node_id
    ]
    scored.sort(key=lambda item: (-item[1], graph.rank(item[0])))
    return scored[:k]


def candidate_neighborhood(graph: ContentGraph, node_id: str, top_k: int = 5) -> list[str]:
    """Top-k similar nodes (by descending similarity) followed by any remaining current neighbors (by rank)."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    ranked = [nid for nid, _ in top_k_similar(graph, node_id, top_k)]
    seen = set(ranked)
    return ranked + [nid for nid in graph.neighbors(node_id) if nid not in seen]


def unit_prompt_text(unit: AtomicUnit, vision: bool) -> str:
    """Text handed to a model for ``unit``; text-only backends get a modality prefix for visual units."""
    if unit.is_visual and not vision:
        return VISUAL_TEXT_PREFIX + unit.text
    return unit.text


def unit_images(unit: AtomicUnit, vision: bool) -> list:
    return [unit.image_ref] if vision and unit.image_ref is not None else []


def _str_list(value: Any, name: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise Unparseable(f"{name!r} must be a list of strings")
    return [v.strip() for v in value if v.strip()]


def parse_node_attributes(raw: str) -> NodeAttributes:
    data = parse_structured_lenient(raw)
    if not isinstance(data, dict):
        raise Unparseable("expected a JSON object")
    summary = data.get("summary")
    if not isinstance(summary, str) or not summary.strip():
        raise Unparseable("'summary' must be a non-empty string")
    keywords = _str_list(data.get("keywords"), "keywords")
    tags = _str_list(data.get("tags", []), "tags")
    try:
        return NodeAttributes.create(summary.strip(), keywords, tags)
    except ValueError as exc:
        raise Unparseable(str(exc)) from exc


def initialize_node_attributes(unit: AtomicUnit, client: ModelClient, attempts: int = 3) -> NodeAttributes:
    """Ask the initializer role for keywords, summary and tags of one unit."""
    vision = client.vision_capable
    prompt = render_template("initializer", {"document chunk": unit_prompt_text(unit, vision)})
    request = ChatRequest.build(Role.INITIALIZER, prompt, unit_images(unit, vision))
    attrs, _ = ask_with_repair(client, request, parse_node_attributes, attempts)
    return attrs


def embedding_input(attrs: NodeAttributes) -> str:
    return attrs.summary + "\n" + ", ".join(attrs.keywords)


def embed_attributes(attrs: NodeAttributes, client: ModelClient, d: int | None = None) -> np.ndarray:
    """Encode ``summary + "\\n" + ", ".join(keywords)``; checks length against ``d`` when given."""
    vector = client.embed([embedding_input(attrs)])[0]
    if d is not None and vector.shape != (d,):
        raise DimensionMismatch(d, len(vector))
    return vector


def build_content_graph(
    corpus: ParsedCorpus,
    client: ModelClient,
    w: int = DEFAULT_WINDOW,
    workers: int = 1,
) -> ContentGraph:
    """Initialize attributes and embeddings for every unit and lay the window edges."""
    if len(corpus) == 0:
        raise MalformedInput("cannot build a graph from an empty corpus")
    units = list(corpus)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            attrs = list(pool.map(lambda u: initialize_node_attributes(u, client), units))
    else:
        attrs = [initialize_node_attributes(u, client) for u in units]
    vectors = client.embed([embedding_input(a) for a in attrs])
    d = len(vectors[0])
    nodes = [GraphNode(u.unit_id, u, a, v) for u, a, v in zip(units, attrs, vectors)]
    graph = ContentGraph(nodes, init_structural_edges(corpus, w), d=d, w=w)
    logger.info("built content graph: %d nodes, %d structural edges, d=%d", len(graph), len(graph.structural_edges), d)
    return graph
