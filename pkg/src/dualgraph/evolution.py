"""Joint evolution of node attributes and semantic topology.

Two operators share one update shape. The model-driven operator shows each
node its candidate neighborhood and lets the evolver role rewrite summary,
keywords and semantic links. The lite operator makes no chat calls: it moves
each embedding toward the similarity-weighted mean of its top-K neighbors and
links the node to exactly those neighbors.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .client import ChatRequest, ModelClient, Role
from .content_graph import (
    ContentGraph,
    NodeAttributes,
    candidate_neighborhood,
    embed_attributes,
    top_k_similar,
    unit_images,
    unit_prompt_text,
)
from .errors import DualGraphError, ModelError, ModelOutputUnparseable, Unparseable
from .prompts import ask_with_repair, parse_structured_lenient, render_template

logger = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 3
DEFAULT_TOP_K = 5
DEFAULT_ALPHA = 0.5
DEFAULT_LITE_K = 5
# one initial prompt plus up to three repair re-prompts
EVOLVER_ATTEMPTS = 4


class EvolutionAborted(DualGraphError):
    """A fatal client error stopped evolution; ``graph`` is the last completed pass."""

    def __init__(self, message: str, graph: ContentGraph) -> None:
        super().__init__(message)
        self.graph = graph


@dataclass
class NodeUpdate:
    node_id: str
    new_summary: str = ""
    new_keywords: list[str] = field(default_factory=list)
    suggested_connections: list[str] = field(default_factory=list)
    should_update: bool = False
    new_embedding: np.ndarray | None = None
    degenerate: bool = False
    skipped: bool = False


def _coerce_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "false"):
        return value.strip().lower() == "true"
    raise Unparseable("'should_update' must be a boolean")


def parse_evolver_output(raw: str) -> dict[str, Any]:
    """Validate the four evolver fields and return them normalized."""
    data = parse_structured_lenient(raw)
    if not isinstance(data, dict):
        raise Unparseable("expected a JSON object")
    missing = [k for k in ("suggested_connections", "should_update", "new_summary", "new_keywords") if k not in data]
    if missing:
        raise Unparseable(f"missing fields: {', '.join(missing)}")
    conns = data["suggested_connections"]
    if not isinstance(conns, list) or not all(isinstance(c, (str, int)) and not isinstance(c, bool) for c in conns):
        raise Unparseable("'suggested_connections' must be a list of ids")
    should_update = _coerce_bool(data["should_update"])
    summary = data["new_summary"]
    keywords = data["new_keywords"]
    if not isinstance(summary, str):
        raise Unparseable("'new_summary' must be a string")
    if not isinstance(keywords, list) or not all(isinstance(k, str) for k in keywords):
        raise Unparseable("'new_keywords' must be a list of strings")
    keywords = [k.strip() for k in keywords if k.strip()]
    if should_update and (not summary.strip() or not keywords):
        raise Unparseable("an update needs a non-empty new_summary and new_keywords")
    return {
        "suggested_connections": [str(c) for c in conns],
        "should_update": should_update,
        "new_summary": summary.strip(),
        "new_keywords": keywords,
    }


def format_neighbor_notes(graph: ContentGraph, candidates: list[str], vision: bool) -> str:
    blocks = []
    for nid in candidates:
        node = graph.nodes[nid]
        blocks.append(
            f"memory id: {nid}\n"
            f"content: {unit_prompt_text(node.unit, vision)}\n"
            f"summary: {node.attrs.summary}\n"
            f"keywords: {', '.join(node.attrs.keywords)}"
        )
    return "\n\n".join(blocks)


def propose_vlm_update(
    graph: ContentGraph, node_id: str, client: ModelClient, top_k: int = DEFAULT_TOP_K
) -> NodeUpdate:
    """Ask the evolver for one node's update without touching ``graph``.

    Unparseable output after the repair budget yields a skipped update.
    """
    node = graph.nodes[node_id]
    candidates = candidate_neighborhood(graph, node_id, top_k)
    vision = client.vision_capable
    prompt = render_template(
        "evolver",
        {
            "content": unit_prompt_text(node.unit, vision),
            "context": node.attrs.summary,
            "keywords": ", ".join(node.attrs.keywords),
            "neighbor_number": len(candidates),
            "neighbors": format_neighbor_notes(graph, candidates, vision),
        },
    )
    request = ChatRequest.build(Role.EVOLVER, prompt, unit_images(node.unit, vision))
    try:
        parsed, _ = ask_with_repair(client, request, parse_evolver_output, EVOLVER_ATTEMPTS)
    except ModelOutputUnparseable as exc:
        logger.warning("node %s: evolver output unusable, left unchanged this pass (%s)", node_id, exc)
        return NodeUpdate(node_id, skipped=True)

    allowed = set(candidates)
    connections = []
    for cid in parsed["suggested_connections"]:
        if cid in allowed:
            if cid not in connections:
                connections.append(cid)
        else:
            logger.warning("node %s: dropping suggested connection to %r (not a candidate)", node_id, cid)

    update = NodeUpdate(
        node_id,
        parsed["new_summary"],
        parsed["new_keywords"],
        connections,
        parsed["should_update"],
    )
    if update.should_update:
        attrs = NodeAttributes.create(update.new_summary, update.new_keywords, node.attrs.tags)
        update.new_embedding = embed_attributes(attrs, client, graph.d)
    return update


def propose_lite_update(
    graph: ContentGraph, node_id: str, alpha: float = DEFAULT_ALPHA, k: int = DEFAULT_LITE_K
) -> NodeUpdate:
    """Similarity-weighted propagation over the top-``k`` most similar nodes."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if k < 1:
        raise ValueError("K must be >= 1")
    neighbors = top_k_similar(graph, node_id, k)
    if not neighbors:
        raise ValueError("lite evolution needs at least one other node")
    h = graph.nodes[node_id].embedding
    weights = np.array([s for _, s in neighbors])
    total = float(weights.sum())
    update = NodeUpdate(node_id, suggested_connections=[nid for nid, _ in neighbors])
    if total <= 0.0:
        logger.warning("node %s: similarity weights sum to %.3g, embedding kept", node_id, total)
        update.degenerate = True
        return update
    stacked = np.vstack([graph.nodes[nid].embedding for nid, _ in neighbors])
    mean = (weights[:, None] * stacked).sum(axis=0) / total
    update.new_embedding = alpha * h + (1.0 - alpha) * mean
    return update


def apply_vlm_update(graph: ContentGraph, update: NodeUpdate) -> bool:
    """Commit an evolver update; returns whether anything changed."""
    if update.skipped or (not update.should_update and not update.suggested_connections):
        return False
    node = graph.nodes[update.node_id]
    graph.set_semantic_edges(update.node_id, update.suggested_connections)
    if update.should_update:
        node.attrs = NodeAttributes.create(update.new_summary, update.new_keywords, node.attrs.tags)
        node.embedding = update.new_embedding
    node.version += 1
    return True


def apply_lite_update(graph: ContentGraph, update: NodeUpdate) -> bool:
    node = graph.nodes[update.node_id]
    graph.set_semantic_edges(update.node_id, update.suggested_connections)
    if update.new_embedding is not None:
        node.embedding = update.new_embedding
    node.version += 1
    return True


def evolve_node_vlm(
    graph: ContentGraph, node_id: str, client: ModelClient, top_k: int = DEFAULT_TOP_K
) -> NodeUpdate:
    update = propose_vlm_update(graph, node_id, client, top_k)
    apply_vlm_update(graph, update)
    return update


def evolve_node_lite(
    graph: ContentGraph, node_id: str, alpha: float = DEFAULT_ALPHA, k: int = DEFAULT_LITE_K
) -> NodeUpdate:
    update = propose_lite_update(graph, node_id, alpha, k)
    apply_lite_update(graph, update)
    return update


def evolve_graph(
    graph: ContentGraph,
    T: int = DEFAULT_ITERATIONS,
    mode: str = "vlm",
    schedule: str = "sequential",
    client: ModelClient | None = None,
    top_k: int = DEFAULT_TOP_K,
    alpha: float = DEFAULT_ALPHA,
    lite_k: int = DEFAULT_LITE_K,
    workers: int = 4,
) -> ContentGraph:
    """Run ``T`` evolution passes and return a new, frozen graph.

    ``sequential`` updates nodes in reading order, each seeing the updates
    already committed in the same pass. ``parallel`` computes every update of
    a pass concurrently against the pass-start snapshot, then commits them.
    The input graph is never modified.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if mode not in ("vlm", "lite"):
        raise ValueError(f"unknown evolution mode {mode!r}")
    if schedule not in ("sequential", "parallel"):
        raise ValueError(f"unknown schedule {schedule!r}")
    if mode == "vlm" and client is None:
        raise ValueError("vlm evolution needs a model client")

    def propose(g: ContentGraph, nid: str) -> NodeUpdate:
        if mode == "vlm":
            return propose_vlm_update(g, nid, client, top_k)
        return propose_lite_update(g, nid, alpha, lite_k)

    apply = apply_vlm_update if mode == "vlm" else apply_lite_update
    current = graph.copy()
    order = list(current.nodes)
    for t in range(T):
        working = current.copy()
        try:
            if schedule == "sequential":
                for nid in order:
                    apply(working, propose(working, nid))
            else:
                snapshot = current
                with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
                    updates = list(pool.map(lambda nid: propose(snapshot, nid), order))
                for update in updates:
                    apply(working, update)
        except ModelError as exc:
            raise EvolutionAborted(f"evolution pass {t + 1}/{T} aborted: {exc}", current.copy()) from exc
        working.epoch += 1
        current = working
        logger.info("evolution pass %d/%d done (%s, %s)", t + 1, T, mode, schedule)
    current.freeze()
    return current
