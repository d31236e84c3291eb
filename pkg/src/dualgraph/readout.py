"""Structure-aware evidence readout over a content graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .client import VISUAL_TEXT_PREFIX, ModelClient
from .content_graph import ContentGraph, cosine_similarity
from .errors import DimensionMismatch, EmptyGraph

DEFAULT_NODE_BUDGET = 5

RANKED = "ranked"
NEIGHBOR = "neighbor"


@dataclass(frozen=True)
class Selection:
    node_id: str
    score: float
    provenance: str
    neighbor_of: str | None = None
    text: str = ""
    modality: str = "text"
    image_ref: str | None = None

    @property
    def is_visual(self) -> bool:
        return self.modality != "text"

    def prompt_text(self, vision: bool) -> str:
        if self.is_visual and not vision:
            return VISUAL_TEXT_PREFIX + self.text
        return self.text

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "score": self.score,
            "provenance": self.provenance,
            "neighbor_of": self.neighbor_of,
            "text": self.text,
            "modality": self.modality,
            "image_ref": self.image_ref,
        }


@dataclass
class EvidenceSubgraph:
    query_text: str
    selected: list[Selection] = field(default_factory=list)

    @property
    def node_ids(self) -> list[str]:
        return [s.node_id for s in self.selected]

    def __len__(self) -> int:
        return len(self.selected)

    def to_dict(self) -> dict:
        return {"query_text": self.query_text, "selected": [s.to_dict() for s in self.selected]}

    @classmethod
    def from_dict(cls, data: dict) -> EvidenceSubgraph:
        return cls(data["query_text"], [Selection(**s) for s in data["selected"]])


def readout_from_embedding(graph: ContentGraph, query_embedding: np.ndarray, k: int, query_text: str = "") -> EvidenceSubgraph:
    """Greedy neighbor-expanding selection for a precomputed query vector.

    Meaningful nodes are visited by descending cosine (ties by reading order).
    Each visited node joins the output as ``ranked`` (a node first added as a
    neighbor is promoted in place) and its meaningful neighbors are appended.
    Selection stops once the output holds at least ``k`` nodes, so one
    expansion may overshoot the budget.
    """
    if k < 1:
        raise ValueError("node budget k must be >= 1")
    if query_embedding.shape != (graph.d,):
        raise DimensionMismatch(graph.d, len(query_embedding))
    meaningful = [nid for nid, n in graph.nodes.items() if n.attrs.meaningful]
    if not meaningful:
        raise EmptyGraph("content graph has no meaningful nodes to retrieve from")
    score = {nid: cosine_similarity(graph.nodes[nid].embedding, query_embedding) for nid in meaningful}
    ranked = sorted(meaningful, key=lambda nid: (-score[nid], graph.rank(nid)))

    def select(nid: str, provenance: str, neighbor_of: str | None = None) -> Selection:
        unit = graph.nodes[nid].unit
        ref = str(unit.image_ref) if unit.image_ref is not None else None
        return Selection(nid, score[nid], provenance, neighbor_of, unit.text, unit.modality.value, ref)

    out: dict[str, Selection] = {}
    for nid in ranked:
        if len(out) >= k:
            break
        out[nid] = select(nid, RANKED)
        for nb in graph.neighbors(nid):
            if nb in score and nb not in out:
                out[nb] = select(nb, NEIGHBOR, nid)
    return EvidenceSubgraph(query_text, list(out.values()))


def subgraph_readout(graph: ContentGraph, query: str, k: int, client: ModelClient) -> EvidenceSubgraph:
    query_embedding = client.embed([query])[0]
    return readout_from_embedding(graph, query_embedding, k, query)


def evidence_text(selections: list[Selection], vision: bool) -> str:
    """Numbered evidence block, one ``Related Memory [i]`` entry per selection."""
    return "\n\n".join(
        f"Related Memory [{i}]: {sel.prompt_text(vision)}" for i, sel in enumerate(selections, start=1)
    )


def evidence_images(selections: list[Selection], vision: bool) -> list[Path]:
    if not vision:
        return []
    return [Path(sel.image_ref) for sel in selections if sel.image_ref is not None]
