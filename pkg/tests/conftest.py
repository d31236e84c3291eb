from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dualgraph.content_graph import ContentGraph, GraphNode, NodeAttributes, SENTINEL, window_pairs
from dualgraph.document import AtomicUnit, Modality, ParsedCorpus


def make_units(n: int, doc_id: str = "d1") -> list[AtomicUnit]:
    return [AtomicUnit(doc_id, f"u{i}", i, Modality.TEXT, f"paragraph number {i} about topic {i % 3}") for i in range(n)]


def make_corpus(n: int) -> ParsedCorpus:
    return ParsedCorpus.from_units(make_units(n), {"d1": "d1.pdf"})


def make_graph(
    embeddings,
    w: int = 1,
    meaningful: list[bool] | None = None,
    semantic: list[tuple[int, int]] = (),
) -> ContentGraph:
    """Graph over ids u0..u{n-1} built directly from vectors (no model calls)."""
    embeddings = [np.asarray(e, dtype=np.float64) for e in embeddings]
    n = len(embeddings)
    meaningful = meaningful or [True] * n
    units = make_units(n)
    nodes = []
    for i, (u, e) in enumerate(zip(units, embeddings)):
        summary = f"summary {i}" if meaningful[i] else SENTINEL
        nodes.append(GraphNode(u.unit_id, u, NodeAttributes.create(summary, [f"kw{i}"]), e))
    ids = [u.unit_id for u in units]
    graph = ContentGraph(nodes, window_pairs(ids, w), d=len(embeddings[0]), w=w)
    for a, b in semantic:
        graph.semantic_edges.add(graph.edge(ids[a], ids[b]))
    return graph


def dag(nodes: dict[str, tuple[str, list[str]]], edges: bool = True) -> str:
    """Decomposer-style reply wrapping a DAG built from ``{id: (task, children)}``."""
    body = {
        "nodes": [
            {"id": nid, "task": task, "type": "question" if nid == "root" else "sub-question", "children": children}
            for nid, (task, children) in nodes.items()
        ],
        "edges": [{"from": nid, "to": c} for nid, (_, children) in nodes.items() for c in children] if edges else [],
    }
    return f"<dag>{json.dumps(body)}</dag>"


def attrs_reply(summary: str = "One sentence.", keywords=("a", "b", "c")) -> str:
    return json.dumps({"keywords": list(keywords), "summary": summary, "tags": ["x", "y", "z"]})


def check_reply(sufficient: bool, gaps=()) -> str:
    return "<check>" + json.dumps({"sufficient": sufficient, "gaps": list(gaps)}) + "</check>"


@pytest.fixture
def interchange(tmp_path):
    """A two-document interchange file with one figure image on disk."""
    (tmp_path / "img").mkdir()
    (tmp_path / "img" / "fig1.png").write_bytes(b"\x89PNG fake")
    data = {
        "version": 1,
        "documents": [
            {
                "doc_id": "b",
                "source": "b.pdf",
                "units": [
                    {"unit_id": "b2", "order": 5, "modality": "text", "text": "Second paragraph of b.", "image_ref": None},
                    {"unit_id": "b1", "order": 1, "modality": "text", "text": "First paragraph of b.", "image_ref": None},
                ],
            },
            {
                "doc_id": "a",
                "source": "a.pdf",
                "units": [
                    {"unit_id": "a1", "order": 0, "modality": "text", "text": "Revenue grew 12% in 2023.", "image_ref": None},
                    {
                        "unit_id": "a2",
                        "order": 3,
                        "modality": "figure",
                        "text": "Figure 1: revenue by quarter.",
                        "image_ref": "img/fig1.png",
                    },
                    {"unit_id": "a3", "order": 4, "modality": "table", "text": "| q | rev |\n| 1 | 10 |", "image_ref": None},
                ],
            },
        ],
    }
    path = tmp_path / "corpus.json"
    path.write_text(json.dumps(data))
    return path
