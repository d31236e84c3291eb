from __future__ import annotations

import numpy as np
import pytest
from conftest import make_graph

import oracles
from dualgraph.client import ScriptedClient
from dualgraph.errors import DimensionMismatch, EmptyGraph
from dualgraph.readout import (
    DEFAULT_NODE_BUDGET,
    NEIGHBOR,
    RANKED,
    EvidenceSubgraph,
    evidence_images,
    evidence_text,
    readout_from_embedding,
    subgraph_readout,
)


def _chain():
    # five nodes on a line (w=1), distinct directions so node 3 (u2) is the best match for its own vector
    vecs = np.eye(5) + 0.01
    return make_graph(vecs, w=1), vecs


def test_chain_readout_hand_simulated():
    graph, vecs = _chain()
    client = ScriptedClient(embeddings={"q": vecs[2].tolist()}, dim=5)
    out = subgraph_readout(graph, "q", 3, client)
    assert [(s.node_id, s.provenance, s.neighbor_of) for s in out.selected] == [
        ("u2", RANKED, None),
        ("u1", NEIGHBOR, "u2"),
        ("u3", NEIGHBOR, "u2"),
    ]
    assert out.query_text == "q"


def test_budget_at_least_node_count_returns_all_meaningful():
    graph, vecs = _chain()
    out = readout_from_embedding(graph, vecs[0], 10)
    assert sorted(out.node_ids) == sorted(graph.nodes)


def test_overshoot_allowed():
    graph = make_graph(np.eye(5) + 0.01, w=2)
    out = readout_from_embedding(graph, np.eye(5)[2] + 0.01, 1)
    assert len(out) == 5


def test_neighbor_promoted_when_reached_in_ranking():
    # u1 ranks second but is already present as a neighbor of u0
    vecs = [[1, 0, 0], [0.9, 0.1, 0], [0, 0, 1], [0, 1, 0]]
    graph = make_graph(vecs, w=1)
    out = readout_from_embedding(graph, np.array([1.0, 0, 0]), 3)
    assert out.node_ids == ["u0", "u1"] + ["u2"]
    assert [s.provenance for s in out.selected] == [RANKED, RANKED, NEIGHBOR]


def test_non_meaningful_nodes_excluded():
    vecs = np.eye(4) + 0.01
    graph = make_graph(vecs, w=1, meaningful=[True, False, True, True])
    out = readout_from_embedding(graph, vecs[1], 10)
    assert "u1" not in out.node_ids
    assert out.node_ids[0] in ("u0", "u2")


def test_empty_graph_and_dimension_errors():
    graph = make_graph(np.eye(2), meaningful=[False, False])
    with pytest.raises(EmptyGraph):
        readout_from_embedding(graph, np.ones(2), 3)
    with pytest.raises(DimensionMismatch):
        readout_from_embedding(make_graph(np.eye(2)), np.ones(3), 3)
    with pytest.raises(ValueError):
        readout_from_embedding(make_graph(np.eye(2)), np.ones(2), 0)


def test_default_budget():
    assert DEFAULT_NODE_BUDGET == 5


def _adjacency(graph):
    adj = {i: set() for i in range(len(graph))}
    for a, b in graph.structural_edges | graph.semantic_edges:
        i, j = graph.rank(a), graph.rank(b)
        adj[i].add(j)
        adj[j].add(i)
    return adj


def test_readout_matches_greedy_reference():
    rng = np.random.default_rng(5)
    for _ in range(60):
        n = int(rng.integers(1, 21))
        vecs = rng.normal(size=(n, 4)).round(1)
        meaningful = (rng.random(n) > 0.2).tolist()
        if not any(meaningful):
            meaningful[0] = True
        semantic = [tuple(sorted(rng.choice(n, 2, replace=False))) for _ in range(n // 3)] if n > 1 else []
        graph = make_graph(vecs, w=int(rng.integers(1, 3)), meaningful=meaningful, semantic=semantic)
        q = rng.normal(size=4).round(1)
        k = int(rng.integers(1, 8))
        got = readout_from_embedding(graph, q, k)
        expected = oracles.greedy_readout(vecs.tolist(), _adjacency(graph), meaningful, q.tolist(), k)
        assert got.node_ids == [f"u{i}" for i in expected]
        ids = got.node_ids
        assert len(ids) == len(set(ids))
        for pos, sel in enumerate(got.selected):
            assert graph.nodes[sel.node_id].attrs.meaningful
            if sel.provenance == NEIGHBOR:
                parent = ids.index(sel.neighbor_of)
                assert parent < pos and got.selected[parent].provenance == RANKED
        assert len(ids) >= min(k, sum(meaningful))


def test_readout_is_deterministic():
    rng = np.random.default_rng(2)
    graph = make_graph(rng.normal(size=(12, 6)), w=2)
    q = rng.normal(size=6)
    assert readout_from_embedding(graph, q, 4).to_dict() == readout_from_embedding(graph, q, 4).to_dict()


def test_evidence_formatting(tmp_path):
    from dualgraph.readout import Selection

    img = tmp_path / "f.png"
    sels = [
        Selection("a", 0.9, RANKED, text="Plain text."),
        Selection("b", 0.5, NEIGHBOR, "a", text="Figure 1: chart", modality="figure", image_ref=str(img)),
    ]
    assert evidence_text(sels, vision=False) == (
        "Related Memory [1]: Plain text.\n\nRelated Memory [2]: figure/table described as: Figure 1: chart"
    )
    assert evidence_text(sels, vision=True).endswith("Related Memory [2]: Figure 1: chart")
    assert evidence_images(sels, vision=False) == []
    assert evidence_images(sels, vision=True) == [img]


def test_evidence_subgraph_dict_round_trip():
    graph, vecs = _chain()
    out = readout_from_embedding(graph, vecs[1], 3, "query")
    assert EvidenceSubgraph.from_dict(out.to_dict()) == out
