"""Dual-graph retrieval and planning for question answering over parsed documents."""

from .client import CallLedger, ChatRequest, ClientConfig, ModelClient, OpenAICompatClient, Role, ScriptedClient
from .content_graph import ContentGraph, build_content_graph, cosine_similarity, init_structural_edges
from .document import AtomicUnit, Modality, ParsedCorpus, load_corpus
from .errors import DualGraphError
from .evolution import evolve_graph
from .persistence import load_graph, save_graph
from .pipeline import ExecutionTrace, answer_query
from .readout import EvidenceSubgraph, subgraph_readout

__all__ = [
    "AtomicUnit",
    "CallLedger",
    "ChatRequest",
    "ClientConfig",
    "ContentGraph",
    "DualGraphError",
    "EvidenceSubgraph",
    "ExecutionTrace",
    "Modality",
    "ModelClient",
    "OpenAICompatClient",
    "ParsedCorpus",
    "Role",
    "ScriptedClient",
    "answer_query",
    "build_content_graph",
    "cosine_similarity",
    "evolve_graph",
    "init_structural_edges",
    "load_corpus",
    "load_graph",
    "save_graph",
    "subgraph_readout",
]
