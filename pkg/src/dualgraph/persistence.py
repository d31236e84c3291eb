"""Single-file JSON stores for corpora, content graphs and query traces."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .content_graph import ContentGraph, GraphNode, NodeAttributes
from .document import AtomicUnit, Modality, ParsedCorpus, corpus_to_interchange, load_corpus
from .errors import IoFailure, MalformedInput, VersionMismatch

GRAPH_FORMAT_VERSION = 1


@dataclass(frozen=True)
class StorePaths:
    root: Path

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", Path(self.root).resolve())

    @property
    def corpus_file(self) -> Path:
        return self.root / "corpus.json"

    @property
    def graph_file(self) -> Path:
        return self.root / "graph.json"

    @property
    def traces_dir(self) -> Path:
        return self.root / "traces"

    @property
    def images_dir(self) -> Path:
        return self.root / "images"

    def inside(self, path: Path) -> bool:
        return Path(path).resolve().is_relative_to(self.root)


def dumps(data: Any) -> str:
    """Deterministic JSON text; floats use the shortest exact round-trip repr."""
    return json.dumps(data, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    tmp = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        if tmp and os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"{path}: not valid JSON ({exc})") from exc


def graph_to_dict(graph: ContentGraph, base_dir: Path | None = None) -> dict[str, Any]:
    def ref(unit: AtomicUnit) -> str | None:
        if unit.image_ref is None:
            return None
        p = Path(unit.image_ref)
        if base_dir is not None and p.is_absolute():
            try:
                return Path(os.path.relpath(p, base_dir)).as_posix()
            except ValueError:
                pass
        return p.as_posix()

    nodes = []
    for node in graph.nodes.values():
        u = node.unit
        nodes.append(
            {
                "node_id": node.node_id,
                "doc_id": u.doc_id,
                "order": u.order,
                "modality": u.modality.value,
                "text": u.text,
                "image_ref": ref(u),
                "summary": node.attrs.summary,
                "keywords": list(node.attrs.keywords),
                "tags": list(node.attrs.tags),
                "meaningful": node.attrs.meaningful,
                "embedding": [float(x) for x in node.embedding],
                "version": node.version,
            }
        )
    return {
        "version": GRAPH_FORMAT_VERSION,
        "d": graph.d,
        "epoch": graph.epoch,
        "w": graph.w,
        "nodes": nodes,
        "structural_edges": [list(e) for e in sorted(graph.structural_edges, key=lambda e: (graph.rank(e[0]), graph.rank(e[1])))],
        "semantic_edges": [list(e) for e in sorted(graph.semantic_edges, key=lambda e: (graph.rank(e[0]), graph.rank(e[1])))],
    }


def _edge_list(data: dict[str, Any], key: str) -> list[tuple[str, str]]:
    raw = data.get(key)
    if not isinstance(raw, list):
        raise MalformedInput(f"graph file: '{key}' must be a list")
    out = []
    for e in raw:
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, str) for x in e)):
            raise MalformedInput(f"graph file: bad edge {e!r} in '{key}'")
        out.append((e[0], e[1]))
    return out


def graph_from_dict(data: Any, base_dir: Path | None = None) -> ContentGraph:
    """Rebuild a graph and re-check every invariant. Image paths resolve against ``base_dir``."""
    if not isinstance(data, dict):
        raise MalformedInput("graph file: top level must be an object")
    if data.get("version") != GRAPH_FORMAT_VERSION:
        raise VersionMismatch(f"graph file version {data.get('version')!r} is not supported (expected {GRAPH_FORMAT_VERSION})")
    try:
        d, epoch, w = int(data["d"]), int(data["epoch"]), int(data["w"])
        nodes = []
        for raw in data["nodes"]:
            image_ref = raw.get("image_ref")
            if image_ref is not None:
                image_ref = Path(image_ref)
                if base_dir is not None and not image_ref.is_absolute():
                    image_ref = base_dir / image_ref
            unit = AtomicUnit(raw["doc_id"], raw["node_id"], raw["order"], Modality(raw["modality"]), raw["text"], image_ref)
            attrs = NodeAttributes(raw["summary"], list(raw["keywords"]), list(raw["tags"]), bool(raw["meaningful"]))
            embedding = np.asarray(raw["embedding"], dtype=np.float64)
            nodes.append(GraphNode(raw["node_id"], unit, attrs, embedding, int(raw["version"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"graph file: bad node record ({exc})") from exc
    if any(n.version < 0 for n in nodes):
        raise MalformedInput("graph file: negative node version")
    graph = ContentGraph(nodes, _edge_list(data, "structural_edges"), d=d, w=w, epoch=epoch)
    for a, b in _edge_list(data, "semantic_edges"):
        graph.semantic_edges.add(graph.edge(a, b))
    graph.check_invariants()
    return graph


def save_graph(graph: ContentGraph, path: str | Path) -> None:
    path = Path(path)
    write_atomic(path, dumps(graph_to_dict(graph, path.parent.resolve())))


def load_graph(path: str | Path, freeze: bool = True) -> ContentGraph:
    path = Path(path)
    graph = graph_from_dict(_read_json(path), path.parent.resolve())
    if freeze:
        graph.freeze()
    return graph


def save_corpus(corpus: ParsedCorpus, store: StorePaths) -> ParsedCorpus:
    """Copy referenced images into the store and write its corpus file.

    Returns the corpus with image paths pointing at the copies.
    """
    units = []
    for u in corpus:
        if u.image_ref is None:
            units.append(u)
            continue
        target = store.images_dir / f"{u.unit_id}{Path(u.image_ref).suffix}"
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            if Path(u.image_ref).resolve() != target.resolve():
                shutil.copyfile(u.image_ref, target)
        except OSError as exc:
            raise IoFailure(f"cannot copy image for {u.unit_id}: {exc}") from exc
        units.append(AtomicUnit(u.doc_id, u.unit_id, u.order, u.modality, u.text, target))
    stored = ParsedCorpus(tuple(units), dict(corpus.source_manifest))
    write_atomic(store.corpus_file, dumps(corpus_to_interchange(stored, store.root)))
    return stored


def load_store_corpus(store: StorePaths) -> ParsedCorpus:
    if not store.corpus_file.exists():
        raise IoFailure(f"no corpus in store {store.root} (run ingest first)")
    return load_corpus(store.corpus_file)


def trace_filename(query: str, when: float | None = None) -> str:
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime(time.time() if when is None else when))
    digest = hashlib.sha256(query.encode("utf-8")).hexdigest()[:12]
    return f"{stamp}_{digest}.json"


def save_trace(trace_dict: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    write_atomic(path, dumps(trace_dict))
    return path


def save_trace_in_store(trace_dict: dict[str, Any], store: StorePaths, when: float | None = None) -> Path:
    return save_trace(trace_dict, store.traces_dir / trace_filename(trace_dict["query"], when))


def load_trace(path: str | Path) -> dict[str, Any]:
    data = _read_json(path)
    if not isinstance(data, dict) or "dag_versions" not in data:
        raise MalformedInput(f"{path}: not an execution trace")
    return data


def _dot_label(text: str, limit: int = 40) -> str:
    text = " ".join(text.split())
    return text if len(text) <= limit else text[: limit - 3] + "..."


def content_graph_to_dot(graph: ContentGraph, label_chars: int = 40) -> str:
    lines = ["graph content {", "  node [shape=box];"]
    for node in graph.nodes.values():
        style = "" if node.attrs.meaningful else ", style=dotted"
        label = json.dumps(f"{node.node_id}: {_dot_label(node.attrs.summary, label_chars)}", ensure_ascii=False)
        lines.append(f"  {json.dumps(node.node_id)} [label={label}{style}];")
    by_rank = lambda e: (graph.rank(e[0]), graph.rank(e[1]))  # noqa: E731
    for a, b in sorted(graph.structural_edges, key=by_rank):
        lines.append(f"  {json.dumps(a)} -- {json.dumps(b)} [style=solid];")
    for a, b in sorted(graph.semantic_edges, key=by_rank):
        lines.append(f"  {json.dumps(a)} -- {json.dumps(b)} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"
