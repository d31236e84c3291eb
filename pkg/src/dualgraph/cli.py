"""Command-line entry point: ingest, build, query, export-dot, eval.

Exit codes: 0 success, 1 domain error, 2 usage error. Results go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .client import ClientConfig, ModelClient, OpenAICompatClient, ScriptedClient
from .config import RunConfig, load_config
from .content_graph import build_content_graph
from .document import load_corpus
from .errors import DualGraphError, MalformedInput
from .evaluation import evaluate_batch, read_records
from .evolution import EvolutionAborted, evolve_graph
from .persistence import (
    StorePaths,
    content_graph_to_dot,
    dumps,
    load_graph,
    load_store_corpus,
    load_trace,
    save_corpus,
    save_graph,
    save_trace,
    save_trace_in_store,
    write_atomic,
)
from .pipeline import QueryAborted, answer_query
from .planning import build_planning_graph, parse_dag_object, planning_graph_to_dot

logger = logging.getLogger("dualgraph")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2

_SCHEDULE_ALIASES = {"seq": "sequential", "sequential": "sequential", "par": "parallel", "parallel": "parallel"}


class UsageError(Exception):
    pass


def _common_options() -> argparse.ArgumentParser:
    # SUPPRESS lets these appear before or after the subcommand without clobbering each other
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", metavar="FILE", help="JSON run configuration")
    p.add_argument("--mock-script", metavar="FILE", help="use the offline scripted client")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("--endpoint", help="OpenAI-compatible base URL")
    p.add_argument("--model", help="chat model name")
    p.add_argument("--embedding-model", help="embedding model name")
    p.add_argument("--api-key-env", help="environment variable holding the API key")
    p.add_argument("--timeout", type=float, help="request timeout in seconds")
    p.add_argument("--retry-budget", type=int, help="retries for transient failures (0-5)")
    p.add_argument("--vision", action="store_true", help="backend accepts image attachments")
    p.add_argument("--workers", type=int, help="concurrent model calls")
    p.add_argument("-v", "--verbose", action="count", help="more logging on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="dualgraph", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="validate an interchange file into a store")
    p.add_argument("--input", required=True, metavar="FILE")
    p.add_argument("--store", required=True, metavar="DIR")

    p = sub.add_parser("build", parents=[common], help="build and evolve the content graph")
    p.add_argument("--store", required=True, metavar="DIR")
    p.add_argument("--window", type=int, metavar="W")
    p.add_argument("--mode", choices=("vlm", "lite"))
    p.add_argument("--iters", type=int, metavar="T")
    p.add_argument("--schedule", choices=sorted(_SCHEDULE_ALIASES))
    p.add_argument("--top-k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lite-k", type=int, metavar="K")

    p = sub.add_parser("query", parents=[common], help="answer a question against a built store")
    p.add_argument("--store", required=True, metavar="DIR")
    p.add_argument("--question", required=True, metavar="TEXT")
    p.add_argument("--k", type=int, metavar="N")
    p.add_argument("--tau-max", type=int, metavar="N")
    p.add_argument("--trace", metavar="FILE", help="trace output path (default: store traces/)")
    p.add_argument("--quiet", action="store_true", help="print only the final answer")

    p = sub.add_parser("export-dot", parents=[common], help="Graphviz export of the content graph or a DAG")
    p.add_argument("--store", required=True, metavar="DIR")
    p.add_argument("--dag", metavar="TRACE:REV", help="export DAG revision REV of a trace file instead")
    p.add_argument("--out", required=True, metavar="FILE")

    p = sub.add_parser("eval", parents=[common], help="judge a batch of answers")
    p.add_argument("--input", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    a = vars(args)
    schedule = a.get("schedule")
    overrides = {
        "client": {
            "endpoint": a.get("endpoint"),
            "model": a.get("model"),
            "embedding_model": a.get("embedding_model"),
            "api_key_env": a.get("api_key_env"),
            "timeout": a.get("timeout"),
            "retry_budget": a.get("retry_budget"),
            "vision_capable": True if a.get("vision") else None,
        },
        "w": a.get("window"),
        "top_k": a.get("top_k"),
        "T": a.get("iters"),
        "mode": a.get("mode"),
        "alpha": a.get("alpha"),
        "K": a.get("lite_k"),
        "k": a.get("k"),
        "tau_max": a.get("tau_max"),
        "schedule": _SCHEDULE_ALIASES[schedule] if schedule else None,
        "workers": a.get("workers"),
        "store": a.get("store"),
    }
    return load_config(a.get("config"), overrides)


def make_client(config: RunConfig, mock_script: str | None) -> ModelClient:
    if mock_script:
        return ScriptedClient.from_file(mock_script)
    c = config.client
    if not c.endpoint:
        raise MalformedInput("no model endpoint configured; pass --endpoint, set client.endpoint, or use --mock-script")
    try:
        cfg = ClientConfig(c.endpoint, c.model, c.embedding_model, c.api_key_env, c.timeout, c.retry_budget, c.vision_capable)
    except ValueError as exc:
        raise MalformedInput(str(exc)) from exc
    return OpenAICompatClient(cfg)


def _existing_store(path: str) -> StorePaths:
    store = StorePaths(Path(path))
    if not store.root.is_dir():
        raise MalformedInput(f"store directory {store.root} does not exist")
    return store


def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> int:
    corpus = load_corpus(args.input)
    store = StorePaths(Path(args.store))
    save_corpus(corpus, store)
    print(f"ingested {len(corpus)} units from {len(corpus.source_manifest)} documents into {store.root}")
    return EXIT_OK


def cmd_build(args: argparse.Namespace, config: RunConfig, client: ModelClient) -> int:
    store = _existing_store(args.store)
    corpus = load_store_corpus(store)
    graph = build_content_graph(corpus, client, config.w, config.workers)
    try:
        graph = evolve_graph(
            graph, config.T, config.mode, config.schedule, client, config.top_k, config.alpha, config.K, config.workers
        )
    except EvolutionAborted as exc:
        save_graph(exc.graph, store.graph_file)
        print(f"evolution aborted; saved graph at epoch {exc.graph.epoch}", file=sys.stderr)
        raise
    save_graph(graph, store.graph_file)
    print(
        json.dumps(
            {
                "graph": str(store.graph_file),
                "nodes": len(graph),
                "structural_edges": len(graph.structural_edges),
                "semantic_edges": len(graph.semantic_edges),
                "epoch": graph.epoch,
                "calls": client.ledger.snapshot()["calls"],
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_query(args: argparse.Namespace, config: RunConfig, client: ModelClient) -> int:
    store = _existing_store(args.store)
    if not store.graph_file.exists():
        raise MalformedInput(f"no graph in store {store.root} (run build first)")
    graph = load_graph(store.graph_file)

    def write(trace_dict: dict) -> Path:
        if args.trace:
            return save_trace(trace_dict, args.trace)
        return save_trace_in_store(trace_dict, store)

    try:
        answer, trace = answer_query(args.question, graph, client, config.k, config.tau_max, config.workers)
    except QueryAborted as exc:
        path = write(exc.trace.to_dict())
        print(f"partial trace written to {path}", file=sys.stderr)
        raise
    path = write(trace.to_dict())
    print(answer)
    if not args.quiet:
        print(f"trace: {path}", file=sys.stderr)
        print(f"revisions: {len(trace.dag_versions)}, termination: {trace.termination}", file=sys.stderr)
    return EXIT_OK


def _parse_dag_ref(ref: str) -> tuple[str, int]:
    path, sep, rev = ref.rpartition(":")
    if not sep or not path:
        raise UsageError(f"--dag expects TRACE:REV, got {ref!r}")
    try:
        return path, int(rev)
    except ValueError:
        raise UsageError(f"--dag revision must be an integer, got {rev!r}") from None


def cmd_export_dot(args: argparse.Namespace, config: RunConfig) -> int:
    if args.dag:
        trace_path, rev = _parse_dag_ref(args.dag)
        trace = load_trace(trace_path)
        versions = {v["revision"]: v for v in trace["dag_versions"]}
        if rev not in versions:
            raise MalformedInput(f"trace {trace_path} has no DAG revision {rev} (have {sorted(versions)})")
        pg, _ = build_planning_graph(parse_dag_object(versions[rev]["dag"]), rev)
        position = sorted(versions).index(rev)
        answers = {a["node_id"]: a["answer_text"] for a in trace["answers"][position]} if position < len(trace["answers"]) else {}
        text = planning_graph_to_dot(pg, answers)
    else:
        store = _existing_store(args.store)
        text = content_graph_to_dot(load_graph(store.graph_file))
    write_atomic(args.out, text)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig, client: ModelClient) -> int:
    result = evaluate_batch(read_records(args.input), client, config.workers)
    write_atomic(args.out, dumps(result))
    print(json.dumps(result["summary"], indent=2))
    return EXIT_OK


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    a = vars(args)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(a.get("verbose", 0) or 0, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = resolve_config(args)
        if a.get("dump_config"):
            print(json.dumps(config.to_dict(), indent=2))
            return EXIT_OK
        if not args.command:
            parser.print_usage(sys.stderr)
            print("dualgraph: error: a command is required", file=sys.stderr)
            return EXIT_USAGE
        if args.command == "ingest":
            return cmd_ingest(args, config)
        if args.command == "export-dot":
            return cmd_export_dot(args, config)
        client = make_client(config, a.get("mock_script"))
        handler = {"build": cmd_build, "query": cmd_query, "eval": cmd_eval}[args.command]
        return handler(args, config, client)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dualgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DualGraphError as exc:
        print(f"dualgraph: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


def main() -> None:
    sys.exit(run_cli())
