"""Per-query execution, verification and refinement of the planning graph."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from .client import ChatRequest, ModelClient, RecordingClient, Role
from .content_graph import ContentGraph
from .errors import DualGraphError, InvalidDag, ModelOutputUnparseable, Unparseable
from .planning import (
    ROOT_ID,
    NodeCountExceeded,
    PlanningGraph,
    RefinementDeltaOutOfRange,
    Violation,
    build_planning_graph,
    execution_order,
    fatal,
    parse_dag_text,
    REFINED_NODE_LIMIT,
)
from .prompts import ask_with_repair, extract_tagged_block, parse_structured_lenient, render_template
from .readout import DEFAULT_NODE_BUDGET, EvidenceSubgraph, Selection, evidence_images, evidence_text, subgraph_readout

logger = logging.getLogger(__name__)

DEFAULT_TAU_MAX = 3
PARSE_ATTEMPTS = 3
MAX_GAPS = 3
UNPARSEABLE_CHECKER_GAP = "checker output unparseable"
UNNAMED_GAP = "checker reported insufficient evidence without naming a gap"


@dataclass
class NodeAnswer:
    node_id: str
    task: str
    answer_text: str
    thought_text: str
    evidence: EvidenceSubgraph
    degraded: bool = False
    superseded: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_id": self.node_id,
            "task": self.task,
            "answer_text": self.answer_text,
            "thought_text": self.thought_text,
            "degraded": self.degraded,
            "superseded": self.superseded,
            "evidence": self.evidence.to_dict(),
        }


@dataclass
class SufficiencyVerdict:
    sufficient: bool
    gaps: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.sufficient and self.gaps:
            raise ValueError("a sufficient verdict carries no gaps")

    def to_dict(self) -> dict[str, Any]:
        return {"sufficient": self.sufficient, "gaps": list(self.gaps)}


@dataclass
class ExecutionTrace:
    query: str
    probe: EvidenceSubgraph | None = None
    dag_versions: list[PlanningGraph] = field(default_factory=list)
    answers: list[list[NodeAnswer]] = field(default_factory=list)
    verdicts: list[SufficiencyVerdict] = field(default_factory=list)
    final_answer: str = ""
    final_degraded: bool = False
    termination: str = ""
    model_exchanges: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def evidence_set(self) -> list[tuple[str, EvidenceSubgraph]]:
        """(sub-question, evidence) pairs of the final planning graph."""
        if not self.answers:
            return []
        return [(a.task, a.evidence) for a in self.answers[-1]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "probe": self.probe.to_dict() if self.probe else None,
            "dag_versions": [
                {"revision": pg.revision, "dag": pg.to_wire(), "warnings": [str(v) for v in pg.warnings]}
                for pg in self.dag_versions
            ],
            "answers": [[a.to_dict() for a in version] for version in self.answers],
            "verdicts": [v.to_dict() for v in self.verdicts],
            "final_answer": self.final_answer,
            "final_degraded": self.final_degraded,
            "termination": self.termination,
            "model_exchanges": [
                {"role": role, "prompt": prompt, "response": response}
                for role, prompt, response in self.model_exchanges
            ],
        }


class QueryAborted(DualGraphError):
    def __init__(self, message: str, trace: ExecutionTrace) -> None:
        super().__init__(message)
        self.trace = trace


def qa_pairs(answers: list[NodeAnswer]) -> str:
    return "\n\n".join(f"Q: {a.task}\nA: {a.answer_text}" for a in answers)


class _FatalDag(Unparseable):
    def __init__(self, violations: list[Violation]) -> None:
        super().__init__("invalid DAG: " + "; ".join(str(v) for v in violations))
        self.violations = violations


def _dag_parser(revision: int):
    def parse(raw: str) -> PlanningGraph:
        graph, violations = build_planning_graph(parse_dag_text(raw), revision)
        hard = fatal(violations)
        if hard:
            raise _FatalDag(hard)
        graph.warnings = violations
        return graph

    return parse


def _request_dag(client: ModelClient, prompt: str, revision: int, attempts: int) -> PlanningGraph:
    parse = _dag_parser(revision)
    try:
        graph, _ = ask_with_repair(client, ChatRequest.build(Role.DECOMPOSER, prompt), parse, attempts)
    except ModelOutputUnparseable as exc:
        # surface structural errors as InvalidDag when the last reply was a parseable but broken DAG
        try:
            parse(exc.raw)
        except _FatalDag as bad:
            raise InvalidDag(bad.violations) from exc
        except DualGraphError:
            pass
        raise
    for warning in graph.warnings:
        logger.warning("planning graph r%d: %s", revision, warning)
    return graph


def decompose_initial(
    query: str, probe: EvidenceSubgraph, client: ModelClient, attempts: int = PARSE_ATTEMPTS
) -> PlanningGraph:
    """Initial decomposition conditioned on the probing readout.

    Raises:
        ModelOutputUnparseable: no parseable ``<dag>`` block within ``attempts``.
        InvalidDag: the last parseable DAG still had fatal violations.
    """
    prompt = render_template(
        "decomposer_init", {"DOC": evidence_text(probe.selected, client.vision_capable), "Q": query}
    )
    return _request_dag(client, prompt, 0, attempts)


def refine_planning_graph(
    query: str,
    answers: list[NodeAnswer],
    gaps: list[str],
    old: PlanningGraph,
    probe: EvidenceSubgraph,
    client: ModelClient,
    attempts: int = PARSE_ATTEMPTS,
) -> PlanningGraph:
    prompt = render_template(
        "decomposer_refine",
        {
            "DOC": evidence_text(probe.selected, client.vision_capable),
            "Q": query,
            "OLD_DAG": old.to_json(),
            "EVIDENCE": qa_pairs(answers),
            "GAPS": "\n".join(f"- {g}" for g in gaps),
        },
    )
    graph = _request_dag(client, prompt, old.revision + 1, attempts)
    delta = len(graph.nodes) - len(old.nodes)
    extra: list[Violation] = []
    if not 1 <= delta <= 3:
        extra.append(RefinementDeltaOutOfRange(delta))
    if len(graph.nodes) > REFINED_NODE_LIMIT and not any(isinstance(w, NodeCountExceeded) for w in graph.warnings):
        extra.append(NodeCountExceeded(len(graph.nodes), REFINED_NODE_LIMIT))
    for warning in extra:
        logger.warning("planning graph r%d: %s", graph.revision, warning)
    graph.warnings.extend(extra)
    return graph


def _parse_thought_output(raw: str) -> tuple[str, str]:
    answer = extract_tagged_block(raw, "output")
    if not answer:
        raise Unparseable("empty <output> block")
    try:
        thought = extract_tagged_block(raw, "thought")
    except DualGraphError:
        thought = ""
    return answer, thought


def _worker_document(evidence: EvidenceSubgraph, child_answers: list[NodeAnswer], vision: bool) -> str:
    doc = evidence_text(evidence.selected, vision)
    if child_answers:
        doc += "\n\nSupplementary QA pairs from sub-questions:\n\n" + qa_pairs(child_answers)
    return doc


def execute_node(
    pg: PlanningGraph,
    node_id: str,
    graph: ContentGraph,
    answers: dict[str, NodeAnswer],
    k: int,
    client: ModelClient,
    attempts: int = PARSE_ATTEMPTS,
) -> NodeAnswer:
    """Answer one sub-question from its own readout plus its children's answers."""
    if node_id == ROOT_ID:
        raise ValueError("the root question is answered by the reasoner, not a worker")
    node = pg.nodes[node_id]
    missing = [c for c in node.children if c not in answers]
    if missing:
        raise ValueError(f"node {node_id!r} executed before its children {missing}")
    vision = client.vision_capable
    evidence = subgraph_readout(graph, node.task, k, client)
    child_answers = [answers[c] for c in node.children]
    prompt = render_template("worker", {"DOC": _worker_document(evidence, child_answers, vision), "Q": node.task})
    request = ChatRequest.build(Role.WORKER, prompt, evidence_images(evidence.selected, vision))
    try:
        (answer, thought), _ = ask_with_repair(client, request, _parse_thought_output, attempts)
        return NodeAnswer(node_id, node.task, answer, thought, evidence)
    except ModelOutputUnparseable as exc:
        logger.warning("node %s: worker output had no <output> block, using raw text", node_id)
        return NodeAnswer(node_id, node.task, exc.raw.strip(), "", evidence, degraded=True)


def parse_check(raw: str) -> SufficiencyVerdict:
    data = parse_structured_lenient(extract_tagged_block(raw, "check"))
    if not isinstance(data, dict) or "sufficient" not in data:
        raise Unparseable("check block must be an object with 'sufficient'")
    sufficient = data["sufficient"]
    if isinstance(sufficient, str) and sufficient.strip().lower() in ("true", "false"):
        sufficient = sufficient.strip().lower() == "true"
    if not isinstance(sufficient, bool):
        raise Unparseable("'sufficient' must be a boolean")
    gaps = data.get("gaps", [])
    if not isinstance(gaps, list):
        raise Unparseable("'gaps' must be a list")
    gaps = [str(g).strip() for g in gaps if str(g).strip()]
    if sufficient:
        if gaps:
            logger.info("checker marked evidence sufficient but listed gaps; gaps ignored")
        return SufficiencyVerdict(True, [])
    if len(gaps) > MAX_GAPS:
        logger.info("checker listed %d gaps; keeping the first %d", len(gaps), MAX_GAPS)
    return SufficiencyVerdict(False, gaps[:MAX_GAPS] or [UNNAMED_GAP])


def check_sufficiency(
    query: str,
    answers: list[NodeAnswer],
    probe: EvidenceSubgraph,
    client: ModelClient,
    attempts: int = PARSE_ATTEMPTS,
) -> SufficiencyVerdict:
    """Evidence checker verdict; unusable output counts as insufficient."""
    prompt = render_template(
        "checker",
        {"Q": query, "DOC": evidence_text(probe.selected, client.vision_capable), "EVIDENCE": qa_pairs(answers)},
    )
    try:
        verdict, _ = ask_with_repair(client, ChatRequest.build(Role.CHECKER, prompt), parse_check, attempts)
    except ModelOutputUnparseable:
        logger.warning("checker output unparseable; treating evidence as insufficient")
        return SufficiencyVerdict(False, [UNPARSEABLE_CHECKER_GAP])
    return verdict


def union_evidence(answers: list[NodeAnswer]) -> list[Selection]:
    """Deduplicated union of every node's evidence, in first-seen order."""
    seen: dict[str, Selection] = {}
    for answer in answers:
        for sel in answer.evidence.selected:
            seen.setdefault(sel.node_id, sel)
    return list(seen.values())


def synthesize_answer(
    query: str,
    final_pg: PlanningGraph,
    answers: list[NodeAnswer],
    client: ModelClient,
    probe: EvidenceSubgraph | None = None,
    attempts: int = PARSE_ATTEMPTS,
) -> tuple[str, bool]:
    """Reasoner call over the union of node evidence; returns ``(answer, degraded)``."""
    vision = client.vision_capable
    in_plan = [a for a in answers if a.node_id in final_pg.nodes]
    selections = union_evidence(in_plan)
    if not selections and probe is not None:
        selections = list(probe.selected)
    prompt = render_template("reasoner", {"Q": query, "DOC": evidence_text(selections, vision), "TRA": qa_pairs(in_plan)})
    request = ChatRequest.build(Role.REASONER, prompt, evidence_images(selections, vision))
    try:
        (answer, _), _ = ask_with_repair(client, request, _parse_thought_output, attempts)
        return answer, False
    except ModelOutputUnparseable as exc:
        logger.warning("reasoner output had no <output> block, returning raw text")
        return exc.raw.strip(), True


def _execute_plan(
    pg: PlanningGraph,
    graph: ContentGraph,
    k: int,
    client: ModelClient,
    cache: dict[tuple[str, str], NodeAnswer],
    workers: int,
) -> list[NodeAnswer]:
    order = [nid for nid in execution_order(pg) if nid != ROOT_ID]
    answers: dict[str, NodeAnswer] = {}

    def run(nid: str) -> NodeAnswer:
        key = (nid, pg.nodes[nid].task)
        if key in cache:
            return cache[key]
        return execute_node(pg, nid, graph, answers, k, client)

    if workers <= 1:
        for nid in order:
            answers[nid] = run(nid)
    else:
        remaining = list(order)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while remaining:
                wave = [n for n in remaining if all(c in answers for c in pg.nodes[n].children)]
                for nid, answer in zip(wave, pool.map(run, wave)):
                    answers[nid] = answer
                remaining = [n for n in remaining if n not in answers]
    for nid in order:
        cache.setdefault((nid, pg.nodes[nid].task), answers[nid])
    return [answers[nid] for nid in order]


def answer_query(
    query: str,
    graph: ContentGraph,
    client: ModelClient,
    k: int = DEFAULT_NODE_BUDGET,
    tau_max: int = DEFAULT_TAU_MAX,
    workers: int = 1,
) -> tuple[str, ExecutionTrace]:
    """Probe, decompose, then execute/verify/refine until sufficient or ``tau_max`` refinements.

    Answers are reused across revisions for nodes whose id and task text are
    unchanged. Fatal errors raise :class:`QueryAborted` carrying the partial trace.
    """
    if tau_max < 0:
        raise ValueError("tau_max must be non-negative")
    recorder = RecordingClient(client)
    trace = ExecutionTrace(query, model_exchanges=recorder.exchanges)
    cache: dict[tuple[str, str], NodeAnswer] = {}
    try:
        trace.probe = subgraph_readout(graph, query, k, recorder)
        pg = decompose_initial(query, trace.probe, recorder)
        while True:
            trace.dag_versions.append(pg)
            answers = _execute_plan(pg, graph, k, recorder, cache, workers)
            trace.answers.append(answers)
            verdict = check_sufficiency(query, answers, trace.probe, recorder)
            trace.verdicts.append(verdict)
            if verdict.sufficient:
                trace.termination = "sufficient"
                break
            if pg.revision >= tau_max:
                trace.termination = "tau_max"
                break
            try:
                pg = refine_planning_graph(query, answers, verdict.gaps, pg, trace.probe, recorder)
            except (ModelOutputUnparseable, InvalidDag) as exc:
                logger.warning("refinement abandoned, keeping previous evidence: %s", exc)
                trace.termination = "refine_failed"
                break
        final_ids = {(a.node_id, a.task) for a in trace.answers[-1]}
        trace.answers = [
            [a if (a.node_id, a.task) in final_ids else _superseded(a) for a in version] for version in trace.answers
        ]
        trace.final_answer, trace.final_degraded = synthesize_answer(
            query, pg, trace.answers[-1], recorder, trace.probe
        )
    except DualGraphError as exc:
        raise QueryAborted(f"query aborted: {exc}", trace) from exc
    return trace.final_answer, trace


def _superseded(answer: NodeAnswer) -> NodeAnswer:
    return NodeAnswer(
        answer.node_id, answer.task, answer.answer_text, answer.thought_text, answer.evidence, answer.degraded, True
    )
