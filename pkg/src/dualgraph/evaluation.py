"""LLM-as-judge scoring of answers and retrieved context."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .client import ChatRequest, ModelClient, Role
from .errors import MalformedInput, ModelOutputUnparseable, Unparseable
from .prompts import ask_with_repair, parse_structured_lenient, render_template

logger = logging.getLogger(__name__)

JUDGE_ATTEMPTS = 3

RECALL_RUBRIC = {
    1.0: "Full Support",
    0.7: "Near Full Support",
    0.3: "Partial/Weak Support",
    0.0: "No Support/Contradictory",
}


@dataclass
class JudgedAnswer:
    question: str
    gold: str
    predicted: str
    accuracy: int
    reasoning: str = ""

    def __post_init__(self) -> None:
        if self.accuracy not in (0, 1) or isinstance(self.accuracy, bool):
            raise ValueError(f"accuracy must be 0 or 1, got {self.accuracy!r}")


@dataclass
class RecallVerdict:
    score: float
    label: str
    supported_count: int
    total_segments: int
    missing_segments: list[str] = field(default_factory=list)
    contradicted_segments: list[str] = field(default_factory=list)
    reasoning: str = ""

    def __post_init__(self) -> None:
        if RECALL_RUBRIC.get(self.score) != self.label:
            raise ValueError(f"score {self.score!r} does not match label {self.label!r}")
        if not 0 <= self.supported_count <= self.total_segments:
            raise ValueError("need 0 <= supported_count <= total_segments")


@dataclass
class JudgeFailure:
    """A judge call whose output never passed validation; excluded from means."""

    question: str
    detail: str
    raw: str = ""


def parse_accuracy(raw: str) -> tuple[int, str]:
    data = parse_structured_lenient(raw)
    if not isinstance(data, dict) or "accuracy" not in data:
        raise Unparseable("expected an object with 'accuracy'")
    acc = data["accuracy"]
    if isinstance(acc, bool) or acc not in (0, 1):
        raise Unparseable(f"accuracy must be 0 or 1, got {acc!r}")
    return int(acc), str(data.get("reasoning", ""))


def _int_field(data: dict[str, Any], key: str) -> int:
    value = data.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise Unparseable(f"'{key}' must be an integer")
    return int(value)


def _str_list(data: dict[str, Any], key: str) -> list[str]:
    value = data.get(key, [])
    if not isinstance(value, list):
        raise Unparseable(f"'{key}' must be a list")
    return [str(v) for v in value]


def parse_recall(raw: str) -> RecallVerdict:
    data = parse_structured_lenient(raw)
    if not isinstance(data, dict):
        raise Unparseable("expected a JSON object")
    score = data.get("score")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise Unparseable("'score' must be a number")
    score = float(score)
    if score not in RECALL_RUBRIC:
        raise Unparseable(f"score {score} is not one of {sorted(RECALL_RUBRIC)}")
    label = data.get("label")
    if label != RECALL_RUBRIC[score]:
        raise Unparseable(f"label {label!r} is inconsistent with score {score} (expected {RECALL_RUBRIC[score]!r})")
    supported, total = _int_field(data, "supported_count"), _int_field(data, "total_segments")
    if not 0 <= supported <= total:
        raise Unparseable("supported_count must lie in [0, total_segments]")
    return RecallVerdict(
        score,
        label,
        supported,
        total,
        _str_list(data, "missing_segments"),
        _str_list(data, "contradicted_segments"),
        str(data.get("reasoning", "")),
    )


def judge_accuracy(
    question: str, gold: str, predicted: str, client: ModelClient, attempts: int = JUDGE_ATTEMPTS
) -> JudgedAnswer | JudgeFailure:
    prompt = render_template(
        "judge_accuracy", {"question": question, "gold_answers": gold, "assistant_answer": predicted}
    )
    try:
        (acc, reasoning), _ = ask_with_repair(client, ChatRequest.build(Role.JUDGE, prompt), parse_accuracy, attempts)
    except ModelOutputUnparseable as exc:
        logger.warning("accuracy judge failed for %r: %s", question[:60], exc)
        return JudgeFailure(question, str(exc), exc.raw)
    return JudgedAnswer(question, gold, predicted, acc, reasoning)


def judge_recall(
    evidence_raw: str, retrieved_context: str, client: ModelClient, attempts: int = JUDGE_ATTEMPTS
) -> RecallVerdict | JudgeFailure:
    prompt = render_template("judge_recall", {"evidence_raw": evidence_raw, "retrieved_context": retrieved_context})
    try:
        verdict, _ = ask_with_repair(client, ChatRequest.build(Role.JUDGE, prompt), parse_recall, attempts)
    except ModelOutputUnparseable as exc:
        logger.warning("recall judge failed: %s", exc)
        return JudgeFailure(evidence_raw[:60], str(exc), exc.raw)
    return verdict


@dataclass
class AccuracySummary:
    count: int
    accuracy_percent: float | None
    judge_failures: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def aggregate(results: list[JudgedAnswer | JudgeFailure]) -> AccuracySummary:
    scored = [r.accuracy for r in results if isinstance(r, JudgedAnswer)]
    failures = sum(1 for r in results if isinstance(r, JudgeFailure))
    if not scored:
        return AccuracySummary(0, None, failures)
    # integer sum first keeps the mean exact and order-independent
    return AccuracySummary(len(scored), 100.0 * sum(scored) / len(scored), failures)


def read_records(path: str | Path) -> list[dict[str, Any]]:
    """Read a JSON array or JSON Lines file of ``{question, gold, predicted[, evidence, context]}``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedInput(f"cannot read {path}: {exc}") from exc
    try:
        if text.lstrip().startswith("["):
            records = json.loads(text)
        else:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"{path}: {exc}") from exc
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or not all(isinstance(rec.get(k), str) for k in ("question", "gold", "predicted")):
            raise MalformedInput(f"{path}: record {i} needs string question, gold and predicted")
    return records


def _judge_record(rec: dict[str, Any], client: ModelClient) -> dict[str, Any]:
    acc = judge_accuracy(rec["question"], rec["gold"], rec["predicted"], client)
    item: dict[str, Any] = {"question": rec["question"], "accuracy": None, "judge_failure": None}
    if isinstance(acc, JudgedAnswer):
        item["accuracy"] = acc.accuracy
        item["reasoning"] = acc.reasoning
    else:
        item["judge_failure"] = acc.detail
    if isinstance(rec.get("evidence"), str) and isinstance(rec.get("context"), str):
        recall = judge_recall(rec["evidence"], rec["context"], client)
        item["recall"] = asdict(recall) if isinstance(recall, RecallVerdict) else {"judge_failure": recall.detail}
    return {"item": item, "accuracy": acc, "recall": item.get("recall")}


def evaluate_batch(records: list[dict[str, Any]], client: ModelClient, workers: int = 1) -> dict[str, Any]:
    """Judge every record and return ``{"summary": ..., "items": [...]}`` in input order."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            judged = list(pool.map(lambda r: _judge_record(r, client), records))
    else:
        judged = [_judge_record(r, client) for r in records]
    summary = aggregate([j["accuracy"] for j in judged]).to_dict()
    recalls = [j["recall"] for j in judged if j["recall"] is not None]
    scores = [r["score"] for r in recalls if "score" in r]
    summary["recall_count"] = len(scores)
    summary["recall_mean"] = sum(scores) / len(scores) if scores else None
    summary["recall_failures"] = len(recalls) - len(scores)
    return {"summary": summary, "items": [j["item"] for j in judged]}
