from __future__ import annotations

import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualgraph.client import ScriptedClient
from dualgraph.evaluation import (
    RECALL_RUBRIC,
    JudgedAnswer,
    JudgeFailure,
    RecallVerdict,
    aggregate,
    evaluate_batch,
    judge_accuracy,
    judge_recall,
    read_records,
)


def recall(score, label, supported=2, total=2):
    return json.dumps(
        {
            "score": score,
            "label": label,
            "supported_count": supported,
            "total_segments": total,
            "missing_segments": [],
            "contradicted_segments": [],
            "reasoning": "r",
        }
    )


def test_accuracy_parsed():
    client = ScriptedClient({"judge": ['{"accuracy": 1, "reasoning": "match"}']})
    out = judge_accuracy("q", "g", "p", client)
    assert isinstance(out, JudgedAnswer) and out.accuracy == 1 and out.reasoning == "match"
    prompt = client.prompts_for("judge")[0]
    assert "Question: q" in prompt and "Expected Answer: g" in prompt and "Generated Answer: p" in prompt


def test_accuracy_out_of_range_retried_then_failure():
    client = ScriptedClient(defaults={"judge": '{"accuracy": 2, "reasoning": "x"}'})
    out = judge_accuracy("q", "g", "p", client)
    assert isinstance(out, JudgeFailure)
    assert client.ledger.calls["judge"] == 3


def test_not_answerable_symmetry_with_faithful_judge():
    def faithful(request):
        text = request.text
        both = "Expected Answer: Not answerable" in text and "Generated Answer: Not answerable" in text
        return json.dumps({"accuracy": int(both), "reasoning": "symmetry rule"})

    out = judge_accuracy("q", "Not answerable", "Not answerable", ScriptedClient({"judge": [faithful]}))
    assert out.accuracy == 1


def test_recall_accepts_rubric_scores():
    out = judge_recall("ev", "ctx", ScriptedClient({"judge": [recall(1.0, "Full Support")]}))
    assert isinstance(out, RecallVerdict) and out.score == 1.0


def test_recall_rejects_off_rubric_score():
    client = ScriptedClient({"judge": [recall(0.5, "Partial/Weak Support"), recall(0.3, "Partial/Weak Support", 1, 3)]})
    out = judge_recall("ev", "ctx", client)
    assert out.score == 0.3 and client.ledger.calls["judge"] == 2


def test_recall_label_mismatch_retried():
    client = ScriptedClient({"judge": [recall(0.7, "Full Support"), recall(0.7, "Near Full Support", 3, 4)]})
    out = judge_recall("ev", "ctx", client)
    assert out.label == "Near Full Support"
    assert "inconsistent" in client.prompts_for("judge")[1]


def test_recall_count_check():
    client = ScriptedClient(defaults={"judge": recall(1.0, "Full Support", 5, 2)})
    assert isinstance(judge_recall("ev", "ctx", client), JudgeFailure)


def test_verdict_types_enforce_invariants():
    with pytest.raises(ValueError):
        JudgedAnswer("q", "g", "p", 2)
    with pytest.raises(ValueError):
        RecallVerdict(0.7, "Full Support", 1, 1)
    with pytest.raises(ValueError):
        RecallVerdict(1.0, "Full Support", 3, 1)


def _judged(accs):
    return [JudgedAnswer("q", "g", "p", a) for a in accs]


def test_aggregate_examples():
    assert aggregate(_judged([1, 1, 0, 0])).accuracy_percent == 50.0
    assert aggregate(_judged([1, 1, 1])).accuracy_percent == 100.0
    empty = aggregate([])
    assert empty.count == 0 and empty.accuracy_percent is None
    mixed = aggregate(_judged([1, 0]) + [JudgeFailure("q", "bad")])
    assert (mixed.count, mixed.accuracy_percent, mixed.judge_failures) == (2, 50.0, 1)


@given(st.lists(st.sampled_from([0, 1]), min_size=1, max_size=200), st.randoms())
def test_aggregate_is_exact_mean_and_order_free(accs, rnd):
    shuffled = list(accs)
    rnd.shuffle(shuffled)
    a, b = aggregate(_judged(accs)), aggregate(_judged(shuffled))
    assert a == b
    assert a.accuracy_percent == 100.0 * sum(accs) / len(accs)


def test_batch_from_jsonl(tmp_path):
    path = tmp_path / "in.jsonl"
    rows = [
        {"question": "q1", "gold": "a", "predicted": "a", "evidence": "e", "context": "c"},
        {"question": "q2", "gold": "b", "predicted": "x"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows))
    script = ['{"accuracy": 1, "reasoning": ""}', recall(0.0, "No Support/Contradictory", 0, 1), '{"accuracy": 0}']
    result = evaluate_batch(read_records(path), ScriptedClient({"judge": script}))
    assert result["summary"]["accuracy_percent"] == 50.0
    assert result["summary"]["recall_mean"] == 0.0
    assert result["items"][0]["recall"]["label"] == "No Support/Contradictory"


def test_random_judge_outputs_never_recorded_off_rubric():
    rng = random.Random(9)
    scores = [0.0, 0.3, 0.5, 0.7, 0.9, 1.0, 2]
    labels = list(RECALL_RUBRIC.values()) + ["Other"]
    for _ in range(100):
        script = [recall(rng.choice(scores), rng.choice(labels), rng.randint(0, 3), rng.randint(0, 3)) for _ in range(3)]
        out = judge_recall("e", "c", ScriptedClient({"judge": script}))
        if isinstance(out, RecallVerdict):
            assert RECALL_RUBRIC[out.score] == out.label
            assert out.supported_count <= out.total_segments
