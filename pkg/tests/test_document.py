from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualgraph.document import (
    AtomicUnit,
    Modality,
    ParsedCorpus,
    corpus_to_interchange,
    load_corpus,
    parse_interchange,
)
from dualgraph.errors import MalformedInput, MissingImage


def _write(tmp_path, units, doc_id="d"):
    data = {"version": 1, "documents": [{"doc_id": doc_id, "source": "x.pdf", "units": units}]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(data))
    return path


def _text_unit(uid, order, text="t"):
    return {"unit_id": uid, "order": order, "modality": "text", "text": text, "image_ref": None}


def test_three_text_units_load_in_reading_order(tmp_path):
    path = _write(tmp_path, [_text_unit("u3", 7), _text_unit("u1", 0), _text_unit("u2", 2)])
    corpus = load_corpus(path)
    assert [u.unit_id for u in corpus] == ["u1", "u2", "u3"]
    assert corpus.source_manifest == {"d": "x.pdf"}


def test_duplicate_unit_id_is_named(tmp_path):
    path = _write(tmp_path, [_text_unit("u1", 0), _text_unit("u1", 1)])
    with pytest.raises(MalformedInput, match="u1"):
        load_corpus(path)


def test_missing_image_reports_unit(tmp_path):
    unit = {"unit_id": "f1", "order": 0, "modality": "figure", "text": "Figure 1", "image_ref": "nope.png"}
    with pytest.raises(MissingImage) as info:
        load_corpus(_write(tmp_path, [unit]))
    assert info.value.unit_id == "f1"


def test_negative_order_rejected(tmp_path):
    with pytest.raises(MalformedInput):
        load_corpus(_write(tmp_path, [_text_unit("u1", -1)]))


def test_equal_orders_within_doc_rejected(tmp_path):
    with pytest.raises(MalformedInput):
        load_corpus(_write(tmp_path, [_text_unit("u1", 2), _text_unit("u2", 2)]))


def test_text_unit_with_image_rejected(tmp_path):
    (tmp_path / "i.png").write_bytes(b"x")
    unit = {"unit_id": "u1", "order": 0, "modality": "text", "text": "t", "image_ref": "i.png"}
    with pytest.raises(MalformedInput):
        load_corpus(_write(tmp_path, [unit]))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(version=2),
        lambda d: d.pop("documents"),
        lambda d: d["documents"][0]["units"][0].update(modality="audio"),
        lambda d: d["documents"][0]["units"][0].update(order="3"),
        lambda d: d["documents"][0]["units"][0].update(order=True),
        lambda d: d["documents"][0]["units"][0].pop("text"),
    ],
)
def test_schema_violations(tmp_path, mutate):
    data = {"version": 1, "documents": [{"doc_id": "d", "source": "s", "units": [_text_unit("u1", 0)]}]}
    mutate(data)
    with pytest.raises(MalformedInput):
        parse_interchange(data, tmp_path)


def test_not_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(MalformedInput):
        load_corpus(path)


def test_fixture_corpus_order_and_images(interchange):
    corpus = load_corpus(interchange)
    assert [u.unit_id for u in corpus] == ["a1", "a2", "a3", "b1", "b2"]
    fig = corpus.units[1]
    assert fig.modality is Modality.FIGURE and fig.is_visual
    assert fig.image_ref == (interchange.parent / "img" / "fig1.png").resolve()


def test_load_is_deterministic(interchange):
    assert load_corpus(interchange) == load_corpus(interchange)


def test_interchange_round_trip(interchange):
    corpus = load_corpus(interchange)
    again = parse_interchange(corpus_to_interchange(corpus, interchange.parent), interchange.parent)
    assert again == corpus


def test_explicit_empty_corpus_allowed():
    assert len(ParsedCorpus(())) == 0


_ids = st.text("abcdefgh", min_size=1, max_size=4)


@st.composite
def interchange_docs(draw):
    doc_ids = draw(st.lists(_ids, min_size=1, max_size=3, unique=True))
    unit_ids = iter(draw(st.lists(_ids.map(lambda s: "u" + s), min_size=12, max_size=12, unique=True)))
    docs = []
    for doc_id in doc_ids:
        orders = draw(st.lists(st.integers(0, 1000), min_size=1, max_size=4, unique=True))
        draw(st.randoms()).shuffle(orders)
        units = [
            {"unit_id": next(unit_ids), "order": o, "modality": draw(st.sampled_from(["text", "table"])), "text": "x", "image_ref": None}
            for o in orders
        ]
        docs.append({"doc_id": doc_id, "source": doc_id + ".pdf", "units": units})
    return {"version": 1, "documents": docs}


@settings(max_examples=60, deadline=None)
@given(interchange_docs())
def test_accepted_corpora_satisfy_unit_invariants(tmp_path_factory, data):
    base = tmp_path_factory.mktemp("c")
    corpus = parse_interchange(data, base)
    ids = [u.unit_id for u in corpus]
    assert len(ids) == len(set(ids))
    keys = [(u.doc_id, u.order) for u in corpus]
    assert keys == sorted(keys)
    for unit in corpus:
        assert unit.order >= 0
        if unit.modality is Modality.TEXT:
            assert unit.image_ref is None
    assert parse_interchange(data, base) == corpus


def test_atomic_unit_rejects_negative_order():
    with pytest.raises(MalformedInput):
        AtomicUnit("d", "u", -1, Modality.TEXT, "t")
