"""Parser-output interchange format and the validated corpus it loads into.

The interchange file is a single JSON object::

    {"version": 1,
     "documents": [{"doc_id": "...", "source": "report.pdf",
                    "units": [{"unit_id": "...", "order": 0,
                               "modality": "text" | "table" | "figure",
                               "text": "...", "image_ref": "img/f1.png" | null}]}]}

``image_ref`` paths are resolved relative to the interchange file's directory.
Captions are expected to be already fused into the ``text`` of table and
figure units by the upstream converter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator

from .errors import MalformedInput, MissingImage

INTERCHANGE_VERSION = 1


class Modality(str, Enum):
    TEXT = "text"
    TABLE = "table"
    FIGURE = "figure"


@dataclass(frozen=True)
class AtomicUnit:
    doc_id: str
    unit_id: str
    order: int
    modality: Modality
    text: str
    image_ref: Path | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.order, int) or isinstance(self.order, bool) or self.order < 0:
            raise MalformedInput(f"unit {self.unit_id!r}: order must be a non-negative integer")
        if self.modality is Modality.TEXT and self.image_ref is not None:
            raise MalformedInput(f"unit {self.unit_id!r}: text units cannot carry an image")

    @property
    def is_visual(self) -> bool:
        return self.modality is not Modality.TEXT


@dataclass(frozen=True)
class ParsedCorpus:
    """Units in global reading order: grouped by ``doc_id``, then by ``order``."""

    units: tuple[AtomicUnit, ...]
    source_manifest: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        last_order: dict[str, int] = {}
        for unit in self.units:
            if unit.unit_id in seen:
                raise MalformedInput(f"duplicate unit_id {unit.unit_id!r}")
            seen.add(unit.unit_id)
            prev = last_order.get(unit.doc_id)
            if prev is not None and unit.order <= prev:
                raise MalformedInput(
                    f"unit {unit.unit_id!r}: order {unit.order} does not increase within {unit.doc_id!r}"
                )
            last_order[unit.doc_id] = unit.order

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self) -> Iterator[AtomicUnit]:
        return iter(self.units)

    @classmethod
    def from_units(cls, units: list[AtomicUnit], source_manifest: dict[str, str] | None = None) -> ParsedCorpus:
        """Sort ``units`` into reading order and validate them."""
        ordered = sorted(units, key=lambda u: (u.doc_id, u.order))
        return cls(tuple(ordered), dict(source_manifest or {}))


def _require(obj: dict[str, Any], key: str, kind: type | tuple[type, ...], where: str) -> Any:
    if key not in obj:
        raise MalformedInput(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise MalformedInput(f"{where}: field {key!r} has wrong type {type(value).__name__}")
    return value


def parse_interchange(data: Any, base_dir: Path, check_images: bool = True) -> ParsedCorpus:
    """Validate an already-decoded interchange object and build the corpus."""
    if not isinstance(data, dict):
        raise MalformedInput("interchange document must be a JSON object")
    version = data.get("version")
    if version != INTERCHANGE_VERSION:
        raise MalformedInput(f"unsupported interchange version {version!r}")
    documents = _require(data, "documents", list, "interchange")

    units: list[AtomicUnit] = []
    manifest: dict[str, str] = {}
    for i, doc in enumerate(documents):
        where = f"documents[{i}]"
        if not isinstance(doc, dict):
            raise MalformedInput(f"{where}: must be an object")
        doc_id = _require(doc, "doc_id", str, where)
        if doc_id in manifest:
            raise MalformedInput(f"{where}: duplicate doc_id {doc_id!r}")
        manifest[doc_id] = _require(doc, "source", str, where)
        for j, raw in enumerate(_require(doc, "units", list, where)):
            uwhere = f"{where}.units[{j}]"
            if not isinstance(raw, dict):
                raise MalformedInput(f"{uwhere}: must be an object")
            unit_id = _require(raw, "unit_id", str, uwhere)
            order = _require(raw, "order", int, uwhere)
            try:
                modality = Modality(_require(raw, "modality", str, uwhere))
            except ValueError:
                raise MalformedInput(f"{uwhere}: unknown modality {raw['modality']!r}") from None
            text = _require(raw, "text", str, uwhere)
            ref = raw.get("image_ref")
            image_ref = None
            if ref is not None:
                if not isinstance(ref, str):
                    raise MalformedInput(f"{uwhere}: image_ref must be a string or null")
                image_ref = (base_dir / ref).resolve()
                if check_images and not image_ref.is_file():
                    raise MissingImage(unit_id, str(image_ref))
            units.append(AtomicUnit(doc_id, unit_id, order, modality, text, image_ref))
    return ParsedCorpus.from_units(units, manifest)


def load_corpus(path: str | Path) -> ParsedCorpus:
    """Load and validate an interchange file.

    Raises:
        MalformedInput: schema violations, duplicate ids, negative orders.
        MissingImage: an ``image_ref`` that does not exist on disk.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedInput(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"{path}: not valid JSON ({exc})") from exc
    return parse_interchange(data, path.parent.resolve())


def corpus_to_interchange(corpus: ParsedCorpus, base_dir: Path | None = None) -> dict[str, Any]:
    """Inverse of :func:`parse_interchange`; image paths made relative to ``base_dir`` when given."""
    docs: dict[str, dict[str, Any]] = {}
    for unit in corpus:
        doc = docs.setdefault(
            unit.doc_id,
            {"doc_id": unit.doc_id, "source": corpus.source_manifest.get(unit.doc_id, ""), "units": []},
        )
        ref = None
        if unit.image_ref is not None:
            ref = str(unit.image_ref)
            if base_dir is not None:
                try:
                    ref = Path(unit.image_ref).resolve().relative_to(base_dir.resolve()).as_posix()
                except ValueError:
                    pass
        doc["units"].append(
            {
                "unit_id": unit.unit_id,
                "order": unit.order,
                "modality": unit.modality.value,
                "text": unit.text,
                "image_ref": ref,
            }
        )
    return {"version": INTERCHANGE_VERSION, "documents": list(docs.values())}
