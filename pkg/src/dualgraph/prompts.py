"""Role prompt templates and robust extraction of structured model output."""

from __future__ import annotations

import json
import re
from dataclasses import replace
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

from .errors import ModelOutputUnparseable, TagNotFound, UnboundPlaceholder, UnknownTemplate, Unparseable

# Template id -> data file. One template per model role.
TEMPLATE_FILES = {
    "decomposer_init": "decomposer_init.txt",
    "decomposer_refine": "decomposer_refine.txt",
    "worker": "worker.txt",
    "reasoner": "reasoner.txt",
    "checker": "checker.txt",
    "initializer": "initializer.txt",
    "evolver": "evolver.txt",
    "judge_accuracy": "judge_accuracy.txt",
    "judge_recall": "judge_recall.txt",
}

# Templates embed literal JSON, so placeholders are matched against a closed
# vocabulary instead of any brace/dollar expression.
_DOLLAR_NAMES = ("Q", "DOC", "OLD_DAG", "EVIDENCE", "GAPS", "TRA")
_BRACE_NAMES = (
    "content",
    "context",
    "keywords",
    "neighbors",
    "neighbor_number",
    "document chunk",
    "question",
    "gold_answers",
    "assistant_answer",
    "evidence_raw",
    "retrieved_context",
)
_TOKEN_TO_NAME = {f"${n}$": n for n in _DOLLAR_NAMES} | {"{" + n + "}": n for n in _BRACE_NAMES}
_PLACEHOLDER_RE = re.compile(
    "|".join(re.escape(t) for t in sorted(_TOKEN_TO_NAME, key=len, reverse=True))
)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    try:
        filename = TEMPLATE_FILES[name]
    except KeyError:
        raise UnknownTemplate(f"unknown template {name!r}") from None
    return resources.files("dualgraph").joinpath("templates").joinpath(filename).read_text(encoding="utf-8")


def placeholders(name: str) -> list[str]:
    """Placeholder tokens used by a template, in first-occurrence order."""
    seen: dict[str, None] = {}
    for m in _PLACEHOLDER_RE.finditer(load_template(name)):
        seen.setdefault(m.group(0), None)
    return list(seen)


def render_template(name: str, bindings: Mapping[str, Any]) -> str:
    """Substitute every placeholder of template ``name``.

    ``bindings`` are keyed by bare placeholder names (``"Q"``, ``"DOC"``,
    ``"neighbor_number"``, ``"document chunk"``). Substitution is a single pass,
    so bound values are never re-scanned for placeholders.
    """
    template = load_template(name)
    for token in placeholders(name):
        if _TOKEN_TO_NAME[token] not in bindings:
            raise UnboundPlaceholder(token)

    def sub(m: re.Match[str]) -> str:
        return str(bindings[_TOKEN_TO_NAME[m.group(0)]])

    return _PLACEHOLDER_RE.sub(sub, template)


def wrap(tag: str, text: str) -> str:
    return f"<{tag}>{text}</{tag}>"


def extract_tagged_block(text: str, tag: str) -> str:
    """Return the trimmed content of the first ``<tag>...</tag>`` pair."""
    m = re.search(rf"<{re.escape(tag)}>(.*?)</{re.escape(tag)}>", text, re.DOTALL)
    if m is None:
        raise TagNotFound(f"no <{tag}>...</{tag}> block in model output")
    return m.group(1).strip()


def _split_strings(text: str) -> list[tuple[bool, str]]:
    """Split into (inside_double_quoted_string, chunk) segments."""
    out: list[tuple[bool, str]] = []
    buf: list[str] = []
    in_str = False
    i = 0
    while i < len(text):
        c = text[i]
        if in_str:
            buf.append(c)
            if c == "\\" and i + 1 < len(text):
                buf.append(text[i + 1])
                i += 1
            elif c == '"':
                out.append((True, "".join(buf)))
                buf, in_str = [], False
        elif c == '"':
            if buf:
                out.append((False, "".join(buf)))
            buf, in_str = [c], True
        else:
            buf.append(c)
        i += 1
    if buf:
        out.append((in_str, "".join(buf)))
    return out


def _outside_strings(text: str, fn) -> str:
    return "".join(chunk if is_str else fn(chunk) for is_str, chunk in _split_strings(text))


def _strip_fences(text: str) -> str:
    m = re.search(r"```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```", text, re.DOTALL)
    if m:
        return m.group(1)
    return re.sub(r"^\s*```[A-Za-z0-9_-]*\s*$", "", text, flags=re.MULTILINE)


def _strip_line_comments(text: str) -> str:
    return _outside_strings(text, lambda chunk: re.sub(r"//[^\n]*", "", chunk))


def _single_to_double_quotes(text: str) -> str:
    out: list[str] = []
    for is_str, chunk in _split_strings(text):
        if is_str:
            out.append(chunk)
            continue
        i = 0
        while i < len(chunk):
            c = chunk[i]
            if c != "'":
                out.append(c)
                i += 1
                continue
            j = i + 1
            inner: list[str] = []
            while j < len(chunk) and chunk[j] != "'":
                if chunk[j] == "\\" and j + 1 < len(chunk) and chunk[j + 1] == "'":
                    inner.append("'")
                    j += 2
                    continue
                inner.append(chunk[j])
                j += 1
            if j >= len(chunk):
                out.append(chunk[i:])
                break
            out.append(json.dumps("".join(inner), ensure_ascii=False))
            i = j + 1
    return "".join(out)


_PY_LITERALS = {"True": "true", "False": "false", "None": "null"}


def _normalize_literals(text: str) -> str:
    return _outside_strings(
        text, lambda chunk: re.sub(r"\b(True|False|None)\b", lambda m: _PY_LITERALS[m.group(1)], chunk)
    )


def _outermost_value(text: str) -> str:
    starts = [i for i in (text.find("{"), text.find("[")) if i >= 0]
    if not starts:
        return text
    start = min(starts)
    end = text.rfind("}" if text[start] == "{" else "]")
    if end <= start:
        return text
    body = text[start : end + 1]
    return _outside_strings(body, lambda chunk: re.sub(r",(\s*[}\]])", r"\1", chunk))


_REPAIRS = (_strip_fences, _strip_line_comments, _single_to_double_quotes, _normalize_literals, _outermost_value)


def parse_structured_lenient(text: str) -> Any:
    """Parse JSON-ish model output.

    A strict parse is tried first. On failure the bounded repairs are applied
    cumulatively in this order, re-trying a strict parse after each: strip code
    fences, strip ``//`` line comments, convert single-quoted strings, map
    ``True``/``False``/``None`` to JSON literals, and finally cut the outermost
    object/array out of surrounding prose (dropping trailing commas).
    """
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError):
        pass
    current = text
    for repair in _REPAIRS:
        current = repair(current)
        try:
            return json.loads(current)
        except json.JSONDecodeError:
            continue
    raise Unparseable(f"could not parse structured output: {text[:200]!r}")


REPAIR_HINT = (
    "\n\nYour previous response could not be parsed ({detail}). "
    "Respond again, following the required output format exactly."
)


def ask_with_repair(client, request, parse, attempts: int = 3):
    """Chat until ``parse(response)`` succeeds, re-prompting with a repair hint.

    ``parse`` raises :class:`Unparseable` or :class:`TagNotFound` on bad
    output. Returns ``(parsed, raw_response)``; after ``attempts`` failures
    raises :class:`ModelOutputUnparseable` carrying the last raw response.
    """
    base_text = request.parts[0]
    detail = ""
    raw = ""
    for attempt in range(attempts):
        if attempt:
            parts = (base_text + REPAIR_HINT.format(detail=detail),) + tuple(request.parts[1:])
            req = replace(request, parts=parts)
        else:
            req = request
        raw = client.chat(req)
        try:
            return parse(raw), raw
        except (Unparseable, TagNotFound) as exc:
            detail = str(exc)
    raise ModelOutputUnparseable(request.role.value, f"unparseable after {attempts} attempts: {detail}", raw)
