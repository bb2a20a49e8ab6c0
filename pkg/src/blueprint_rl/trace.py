"""Blueprint-embedded reasoning traces: data model, parser and canonical renderer.

A trace is serialized as::

    <think>
    ```json
    [
    {"thought": "...", "name": "chair", "bbox": [10, 20, 110, 220], "attribute": "..."}
    ]
    ```
    <analysis text>
    </think>
    <answer>answer text</answer>

``parse_trace`` is total: it never raises, every failure is reported through
flags and diagnostics on the returned :class:`ParseReport`.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"
FENCE = "```"
RESERVED_TOKENS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE, FENCE)

OBJECT_KEYS = ("thought", "name", "bbox", "attribute")

_FENCE_HEADER = re.compile(r"```json[ \t]*\r?\n?", re.IGNORECASE)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image pixels, origin top-left.

    Degenerate boxes (``x1 == x2`` or ``y1 == y2``) are allowed and have zero area.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinate in {coords}")
        if min(coords) < 0:
            raise ValueError(f"negative box coordinate in {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted box {coords}")

    @property
    def is_degenerate(self) -> bool:
        return self.x1 == self.x2 or self.y1 == self.y2

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_seq(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise ValueError(f"bbox needs 4 numbers, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class BlueprintObject:
    name: str
    bbox: BoundingBox
    thought: str = ""
    attribute: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("blueprint object name must be non-empty")


@dataclass(frozen=True)
class Blueprint:
    objects: tuple[BlueprintObject, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self) -> Iterator[BlueprintObject]:
        return iter(self.objects)


@dataclass(frozen=True)
class ReasoningTrace:
    blueprint: Blueprint
    analysis: str
    answer: str
    # original text; excluded from equality so parsed and constructed traces compare by content
    raw: str = field(default="", compare=False, repr=False)

    def semantically_equal(self, other: "ReasoningTrace") -> bool:
        return (
            self.blueprint == other.blueprint
            and self.analysis.strip() == other.analysis.strip()
            and self.answer.strip() == other.answer.strip()
        )


@dataclass(frozen=True)
class Diagnostic:
    offset: int  # UTF-8 byte offset into the raw text
    message: str


@dataclass(frozen=True)
class ParseReport:
    tags_ok: bool
    blueprint_json_ok: bool
    trace: Optional[ReasoningTrace] = None
    diagnostics: tuple[Diagnostic, ...] = ()
    # best-effort blueprint, populated whenever the fenced JSON parsed, even if tags failed
    blueprint: Optional[Blueprint] = None

    @property
    def ok(self) -> bool:
        return self.tags_ok and self.blueprint_json_ok


class _Diag:
    def __init__(self, text: str):
        self._text = text
        self.items: list[Diagnostic] = []

    def add(self, char_index: int, message: str) -> None:
        prefix = self._text[: max(char_index, 0)]
        offset = len(prefix.encode("utf-8", "surrogatepass"))
        self.items.append(Diagnostic(offset, message))


def _check_tags(text: str, diag: _Diag) -> bool:
    ok = True
    for token in (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE):
        n = text.count(token)
        if n != 1:
            pos = text.find(token)
            diag.add(pos if pos >= 0 else len(text), f"expected exactly one {token}, found {n}")
            ok = False
    if not ok:
        return False
    positions = [text.index(t) for t in (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)]
    if positions != sorted(positions):
        diag.add(positions[0], "tags out of order; expected <think>…</think><answer>…</answer>")
        return False
    think_open, think_close, answer_open, answer_close = positions
    gaps = [
        (0, think_open, "text before <think>"),
        (think_close + len(THINK_CLOSE), answer_open, "text between </think> and <answer>"),
        (answer_close + len(ANSWER_CLOSE), len(text), "text after </answer>"),
    ]
    for start, end, message in gaps:
        if text[start:end].strip():
            diag.add(start, message)
            ok = False
    return ok


def _think_region(text: str) -> tuple[int, int]:
    start = text.find(THINK_OPEN)
    start = 0 if start < 0 else start + len(THINK_OPEN)
    end = text.find(THINK_CLOSE, start)
    if end < 0:
        end = text.find(ANSWER_OPEN, start)
    if end < 0:
        end = len(text)
    return start, end


def _reject_constant(name: str) -> None:
    raise ValueError(f"non-finite JSON constant {name}")


def _is_number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _object_from_json(item: object, index: int) -> BlueprintObject:
    if not isinstance(item, dict):
        raise ValueError(f"element {index} is not an object")
    name = item.get("name")
    if not isinstance(name, str) or not name:
        raise ValueError(f"element {index}: missing or empty 'name'")
    bbox = item.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4 or not all(_is_number(v) for v in bbox):
        raise ValueError(f"element {index}: 'bbox' must be an array of 4 numbers")
    fields = {}
    for key in ("thought", "attribute"):
        value = item.get(key, "")
        if not isinstance(value, str):
            raise ValueError(f"element {index}: '{key}' must be a string")
        fields[key] = value
    box = BoundingBox.from_seq(bbox)  # raises on inverted/negative/non-finite
    return BlueprintObject(name=name, bbox=box, **fields)


def _parse_blueprint(text: str, start: int, end: int, diag: _Diag) -> tuple[Optional[Blueprint], str]:
    """Parse the single fenced JSON block inside ``text[start:end]``.

    Returns the blueprint (or None) and the analysis text that follows the fence.
    """
    region = text[start:end]
    fences = [m.start() for m in re.finditer(re.escape(FENCE), region)]
    if len(fences) != 2:
        diag.add(start + (fences[0] if fences else 0), f"expected one fenced json block, found {len(fences)} fence markers")
        return None, ""
    header = _FENCE_HEADER.match(region, fences[0])
    if header is None:
        diag.add(start + fences[0], "fence is not tagged as json")
        return None, ""
    if region[: fences[0]].strip():
        diag.add(start, "text before the blueprint fence is ignored")
    body = region[header.end() : fences[1]]
    analysis = region[fences[1] + len(FENCE) :].strip()
    try:
        data = json.loads(body, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as exc:
        diag.add(start + header.end(), f"blueprint is not valid JSON: {exc}")
        return None, analysis
    if not isinstance(data, list):
        diag.add(start + header.end(), "blueprint JSON must be an array")
        return None, analysis
    objects = []
    for i, item in enumerate(data):
        try:
            obj = _object_from_json(item, i)
        except (ValueError, OverflowError) as exc:
            diag.add(start + header.end(), str(exc))
            return None, analysis
        if obj.bbox.is_degenerate:
            diag.add(start + header.end(), f"element {i}: degenerate box {obj.bbox.as_list()}")
        objects.append(obj)
    return Blueprint(tuple(objects)), analysis


def extract_answer(raw: str) -> Optional[str]:
    """Trimmed contents of the first complete ``<answer>…</answer>`` span, or None."""
    start = raw.find(ANSWER_OPEN)
    if start < 0:
        return None
    start += len(ANSWER_OPEN)
    end = raw.find(ANSWER_CLOSE, start)
    if end < 0:
        return None
    return raw[start:end].strip()


def parse_trace(raw: Union[str, bytes]) -> ParseReport:
    if isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", errors="replace")
    diag = _Diag(raw)
    tags_ok = _check_tags(raw, diag)
    if raw.count(ANSWER_OPEN) > 1:
        diag.add(raw.find(ANSWER_OPEN), "multiple answer spans; only the first is used")
    start, end = _think_region(raw)
    blueprint, analysis = _parse_blueprint(raw, start, end, diag)
    json_ok = blueprint is not None
    trace = None
    if tags_ok and json_ok:
        answer = extract_answer(raw) or ""
        trace = ReasoningTrace(blueprint=blueprint, analysis=analysis, answer=answer, raw=raw)
    return ParseReport(
        tags_ok=tags_ok,
        blueprint_json_ok=json_ok,
        trace=trace,
        diagnostics=tuple(diag.items),
        blueprint=blueprint,
    )


def _format_coord(value: float) -> str:
    rounded = round(float(value), 1)
    if rounded == int(rounded):
        return str(int(rounded))
    return repr(rounded)


def _json_string(value: str) -> str:
    # escape characters that would collide with tag or fence tokens
    encoded = json.dumps(value, ensure_ascii=False)
    return encoded.replace("<", "\\u003c").replace(">", "\\u003e").replace("`", "\\u0060")


def render_object(obj: BlueprintObject) -> str:
    bbox = ", ".join(_format_coord(v) for v in obj.bbox.as_list())
    return (
        "{"
        f'"thought": {_json_string(obj.thought)}, '
        f'"name": {_json_string(obj.name)}, '
        f'"bbox": [{bbox}], '
        f'"attribute": {_json_string(obj.attribute)}'
        "}"
    )


def render_blueprint(blueprint: Blueprint) -> str:
    if not len(blueprint):
        return "[]"
    return "[\n" + ",\n".join(render_object(o) for o in blueprint) + "\n]"


def render_trace(trace: ReasoningTrace) -> str:
    for label, text in (("analysis", trace.analysis), ("answer", trace.answer)):
        for token in RESERVED_TOKENS:
            if token in text:
                raise ValueError(f"{label} text contains reserved token {token!r}")
    return (
        f"{THINK_OPEN}\n```json\n{render_blueprint(trace.blueprint)}\n```\n"
        f"{trace.analysis}\n{THINK_CLOSE}\n"
        f"{ANSWER_OPEN}{trace.answer}{ANSWER_CLOSE}"
    )
