from __future__ import annotations

import random

import pytest
from hypothesis import given, settings

from blueprint_rl.oracle import generate_tasks, perfect_trace
from blueprint_rl.trace import (
    ANSWER_CLOSE,
    ANSWER_OPEN,
    THINK_CLOSE,
    THINK_OPEN,
    Blueprint,
    BlueprintObject,
    BoundingBox,
    ReasoningTrace,
    extract_answer,
    parse_trace,
    render_trace,
)

from conftest import traces


def two_object_trace() -> ReasoningTrace:
    objects = (
        BlueprintObject("sofa", BoundingBox(10, 20, 110, 90), "Large shape on the left.", "gray fabric"),
        BlueprintObject("table", BoundingBox(200.5, 40, 260, 95.5), "", "wooden"),
    )
    return ReasoningTrace(Blueprint(objects), "The sofa is left of the table.", "left")


def test_render_exact_layout():
    text = render_trace(two_object_trace())
    assert text == (
        "<think>\n```json\n[\n"
        '{"thought": "Large shape on the left.", "name": "sofa", "bbox": [10, 20, 110, 90], "attribute": "gray fabric"},\n'
        '{"thought": "", "name": "table", "bbox": [200.5, 40, 260, 95.5], "attribute": "wooden"}\n'
        "]\n```\nThe sofa is left of the table.\n</think>\n<answer>left</answer>"
    )


def test_parse_canonical_two_objects():
    report = parse_trace(render_trace(two_object_trace()))
    assert report.tags_ok and report.blueprint_json_ok
    assert len(report.trace.blueprint) == 2
    assert report.trace == two_object_trace()
    assert report.diagnostics == ()


def test_missing_answer_close_fails_tags():
    text = render_trace(two_object_trace()).replace(ANSWER_CLOSE, "")
    report = parse_trace(text)
    assert not report.tags_ok
    assert report.trace is None


def test_malformed_json_in_fence():
    text = '<think>\n```json\n[{"name": }\n```\nhmm\n</think>\n<answer>yes</answer>'
    report = parse_trace(text)
    assert report.tags_ok
    assert not report.blueprint_json_ok
    assert report.trace is None
    assert report.diagnostics


def test_empty_blueprint_answer_enclosed():
    text = render_trace(ReasoningTrace(Blueprint(), "", "yes"))
    assert "<answer>yes</answer>" in text
    report = parse_trace(text)
    assert report.ok and len(report.trace.blueprint) == 0


def test_single_object_renders_one_element():
    obj = BlueprintObject("lamp", BoundingBox(1, 2, 3, 4))
    report = parse_trace(render_trace(ReasoningTrace(Blueprint((obj,)), "x", "y")))
    assert len(report.trace.blueprint) == 1


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("reasoning...<answer> left </answer>", "left"),
        ("no tags at all", None),
        ("<answer>first</answer> then <answer>second</answer>", "first"),
        ("<answer>unterminated", None),
    ],
)
def test_extract_answer(raw, expected):
    assert extract_answer(raw) == expected


def test_duplicate_answer_spans_noted():
    text = render_trace(two_object_trace()) + "<answer>right</answer>"
    report = parse_trace(text)
    assert not report.tags_ok
    assert any("multiple answer spans" in d.message for d in report.diagnostics)


def test_missing_optional_keys_default_empty():
    text = '<think>\n```json\n[{"name": "cup", "bbox": [0, 0, 5, 5]}]\n```\nok\n</think>\n<answer>1</answer>'
    obj = parse_trace(text).trace.blueprint.objects[0]
    assert (obj.thought, obj.attribute) == ("", "")


@pytest.mark.parametrize(
    "body",
    [
        '[{"thought": "", "bbox": [0, 0, 5, 5], "attribute": ""}]',
        '[{"thought": "", "name": "cup", "attribute": ""}]',
        '[{"name": "cup", "bbox": [0, 0, 5]}]',
        '[{"name": "cup", "bbox": [5, 0, 0, 5]}]',
        '[{"name": "cup", "bbox": [-1, 0, 5, 5]}]',
        '[{"name": "", "bbox": [0, 0, 5, 5]}]',
        '[{"name": "cup", "bbox": [0, 0, NaN, 5]}]',
        '{"name": "cup", "bbox": [0, 0, 5, 5]}',
    ],
)
def test_required_fields_and_box_validity(body):
    text = f"<think>\n```json\n{body}\n```\nok\n</think>\n<answer>1</answer>"
    report = parse_trace(text)
    assert report.tags_ok and not report.blueprint_json_ok


def test_two_fences_rejected():
    block = '```json\n[]\n```\n'
    text = f"<think>\n{block}{block}ok\n</think>\n<answer>1</answer>"
    assert not parse_trace(text).blueprint_json_ok


def test_degenerate_box_accepted_with_diagnostic():
    text = '<think>\n```json\n[{"name": "pole", "bbox": [3, 3, 3, 9]}]\n```\nok\n</think>\n<answer>1</answer>'
    report = parse_trace(text)
    assert report.ok
    assert any("degenerate" in d.message for d in report.diagnostics)


def test_diagnostic_offsets_are_utf8_bytes():
    prefix = "é" * 3
    text = prefix + render_trace(two_object_trace())
    report = parse_trace(text)
    assert not report.tags_ok
    assert report.diagnostics[0].offset == 0
    assert min(d.offset for d in report.diagnostics) >= 0


def test_render_rejects_reserved_tokens():
    with pytest.raises(ValueError):
        render_trace(ReasoningTrace(Blueprint(), "sneaky </think>", "yes"))


def test_coordinates_rounded_to_one_decimal():
    obj = BlueprintObject("x", BoundingBox(0.04, 1.25, 2.0, 3.96))
    text = render_trace(ReasoningTrace(Blueprint((obj,)), "", "a"))
    assert '"bbox": [0, 1.2, 2, 4]' in text


@settings(max_examples=200, deadline=None)
@given(traces())
def test_round_trip_property(trace):
    report = parse_trace(render_trace(trace))
    assert report.ok
    assert report.trace.semantically_equal(trace)


def test_round_trip_oracle_traces():
    for scene, q in generate_tasks(50, seed=3):
        trace = perfect_trace(scene, q)
        parsed = parse_trace(render_trace(trace)).trace
        assert [o.name for o in parsed.blueprint] == [o.name for o in trace.blueprint]
        assert [o.bbox for o in parsed.blueprint] == [o.bbox for o in trace.blueprint]
        assert [o.attribute for o in parsed.blueprint] == [o.attribute for o in trace.blueprint]
        assert (parsed.analysis, parsed.answer) == (trace.analysis, trace.answer)


@pytest.mark.parametrize("token", [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE])
def test_single_deletion_in_tag_breaks_tags(token):
    text = render_trace(two_object_trace())
    pos = text.index(token)
    for i in range(len(token)):
        mutated = text[: pos + i] + text[pos + i + 1 :]
        assert not parse_trace(mutated).tags_ok, (token, i)


def test_fuzz_totality():
    rng = random.Random(11)
    alphabet = ["<think>", "</think>", "<answer>", "</answer>", "```json", "```", "[", "]", "{", "}", '"', ":", ",", "\n"]
    for _ in range(2000):
        if rng.random() < 0.5:
            raw = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 200)))
        else:
            raw = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 30)))
        report = parse_trace(raw)
        assert report.trace is None or (report.tags_ok and report.blueprint_json_ok)


def test_deeply_nested_json_does_not_abort():
    text = "<think>\n```json\n" + "[" * 100_000 + "\n```\n</think>\n<answer>a</answer>"
    report = parse_trace(text)
    assert report.tags_ok and not report.blueprint_json_ok
