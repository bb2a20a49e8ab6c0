from __future__ import annotations

import json
import random

import pytest

from blueprint_rl.augment import (
    DEFAULT_RULES,
    IMAGE_EDIT,
    MISMATCH_SENTINEL,
    QUESTION_EDIT,
    PredicateRule,
    filter_augmented,
    load_rules,
    plan_image_perturbation,
    plan_question_perturbation,
    swap_words,
    transform_answer,
)
from blueprint_rl.oracle import LEFT_OF, OracleJudge, generate_tasks, make_question, oracle_answer
from blueprint_rl.rewards import normalize_answer


def test_move_to_left_flips_to_right():
    plan = plan_question_perturbation("If I move to the table, will the lamp be to my left?", "yes")
    assert plan.question == "If I move to the table, will the lamp be to my right?"
    assert plan.altered_answer == "no"
    assert plan.kind == QUESTION_EDIT and plan.rule_id == "swap_left_right"


def test_frame_order_template():
    q = "Were any of the objects in the initial frame that you can still see in the second frame moved from their original positions?"
    plan = plan_question_perturbation(q, "yes")
    assert plan.rule_id == "frame_order_moved"
    assert plan.question == (
        "Were any of the objects in the second frame that you can still see in the initial frame moved from their original positions?"
    )
    assert plan.altered_answer == "no"


def test_no_spatial_predicate():
    assert plan_question_perturbation("What color is the mug?", "red") is None


@pytest.mark.parametrize(
    "question, answer, rule_id, new_question, new_answer",
    [
        (
            "If I move to the sofa, will the lamp be to my left or right?",
            "left",
            "move_to_swap",
            "If I move to the lamp, will the sofa be to my left or right?",
            "right",
        ),
        (
            "If I move to the sofa, will the lamp be nearer or farther away?",
            "nearer",
            "move_to_swap_distance",
            "If I move to the lamp, will the sofa be nearer or farther away?",
            "farther",
        ),
        (
            "For someone at the door, will the bed be to their left or right?",
            "Right",
            "someone_at_swap",
            "For someone at the bed, will the door be to their left or right?",
            "Left",
        ),
        (
            "I need to go to the fridge, which direction should I turn to face the object?",
            "left",
            "face_object",
            "I don't want to see the fridge, which direction should I turn to face away from the object?",
            "right",
        ),
        (
            "The first image is from the beginning of the video and the second image is from the end. Did the camera move forward or backward?",
            "forward",
            "frame_order_video",
            "The first image is from the end of the video and the second image is from the beginning. Did the camera move forward or backward?",
            "backward",
        ),
        (
            "If I rotate the chair, will it be away from the camera?",
            "yes",
            "rotate_away_closer",
            "If I rotate the chair, will it be closer to the camera?",
            "no",
        ),
        ("Is the cup closer to the camera than the plate?", "no", "swap_closer_farther", "Is the cup farther to the camera than the plate?", "yes"),
        ("Is the person facing towards the car?", "yes", "swap_towards_away", "Is the person facing away from the car?", "no"),
        ("Is the cup near the plate?", "yes", "swap_near_far", "Is the cup far the plate?", "no"),
        ("Is the mug to the left or right of the kettle?", "left", "relation_left_right_choice", "Is the kettle to the left or right of the mug?", "right"),
    ],
)
def test_rule_table(question, answer, rule_id, new_question, new_answer):
    plan = plan_question_perturbation(question, answer)
    assert (plan.rule_id, plan.question, plan.altered_answer) == (rule_id, new_question, new_answer)


def test_rule_skipped_when_answer_does_not_transform():
    # yes/no rule cannot flip "maybe"; no other rule applies
    assert plan_question_perturbation("Is the mug on the left?", "maybe") is None


INVOLUTION_CASES = [
    "If I move to the table, will the lamp be to my left?",
    "Is the chair to the left of the table?",
    "Is the cup closer to the camera than the plate?",
    "Is the person facing towards the car?",
    "If I move to the sofa, will the lamp be to my left or right?",
    "For someone at the door, will the bed be to their left or right?",
    "Is the mug to the left or right of the kettle?",
    "Were any of the objects in the initial frame that you can still see in the second frame moved from their original positions?",
]


@pytest.mark.parametrize("question", INVOLUTION_CASES)
def test_involution(question):
    first = plan_question_perturbation(question, "yes") or plan_question_perturbation(question, "left")
    answer = first.altered_answer
    second = plan_question_perturbation(first.question, answer)
    assert second.rule_id == first.rule_id
    assert normalize_answer(second.question) == normalize_answer(question)
    assert second.altered_answer == first.original_answer


def test_swap_words_preserves_case_and_boundaries():
    assert swap_words("Left of the LEFT leftover", [("left", "right")]) == "Right of the RIGHT leftover"


@pytest.mark.parametrize(
    "transform, answer, expected",
    [
        ("negate_yes_no", "Yes.", "No"),
        ("negate_yes_no", "perhaps", None),
        ("swap_left_right", "left", "right"),
        ("swap_left_right", "up", None),
        ("explicit:unknown", "x", "unknown"),
    ],
)
def test_transform_answer(transform, answer, expected):
    assert transform_answer(transform, answer) == expected


def test_unknown_transform_rejected():
    with pytest.raises(ValueError):
        PredicateRule("bad", "x", "invert_everything", template="y")


def test_load_rules_json_and_yaml(tmp_path):
    rules = [{"id": "r1", "pattern": r"\babove\b", "transform": "negate_yes_no", "swap": [["above", "below"]]}]
    j = tmp_path / "rules.json"
    j.write_text(json.dumps(rules))
    y = tmp_path / "rules.yaml"
    y.write_text("- id: r1\n  pattern: '\\babove\\b'\n  transform: negate_yes_no\n  swap: [[above, below]]\n")
    for path in (j, y):
        loaded = load_rules(path)
        plan = plan_question_perturbation("Is the lamp above the desk?", "yes", loaded)
        assert (plan.question, plan.altered_answer) == ("Is the lamp below the desk?", "no")


# -- image branch ------------------------------------------------------------


def test_image_plan_counting():
    plan = plan_image_perturbation("How many chairs are there?", "4", ["chair"])
    assert plan.altered_answer == "0"
    assert plan.kind == IMAGE_EDIT
    assert [e.order for e in plan.edits] == [0]


def test_image_plan_sentinel():
    plan = plan_image_perturbation("Is the sofa left of the table?", "yes", ["sofa", "table"])
    assert plan.altered_answer == MISMATCH_SENTINEL == "question and image do not match"
    assert plan.entities == ["sofa", "table"]
    record = plan.to_record()
    assert record["image_ref_or_edit_plan"][1] == {"instruction": plan.edits[1].instruction, "entity": "table", "order": 1}
    assert set(record) == {"orig_id", "kind", "question", "image_ref_or_edit_plan", "answer", "rule_id"}


def test_image_plan_needs_entities():
    with pytest.raises(ValueError):
        plan_image_perturbation("Is the sofa left of the table?", "yes", [])


def test_sentinel_single_definition():
    import pathlib

    import blueprint_rl

    root = pathlib.Path(blueprint_rl.__file__).parent
    hits = [p for p in root.rglob("*.py") if MISMATCH_SENTINEL in p.read_text(encoding="utf-8")]
    assert [p.name for p in hits] == ["augment.py"]


# -- filter ------------------------------------------------------------------


PLAN = plan_image_perturbation("How many chairs are there?", "4", ["chair"])


def test_filter_stub_judges():
    assert filter_augmented(PLAN, lambda p: "yes").keep
    assert filter_augmented(PLAN, lambda p: True).keep
    decision = filter_augmented(PLAN, lambda p: "No.")
    assert not decision.keep and decision.reason == "judged_implausible"


def test_filter_retries_then_drops():
    calls = []

    def down(plan):
        calls.append(plan)
        raise ConnectionError("judge offline")

    decision = filter_augmented(PLAN, down, retries=2)
    assert not decision.keep
    assert decision.reason.startswith("judge_unavailable")
    assert len(calls) == 3


def test_filter_recovers_after_transient_error():
    state = {"n": 0}

    def flaky(plan):
        state["n"] += 1
        if state["n"] == 1:
            raise TimeoutError
        return "yes"

    assert filter_augmented(PLAN, flaky, retries=1).keep


def test_oracle_judge_keeps_sound_inversions():
    rng = random.Random(9)
    kept = 0
    for scene, _ in generate_tasks(60, seed=70):
        labels = scene.unique_labels()
        if len(labels) < 2:
            continue
        a, b = rng.sample(labels, 2)
        q = make_question(scene, LEFT_OF, a, b)
        plan = plan_question_perturbation(q.text, q.answer)
        assert filter_augmented(plan, OracleJudge(scene)).keep
        assert oracle_answer(scene, plan.question) == plan.altered_answer
        kept += 1
    assert kept > 30


@pytest.mark.parametrize(
    "question",
    ["Is the cup nearer to the camera than the plate?", "Is the cup farther from the camera than the plate?", "Is the cup far from the plate?"],
)
def test_distance_swaps_are_involutions(question):
    first = plan_question_perturbation(question, "yes")
    second = plan_question_perturbation(first.question, first.altered_answer)
    assert second.question == question
