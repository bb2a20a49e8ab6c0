"""Anti-shortcut augmentation planning.

Two branches: rewrite the question so its answer flips (deterministic rule
table), or plan the removal of the question's objects from the image, after
which the answer becomes ``"0"`` for counting questions and
:data:`MISMATCH_SENTINEL` otherwise. Plans can be screened by a plausibility
judge before they are written out.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

logger = logging.getLogger(__name__)

MISMATCH_SENTINEL = "question and image do not match"

QUESTION_EDIT = "question_edit"
IMAGE_EDIT = "image_edit"

_YES_NO = {"yes": "no", "no": "yes"}
_PAIRS = {
    "swap_left_right": [("left", "right")],
    "swap_near_far": [("nearer", "farther"), ("near", "far")],
    "swap_closer_farther": [("closer", "farther")],
    "swap_towards_away": [("towards", "away"), ("toward", "away")],
    "swap_frame_order": [
        ("left", "right"),
        ("forward", "backward"),
        ("clockwise", "counterclockwise"),
        ("up", "down"),
        ("towards", "away"),
    ],
}
TRANSFORMS = ("negate_yes_no", *_PAIRS, "explicit")

_COUNTING = re.compile(r"^\s*how\s+many\b", re.IGNORECASE)


def _match_case(template: str, word: str) -> str:
    if template.isupper() and len(template) > 1:
        return word.upper()
    if template[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def swap_words(text: str, pairs: Sequence[tuple[str, str]]) -> str:
    """Swap each whole-word (or phrase) pair in one pass, preserving capitalization."""
    mapping: dict[str, str] = {}
    for a, b in pairs:
        mapping.setdefault(a.lower(), b)
        mapping.setdefault(b.lower(), a)
    alternatives = sorted(mapping, key=len, reverse=True)
    pattern = re.compile(r"\b(" + "|".join(re.escape(w) for w in alternatives) + r")\b", re.IGNORECASE)
    return pattern.sub(lambda m: _match_case(m.group(0), mapping[m.group(0).lower()]), text)


def transform_answer(transform: str, answer: str) -> Optional[str]:
    """Altered answer, or None when the transform does not apply to this answer."""
    stripped = answer.strip()
    if transform == "negate_yes_no":
        key = stripped.rstrip(".!").lower()
        if key not in _YES_NO:
            return None
        return _match_case(stripped, _YES_NO[key])
    if transform.startswith("explicit:"):
        return transform.split(":", 1)[1]
    if transform in _PAIRS:
        altered = swap_words(stripped, _PAIRS[transform])
        return altered if altered != stripped else None
    raise ValueError(f"unknown answer transform {transform!r}")


@dataclass(frozen=True)
class PredicateRule:
    """One question-rewrite rule.

    ``pattern`` is matched (case-insensitive, search) against the question. The
    rewrite is either ``template``, formatted with the pattern's named groups
    and substituted for the matched span, or a case-preserving ``swap`` of word
    pairs inside the matched span. ``transform`` maps the original answer to
    the altered one; a rule whose transform does not apply is skipped.
    """

    id: str
    pattern: str
    transform: str
    template: Optional[str] = None
    swap: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if (self.template is None) == (not self.swap):
            raise ValueError(f"rule {self.id}: give exactly one of template or swap")
        if self.transform not in TRANSFORMS and not self.transform.startswith("explicit:"):
            raise ValueError(f"rule {self.id}: unknown transform {self.transform!r}")
        object.__setattr__(self, "swap", tuple(tuple(p) for p in self.swap))

    @property
    def regex(self) -> re.Pattern:
        return re.compile(self.pattern, re.IGNORECASE)

    def rewrite(self, question: str) -> Optional[str]:
        m = self.regex.search(question)
        if m is None:
            return None
        if self.template is not None:
            replacement = self.template.format(**m.groupdict())
        else:
            replacement = swap_words(m.group(0), self.swap)
        return question[: m.start()] + replacement + question[m.end() :]

    @classmethod
    def from_dict(cls, data: dict) -> "PredicateRule":
        return cls(
            id=data["id"],
            pattern=data["pattern"],
            transform=data["transform"],
            template=data.get("template"),
            swap=tuple(tuple(p) for p in data.get("swap", ())),
        )


# Ordered: specific templates before the generic predicate swaps.
DEFAULT_RULES: tuple[PredicateRule, ...] = (
    PredicateRule(
        "frame_order_moved",
        r"\b(initial|second) frame\b.*\b(initial|second) frame\b",
        "negate_yes_no",
        swap=(("initial frame", "second frame"),),
    ),
    PredicateRule(
        "frame_order_video",
        r"first image is from the (beginning|end) of the video and the second image is from the (beginning|end)",
        "swap_frame_order",
        swap=(("beginning", "end"),),
    ),
    PredicateRule(
        "rotate_away_closer",
        r"\bwill (?P<x>.+?) be (?:away from|closer to) the camera\b",
        "negate_yes_no",
        swap=(("away from", "closer to"),),
    ),
    PredicateRule(
        "someone_at_swap",
        r"^For someone at (?P<x>.+?), will (?P<a>.+?) be to their left or right\?$",
        "swap_left_right",
        template="For someone at {a}, will {x} be to their left or right?",
    ),
    PredicateRule(
        "move_to_swap",
        r"^If I move to (?P<x>.+?), will (?P<y>.+?) be (?P<rest>to my left or right)\?$",
        "swap_left_right",
        template="If I move to {y}, will {x} be {rest}?",
    ),
    PredicateRule(
        "move_to_swap_distance",
        r"^If I move to (?P<x>.+?), will (?P<y>.+?) be (?P<rest>nearer or farther away)\?$",
        "swap_near_far",
        template="If I move to {y}, will {x} be {rest}?",
    ),
    PredicateRule(
        "face_object",
        r"^I need to go to (?P<x>.+?), which direction should I turn to face the object\?$",
        "swap_left_right",
        template="I don't want to see {x}, which direction should I turn to face away from the object?",
    ),
    PredicateRule(
        "face_away_object",
        r"^I don't want to see (?P<x>.+?), which direction should I turn to face away from the object\?$",
        "swap_left_right",
        template="I need to go to {x}, which direction should I turn to face the object?",
    ),
    PredicateRule(
        "relation_left_right_choice",
        r"^Is (?P<a>.+?) to the left or right of (?P<b>.+?)\?$",
        "swap_left_right",
        template="Is {b} to the left or right of {a}?",
    ),
    PredicateRule("swap_left_right", r"^.*\b(left|right)\b.*$", "negate_yes_no", swap=(("left", "right"),)),
    # "farther" belongs to closer/farther only, so each swap stays its own inverse
    PredicateRule("swap_near_far", r"^.*\b(nearer|further|near|far)\b.*$", "negate_yes_no", swap=(("nearer", "further"), ("near", "far"))),
    PredicateRule("swap_closer_farther", r"^.*\b(closer|farther)\b.*$", "negate_yes_no", swap=(("closer", "farther"),)),
    PredicateRule("swap_towards_away", r"^.*\b(facing towards|facing away from)\b.*$", "negate_yes_no", swap=(("facing towards", "facing away from"),)),
)


def load_rules(path: Union[str, Path]) -> tuple[PredicateRule, ...]:
    """Rule table from a JSON or YAML list of rule mappings."""
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return tuple(PredicateRule.from_dict(d) for d in data)


@dataclass(frozen=True)
class EditInstruction:
    instruction: str
    entity: str
    order: int

    def as_dict(self) -> dict:
        return {"instruction": self.instruction, "entity": self.entity, "order": self.order}


@dataclass(frozen=True)
class PerturbationPlan:
    kind: str
    original_question: str
    original_answer: str
    altered_answer: str
    question: str
    rule_id: Optional[str] = None
    edits: tuple[EditInstruction, ...] = ()
    orig_id: Optional[str] = None
    image_ref: str = ""

    def __post_init__(self) -> None:
        if self.altered_answer.strip().lower() == self.original_answer.strip().lower():
            raise ValueError("altered answer must differ from the original answer")

    @property
    def entities(self) -> list[str]:
        return [e.entity for e in self.edits]

    def to_record(self) -> dict:
        """One line of augmented-output JSONL."""
        if self.kind == IMAGE_EDIT:
            target: Union[str, list] = [e.as_dict() for e in self.edits]
        else:
            target = self.image_ref
        return {
            "orig_id": self.orig_id,
            "kind": self.kind,
            "question": self.question,
            "image_ref_or_edit_plan": target,
            "answer": self.altered_answer,
            "rule_id": self.rule_id,
        }


def plan_question_perturbation(
    question: str,
    answer: str,
    rules: Sequence[PredicateRule] = DEFAULT_RULES,
    *,
    orig_id: Optional[str] = None,
    image_ref: str = "",
) -> Optional[PerturbationPlan]:
    """First applicable rule's rewrite, or None when no rule matches."""
    for rule in rules:
        altered = transform_answer(rule.transform, answer)
        if altered is None:
            continue
        new_question = rule.rewrite(question)
        if new_question is None or new_question == question:
            continue
        return PerturbationPlan(
            kind=QUESTION_EDIT,
            original_question=question,
            original_answer=answer,
            altered_answer=altered,
            question=new_question,
            rule_id=rule.id,
            orig_id=orig_id,
            image_ref=image_ref,
        )
    return None


def removal_instruction(entity: str) -> str:
    return f"Remove every {entity} from the image and fill the area with matching background."


def is_counting_question(question: str) -> bool:
    return bool(_COUNTING.match(question))


def plan_image_perturbation(
    question: str,
    answer: str,
    entities: Sequence[str],
    *,
    orig_id: Optional[str] = None,
    image_ref: str = "",
) -> PerturbationPlan:
    entities = [e.strip() for e in entities if e and e.strip()]
    if not entities:
        raise ValueError("image perturbation needs at least one entity to remove")
    altered = "0" if is_counting_question(question) else MISMATCH_SENTINEL
    edits = tuple(EditInstruction(removal_instruction(e), e, i) for i, e in enumerate(entities))
    return PerturbationPlan(
        kind=IMAGE_EDIT,
        original_question=question,
        original_answer=answer,
        altered_answer=altered,
        question=question,
        edits=edits,
        orig_id=orig_id,
        image_ref=image_ref,
    )


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str = ""


# A judge returns True/"yes" when the perturbed item supports its altered answer.
Judge = Callable[[PerturbationPlan], Union[bool, str]]


def _verdict(value: Union[bool, str]) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower().rstrip(".!").startswith("yes")


def filter_augmented(plan: PerturbationPlan, judge: Judge, retries: int = 2) -> FilterDecision:
    """Ask ``judge`` whether the plan is plausible; drop on "no" or repeated errors."""
    last_error: Optional[Exception] = None
    for attempt in range(retries + 1):
        try:
            verdict = judge(plan)
        except Exception as exc:
            last_error = exc
            logger.warning("judge attempt %d failed: %s", attempt + 1, exc)
            continue
        if _verdict(verdict):
            return FilterDecision(True)
        return FilterDecision(False, "judged_implausible")
    return FilterDecision(False, f"judge_unavailable: {last_error}")
