"""Reward components for blueprint-embedded traces and their composition.

The total reward for one rollout is ``acc + fmt * card + cons``. Format acts as
a gate on the cardinality term rather than being added to it.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .geometry import DEFAULT_IOU_THRESHOLD, cluster_distinct
from .trace import Blueprint, BlueprintObject, ParseReport, extract_answer, parse_trace

logger = logging.getLogger(__name__)

SOURCES = ("answer_numeric", "question_mentions", "dataset_supplied", "fallback_one")

_COUNTING = re.compile(r"^\s*how\s+many\b", re.IGNORECASE)
_INTEGER = re.compile(r"^\+?(\d+)$")
_TERMINAL_PUNCT = ".!?,;:"


class MalformedScoringRequest(ValueError):
    """Raised when reward inputs violate their shape contract."""


@dataclass(frozen=True)
class ReferenceCount:
    k: int
    source: str

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"reference count must be >= 1, got {self.k}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown reference source {self.source!r}")


@dataclass(frozen=True)
class RewardConfig:
    lam: int = 2
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    fmt_value_on_pass: float = 1.0
    acc_value_on_match: float = 1.0

    def __post_init__(self) -> None:
        if int(self.lam) != self.lam or self.lam < 1:
            raise ValueError(f"lam must be an integer >= 1, got {self.lam}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must lie in [0, 1], got {self.iou_threshold}")


@dataclass(frozen=True)
class ConsistencyInputs:
    """Per-answer-token probabilities from two teacher-forcing passes.

    ``probs_with_context`` conditions on image, question, blueprint and analysis;
    ``probs_no_context`` conditions on image and question only.
    """

    probs_with_context: Sequence[float]
    probs_no_context: Sequence[float]


@dataclass(frozen=True)
class RewardBreakdown:
    acc: float
    fmt: float
    card: float
    cons: float
    total: float
    cons_available: bool = True
    notes: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "acc": self.acc,
            "fmt": self.fmt,
            "card": self.card,
            "cons": self.cons,
            "total": self.total,
            "cons_available": self.cons_available,
        }


def _mentions(question: str, lexicon: Iterable[str]) -> int:
    seen = set()
    for entity in lexicon:
        key = entity.strip().lower()
        if not key or key in seen:
            continue
        # whole-word match, tolerating a plain plural suffix
        if re.search(rf"\b{re.escape(key)}(?:s|es)?\b", question, re.IGNORECASE):
            seen.add(key)
    return len(seen)


def extract_reference_count(
    question: str,
    gold_answer: str,
    dataset_k: Optional[int] = None,
    entity_lexicon: Sequence[str] = (),
) -> ReferenceCount:
    """Reference object count K for the cardinality reward.

    Precedence: dataset-supplied K, then the numeric answer of a "how many"
    question, then the number of lexicon entities mentioned in the question.
    Zero is clamped to one.
    """
    if dataset_k is not None:
        return ReferenceCount(max(int(dataset_k), 1), "dataset_supplied")
    if _COUNTING.match(question):
        m = _INTEGER.match(normalize_answer(gold_answer))
        if m:
            return ReferenceCount(max(int(m.group(1)), 1), "answer_numeric")
    n = _mentions(question, entity_lexicon)
    if n == 0:
        return ReferenceCount(1, "fallback_one")
    return ReferenceCount(n, "question_mentions")


def normalize_answer(text: str) -> str:
    text = " ".join(text.lower().split())
    return text.rstrip(_TERMINAL_PUNCT).strip()


def reward_format(report: ParseReport, cfg: RewardConfig = RewardConfig()) -> float:
    return cfg.fmt_value_on_pass if report.tags_ok and report.blueprint_json_ok else 0.0


def reward_accuracy(
    predicted: Optional[str],
    gold: str,
    choices: Optional[Sequence[str]] = None,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    if predicted is None:
        return 0.0
    pred = normalize_answer(predicted)
    target = normalize_answer(gold)
    if pred != target:
        return 0.0
    if choices is not None and target not in {normalize_answer(c) for c in choices}:
        return 0.0
    return cfg.acc_value_on_match


def reward_cardinality(
    blueprint: Blueprint | Sequence[BlueprintObject],
    k: ReferenceCount,
    cfg: RewardConfig = RewardConfig(),
) -> float:
    objects = list(blueprint)
    n_distinct = cluster_distinct(objects, cfg.iou_threshold).count
    return min(n_distinct / k.k, float(cfg.lam))


def reward_consistency(inputs: ConsistencyInputs) -> float:
    """Mean per-token probability gap between the grounded and ungrounded passes."""
    with_ctx = list(inputs.probs_with_context)
    no_ctx = list(inputs.probs_no_context)
    if not with_ctx or not no_ctx:
        raise MalformedScoringRequest("consistency probability streams must be non-empty")
    if len(with_ctx) != len(no_ctx):
        raise MalformedScoringRequest(
            f"consistency streams differ in length: {len(with_ctx)} vs {len(no_ctx)}"
        )
    for p in (*with_ctx, *no_ctx):
        if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0):
            raise MalformedScoringRequest(f"probability {p!r} outside [0, 1]")
    return math.fsum(a - b for a, b in zip(with_ctx, no_ctx)) / len(with_ctx)


def total_reward(
    trace_raw: str,
    gold: str,
    *,
    question: str = "",
    choices: Optional[Sequence[str]] = None,
    k: Optional[ReferenceCount] = None,
    dataset_k: Optional[int] = None,
    entity_lexicon: Sequence[str] = (),
    consistency: Optional[ConsistencyInputs] = None,
    cfg: RewardConfig = RewardConfig(),
    report: Optional[ParseReport] = None,
) -> RewardBreakdown:
    """Score one rollout. Never raises on bad rollout content."""
    notes: list[str] = []
    if report is None:
        report = parse_trace(trace_raw)
    if k is None:
        k = extract_reference_count(question, gold, dataset_k, entity_lexicon)

    fmt = reward_format(report, cfg)
    predicted = report.trace.answer if report.trace is not None else extract_answer(trace_raw)
    acc = reward_accuracy(predicted, gold, choices, cfg)
    blueprint = report.blueprint if report.blueprint is not None else Blueprint()
    card = reward_cardinality(blueprint, k, cfg)

    cons = 0.0
    cons_available = consistency is not None
    if consistency is not None:
        try:
            cons = reward_consistency(consistency)
        except MalformedScoringRequest as exc:
            logger.warning("consistency reward degraded to 0: %s", exc)
            notes.append(f"cons: {exc}")
            cons_available = False
    else:
        notes.append("cons: no probability streams supplied")

    total = acc + fmt * card + cons
    return RewardBreakdown(acc, fmt, card, cons, total, cons_available, tuple(notes))
