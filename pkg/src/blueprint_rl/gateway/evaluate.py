"""Multiple-choice evaluation: verbatim-choice answer matching with per-tag accuracy."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional

from ..rewards import normalize_answer, reward_accuracy
from ..trace import extract_answer

EVAL_SYSTEM_PROMPT = (
    "Answer the multiple-choice question about the image. Put the exact text of the correct "
    "choice between <answer> and </answer>, copied from the options, with no option letter, "
    "punctuation or extra words."
)


@dataclass(frozen=True)
class EvalItem:
    id: str
    question: str
    choices: tuple[str, ...]
    gold: str
    model_output: str
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(self.choices))
        object.__setattr__(self, "tags", tuple(self.tags))
        if normalize_answer(self.gold) not in {normalize_answer(c) for c in self.choices}:
            raise ValueError(f"item {self.id}: gold {self.gold!r} is not among the choices")

    @classmethod
    def from_record(cls, data: dict) -> "EvalItem":
        return cls(
            id=str(data["id"]),
            question=data.get("question", ""),
            choices=tuple(data["choices"]),
            gold=data["gold"],
            model_output=data.get("model_output", ""),
            tags=tuple(data.get("tags", ())),
        )


def _accuracy(correct: int, n: int) -> Optional[float]:
    return correct / n if n else None


def evaluate(items: Iterable[EvalItem]) -> dict:
    """Score model outputs; a missing answer span counts as incorrect.

    Accuracy is ``None`` (not applicable) for an empty item list.
    """
    rows = []
    per_tag: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    n_correct = 0
    for item in items:
        predicted = extract_answer(item.model_output)
        ok = reward_accuracy(predicted, item.gold, item.choices) == 1.0
        n_correct += ok
        for tag in item.tags:
            per_tag[tag][0] += 1
            per_tag[tag][1] += ok
        rows.append({"id": item.id, "predicted": predicted, "gold": item.gold, "correct": ok})
    n = len(rows)
    return {
        "n": n,
        "correct": n_correct,
        "accuracy": _accuracy(n_correct, n),
        "per_tag": {
            tag: {"n": t, "correct": c, "accuracy": _accuracy(c, t)} for tag, (t, c) in sorted(per_tag.items())
        },
        "items": rows,
    }
