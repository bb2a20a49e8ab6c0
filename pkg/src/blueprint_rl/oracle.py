"""Synthetic scenes with exact geometric answers, plus scripted policies.

Scenes are pure geometry: labeled boxes on a canvas, no pixels. They stand in
for images everywhere an image reference is needed, and give every question a
ground truth that can be recomputed from the boxes alone.
"""
from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

from .augment import MISMATCH_SENTINEL, PerturbationPlan, IMAGE_EDIT
from .geometry import iou
from .mcts import AddObject, Analyze, Answer, ProposalContext, Task
from .rewards import ReferenceCount, extract_reference_count, normalize_answer
from .trace import Blueprint, BlueprintObject, BoundingBox, ReasoningTrace, render_trace, THINK_CLOSE

VOCABULARY = (
    "chair", "table", "sofa", "lamp", "bed", "plant",
    "cabinet", "desk", "vase", "clock", "mirror", "box",
)
COLORS = ("red", "blue", "green", "white", "black", "brown", "gray", "yellow")
MATERIALS = ("wooden", "metal", "plastic", "fabric", "glass", "ceramic")

LEFT_OF = "left_of"
RIGHT_OF = "right_of"
COUNT = "count"
CLOSEST = "closest"
QUESTION_KINDS = (LEFT_OF, RIGHT_OF, COUNT, CLOSEST)

DEFAULT_CANVAS = (640, 480)
MAX_PLACEMENT_ATTEMPTS = 10_000
SCENE_IOU_LIMIT = 0.3


class OracleError(ValueError):
    pass


class SceneGenerationError(RuntimeError):
    pass


def plural(label: str) -> str:
    return label + ("es" if label.endswith(("s", "x")) else "s")


@dataclass(frozen=True)
class SceneObject:
    label: str
    bbox: BoundingBox
    attribute: str = ""


@dataclass(frozen=True)
class SceneSpec:
    canvas_w: int
    canvas_h: int
    objects: tuple[SceneObject, ...]
    seed: int = 0
    id: str = ""

    def indices(self, label: str) -> list[int]:
        return [i for i, o in enumerate(self.objects) if o.label == label]

    def unique_labels(self) -> list[str]:
        labels = [o.label for o in self.objects]
        return [l for l in dict.fromkeys(labels) if labels.count(l) == 1]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "canvas": [self.canvas_w, self.canvas_h],
            "objects": [
                {"label": o.label, "bbox": o.bbox.as_list(), "attribute": o.attribute} for o in self.objects
            ],
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, data: dict) -> "SceneSpec":
        w, h = data["canvas"]
        objects = tuple(
            SceneObject(o["label"], BoundingBox.from_seq(o["bbox"]), o.get("attribute", ""))
            for o in data["objects"]
        )
        return cls(int(w), int(h), objects, int(data.get("seed", 0)), data.get("id", ""))


def generate_scene(
    seed: int,
    n_objects: int,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    labels: Sequence[str] = VOCABULARY[:6],
) -> SceneSpec:
    """Rejection-sample ``n_objects`` integer boxes with pairwise IoU <= 0.3.

    Horizontal centers are kept distinct so left/right relations are never tied.
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    w, h = canvas
    rng = random.Random(seed)
    placed: list[SceneObject] = []
    attempts = 0
    while len(placed) < n_objects:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise SceneGenerationError(
                f"could not place {n_objects} objects on a {w}x{h} canvas; use a larger canvas or fewer objects"
            )
        bw = rng.randint(max(w // 10, 2), max(w // 4, 2))
        bh = rng.randint(max(h // 10, 2), max(h // 4, 2))
        if bw >= w or bh >= h:
            continue
        x1 = rng.randint(0, w - bw)
        y1 = rng.randint(0, h - bh)
        box = BoundingBox(x1, y1, x1 + bw, y1 + bh)
        if any(iou(box, o.bbox) > SCENE_IOU_LIMIT for o in placed):
            continue
        if any(box.x1 + box.x2 == o.bbox.x1 + o.bbox.x2 for o in placed):
            continue
        label = rng.choice(list(labels))
        attribute = f"{rng.choice(COLORS)} {rng.choice(MATERIALS)}"
        placed.append(SceneObject(label, box, attribute))
    return SceneSpec(w, h, tuple(placed), seed, f"scene-{seed}")


def remove_labels(scene: SceneSpec, labels: Sequence[str]) -> SceneSpec:
    drop = {l.lower() for l in labels}
    kept = tuple(o for o in scene.objects if o.label.lower() not in drop)
    return replace(scene, objects=kept)


@dataclass(frozen=True)
class OracleQuestion:
    kind: str
    args: tuple[str, ...]
    text: str
    choices: tuple[str, ...]
    answer: str
    k: ReferenceCount

    def to_task(self, task_id: str, scene_id: str) -> Task:
        return Task(task_id, self.text, self.answer, self.choices, scene_id)

    def to_record(self, task_id: str, scene_id: str) -> dict:
        return {
            "id": task_id,
            "scene_id": scene_id,
            "question": self.text,
            "choices": list(self.choices),
            "answer": self.answer,
            "k": self.k.k,
        }


_TEXT = {
    LEFT_OF: "Is the {0} to the left of the {1}?",
    RIGHT_OF: "Is the {0} to the right of the {1}?",
    CLOSEST: "Which object is closest to the {0}?",
}
_PARSERS = [
    (LEFT_OF, re.compile(r"^Is the (\w+) to the left of the (\w+)\?$", re.IGNORECASE)),
    (RIGHT_OF, re.compile(r"^Is the (\w+) to the right of the (\w+)\?$", re.IGNORECASE)),
    (COUNT, re.compile(r"^How many (\w+) are there\?$", re.IGNORECASE)),
    (CLOSEST, re.compile(r"^Which object is closest to the (\w+)\?$", re.IGNORECASE)),
]


def question_text(kind: str, args: Sequence[str]) -> str:
    if kind == COUNT:
        return f"How many {plural(args[0])} are there?"
    return _TEXT[kind].format(*args)


def parse_question(text: str, vocabulary: Sequence[str] = VOCABULARY) -> tuple[str, tuple[str, ...]]:
    """Recover (kind, labels) from an oracle question rendering."""
    for kind, pattern in _PARSERS:
        m = pattern.match(text.strip())
        if m is None:
            continue
        args = tuple(g.lower() for g in m.groups())
        if kind == COUNT:
            word = args[0]
            singular = next((v for v in vocabulary if plural(v) == word or v == word), None)
            if singular is None:
                raise OracleError(f"unknown counted label {word!r}")
            args = (singular,)
        return kind, args
    raise OracleError(f"not an oracle question: {text!r}")


def _unique(scene: SceneSpec, label: str) -> SceneObject:
    idx = scene.indices(label)
    if len(idx) != 1:
        state = "missing" if not idx else "ambiguous"
        raise OracleError(f"object {label!r} is {state} in scene {scene.id!r}")
    return scene.objects[idx[0]]


def _closest_index(scene: SceneSpec, anchor_label: str) -> int:
    anchor_idx = scene.indices(anchor_label)
    _unique(scene, anchor_label)
    ax, ay = scene.objects[anchor_idx[0]].bbox.center
    best, best_d = -1, math.inf
    for i, o in enumerate(scene.objects):
        if i == anchor_idx[0]:
            continue
        cx, cy = o.bbox.center
        d = math.hypot(cx - ax, cy - ay)
        if d < best_d:
            best, best_d = i, d
    if best < 0:
        raise OracleError("closest needs at least one other object")
    return best


def oracle_answer(scene: SceneSpec, question: Union[OracleQuestion, str, tuple]) -> str:
    if isinstance(question, OracleQuestion):
        kind, args = question.kind, question.args
    elif isinstance(question, str):
        kind, args = parse_question(question)
    else:
        kind, args = question
    if kind in (LEFT_OF, RIGHT_OF):
        a, b = (_unique(scene, l).bbox.center[0] for l in args)
        holds = a < b if kind == LEFT_OF else a > b
        return "yes" if holds else "no"
    if kind == COUNT:
        return str(len(scene.indices(args[0])))
    if kind == CLOSEST:
        return scene.objects[_closest_index(scene, args[0])].label
    raise OracleError(f"unknown question kind {kind!r}")


def make_question(scene: SceneSpec, kind: str, *args: str) -> OracleQuestion:
    text = question_text(kind, args)
    answer = oracle_answer(scene, (kind, tuple(args)))
    if kind in (LEFT_OF, RIGHT_OF):
        choices: tuple[str, ...] = ("yes", "no")
    elif kind == COUNT:
        choices = tuple(str(i) for i in range(len(scene.objects) + 1))
    else:
        anchor = _unique(scene, args[0])
        choices = tuple(dict.fromkeys(o.label for o in scene.objects if o is not anchor))
    k = extract_reference_count(text, answer, None, VOCABULARY)
    return OracleQuestion(kind, tuple(args), text, choices, answer, k)


def random_question(scene: SceneSpec, rng: random.Random, kinds: Sequence[str] = QUESTION_KINDS) -> OracleQuestion:
    """A question about ``scene`` whose referenced objects exist and are unique."""
    unique = scene.unique_labels()
    options = []
    for kind in kinds:
        if kind in (LEFT_OF, RIGHT_OF) and len(unique) >= 2:
            options.append(kind)
        elif kind == COUNT:
            options.append(kind)
        elif kind == CLOSEST and unique and len(scene.objects) >= 2:
            options.append(kind)
    if not options:
        raise OracleError(f"scene {scene.id!r} supports none of {tuple(kinds)}")
    kind = rng.choice(options)
    if kind in (LEFT_OF, RIGHT_OF):
        a, b = rng.sample(unique, 2)
        return make_question(scene, kind, a, b)
    if kind == COUNT:
        return make_question(scene, kind, rng.choice([o.label for o in scene.objects]))
    return make_question(scene, kind, rng.choice(unique))


def generate_tasks(
    n: int,
    n_objects: int = 6,
    seed: int = 0,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    kinds: Sequence[str] = QUESTION_KINDS,
) -> list[tuple[SceneSpec, OracleQuestion]]:
    out = []
    for i in range(n):
        scene = generate_scene(seed + i, n_objects, canvas)
        rng = random.Random(f"question-{seed + i}")
        out.append((scene, random_question(scene, rng, kinds)))
    return out


# -- scripted policies -------------------------------------------------------


@dataclass(frozen=True)
class Corruption:
    kind: str = "none"
    m: int = 0

    NONE = "none"
    OMIT_OBJECT = "omit_object"
    EXTRA_OBJECTS = "extra_objects"
    BREAK_FORMAT = "break_format"
    INCONSISTENT_ANSWER = "inconsistent_answer"

    @classmethod
    def extra(cls, m: int) -> "Corruption":
        return cls(cls.EXTRA_OBJECTS, m)


def relevant_objects(scene: SceneSpec, q: OracleQuestion) -> list[SceneObject]:
    """The objects named by the question, in question order."""
    if q.kind in (LEFT_OF, RIGHT_OF):
        return [_unique(scene, l) for l in q.args]
    if q.kind == COUNT:
        return [scene.objects[i] for i in scene.indices(q.args[0])]
    return [_unique(scene, q.args[0])]


def _region(scene: SceneSpec, box: BoundingBox) -> str:
    cx = box.center[0] / scene.canvas_w
    return "left side" if cx < 1 / 3 else "right side" if cx > 2 / 3 else "middle"


def to_blueprint_object(scene: SceneSpec, obj: SceneObject) -> BlueprintObject:
    thought = f"Found the {obj.label} by its outline in the {_region(scene, obj.bbox)} of the image."
    return BlueprintObject(name=obj.label, bbox=obj.bbox, thought=thought, attribute=obj.attribute)


def analysis_text(scene: SceneSpec, q: OracleQuestion) -> str:
    if q.kind in (LEFT_OF, RIGHT_OF):
        a, b = relevant_objects(scene, q)
        ca, cb = a.bbox.center[0], b.bbox.center[0]
        side = "left" if ca < cb else "right"
        return (
            f"The {a.label} is centered at x={ca:.1f} and the {b.label} at x={cb:.1f}, "
            f"so the {a.label} lies to the {side} of the {b.label}."
        )
    if q.kind == COUNT:
        n = len(scene.indices(q.args[0]))
        return f"The blueprint holds {n} {plural(q.args[0]) if n != 1 else q.args[0]} at distinct positions."
    anchor = _unique(scene, q.args[0])
    nearest = scene.objects[_closest_index(scene, q.args[0])]
    ax, ay = anchor.bbox.center
    nx, ny = nearest.bbox.center
    return (
        f"Measuring center distances from the {anchor.label}, the nearest object is the "
        f"{nearest.label} at {math.hypot(nx - ax, ny - ay):.1f} pixels."
    )


def wrong_answer(q: OracleQuestion) -> str:
    if q.kind in (LEFT_OF, RIGHT_OF):
        return "no" if q.answer == "yes" else "yes"
    if q.kind == COUNT:
        return str(int(q.answer) + 1)
    return next(c for c in q.choices if normalize_answer(c) != normalize_answer(q.answer)) if len(q.choices) > 1 else "nothing"


def perfect_trace(scene: SceneSpec, q: OracleQuestion) -> ReasoningTrace:
    objects = tuple(to_blueprint_object(scene, o) for o in relevant_objects(scene, q))
    return ReasoningTrace(Blueprint(objects), analysis_text(scene, q), q.answer)


def scripted_policy(scene: SceneSpec, q: OracleQuestion, corruption: Corruption = Corruption()) -> str:
    trace = perfect_trace(scene, q)
    objects = list(trace.blueprint.objects)
    answer = trace.answer
    if corruption.kind == Corruption.OMIT_OBJECT:
        objects = objects[:-1]
    elif corruption.kind == Corruption.EXTRA_OBJECTS:
        relevant = {id(o) for o in relevant_objects(scene, q)}
        extras = [o for o in scene.objects if id(o) not in relevant][: corruption.m]
        objects += [to_blueprint_object(scene, o) for o in extras]
    elif corruption.kind == Corruption.INCONSISTENT_ANSWER:
        answer = wrong_answer(q)
    elif corruption.kind not in (Corruption.NONE, Corruption.BREAK_FORMAT):
        raise ValueError(f"unknown corruption {corruption.kind!r}")
    text = render_trace(ReasoningTrace(Blueprint(tuple(objects)), trace.analysis, answer))
    if corruption.kind == Corruption.BREAK_FORMAT:
        text = text.replace(THINK_CLOSE, "", 1)
    return text


@dataclass
class ScriptedProposer:
    """Step proposer driven by the scene ground truth.

    ``exact`` proposes the perfect step sequence. ``two_branch`` offers a
    flawed analysis first (leading to a wrong answer) and the correct one as
    its sibling, which makes the search produce a backtracking trace.
    """

    scene: SceneSpec
    question: OracleQuestion
    script: str = "exact"
    calls: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if self.script not in ("exact", "two_branch"):
            raise ValueError(f"unknown script {self.script!r}")
        self._relevant = [to_blueprint_object(self.scene, o) for o in relevant_objects(self.scene, self.question)]
        self._analysis = analysis_text(self.scene, self.question)
        self._wrong = wrong_answer(self.question)
        self._wrong_analysis = f"At a glance the answer looks like {self._wrong}."

    def __call__(self, ctx: ProposalContext):
        self.calls += 1
        last = ctx.steps[-1] if ctx.steps else None
        if isinstance(last, Analyze):
            if last.text == self._wrong_analysis:
                return [Answer(self._wrong)]
            return [Answer(self.question.answer)]
        n = len(ctx.objects)
        if ctx.forced == "analyze" or n >= len(self._relevant):
            if self.script == "two_branch":
                return [Analyze(self._wrong_analysis), Analyze(self._analysis)]
            return [Analyze(self._analysis)]
        return [AddObject(self._relevant[n])]


def scripted_proposer(scene: SceneSpec, q: OracleQuestion, script: str = "exact") -> ScriptedProposer:
    return ScriptedProposer(scene, q, script)


@dataclass
class OracleJudge:
    """Plausibility judge backed by scene geometry."""

    scene: SceneSpec

    def __call__(self, plan: PerturbationPlan) -> bool:
        scene = self.scene
        if plan.kind == IMAGE_EDIT:
            scene = remove_labels(scene, plan.entities)
        try:
            truth = oracle_answer(scene, plan.question)
        except OracleError:
            truth = MISMATCH_SENTINEL
        return normalize_answer(truth) == normalize_answer(plan.altered_answer)
