"""Box arithmetic and distinct-object counting for blueprints."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

from .trace import BlueprintObject, BoundingBox

DEFAULT_IOU_THRESHOLD = 0.3

BoxLike = Union[BoundingBox, BlueprintObject]


@dataclass(frozen=True)
class DistinctSet:
    representative_indices: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.representative_indices)


def _box(item: BoxLike) -> BoundingBox:
    return item.bbox if isinstance(item, BlueprintObject) else item


def area(b: BoundingBox) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def cluster_distinct(objects: Sequence[BoxLike], threshold: float = DEFAULT_IOU_THRESHOLD) -> DistinctSet:
    """Greedy first-seen representatives in list order.

    An object is a new representative iff its IoU with every earlier
    representative is ``<= threshold``; ties at the threshold count as distinct.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    boxes = [_box(o) for o in objects]
    reps: list[int] = []
    for i, box in enumerate(boxes):
        if all(iou(box, boxes[r]) <= threshold for r in reps):
            reps.append(i)
    return DistinctSet(tuple(reps))


def distinct_count(objects: Sequence[BoxLike], threshold: float = DEFAULT_IOU_THRESHOLD) -> int:
    return cluster_distinct(objects, threshold).count
