"""Axis-aligned box arithmetic and OCR-to-element linking.

Boxes use pixel coordinates with a top-left origin. Overlap is measured
either as intersection-over-union (IoU) or intersection-over-minimum (IoM);
IoM divides by the smaller box's area, so a box fully contained in another
scores 1.0 regardless of the size ratio. UI elements usually enclose their
OCR text boxes, which is why linking defaults to IoM.

All functions here are pure; degenerate boxes are rejected at construction
time so the metrics are total on their domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with strictly positive area."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate in {self.as_tuple()}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"zero-area box {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class OcrItem:
    """One OCR phrase: its box, recognized text (may be empty), and ordinal."""

    box: Box
    text: str
    index: int


@dataclass(frozen=True)
class ElementAnnotation:
    """One annotated UI element.

    ``description`` and ``ocr_indices`` are populated by linking; freshly
    parsed annotations leave them unset.
    """

    box: Box
    category: str
    index: int
    description: str | None = None
    ocr_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.category:
            raise ValueError("element category must be non-empty")


@dataclass
class LinkAssignment:
    """Result of linking OCR items to elements, aligned with the element list.

    ``ocr_indices[k]`` holds the OCR ordinals matched to element k in reading
    order; ``descriptions[k]`` is their text joined by single spaces, or the
    empty string for unmatched elements.
    """

    ocr_indices: list[list[int]] = field(default_factory=list)
    descriptions: list[str] = field(default_factory=list)


def area(b: Box) -> float:
    """Box area, strictly positive by construction."""
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def _intersection_area(a: Box, b: Box) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes, 1 for identical ones."""
    inter = _intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def iom(a: Box, b: Box) -> float:
    """Intersection over the smaller box's area.

    Always >= iou(a, b); equals 1 exactly when one box contains the other.
    """
    inter = _intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / min(area(a), area(b))


_METRICS = {"iou": iou, "iom": iom}


def link_ocr(
    elements: list[ElementAnnotation],
    ocr: list[OcrItem],
    threshold: float,
    metric: str = "iom",
) -> LinkAssignment:
    """Greedily assign OCR items to elements without replacement.

    All (element, OCR) pairs whose overlap metric is strictly greater than
    ``threshold`` are consumed in descending metric order (ties broken by
    smaller element index, then smaller OCR index). Each OCR item is assigned
    at most once; an element may collect several. Matched items are then
    sorted into reading order (ascending y1, then x1) and their texts joined
    with single spaces; elements with no match get the empty string.
    """
    if not math.isfinite(threshold):
        raise ValueError(f"non-finite threshold {threshold!r}")
    try:
        metric_fn = _METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; expected 'iou' or 'iom'") from None

    candidates = []
    for epos, elem in enumerate(elements):
        for opos, item in enumerate(ocr):
            score = metric_fn(elem.box, item.box)
            if score > threshold:
                candidates.append((-score, elem.index, item.index, epos, opos))
    candidates.sort()

    matched: list[list[int]] = [[] for _ in elements]
    used_ocr: set[int] = set()
    for _, _, _, epos, opos in candidates:
        if opos in used_ocr:
            continue
        used_ocr.add(opos)
        matched[epos].append(opos)

    assignment = LinkAssignment()
    for positions in matched:
        in_reading_order = sorted(
            positions, key=lambda p: (ocr[p].box.y1, ocr[p].box.x1, ocr[p].index)
        )
        assignment.ocr_indices.append([ocr[p].index for p in in_reading_order])
        assignment.descriptions.append(" ".join(ocr[p].text for p in in_reading_order))
    return assignment
