"""Detection-style mAP with base/novel/all category splits.

Matching follows the usual protocol: per category and image, detections are
greedily matched to ground truth in descending score order, each ground
truth consumed at most once, TP iff the best-overlap unmatched ground truth
reaches the IoU threshold. AP is the all-point interpolated area under the
precision-recall curve. Score ties are broken by input order, so results are
independent of input ordering whenever scores are distinct.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .dataio import CategorySet
from .errors import AptError, ParseError
from .geometry import Box, iou


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    box: Box
    category: str
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite detection score {self.score!r}")


@dataclass(frozen=True)
class GroundTruthRecord:
    image_id: str
    box: Box
    category: str


@dataclass
class MapReport:
    split: str
    iou_thresholds: list[float]
    per_category: dict[str, float | None]  # None: no GT and no detections
    mean: float | None
    num_gt: dict[str, int]
    num_det: dict[str, int]


def match_detections(
    detections: list[DetectionRecord],
    ground_truths: list[GroundTruthRecord],
    iou_threshold: float,
) -> list[bool]:
    """Per-detection TP flags aligned with the input order."""
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    flags = [False] * len(detections)
    groups: dict[tuple[str, str], list[int]] = {}
    for i, det in enumerate(detections):
        groups.setdefault((det.category, det.image_id), []).append(i)
    gts: dict[tuple[str, str], list[GroundTruthRecord]] = {}
    for gt in ground_truths:
        gts.setdefault((gt.category, gt.image_id), []).append(gt)

    for key, det_indices in groups.items():
        candidates = gts.get(key, [])
        matched = [False] * len(candidates)
        det_indices = sorted(det_indices, key=lambda i: (-detections[i].score, i))
        for i in det_indices:
            best_iou, best_g = 0.0, -1
            for g, gt in enumerate(candidates):
                if matched[g]:
                    continue
                overlap = iou(detections[i].box, gt.box)
                if overlap > best_iou:
                    best_iou, best_g = overlap, g
            if best_g >= 0 and best_iou >= iou_threshold:
                matched[best_g] = True
                flags[i] = True
    return flags


def average_precision(tp_flags: list[bool], num_gt: int) -> float | None:
    """All-point interpolated AP from a score-ranked TP/FP sequence.

    Returns 0.0 when detections exist but there is no ground truth, and
    None (category not scoreable) when both are absent.
    """
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    if sum(tp_flags) > num_gt:
        raise ValueError(f"{sum(tp_flags)} TPs exceed {num_gt} ground truths")
    if num_gt == 0:
        return 0.0 if tp_flags else None
    if not tp_flags:
        return 0.0
    precisions, recalls = [], []
    tp = 0
    for k, flag in enumerate(tp_flags, start=1):
        tp += int(flag)
        precisions.append(tp / k)
        recalls.append(tp / num_gt)
    # monotone non-increasing precision envelope
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    ap = 0.0
    prev_recall = 0.0
    for k, flag in enumerate(tp_flags):
        if flag:
            ap += (recalls[k] - prev_recall) * precisions[k]
            prev_recall = recalls[k]
    return ap


def map_report(
    detections: list[DetectionRecord],
    ground_truths: list[GroundTruthRecord],
    categories: CategorySet,
    iou_threshold: float = 0.5,
    split: str = "all",
    averaged_thresholds: bool = False,
) -> MapReport:
    """Per-category AP and their mean over one split.

    ``averaged_thresholds`` switches from single-threshold AP to the mean
    over IoU thresholds 0.5:0.05:0.95.
    """
    known = set(categories.names)
    for det in detections:
        if det.category not in known:
            raise AptError(f"unknown detection category {det.category!r}")
    for gt in ground_truths:
        if gt.category not in known:
            raise AptError(f"unknown ground-truth category {gt.category!r}")

    if averaged_thresholds:
        thresholds = [0.5 + 0.05 * k for k in range(10)]
    else:
        thresholds = [iou_threshold]

    names = categories.names_for_split(split)
    per_category: dict[str, float | None] = {}
    num_gt = {name: sum(1 for g in ground_truths if g.category == name) for name in names}
    num_det = {name: sum(1 for d in detections if d.category == name) for name in names}

    for name in names:
        dets = [d for d in detections if d.category == name]
        gts = [g for g in ground_truths if g.category == name]
        aps = []
        for thr in thresholds:
            flags = match_detections(dets, gts, thr)
            order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
            ranked = [flags[i] for i in order]
            aps.append(average_precision(ranked, len(gts)))
        if aps and aps[0] is None:
            per_category[name] = None
        else:
            per_category[name] = sum(aps) / len(aps)

    scored = [v for v in per_category.values() if v is not None]
    mean = sum(scored) / len(scored) if scored else None
    return MapReport(
        split=split,
        iou_thresholds=thresholds,
        per_category=per_category,
        mean=mean,
        num_gt=num_gt,
        num_det=num_det,
    )


# ---------------------------------------------------------------------------
# detection files
# ---------------------------------------------------------------------------

def parse_detections(path) -> list[DetectionRecord]:
    """JSONL detections: {"image_id", "bbox", "category", "score"} per line."""
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno) from None
            try:
                box = Box(*(float(v) for v in obj["bbox"]))
                out.append(
                    DetectionRecord(
                        image_id=obj["image_id"],
                        box=box,
                        category=obj["category"],
                        score=float(obj["score"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad detection record: {exc}", path=str(path), line=lineno) from None
    return out


def write_detections(detections: list[DetectionRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for det in detections:
            fh.write(json.dumps({
                "image_id": det.image_id,
                "bbox": list(det.box.as_tuple()),
                "category": det.category,
                "score": det.score,
            }, ensure_ascii=False) + "\n")
