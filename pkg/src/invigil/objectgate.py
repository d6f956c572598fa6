"""Object-detection gating and the IoU evaluation harness.

Per-frame detector outputs (class label, confidence score, box) are
turned into device verdicts and person counts. A small harness scores
detector output against ground truth with one IoU threshold per class,
reporting per-class accuracy as the fraction of ground-truth objects
matched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import EngineError

PERSON = "person"
PHONE = "phone"
LAPTOP = "laptop"
DEVICE_CLASSES = frozenset({PHONE, LAPTOP})

DEFAULT_PERSON_SCORE_MIN = 0.5
DEFAULT_IOU_THRESHOLDS = {PERSON: 0.7, LAPTOP: 0.5, PHONE: 0.3}


class InvalidScore(EngineError):
    """A detection score lies outside [0, 1]."""


class MissingThreshold(EngineError):
    """No IoU threshold was supplied for a class present in the ground truth."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner plus extent, pixel units."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box extent must be non-negative, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    """One detector output. Labels other than person/phone/laptop are carried
    verbatim and ignored by the gating rules."""

    label: str
    score: float
    box: BoundingBox

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise InvalidScore(f"detection score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class DeviceThresholds:
    """Low/high confidence cutoffs for the device suspicion bands."""

    low: float = 0.35
    high: float = 0.70

    def __post_init__(self) -> None:
        if not (0.0 <= self.low <= self.high <= 1.0):
            raise ValueError(
                f"need 0 <= low <= high <= 1, got low={self.low}, high={self.high}"
            )


class DeviceVerdict(IntEnum):
    """Suspicion band for a device score; ordering supports aggregation by max."""

    NO_FLAG = 0
    GENERAL_SUSPICIOUS = 1
    PHONE_DETECTION = 2


def gate_device_score(
    device_class: str, score: float, th: DeviceThresholds = DeviceThresholds()
) -> DeviceVerdict:
    """Map a phone/laptop confidence score to its suspicion band.

    Below low: no flag. Between low and high inclusive: General
    Suspicious. Above high: Phone Detection. Laptops gate through the
    same rule as phones.
    """
    if device_class not in DEVICE_CLASSES:
        raise ValueError(f"device class must be one of {sorted(DEVICE_CLASSES)}, got {device_class!r}")
    if not (0.0 <= score <= 1.0):
        raise InvalidScore(f"device score must be in [0, 1], got {score}")
    if score < th.low:
        return DeviceVerdict.NO_FLAG
    if score <= th.high:
        return DeviceVerdict.GENERAL_SUSPICIOUS
    return DeviceVerdict.PHONE_DETECTION


def person_count(
    detections: Sequence[Detection], min_person_score: float = DEFAULT_PERSON_SCORE_MIN
) -> int:
    """Number of person detections at or above the score floor."""
    return sum(1 for d in detections if d.label == PERSON and d.score >= min_person_score)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when the union has no area."""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    # rounding can push the ratio a few ulps above 1 for near-identical boxes
    return min(1.0, inter / union)


@dataclass(frozen=True)
class AccuracyTable:
    """Per-class accuracy (matched ground truth / total ground truth) at the
    per-class IoU threshold used."""

    accuracy: dict[str, float]
    thresholds: dict[str, float]
    matched: dict[str, int]
    total: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "accuracy": dict(sorted(self.accuracy.items())),
            "iou_thresholds": dict(sorted(self.thresholds.items())),
            "matched": dict(sorted(self.matched.items())),
            "total": dict(sorted(self.total.items())),
        }


GtItem = tuple[str, BoundingBox]
PredItem = tuple[str, BoundingBox, float]


def match_frame(
    gt: Sequence[GtItem],
    pred: Sequence[PredItem],
    iou_thresholds: Mapping[str, float],
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of predictions to ground truth.

    Predictions are visited in descending score order (ties keep input
    order); each takes the unused same-class ground-truth box with the
    highest IoU at or above that class's threshold. Returns
    (pred_index, gt_index) pairs.
    """
    for cls, _ in gt:
        if cls not in iou_thresholds:
            raise MissingThreshold(f"no IoU threshold for class {cls!r}")
    order = sorted(range(len(pred)), key=lambda i: -pred[i][2])
    used_gt: set[int] = set()
    matches: list[tuple[int, int]] = []
    for pi in order:
        p_cls, p_box, _ = pred[pi]
        if p_cls not in iou_thresholds:
            continue
        threshold = iou_thresholds[p_cls]
        best_gi = -1
        best_iou = -1.0
        for gi, (g_cls, g_box) in enumerate(gt):
            if gi in used_gt or g_cls != p_cls:
                continue
            overlap = iou(p_box, g_box)
            if overlap >= threshold and overlap > best_iou:
                best_iou = overlap
                best_gi = gi
        if best_gi >= 0:
            used_gt.add(best_gi)
            matches.append((pi, best_gi))
    return matches


def evaluate_detections(
    gt: Sequence[GtItem],
    pred: Sequence[PredItem],
    iou_thresholds: Mapping[str, float] | None = None,
) -> AccuracyTable:
    """Score one collection of predictions against its ground truth."""
    return evaluate_dataset([(gt, pred)], iou_thresholds)


def evaluate_dataset(
    frames: Iterable[tuple[Sequence[GtItem], Sequence[PredItem]]],
    iou_thresholds: Mapping[str, float] | None = None,
) -> AccuracyTable:
    """Aggregate per-frame greedy matching into a per-class accuracy table.

    Matching never crosses frame boundaries. Classes are taken from the
    ground truth; prediction-only classes do not contribute rows.
    """
    if iou_thresholds is None:
        iou_thresholds = DEFAULT_IOU_THRESHOLDS
    matched: dict[str, int] = {}
    total: dict[str, int] = {}
    for gt, pred in frames:
        for cls, _ in gt:
            total[cls] = total.get(cls, 0) + 1
        for _, gi in match_frame(gt, pred, iou_thresholds):
            cls = gt[gi][0]
            matched[cls] = matched.get(cls, 0) + 1
    accuracy = {
        cls: (matched.get(cls, 0) / n if n else 0.0) for cls, n in total.items()
    }
    thresholds = {cls: float(iou_thresholds[cls]) for cls in total}
    return AccuracyTable(
        accuracy=accuracy,
        thresholds=thresholds,
        matched={cls: matched.get(cls, 0) for cls in total},
        total=total,
    )


def _box_from_record(rec: Mapping) -> BoundingBox:
    return BoundingBox(
        x=float(rec["x"]), y=float(rec["y"]), w=float(rec["w"]), h=float(rec["h"])
    )


def read_detection_dataset(
    path: str | Path,
) -> Iterator[tuple[str, list[GtItem], list[PredItem]]]:
    """Read a line-delimited evaluation dataset.

    Each line is a JSON record {"frame_id", "gt": [{"class", "box"}],
    "pred": [{"class", "box", "score"}]} with boxes as {"x","y","w","h"}.
    Yields (frame_id, gt, pred) tuples.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                frame_id = str(rec["frame_id"])
                gt = [
                    (str(item["class"]), _box_from_record(item["box"]))
                    for item in rec.get("gt", [])
                ]
                pred = [
                    (str(item["class"]), _box_from_record(item["box"]), float(item["score"]))
                    for item in rec.get("pred", [])
                ]
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise EngineError(f"{path}:{lineno}: bad dataset record: {exc}") from exc
            yield frame_id, gt, pred
