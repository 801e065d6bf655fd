"""Question/answer synthesis over annotated, rendered scenes.

Six question types in three groups: area/lane type (global context),
location/navigation (vehicle-lane, answered by choosing one of two
non-overlapping bounding boxes), existence/orientation (vehicle-vehicle).
Every answer comes from a closed per-type vocabulary so datasets can be
balanced by undersampling and scored by exact match.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import geometry
from .annotator import DIRECTIONS, AnnotationRecord
from .bevrender import RasterRef, apply_transform
from .errors import NoFeasibleQuestion, ParseError
from .motion import MANEUVER_PHRASES
from .scenemodel import AreaType, LaneType, Scene

log = logging.getLogger(__name__)


class QType(str, Enum):
    AREA_TYPE = "area_type"
    LANE_TYPE = "lane_type"
    LOCATION = "location"
    NAVIGATION = "navigation"
    EXISTENCE = "existence"
    ORIENTATION = "orientation"


ORIENTATION_LABELS = ("same_direction", "oncoming", "perpendicular_left", "perpendicular_right", "none")

ANSWER_VOCABULARY: dict[QType, tuple[str, ...]] = {
    QType.AREA_TYPE: tuple(a.value for a in AreaType),
    QType.LANE_TYPE: tuple(l.value for l in LaneType),
    QType.LOCATION: ("A", "B"),
    QType.NAVIGATION: ("A", "B"),
    QType.EXISTENCE: ("yes", "no"),
    QType.ORIENTATION: ORIENTATION_LABELS,
}

DIRECTION_PHRASES = {
    "front": "in front of",
    "behind": "behind",
    "left": "to the left of",
    "right": "to the right of",
}


@dataclass(frozen=True)
class QuestionTemplate:
    qtype: QType
    template_id: str
    text: str
    rank: str | None = None  # orientation templates: "closest" or "farthest"


@dataclass(frozen=True)
class NormBBox:
    """Axis-aligned box in image-normalized [0, 1] coordinates, 2-decimal grid."""

    x0: float
    y0: float
    x1: float
    y1: float

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def __str__(self) -> str:
        return f"[{self.x0:.2f}, {self.y0:.2f}, {self.x1:.2f}, {self.y1:.2f}]"


def bbox_iou(a: NormBBox, b: NormBBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area() + b.area() - inter)


@dataclass
class QAItem:
    qa_id: str
    image_ref: str
    qtype: QType
    template_id: str
    question: str
    answer: str
    choices: dict[str, NormBBox] | None
    scene_id: str
    ego_id: str
    timestep: int
    meta: dict = field(default_factory=dict)  # generation provenance, not serialized

    @property
    def answer_class(self) -> str:
        return self.answer


# ---------------------------------------------------------------------------
# templates


def _template_from_dict(d: dict) -> QuestionTemplate:
    try:
        return QuestionTemplate(
            qtype=QType(d["qtype"]),
            template_id=d["template_id"],
            text=d["text"],
            rank=d.get("rank"),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"invalid template entry: {exc}") from exc


def load_templates(path=None) -> dict[QType, list[QuestionTemplate]]:
    if path is None:
        text = resources.files("bevkit").joinpath("data/templates.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text)
    out: dict[QType, list[QuestionTemplate]] = defaultdict(list)
    for d in raw["templates"]:
        t = _template_from_dict(d)
        out[t.qtype].append(t)
    validate_templates(out)
    return dict(out)


def validate_templates(by_type: dict[QType, list[QuestionTemplate]]) -> None:
    for qtype in QType:
        if not by_type.get(qtype):
            raise ParseError(f"no templates for question type {qtype.value!r}")
    required = {
        QType.LOCATION: ("{bbox_a}", "{bbox_b}"),
        QType.NAVIGATION: ("{bbox_a}", "{bbox_b}", "{trajectory_type}"),
        QType.EXISTENCE: ("{direction}",),
        QType.ORIENTATION: ("{direction}",),
    }
    for qtype, slots in required.items():
        for t in by_type[qtype]:
            for slot in slots:
                if slot not in t.text:
                    raise ParseError(f"template {t.template_id!r} missing placeholder {slot}")
    for t in by_type[QType.ORIENTATION]:
        if t.rank not in ("closest", "farthest"):
            raise ParseError(f"orientation template {t.template_id!r} needs rank closest|farthest")


# ---------------------------------------------------------------------------
# bounding boxes


def lane_bbox(lane_boundary, ref: RasterRef) -> NormBBox | None:
    """Normalized bbox of a lane's boundary clipped to the image, or None if invisible."""
    side = ref.side()
    px = apply_transform(ref.transform, lane_boundary)
    clipped = geometry.clip_polygon_to_box(px, 0.0, 0.0, float(side), float(side))
    if len(clipped) < 3:
        return None
    x0 = round(float(clipped[:, 0].min()) / side, 2)
    y0 = round(float(clipped[:, 1].min()) / side, 2)
    x1 = round(float(clipped[:, 0].max()) / side, 2)
    y1 = round(float(clipped[:, 1].max()) / side, 2)
    if x0 >= x1 or y0 >= y1:
        return None
    return NormBBox(x0, y0, x1, y1)


def _union_bbox(boxes: Sequence[NormBBox]) -> NormBBox | None:
    if not boxes:
        return None
    x0 = min(b.x0 for b in boxes)
    y0 = min(b.y0 for b in boxes)
    x1 = max(b.x1 for b in boxes)
    y1 = max(b.y1 for b in boxes)
    return NormBBox(x0, y0, x1, y1)


def orientation_label(yaw_delta: float) -> str:
    """Quantize a heading difference into 90-degree bins centered on 0/180/+90/-90."""
    deg = math.degrees(geometry.wrap_angle(yaw_delta))
    if abs(deg) <= 45.0:
        return "same_direction"
    if abs(deg) >= 135.0:
        return "oncoming"
    return "perpendicular_left" if deg > 0 else "perpendicular_right"


# ---------------------------------------------------------------------------
# generation


class _ImageContext:
    def __init__(self, scene: Scene, record: AnnotationRecord, ref: RasterRef):
        self.scene = scene
        self.record = record
        self.ref = ref
        self._bbox_cache: dict[str, NormBBox | None] = {}

    def bbox(self, lane_id: str) -> NormBBox | None:
        if lane_id not in self._bbox_cache:
            self._bbox_cache[lane_id] = lane_bbox(self.scene.map.lanes[lane_id].boundary, self.ref)
        return self._bbox_cache[lane_id]

    def distractor(self, rng, correct: NormBBox, exclude: set[str]) -> tuple[str, NormBBox]:
        candidates = []
        for lid in sorted(self.scene.map.lanes):
            if lid in exclude:
                continue
            box = self.bbox(lid)
            if box is not None and bbox_iou(correct, box) == 0.0:
                candidates.append((lid, box))
        if not candidates:
            raise NoFeasibleQuestion("no non-overlapping distractor lane visible")
        return candidates[int(rng.integers(len(candidates)))]


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _make_question(
    qtype: QType, ctx: _ImageContext, templates: list[QuestionTemplate], rng, ordinal: int
) -> QAItem:
    rec = ctx.record
    template = _pick(rng, templates)
    question = template.text
    choices = None
    meta: dict = {}

    if qtype is QType.AREA_TYPE:
        answer = rec.area_type.value
    elif qtype is QType.LANE_TYPE:
        answer = rec.lane_type.value
    elif qtype in (QType.LOCATION, QType.NAVIGATION):
        if rec.current_lane is None:
            raise NoFeasibleQuestion("vehicle is off the lane graph")
        if qtype is QType.LOCATION:
            correct = ctx.bbox(rec.current_lane)
            exclude = {rec.current_lane}
        else:
            if not rec.trajectory_lanes:
                raise NoFeasibleQuestion("no future lanes for navigation")
            member_boxes = [b for b in (ctx.bbox(l) for l in rec.trajectory_lanes) if b is not None]
            correct = _union_bbox(member_boxes)
            exclude = set(rec.trajectory_lanes)
        if correct is None:
            raise NoFeasibleQuestion("target lane not visible in the window")
        dist_id, dist_box = ctx.distractor(rng, correct, exclude)
        correct_is_a = bool(rng.random() < 0.5)
        box_a, box_b = (correct, dist_box) if correct_is_a else (dist_box, correct)
        answer = "A" if correct_is_a else "B"
        choices = {"A": box_a, "B": box_b}
        fills = {"bbox_a": str(box_a), "bbox_b": str(box_b)}
        if qtype is QType.NAVIGATION:
            fills["trajectory_type"] = MANEUVER_PHRASES[rec.trajectory_category]
            meta["trajectory_type"] = rec.trajectory_category.value
        question = question.format(**fills)
        meta["distractor_lane"] = dist_id
    elif qtype is QType.EXISTENCE:
        direction = _pick(rng, DIRECTIONS)
        answer = "yes" if rec.relative_cars[direction] else "no"
        question = question.format(direction=DIRECTION_PHRASES[direction])
        meta["direction"] = direction
    elif qtype is QType.ORIENTATION:
        populated = [d for d in DIRECTIONS if rec.relative_cars[d]]
        if populated:
            direction = _pick(rng, populated)
            ids = rec.relative_cars[direction]
            target = ids[0] if template.rank == "closest" else ids[-1]
            other = ctx.scene.track(target).state_at(rec.timestep)
            ego = ctx.scene.track(rec.vehicle_id).state_at(rec.timestep)
            answer = orientation_label(other.yaw - ego.yaw)
            meta["target"] = target
        else:
            direction = _pick(rng, DIRECTIONS)
            answer = "none"
        question = question.format(direction=DIRECTION_PHRASES[direction])
        meta["direction"] = direction
        meta["rank"] = template.rank
    else:  # pragma: no cover
        raise NoFeasibleQuestion(f"unsupported question type {qtype}")

    return QAItem(
        qa_id=f"{rec.scene_id}.{rec.vehicle_id}.t{rec.timestep}.q{ordinal}",
        image_ref=ctx.ref.image,
        qtype=qtype,
        template_id=template.template_id,
        question=question,
        answer=answer,
        choices=choices,
        scene_id=rec.scene_id,
        ego_id=rec.vehicle_id,
        timestep=rec.timestep,
        meta=meta,
    )


def gen_questions(
    scene: Scene,
    records: Sequence[AnnotationRecord],
    rasters: Sequence[RasterRef],
    templates: dict[QType, list[QuestionTemplate]] | None = None,
    rate: float = 5.44,
    seed: int = 0,
) -> list[QAItem]:
    """Generate about `rate` questions per image, one per question type at most."""
    if rate <= 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    templates = templates or load_templates()
    rec_by_key = {(r.vehicle_id, r.timestep): r for r in records}
    rng = np.random.default_rng(seed)
    items: list[QAItem] = []
    skipped = 0
    for ref in rasters:
        rec = rec_by_key.get((ref.ego_id, ref.timestep))
        if rec is None:
            skipped += 1
            continue
        ctx = _ImageContext(scene, rec, ref)
        target_n = int(rate) + (1 if rng.random() < rate - int(rate) else 0)
        order = [list(QType)[int(i)] for i in rng.permutation(len(QType))]
        count = 0
        for qtype in order:
            if count >= target_n:
                break
            try:
                items.append(_make_question(qtype, ctx, templates[qtype], rng, count))
            except NoFeasibleQuestion:
                continue
            count += 1
    if skipped:
        log.warning("gen_questions: %d rasters had no matching annotation record", skipped)
    return items


# ---------------------------------------------------------------------------
# balancing / splitting / statistics


def balance_dataset(items: Sequence[QAItem], factor: float = 3.0, seed: int = 0) -> list[QAItem]:
    """Within each question type, undersample answer classes to <= ceil(factor * min)."""
    if factor < 1.0:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if not items:
        return []
    rng = np.random.default_rng(seed)
    keep = np.ones(len(items), dtype=bool)
    by_type: dict[QType, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))
    for i, it in enumerate(items):
        by_type[it.qtype][it.answer_class].append(i)
    for qtype in sorted(by_type, key=lambda q: q.value):
        classes = by_type[qtype]
        cap = math.ceil(factor * min(len(v) for v in classes.values()))
        for cls in sorted(classes):
            idxs = classes[cls]
            if len(idxs) <= cap:
                continue
            sel = rng.choice(len(idxs), size=cap, replace=False)
            chosen = {idxs[int(i)] for i in sel}
            for i in idxs:
                if i not in chosen:
                    keep[i] = False
    return [it for i, it in enumerate(items) if keep[i]]


def split_dataset(
    items: Sequence[QAItem], test_fraction: float = 0.157, seed: int = 0
) -> tuple[list[QAItem], list[QAItem]]:
    """Split by image so no image contributes questions to both sides."""
    if not 0.0 < test_fraction < 1.0:
        if test_fraction == 0.0:
            return list(items), []
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    groups: dict[str, list[int]] = defaultdict(list)
    for i, it in enumerate(items):
        groups[it.image_ref].append(i)
    keys = sorted(groups)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    target = test_fraction * len(items)
    test_idx: set[int] = set()
    count = 0
    for k in order:
        if count >= target:
            break
        grp = groups[keys[int(k)]]
        test_idx.update(grp)
        count += len(grp)
    train = [it for i, it in enumerate(items) if i not in test_idx]
    test = [it for i, it in enumerate(items) if i in test_idx]
    return train, test


@dataclass
class StatsReport:
    total_questions: int
    image_count: int
    questions_per_image: float
    question_type_counts: dict[str, int]
    answer_class_counts: dict[str, dict[str, int]]

    def to_dict(self) -> dict:
        return {
            "total_questions": self.total_questions,
            "image_count": self.image_count,
            "questions_per_image": self.questions_per_image,
            "question_type_counts": self.question_type_counts,
            "answer_class_counts": self.answer_class_counts,
        }


def dataset_stats(items: Sequence[QAItem]) -> StatsReport:
    type_counts = Counter(it.qtype.value for it in items)
    class_counts: dict[str, Counter] = defaultdict(Counter)
    for it in items:
        class_counts[it.qtype.value][it.answer_class] += 1
    images = {it.image_ref for it in items}
    return StatsReport(
        total_questions=len(items),
        image_count=len(images),
        questions_per_image=(len(items) / len(images)) if images else 0.0,
        question_type_counts={k: type_counts[k] for k in sorted(type_counts)},
        answer_class_counts={k: dict(sorted(v.items())) for k, v in sorted(class_counts.items())},
    )


# ---------------------------------------------------------------------------
# JSONL I/O


def item_to_dict(it: QAItem) -> dict:
    d = {
        "qa_id": it.qa_id,
        "image": it.image_ref,
        "qtype": it.qtype.value,
        "template_id": it.template_id,
        "question": it.question,
        "answer": it.answer,
        "scene_id": it.scene_id,
        "ego_id": it.ego_id,
        "timestep": it.timestep,
    }
    if it.choices is not None:
        d["choices"] = {k: v.as_list() for k, v in sorted(it.choices.items())}
    return d


def item_from_dict(d: dict) -> QAItem:
    choices = None
    if "choices" in d:
        choices = {k: NormBBox(*v) for k, v in d["choices"].items()}
    return QAItem(
        qa_id=d["qa_id"],
        image_ref=d["image"],
        qtype=QType(d["qtype"]),
        template_id=d["template_id"],
        question=d["question"],
        answer=d["answer"],
        choices=choices,
        scene_id=d["scene_id"],
        ego_id=d["ego_id"],
        timestep=int(d["timestep"]),
    )


def write_qa_jsonl(items: Iterable[QAItem], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for it in items:
            fh.write(json.dumps(item_to_dict(it), sort_keys=True, separators=(",", ":")) + "\n")


def read_qa_jsonl(path) -> list[QAItem]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(item_from_dict(json.loads(line)))
    return out
