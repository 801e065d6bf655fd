"""Evaluation: per-type QA accuracy and trajectory displacement/collision metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateInput,
    EmptyInput,
    LengthMismatch,
    MissingPrediction,
    UnknownId,
)
from .motion import StateSeq
from .scenemodel import Scene
from .vqagen import QAItem

DEFAULT_SAMPLE_COUNT = 5  # K for min-over-samples metrics when a caller must pick one


@dataclass(frozen=True)
class Prediction:
    qa_id: str
    answer: str


@dataclass
class QaAccuracyReport:
    per_type: dict[str, float]
    per_type_counts: dict[str, int]
    overall: float
    total: int

    def to_dict(self) -> dict:
        return {
            "per_type": {k: self.per_type[k] for k in sorted(self.per_type)},
            "per_type_counts": {k: self.per_type_counts[k] for k in sorted(self.per_type_counts)},
            "overall": self.overall,
            "total": self.total,
        }


@dataclass(frozen=True)
class DisplacementMetrics:
    mADE: float
    minADE: float
    mFDE: float
    minFDE: float

    def to_dict(self) -> dict:
        return {"mADE": self.mADE, "minADE": self.minADE, "mFDE": self.mFDE, "minFDE": self.minFDE}


def _norm_answer(ans: str) -> str:
    return ans.strip().lower()


def qa_accuracy(dataset: Sequence[QAItem], preds: Sequence[Prediction]) -> QaAccuracyReport:
    """Top-1 exact-match accuracy (case-insensitive, trimmed), per type and overall."""
    by_id: dict[str, Prediction] = {}
    for p in preds:
        if p.qa_id in by_id:
            raise UnknownId(f"duplicate prediction for qa_id {p.qa_id!r}")
        by_id[p.qa_id] = p
    known = {it.qa_id for it in dataset}
    unknown = set(by_id) - known
    if unknown:
        raise UnknownId(f"predictions for unknown qa_ids: {sorted(unknown)[:5]}")
    missing = [it.qa_id for it in dataset if it.qa_id not in by_id]
    if missing:
        raise MissingPrediction(f"{len(missing)} items lack predictions, e.g. {missing[:5]}")

    correct: dict[str, int] = {}
    counts: dict[str, int] = {}
    for it in dataset:
        qt = it.qtype.value
        counts[qt] = counts.get(qt, 0) + 1
        if _norm_answer(by_id[it.qa_id].answer) == _norm_answer(it.answer):
            correct[qt] = correct.get(qt, 0) + 1
    per_type = {qt: correct.get(qt, 0) / n for qt, n in counts.items()}
    total = sum(counts.values())
    overall = sum(correct.get(qt, 0) for qt in counts) / total if total else 0.0
    return QaAccuracyReport(per_type=per_type, per_type_counts=counts, overall=overall, total=total)


# ---------------------------------------------------------------------------
# displacement metrics


def displacement_metrics(gt: StateSeq, samples: Sequence[StateSeq]) -> DisplacementMetrics:
    """ADE/FDE aggregated over K samples: mean (mADE/mFDE) and min (minADE/minFDE)."""
    if not samples:
        raise EmptyInput("need at least one sample trajectory")
    gt_xy = gt.xy()
    ades, fdes = [], []
    for i, sample in enumerate(samples):
        if len(sample.states) != len(gt.states):
            raise LengthMismatch(
                f"sample {i} has {len(sample.states)} states, ground truth has {len(gt.states)}"
            )
        if abs(sample.dt - gt.dt) > 1e-12:
            raise LengthMismatch(f"sample {i} dt {sample.dt} != ground truth dt {gt.dt}")
        err = np.linalg.norm(sample.xy() - gt_xy, axis=1)
        ades.append(float(err.mean()))
        fdes.append(float(err[-1]))
    return DisplacementMetrics(
        mADE=float(np.mean(ades)),
        minADE=float(np.min(ades)),
        mFDE=float(np.mean(fdes)),
        minFDE=float(np.min(fdes)),
    )


# ---------------------------------------------------------------------------
# oriented-rectangle overlap and scenario collision rate


def obb_corners(center, yaw: float, length: float, width: float) -> np.ndarray:
    cx, cy = (center.x, center.y) if hasattr(center, "x") else (float(center[0]), float(center[1]))
    hl, hw = length / 2.0, width / 2.0
    c, s = math.cos(yaw), math.sin(yaw)
    local = ((-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw))
    return np.array([(cx + dx * c - dy * s, cy + dx * s + dy * c) for dx, dy in local])


def obb_overlap(
    center_a,
    yaw_a: float,
    len_a: float,
    wid_a: float,
    center_b,
    yaw_b: float,
    len_b: float,
    wid_b: float,
) -> bool:
    """Separating-axis test over the 4 face normals; touching edges count as overlap."""
    if len_a <= 0 or wid_a <= 0 or len_b <= 0 or wid_b <= 0:
        raise DegenerateInput("rectangle dimensions must be > 0")
    ca = obb_corners(center_a, yaw_a, len_a, wid_a)
    cb = obb_corners(center_b, yaw_b, len_b, wid_b)
    for yaw in (yaw_a, yaw_b):
        c, s = math.cos(yaw), math.sin(yaw)
        for axis in ((c, s), (-s, c)):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def obb_separation_margin(
    center_a, yaw_a, len_a, wid_a, center_b, yaw_b, len_b, wid_b
) -> float:
    """Max over axes of the projected gap; > 0 means separated, <= 0 overlapping."""
    ca = obb_corners(center_a, yaw_a, len_a, wid_a)
    cb = obb_corners(center_b, yaw_b, len_b, wid_b)
    margin = -math.inf
    for yaw in (yaw_a, yaw_b):
        c, s = math.cos(yaw), math.sin(yaw)
        for axis in ((c, s), (-s, c)):
            pa = ca @ axis
            pb = cb @ axis
            gap = max(pb.min() - pa.max(), pa.min() - pb.max())
            margin = max(margin, gap)
    return margin


def scenario_collision_rate(
    scenarios: Sequence[tuple[Scene, Mapping[str, StateSeq]]]
) -> float:
    """Fraction of scenarios where any two vehicle footprints overlap at any timestep."""
    if not scenarios:
        raise EmptyInput("need at least one scenario")
    colliding = 0
    for scene, rollouts in scenarios:
        dims = {tr.vehicle_id: (tr.length, tr.width) for tr in scene.tracks}
        ids = sorted(rollouts)
        hit = False
        for i in range(len(ids)):
            if hit:
                break
            for j in range(i + 1, len(ids)):
                a, b = rollouts[ids[i]], rollouts[ids[j]]
                la, wa = dims.get(ids[i], (4.7, 2.0))
                lb, wb = dims.get(ids[j], (4.7, 2.0))
                for sa, sb in zip(a.states, b.states):
                    if obb_overlap(sa.position, sa.yaw, la, wa, sb.position, sb.yaw, lb, wb):
                        hit = True
                        break
                if hit:
                    break
        colliding += int(hit)
    return colliding / len(scenarios)


# ---------------------------------------------------------------------------
# report I/O


def trajectory_report_dict(metrics: DisplacementMetrics, scr: float | None = None, n: int | None = None) -> dict:
    d = metrics.to_dict()
    if scr is not None:
        d["SCR"] = scr
    if n is not None:
        d["n"] = n
    return d


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_predictions_jsonl(path) -> list[Prediction]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                d = json.loads(line)
                out.append(Prediction(qa_id=d["qa_id"], answer=d["answer"]))
    return out
