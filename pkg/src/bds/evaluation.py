"""Per-image acceptance gates, consensus fusion and P/R/F1 aggregation."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dataset import Detection, GroundTruthInstance, ImageRecord, PredictionSet
from .errors import EmptyOutcomeList, InsufficientModels
from .geometry import MatchPair, iou, match_detections

DEFAULT_ANIMAL_CLASSES = frozenset(
    {"cow", "sheep", "cat", "dog", "horse", "person", "elephant", "bear", "zebra", "giraffe"}
)


@dataclass(frozen=True)
class EvalCriteria:
    rho: float = 0.5
    tau: float = 0.5
    animal_classes: frozenset[str] = DEFAULT_ANIMAL_CLASSES

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if not 0 <= self.tau <= 1:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        classes = frozenset(c.strip().casefold() for c in self.animal_classes if c.strip())
        if not classes:
            raise ValueError("animal_classes must not be empty")
        object.__setattr__(self, "animal_classes", classes)

    def accepts(self, det: Detection) -> bool:
        return det.score >= self.tau and det.label.casefold() in self.animal_classes

    def to_dict(self) -> dict:
        return {"rho": self.rho, "tau": self.tau, "classes": sorted(self.animal_classes)}


@dataclass(frozen=True, slots=True)
class MatchOutcome:
    g: int
    d: int
    b: int
    accepted_pairs: tuple[MatchPair, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if min(self.g, self.d, self.b) < 0 or self.b > min(self.g, self.d):
            raise ValueError(f"inconsistent counts g={self.g} d={self.d} b={self.b}")

    @property
    def reward(self) -> int:
        """Reward for one correct match, penalties for each miss and each false alarm."""
        return self.b - (self.g - self.b) - (self.d - self.b)


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    total_g: int
    total_d: int
    total_b: int
    average: str = "micro"

    def to_dict(self, digits: int = 6) -> dict:
        return {
            "precision": round(self.precision, digits),
            "recall": round(self.recall, digits),
            "f1": round(self.f1, digits),
            "total_g": self.total_g,
            "total_d": self.total_d,
            "total_b": self.total_b,
            "average": self.average,
        }


def evaluate_image(
    predictions: Sequence[Detection],
    ground_truth: Sequence[GroundTruthInstance],
    criteria: EvalCriteria,
) -> MatchOutcome:
    """Match every raw detection at ``rho``, then keep pairs passing the score and class gates.

    ``d`` counts all raw detections, so low-confidence clutter is a false positive.
    """
    pairs = match_detections(
        [p.box for p in predictions],
        [p.score for p in predictions],
        [gt.box for gt in ground_truth],
        criteria.rho,
    )
    kept = tuple(p for p in pairs if criteria.accepts(predictions[p.detection_index]))
    return MatchOutcome(len(ground_truth), len(predictions), len(kept), kept)


def _prf(g: int, d: int, b: int) -> tuple[float, float, float]:
    if g == 0 and d == 0:
        return 1.0, 1.0, 1.0
    precision = b / d if d else 0.0
    recall = b / g if g else 0.0
    s = precision + recall
    f1 = 2 * precision * recall / s if s else 0.0
    return precision, recall, f1


def aggregate_metrics(outcomes: Iterable[MatchOutcome], average: str = "micro") -> MetricsReport:
    """Precision, recall and F1 over a set of per-image outcomes.

    ``micro`` pools counts before forming ratios; ``macro`` averages the
    per-image ratios. Conventions: no detections gives precision 0, no ground
    truth gives recall 0, and an image set with neither scores 1 across the board.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise EmptyOutcomeList("need at least one outcome to aggregate")
    g = sum(o.g for o in outcomes)
    d = sum(o.d for o in outcomes)
    b = sum(o.b for o in outcomes)
    if average == "micro":
        p, r, f = _prf(g, d, b)
    elif average == "macro":
        per = [_prf(o.g, o.d, o.b) for o in outcomes]
        p, r, f = (sum(x[i] for x in per) / len(per) for i in range(3))
    else:
        raise ValueError(f"unknown averaging mode {average!r}")
    return MetricsReport(p, r, f, g, d, b, average)


def consensus_fuse(
    prediction_sets: Sequence[Sequence[Detection]],
    k: int = 2,
    rho: float = 0.5,
) -> list[Detection]:
    """Keep detections that at least ``k`` distinct models agree on.

    All detections are pooled and visited by descending score (ties: model
    order, then list order). Each unassigned detection seeds a group; the
    remaining detections are scanned in the same order and one per
    not-yet-represented model joins if it overlaps every current member at
    IoU >= ``rho``. Every group member is consumed. Groups with at least
    ``k`` models contribute their seed, the highest-scoring member.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if len(prediction_sets) < k:
        raise InsufficientModels(f"consensus over {k} models needs at least {k} prediction sets, got {len(prediction_sets)}")

    pooled = [(det, m, i) for m, dets in enumerate(prediction_sets) for i, det in enumerate(dets)]
    pooled.sort(key=lambda t: (-t[0].score, t[1], t[2]))
    used = [False] * len(pooled)
    fused = []
    for s, (seed, seed_model, _) in enumerate(pooled):
        if used[s]:
            continue
        used[s] = True
        members = [seed]
        models = {seed_model}
        for c in range(s + 1, len(pooled)):
            det, model, _ = pooled[c]
            if used[c] or model in models:
                continue
            if all(iou(det.box, other.box) >= rho for other in members):
                used[c] = True
                members.append(det)
                models.add(model)
        if len(models) >= k:
            fused.append(seed)
    return fused


@dataclass(frozen=True)
class SweepRow:
    model: str
    criteria: EvalCriteria
    report: MetricsReport

    def to_dict(self) -> dict:
        return {"model": self.model, "rho": self.criteria.rho, "tau": self.criteria.tau, **self.report.to_dict()}


def evaluate_set(
    dataset: Sequence[ImageRecord],
    pset: PredictionSet,
    criteria: EvalCriteria,
    image_ids: Iterable | None = None,
) -> list[MatchOutcome]:
    records = {rec.image_id: rec for rec in dataset}
    ids = list(records) if image_ids is None else list(image_ids)
    return [evaluate_image(pset.detections(i), records[i].ground_truth, criteria) for i in ids]


def consensus_predictions(pool: Sequence[PredictionSet], image_ids: Iterable, k: int, rho: float) -> PredictionSet:
    """Fuse a pool image by image into one pseudo-arm."""
    fused = {i: tuple(consensus_fuse([p.detections(i) for p in pool], k, rho)) for i in image_ids}
    return PredictionSet(f"consensus(k={k})", fused)


def criteria_sweep(
    dataset: Sequence[ImageRecord],
    prediction_sets: Sequence[PredictionSet],
    criteria_list: Sequence[EvalCriteria],
    average: str = "micro",
    threads: int = 1,
) -> list[SweepRow]:
    """Evaluate every (model, criteria) combination over the whole dataset.

    Rows come back model-major in input order regardless of ``threads``.
    """
    if not dataset or not prediction_sets or not criteria_list:
        raise ValueError("criteria_sweep needs a dataset, at least one model and one criteria")
    cells = [(p, c) for p in prediction_sets for c in criteria_list]

    def run(cell):
        pset, crit = cell
        return SweepRow(pset.model_name, crit, aggregate_metrics(evaluate_set(dataset, pset, crit), average))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(run, cells))
    return [run(cell) for cell in cells]


SWEEP_COLUMNS = ["model", "rho", "tau", "precision", "recall", "f1", "total_g", "total_d", "total_b", "average"]


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        d = row.to_dict()
        for key in ("precision", "recall", "f1"):
            d[key] = f"{d[key]:.6f}"
        writer.writerow(d)
    return buf.getvalue()
