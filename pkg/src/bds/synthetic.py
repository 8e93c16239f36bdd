"""Synthetic scenes and detector arms with known behaviour, plus brute-force oracles.

Ground-truth boxes never touch each other, so greedy matching is optimal on
clean scenes and bandit tests are not confounded by matcher quirks. All
randomness comes from explicit seeds through numpy's ``SeedSequence``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import (
    Detection,
    GroundTruthInstance,
    ImageRecord,
    PredictionSet,
    annotations_to_coco,
    predictions_to_coco,
    write_json,
)
from .errors import InstanceTooLarge, NonIntegerInput, PlacementFailure, UnsupportedSpec
from .evaluation import EvalCriteria
from .geometry import BoundingBox, intersection_area, iou

MAX_PLACEMENT_TRIES = 1000
MAX_CLUTTER_TRIES = 100
PLACEMENT_BATCH = 8
CLUTTER_BATCH = 4


@dataclass(frozen=True)
class SyntheticSceneSpec:
    image_count: int = 137
    boxes_per_image: tuple[int, int] = (2, 6)
    image_size: tuple[int, int] = (640, 480)
    box_size: tuple[int, int] = (24, 64)
    seed: int = 0
    label: str = "cow"

    def __post_init__(self):
        lo, hi = self.boxes_per_image
        if self.image_count < 0 or lo < 0 or hi < lo:
            raise ValueError("image_count and boxes_per_image must be non-negative with lo <= hi")
        smin, smax = self.box_size
        if min(self.image_size) <= 0 or smin <= 0 or smax < smin:
            raise ValueError("image and box sizes must be positive with lo <= hi")
        if smax > min(self.image_size):
            raise ValueError("boxes cannot be larger than the image")

    @property
    def mean_boxes(self) -> float:
        return sum(self.boxes_per_image) / 2


@dataclass(frozen=True)
class SyntheticArmSpec:
    name: str
    true_positive_rate: float = 0.9
    false_positives_per_image: float = 0.5
    localization_jitter: float = 0.05
    score_range: tuple[float, float] = (0.5, 1.0)
    class_noise_rate: float = 0.0
    noise_label: str = "bottle"
    clutter_label: str = "cow"
    clutter_size: tuple[int, int] = (16, 48)

    def __post_init__(self):
        for name in ("true_positive_rate", "class_noise_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.false_positives_per_image < 0:
            raise ValueError("false_positives_per_image must be non-negative")
        if not 0 <= self.localization_jitter < 0.5:
            raise ValueError("localization_jitter must lie in [0, 0.5)")
        lo, hi = self.score_range
        if not 0 <= lo <= hi <= 1:
            raise ValueError("score_range must satisfy 0 <= lo <= hi <= 1")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


def _branches(seed: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent seed trees for scene layout and for arm behaviour."""
    scenes, arms = np.random.SeedSequence(seed).spawn(2)
    return scenes, arms


def _disjoint(a: list, b: list) -> bool:
    return min(a[0] + a[2], b[0] + b[2]) <= max(a[0], b[0]) or min(a[1] + a[3], b[1] + b[3]) <= max(a[1], b[1])


def _place_boxes(rng: np.random.Generator, count: int, spec: SyntheticSceneSpec, where: str) -> list[BoundingBox]:
    W, H = spec.image_size
    smin, smax = spec.box_size
    placed: list[list[int]] = []
    tries = 0
    while len(placed) < count:
        u = rng.random((PLACEMENT_BATCH, 4))
        sizes = (smin + u[:, :2] * (smax - smin + 1)).astype(int)
        pos = (u[:, 2:] * (np.array([W, H]) - sizes + 1)).astype(int)
        for cand in np.concatenate([pos, sizes], axis=1).tolist():
            if all(_disjoint(cand, other) for other in placed):
                placed.append(cand)
                tries = 0
                if len(placed) == count:
                    break
            else:
                tries += 1
                if tries == MAX_PLACEMENT_TRIES:
                    raise PlacementFailure(f"{where}: could not place {count} disjoint boxes in a {W}x{H} image")
    return [BoundingBox(*xywh) for xywh in placed]


def generate_scenes(spec: SyntheticSceneSpec) -> list[ImageRecord]:
    """Images with pairwise non-intersecting integer ground-truth boxes."""
    records = []
    lo, hi = spec.boxes_per_image
    for i, child in enumerate(_branches(spec.seed)[0].spawn(spec.image_count)):
        rng = _rng(child)
        count = int(rng.integers(lo, hi + 1))
        boxes = _place_boxes(rng, count, spec, f"image {i + 1}")
        records.append(ImageRecord(
            image_id=i + 1,
            width=spec.image_size[0],
            height=spec.image_size[1],
            ground_truth=tuple(GroundTruthInstance(b, spec.label) for b in boxes),
            file_name=f"synthetic_{i + 1:05d}.jpg",
        ))
    return records


def _clutter_candidates(u: np.ndarray, spec: SyntheticArmSpec, dims: np.ndarray) -> list:
    """Map uniforms of shape ``(..., 4)`` to integer ``[x, y, w, h]`` inside images of size ``dims``.

    ``dims`` broadcasts against ``u[..., :2]`` and holds ``(width, height)``.
    """
    lo = np.minimum(spec.clutter_size[0], dims.min(axis=-1, keepdims=True))
    hi = np.minimum(spec.clutter_size[1], dims.min(axis=-1, keepdims=True))
    sizes = (lo + u[..., :2] * (hi - lo + 1)).astype(int)
    pos = (u[..., 2:] * (dims - sizes + 1)).astype(int)
    return np.concatenate([pos, sizes], axis=-1).tolist()


def _clear_of(box: BoundingBox, rec: ImageRecord) -> bool:
    return all(intersection_area(box, gt.box) == 0 for gt in rec.ground_truth)


def _clutter_box(rng: np.random.Generator, spec: SyntheticArmSpec, rec: ImageRecord) -> BoundingBox:
    """Rejection-sample a clutter box clear of the ground truth; the last try if none is."""
    dims = np.array([[rec.width, rec.height]], dtype=int)
    for _ in range(MAX_CLUTTER_TRIES // CLUTTER_BATCH):
        for xywh in _clutter_candidates(rng.random((CLUTTER_BATCH, 4)), spec, dims):
            cand = BoundingBox(*xywh)
            if _clear_of(cand, rec):
                return cand
    return cand


class _SceneArrays(NamedTuple):
    geom: np.ndarray
    padded: np.ndarray
    dims: np.ndarray


def _scene_arrays(scenes: Sequence[ImageRecord]) -> _SceneArrays:
    """Ground truth as flat ``(G, 4)`` and per-image padded ``(S, W, 4)`` arrays."""
    width = max((len(rec.ground_truth) for rec in scenes), default=0)
    padded = np.zeros((len(scenes), width, 4))
    padded[:, :, :2] = -1.0  # zero-size padding never intersects
    flat = []
    for i, rec in enumerate(scenes):
        rows = [gt.box.as_list() for gt in rec.ground_truth]
        if rows:
            padded[i, :len(rows)] = rows
        flat.extend(rows)
    dims = np.array([[rec.width, rec.height] for rec in scenes], dtype=int).reshape(-1, 2)
    return _SceneArrays(np.array(flat, dtype=float).reshape(-1, 4), padded, dims)


def _first_clear(candidates: np.ndarray, padded: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """Index of the first candidate per row that misses every ground-truth box of its image, or -1."""
    if padded.shape[1] == 0:
        return np.zeros(len(candidates), dtype=int)
    c = candidates[:, :, None, :]
    g = padded[owner][:, None, :, :]
    iw = np.minimum(c[..., 0] + c[..., 2], g[..., 0] + g[..., 2]) - np.maximum(c[..., 0], g[..., 0])
    ih = np.minimum(c[..., 1] + c[..., 3], g[..., 1] + g[..., 3]) - np.maximum(c[..., 1], g[..., 1])
    clear = ~((iw > 0) & (ih > 0)).any(axis=-1)
    return np.where(clear.any(axis=1), clear.argmax(axis=1), -1)


def generate_arm(spec: SyntheticArmSpec, scenes: Sequence[ImageRecord], seed, arrays: _SceneArrays | None = None) -> PredictionSet:
    """Simulate one detector over ``scenes``.

    Each ground-truth box is found with probability ``true_positive_rate`` and
    reported with a jittered box; ``Poisson(false_positives_per_image)`` clutter
    boxes are added away from the ground truth. Coordinates are rounded to
    hundredths of a pixel and scores to four decimals so results survive a
    JSON round trip unchanged.
    """
    rng = _rng(seed)
    gts = [gt for rec in scenes for gt in rec.ground_truth]
    j = spec.localization_jitter
    found = (rng.random(len(gts)) < spec.true_positive_rate).tolist()
    shake = rng.uniform(-j, j, size=(len(gts), 4)) if j else np.zeros((len(gts), 4))
    arrays = arrays or _scene_arrays(scenes)
    geom = arrays.geom
    boxes = np.empty_like(geom)
    boxes[:, 0] = geom[:, 0] + shake[:, 0] * geom[:, 2]
    boxes[:, 1] = geom[:, 1] + shake[:, 1] * geom[:, 3]
    boxes[:, 2:] = geom[:, 2:] * (1 + shake[:, 2:])
    boxes = np.round(boxes, 2)
    boxes[:, 2:] = np.maximum(boxes[:, 2:], 0.01)
    if not j:
        boxes = geom
    noisy = (rng.random(len(gts)) < spec.class_noise_rate).tolist()
    scores = np.round(rng.uniform(*spec.score_range, size=len(gts)), 4).tolist()
    clutter = rng.poisson(spec.false_positives_per_image, size=len(scenes)).tolist()
    dims = np.repeat(arrays.dims, clutter, axis=0)
    candidates = np.array(_clutter_candidates(rng.random((sum(clutter), CLUTTER_BATCH, 4)), spec, dims[:, None, :]), dtype=int)
    candidates = candidates.reshape(-1, CLUTTER_BATCH, 4)
    pick = _first_clear(candidates, arrays.padded, np.repeat(np.arange(len(scenes)), clutter)).tolist()
    fp_draws = candidates.tolist()
    fp_scores = np.round(rng.uniform(*spec.score_range, size=sum(clutter)), 4).tolist()
    boxes = boxes.tolist()

    by_image = {}
    k = f = 0
    for rec, n_fp in zip(scenes, clutter):
        dets = []
        for gt in rec.ground_truth:
            if found[k]:
                label = spec.noise_label if noisy[k] else gt.label
                box = gt.box if not j else BoundingBox(*boxes[k])
                dets.append(Detection(box, label, scores[k]))
            k += 1
        for _ in range(n_fp):
            box = BoundingBox(*fp_draws[f][pick[f]]) if pick[f] >= 0 else _clutter_box(rng, spec, rec)
            dets.append(Detection(box, spec.clutter_label, fp_scores[f]))
            f += 1
        by_image[rec.image_id] = tuple(dets)
    return PredictionSet(spec.name, by_image)


def min_iou_under_jitter(j: float) -> float:
    """Lower bound on IoU between a box and any jittered copy of it.

    Shifts are at most ``j`` of the box size per axis and each side is scaled
    by a factor in ``[1 - j, 1 + j]``.
    """
    inter = (1 - 2 * j) ** 2
    return inter / (1 + (1 + j) ** 2 - inter)


def expected_reward(arm: SyntheticArmSpec, scene: SyntheticSceneSpec, criteria: EvalCriteria | None = None) -> float:
    """Expected per-image reward ``3b - g - d`` for a clean synthetic arm.

    Valid only when every emitted true positive survives all gates: no class
    noise, jitter small enough to keep IoU above ``rho`` and scores above ``tau``.
    """
    criteria = criteria or EvalCriteria()
    if arm.class_noise_rate != 0:
        raise UnsupportedSpec("closed form assumes class_noise_rate == 0")
    # Half a hundredth of a pixel of rounding stays well inside this margin.
    if min_iou_under_jitter(arm.localization_jitter) < criteria.rho + 0.01:
        raise UnsupportedSpec("jitter can push matches below rho")
    if arm.score_range[0] < criteria.tau:
        raise UnsupportedSpec("scores can fall below tau")
    if scene.label.casefold() not in criteria.animal_classes:
        raise UnsupportedSpec(f"scene label {scene.label!r} is not an animal class")
    g = scene.mean_boxes
    tp = arm.true_positive_rate * g
    return 3 * tp - g - (tp + arm.false_positives_per_image)


def brute_force_max_matching(dets: Sequence[BoundingBox], gt: Sequence[BoundingBox], rho: float) -> int:
    """Maximum one-to-one matching with every pair at IoU >= ``rho``, by exhaustive search."""
    if len(dets) > 8 or len(gt) > 8:
        raise InstanceTooLarge("exhaustive matching supports at most 8 boxes per side")
    ok = [[iou(d, g) >= rho for g in gt] for d in dets]

    @lru_cache(maxsize=None)
    def best(i: int, used: int) -> int:
        if i == len(dets):
            return 0
        result = best(i + 1, used)
        for j in range(len(gt)):
            if ok[i][j] and not used & (1 << j):
                result = max(result, 1 + best(i + 1, used | (1 << j)))
        return result

    return best(0, 0)


def _as_int(v: float) -> int:
    if isinstance(v, bool) or not float(v).is_integer():
        raise NonIntegerInput(f"rasterization needs integer coordinates, got {v!r}")
    return int(v)


def rasterized_iou(a: BoundingBox, b: BoundingBox) -> float:
    """IoU by counting unit grid cells covered by each box."""
    ax, ay, aw, ah = (_as_int(v) for v in a.as_list())
    bx, by, bw, bh = (_as_int(v) for v in b.as_list())
    x0, y0 = min(ax, bx), min(ay, by)
    x1, y1 = max(ax + aw, bx + bw), max(ay + ah, by + bh)
    ga = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    gb = np.zeros_like(ga)
    ga[ay - y0:ay - y0 + ah, ax - x0:ax - x0 + aw] = True
    gb[by - y0:by - y0 + bh, bx - x0:bx - x0 + bw] = True
    both = int(np.count_nonzero(ga & gb))
    either = int(np.count_nonzero(ga | gb))
    return both / either


# Simulation corpus -------------------------------------------------------------------------


@dataclass
class SimulationSpec:
    scene: SyntheticSceneSpec = field(default_factory=SyntheticSceneSpec)
    arms: list[SyntheticArmSpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimulationSpec":
        scene = dict(doc.get("scene", {}))
        for key in ("boxes_per_image", "image_size", "box_size"):
            if key in scene:
                scene[key] = tuple(scene[key])
        arms = []
        for arm in doc.get("arms", []):
            arm = dict(arm)
            for key in ("score_range", "clutter_size"):
                if key in arm:
                    arm[key] = tuple(arm[key])
            arms.append(SyntheticArmSpec(**arm))
        if not arms:
            arms = ramp_arms(int(doc.get("arm_count", 6)))
        return cls(SyntheticSceneSpec(**scene), arms)

    def to_dict(self) -> dict:
        return {"scene": asdict(self.scene), "arms": [asdict(a) for a in self.arms]}


def ramp_arms(n: int) -> list[SyntheticArmSpec]:
    """``n`` arms whose quality falls off linearly from the first to the last."""
    if n < 1:
        raise ValueError("need at least one arm")
    arms = []
    for i in range(n):
        f = i / (n - 1) if n > 1 else 0.0
        arms.append(SyntheticArmSpec(
            name=f"arm{i:02d}",
            true_positive_rate=round(0.95 - 0.55 * f, 4),
            false_positives_per_image=round(0.2 + 1.8 * f, 4),
            localization_jitter=round(0.03 + 0.05 * f, 4),
            score_range=(0.5, 1.0) if i % 2 == 0 else (0.3, 1.0),
            class_noise_rate=round(0.1 * f, 4),
        ))
    return arms


def default_simulation_spec(arm_count: int = 6, seed: int = 0) -> SimulationSpec:
    return SimulationSpec(SyntheticSceneSpec(seed=seed), ramp_arms(arm_count))


def simulate(spec: SimulationSpec) -> tuple[list[ImageRecord], list[PredictionSet]]:
    arm_seeds = _branches(spec.scene.seed)[1].spawn(len(spec.arms))
    scenes = generate_scenes(spec.scene)
    arrays = _scene_arrays(scenes)
    return scenes, [generate_arm(a, scenes, s, arrays) for a, s in zip(spec.arms, arm_seeds)]


def write_corpus(spec: SimulationSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write an annotation file, one results file per arm and a pool manifest."""
    out = Path(out_dir)
    scenes, pool = simulate(spec)
    paths = {"annotations": out / "annotations.json", "manifest": out / "manifest.json", "spec": out / "spec.json"}
    write_json(annotations_to_coco(scenes), paths["annotations"])
    manifest = []
    for pset in pool:
        rel = Path("predictions") / f"{pset.model_name}.json"
        write_json(predictions_to_coco(pset), out / rel)
        manifest.append({"model": pset.model_name, "predictions": rel.as_posix()})
    write_json(manifest, paths["manifest"])
    write_json(spec.to_dict(), paths["spec"])
    return paths
