"""COCO-style ingestion of annotations and per-model prediction files.

Three documents are read here:

* an annotation document (``images``, ``annotations``, ``categories``),
* a results document per model (flat list of scored boxes), and
* a pool manifest listing ``{"model": ..., "predictions": ...}`` entries.

Nothing in this module touches image pixels.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Hashable, Iterable, Mapping, Sequence

from .errors import (
    DanglingReference,
    DuplicateModel,
    EmptyDataset,
    InvalidBox,
    MalformedDocument,
    MissingFile,
    ScoreOutOfRange,
)
from .geometry import BoundingBox

log = logging.getLogger(__name__)

ImageId = Hashable

# Category ids emitted by COCO-pretrained detectors (91-id numbering).
COCO_CATEGORIES: dict[int, str] = {
    1: "person", 2: "bicycle", 3: "car", 4: "motorcycle", 5: "airplane", 6: "bus",
    7: "train", 8: "truck", 9: "boat", 10: "traffic light", 11: "fire hydrant",
    13: "stop sign", 14: "parking meter", 15: "bench", 16: "bird", 17: "cat",
    18: "dog", 19: "horse", 20: "sheep", 21: "cow", 22: "elephant", 23: "bear",
    24: "zebra", 25: "giraffe", 27: "backpack", 28: "umbrella", 31: "handbag",
    32: "tie", 33: "suitcase", 34: "frisbee", 35: "skis", 36: "snowboard",
    37: "sports ball", 38: "kite", 39: "baseball bat", 40: "baseball glove",
    41: "skateboard", 42: "surfboard", 43: "tennis racket", 44: "bottle",
    46: "wine glass", 47: "cup", 48: "fork", 49: "knife", 50: "spoon", 51: "bowl",
    52: "banana", 53: "apple", 54: "sandwich", 55: "orange", 56: "broccoli",
    57: "carrot", 58: "hot dog", 59: "pizza", 60: "donut", 61: "cake", 62: "chair",
    63: "couch", 64: "potted plant", 65: "bed", 67: "dining table", 70: "toilet",
    72: "tv", 73: "laptop", 74: "mouse", 75: "remote", 76: "keyboard",
    77: "cell phone", 78: "microwave", 79: "oven", 80: "toaster", 81: "sink",
    82: "refrigerator", 84: "book", 85: "clock", 86: "vase", 87: "scissors",
    88: "teddy bear", 89: "hair drier", 90: "toothbrush",
}
COCO_IDS_BY_NAME = {name: cid for cid, name in COCO_CATEGORIES.items()}


@dataclass(frozen=True, slots=True)
class GroundTruthInstance:
    box: BoundingBox
    label: str

    def __post_init__(self):
        if not isinstance(self.label, str) or not self.label.strip():
            raise MalformedDocument("class label must be a non-empty string")


@dataclass(frozen=True, slots=True)
class Detection:
    box: BoundingBox
    label: str
    score: float

    def __post_init__(self):
        if not isinstance(self.score, (int, float)) or not 0.0 <= self.score <= 1.0:
            raise ScoreOutOfRange(f"score must lie in [0, 1], got {self.score!r}")


@dataclass(frozen=True)
class ImageRecord:
    image_id: ImageId
    width: float
    height: float
    ground_truth: tuple[GroundTruthInstance, ...] = ()
    file_name: str | None = None


@dataclass(frozen=True)
class PredictionSet:
    model_name: str
    predictions_by_image: Mapping[ImageId, tuple[Detection, ...]] = field(default_factory=dict)

    def detections(self, image_id: ImageId) -> tuple[Detection, ...]:
        return self.predictions_by_image.get(image_id, ())

    @property
    def detection_count(self) -> int:
        return sum(len(v) for v in self.predictions_by_image.values())


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple[ImageId, ...]
    test_ids: tuple[ImageId, ...]
    seed: int
    ratio: float


def _read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    try:
        with path.open(encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from exc
    except UnicodeDecodeError as exc:
        raise MalformedDocument("file is not valid UTF-8", str(path)) from exc


def _require(obj: Any, key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise MalformedDocument("expected an object", where)
    if key not in obj:
        raise MalformedDocument(f"missing field '{key}'", where)
    return obj[key]


def _parse_box(raw: Any, where: str) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise MalformedDocument("bbox must be a list [x, y, width, height]", where)
    try:
        return BoundingBox(*raw)
    except InvalidBox as exc:
        raise InvalidBox(str(exc), where) from None


def clamp_to_image(box: BoundingBox, width: float, height: float, where: str = "") -> BoundingBox:
    """Clip a ground-truth box to the image rectangle.

    Overruns are clipped with a warning; boxes with no area left inside the
    image are rejected.
    """
    x1, y1 = max(box.x, 0.0), max(box.y, 0.0)
    x2, y2 = min(box.x2, float(width)), min(box.y2, float(height))
    if x2 <= x1 or y2 <= y1:
        raise InvalidBox(f"box {box.as_list()} lies outside the {width}x{height} image", where)
    if (x1, y1, x2, y2) == (box.x, box.y, box.x2, box.y2):
        return box
    log.warning("%s: clamping box %s to %sx%s image", where, box.as_list(), width, height)
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)


def parse_annotations(doc: Any, source: str = "<annotations>") -> list[ImageRecord]:
    for key in ("images", "annotations", "categories"):
        if not isinstance(_require(doc, key, source), list):
            raise MalformedDocument(f"'{key}' must be a list", source)

    categories: dict[Any, str] = {}
    for i, cat in enumerate(doc["categories"]):
        where = f"{source}: categories[{i}]"
        cid, name = _require(cat, "id", where), _require(cat, "name", where)
        if not isinstance(name, str) or not name.strip():
            raise MalformedDocument("category name must be a non-empty string", where)
        categories[cid] = name

    images: dict[Any, dict] = {}
    for i, img in enumerate(doc["images"]):
        where = f"{source}: images[{i}]"
        iid = _require(img, "id", where)
        width, height = _require(img, "width", where), _require(img, "height", where)
        if isinstance(iid, (list, dict)):
            raise MalformedDocument("image id must be a scalar", where)
        if iid in images:
            raise MalformedDocument(f"duplicate image id {iid!r}", where)
        for dim in (width, height):
            if not isinstance(dim, (int, float)) or isinstance(dim, bool) or dim <= 0:
                raise MalformedDocument("image width/height must be positive numbers", where)
        images[iid] = {"meta": img, "gt": []}

    for i, ann in enumerate(doc["annotations"]):
        where = f"{source}: annotations[{i}]"
        iid = _require(ann, "image_id", where)
        cid = _require(ann, "category_id", where)
        if iid not in images:
            raise DanglingReference(f"annotation refers to unknown image {iid!r}", where)
        if cid not in categories:
            raise DanglingReference(f"annotation refers to unknown category {cid!r}", where)
        meta = images[iid]["meta"]
        box = clamp_to_image(_parse_box(_require(ann, "bbox", where), where), meta["width"], meta["height"], where)
        images[iid]["gt"].append(GroundTruthInstance(box, categories[cid]))

    return [
        ImageRecord(
            image_id=iid,
            width=entry["meta"]["width"],
            height=entry["meta"]["height"],
            ground_truth=tuple(entry["gt"]),
            file_name=entry["meta"].get("file_name"),
        )
        for iid, entry in images.items()
    ]


def load_annotations(path: str | Path) -> list[ImageRecord]:
    return parse_annotations(_read_json(path), str(path))


def annotations_to_coco(dataset: Sequence[ImageRecord]) -> dict:
    """Serialize image records back into a COCO annotation document.

    Category ids are assigned 1..K over the sorted label names.
    """
    labels = sorted({gt.label for rec in dataset for gt in rec.ground_truth})
    cat_ids = {name: i + 1 for i, name in enumerate(labels)}
    images, annotations = [], []
    for rec in dataset:
        img = {"id": rec.image_id, "width": rec.width, "height": rec.height}
        if rec.file_name is not None:
            img["file_name"] = rec.file_name
        images.append(img)
        for gt in rec.ground_truth:
            annotations.append({
                "id": len(annotations) + 1,
                "image_id": rec.image_id,
                "category_id": cat_ids[gt.label],
                "bbox": gt.box.as_list(),
                "area": gt.box.w * gt.box.h,
                "iscrowd": 0,
            })
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": cid, "name": name} for name, cid in cat_ids.items()],
    }


def _index(dataset: Iterable[ImageRecord]) -> dict[ImageId, ImageRecord]:
    return {rec.image_id: rec for rec in dataset}


def parse_predictions(
    doc: Any,
    model_name: str,
    dataset: Sequence[ImageRecord],
    categories: Mapping[Any, str] | None = None,
    source: str = "<predictions>",
) -> PredictionSet:
    """Group a COCO results list into a per-image :class:`PredictionSet`.

    Each entry names its class by ``category_name`` or by ``category_id``;
    ids resolve through ``categories``, which defaults to the standard COCO
    detector numbering.
    """
    if not isinstance(doc, list):
        raise MalformedDocument("results document must be a JSON array", source)
    categories = COCO_CATEGORIES if categories is None else categories
    known = _index(dataset)
    grouped: dict[ImageId, list[Detection]] = {iid: [] for iid in known}
    for i, entry in enumerate(doc):
        where = f"{source}: [{i}]"
        iid = _require(entry, "image_id", where)
        if iid not in known:
            raise DanglingReference(f"prediction refers to unknown image {iid!r}", where)
        if "category_name" in entry:
            label = entry["category_name"]
            if not isinstance(label, str) or not label.strip():
                raise MalformedDocument("category_name must be a non-empty string", where)
        else:
            cid = _require(entry, "category_id", where)
            if cid not in categories:
                raise DanglingReference(f"unknown category id {cid!r}", where)
            label = categories[cid]
        score = _require(entry, "score", where)
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= score <= 1.0:
            raise ScoreOutOfRange(f"score must lie in [0, 1], got {score!r}", where)
        box = _parse_box(_require(entry, "bbox", where), where)
        grouped[iid].append(Detection(box, label, float(score)))
    return PredictionSet(model_name, {iid: tuple(dets) for iid, dets in grouped.items()})


def load_predictions(
    path: str | Path,
    model_name: str,
    dataset: Sequence[ImageRecord],
    categories: Mapping[Any, str] | None = None,
) -> PredictionSet:
    return parse_predictions(_read_json(path), model_name, dataset, categories, str(path))


def predictions_to_coco(pset: PredictionSet) -> list[dict]:
    results = []
    for iid, dets in pset.predictions_by_image.items():
        for det in dets:
            entry = {"image_id": iid, "category_name": det.label, "bbox": det.box.as_list(), "score": det.score}
            cid = COCO_IDS_BY_NAME.get(det.label.casefold())
            if cid is not None:
                entry["category_id"] = cid
            results.append(entry)
    return results


def load_pool(manifest_path: str | Path, dataset: Sequence[ImageRecord]) -> list[PredictionSet]:
    """Load every arm listed in a pool manifest.

    Relative prediction paths are resolved against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    doc = _read_json(manifest_path)
    if not isinstance(doc, list) or not doc:
        raise MalformedDocument("manifest must be a non-empty JSON array", str(manifest_path))
    pool, seen = [], set()
    for i, entry in enumerate(doc):
        where = f"{manifest_path}: [{i}]"
        name = _require(entry, "model", where)
        rel = _require(entry, "predictions", where)
        if not isinstance(name, str) or not name:
            raise MalformedDocument("model name must be a non-empty string", where)
        if name in seen:
            raise DuplicateModel(f"model {name!r} listed twice", where)
        seen.add(name)
        path = Path(rel)
        if not path.is_absolute():
            path = manifest_path.parent / path
        pool.append(load_predictions(path, name, dataset))
    return pool


def held_out_count(n: int, ratio: float) -> int:
    """Number of held-out images, ``round((1 - ratio) * n)`` rounding half up."""
    share = (1 - Fraction(repr(float(ratio)))) * n
    return int(share + Fraction(1, 2))


def split_dataset(dataset: Sequence[ImageRecord], ratio: float = 0.9, seed: int = 0) -> DatasetSplit:
    """Seeded shuffle split: the first ``held_out_count`` images form the test set.

    ``ratio == 1.0`` means no split: both sides hold every image in dataset
    order, so repeated seeds see identical inputs.
    """
    if not dataset:
        raise EmptyDataset("cannot split an empty dataset")
    if not 0 < ratio <= 1:
        raise ValueError(f"split ratio must lie in (0, 1], got {ratio}")
    ids = [rec.image_id for rec in dataset]
    if ratio == 1:
        return DatasetSplit(tuple(ids), tuple(ids), seed, ratio)
    random.Random(seed).shuffle(ids)
    k = held_out_count(len(ids), ratio)
    return DatasetSplit(tuple(ids[k:]), tuple(ids[:k]), seed, ratio)


def write_json(obj: Any, path: str | Path) -> None:
    """Write JSON with stable formatting so outputs can be diffed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")
