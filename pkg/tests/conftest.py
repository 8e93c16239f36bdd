import json

import pytest

from bds.dataset import Detection, GroundTruthInstance, ImageRecord, PredictionSet
from bds.geometry import BoundingBox


def cow(x, y, w=10, h=10):
    return GroundTruthInstance(BoundingBox(x, y, w, h), "cow")


def det(x, y, w=10, h=10, score=0.9, label="cow"):
    return Detection(BoundingBox(x, y, w, h), label, score)


@pytest.fixture
def write_json(tmp_path):
    def _write(name, obj):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def coco_doc():
    return {
        "images": [{"id": 7, "width": 100, "height": 80, "file_name": "a.jpg"}, {"id": 8, "width": 100, "height": 80}],
        "annotations": [
            {"id": 1, "image_id": 7, "category_id": 1, "bbox": [10, 20, 30, 40]},
            {"id": 2, "image_id": 8, "category_id": 2, "bbox": [0, 0, 5, 5]},
        ],
        "categories": [{"id": 1, "name": "cow"}, {"id": 2, "name": "sheep"}],
    }


@pytest.fixture
def tiny_dataset():
    return [
        ImageRecord(1, 100, 100, (cow(0, 0),)),
        ImageRecord(2, 100, 100, (cow(0, 0), cow(50, 50))),
        ImageRecord(3, 100, 100, ()),
    ]


def make_pset(name, by_image):
    return PredictionSet(name, {k: tuple(v) for k, v in by_image.items()})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            number = getattr(rep, "criterion", None)
            if number is not None and (rep.when == "call" or outcome != "passed"):
                lines.append((number, "PASS" if outcome == "passed" else "FAIL", rep.nodeid.split("::")[-1]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for number, verdict, name in sorted(set(lines)):
            terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {name}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]
