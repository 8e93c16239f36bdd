"""Acceptance suite: one test per numbered criterion.

Each test reports a ``criterion N: PASS|FAIL`` line in the pytest terminal
summary (see ``conftest.py``). Running this file directly prints the same
lines without pytest.
"""

import json
import random
import time

import pytest
from click.testing import CliRunner

from bds.bandit import BanditState, replay, select_arm, update_reward
from bds.cli import main
from bds.dataset import load_annotations, load_pool
from bds.evaluation import EvalCriteria, MatchOutcome, aggregate_metrics, evaluate_set
from bds.geometry import BoundingBox, iou, match_detections
from bds.harness import RunConfig, run_brute_force_baseline, run_consensus_baseline, run_ucb_selection
from bds.synthetic import (
    SimulationSpec,
    SyntheticArmSpec,
    SyntheticSceneSpec,
    brute_force_max_matching,
    expected_reward,
    rasterized_iou,
    simulate,
)

from conftest import det, make_pset


def _int_box(rnd, span=40, size=20):
    return BoundingBox(rnd.randint(0, span), rnd.randint(0, span), rnd.randint(1, size), rnd.randint(1, size))


def _disjoint_boxes(rnd, count):
    boxes = []
    while len(boxes) < count:
        cand = _int_box(rnd, span=60, size=15)
        if all(iou(cand, b) == 0 for b in boxes):
            boxes.append(cand)
    return boxes


@pytest.mark.criterion(1)
def test_iou_matches_rasterized_oracle():
    rnd = random.Random(1)
    started = time.perf_counter()
    for _ in range(10_000):
        a, b = _int_box(rnd), _int_box(rnd)
        assert iou(a, b) == rasterized_iou(a, b), (a, b)
    assert time.perf_counter() - started < 5.0


@pytest.mark.criterion(2)
def test_matching_fuzz_against_brute_force():
    rnd = random.Random(2)
    disjoint_scenes = 0
    for scene in range(1000):
        disjoint = scene % 2 == 0
        n_gt, n_det = rnd.randint(0, 8), rnd.randint(0, 8)
        gts = _disjoint_boxes(rnd, n_gt) if disjoint else [_int_box(rnd) for _ in range(n_gt)]
        dets = [_int_box(rnd, span=60, size=15) for _ in range(n_det)]
        scores = [round(rnd.random(), 2) for _ in dets]
        # From rho = 0.5 up, a detection clears the bar against at most one of two disjoint
        # boxes (bar an exact half split at 0.5), which is what makes greedy optimal there.
        rho = rnd.choice([0.5, 0.75, round(rnd.uniform(0.5, 0.95), 3)]) if disjoint else round(rnd.uniform(0.1, 0.9), 3)
        pairs = match_detections(dets, scores, gts, rho)
        assert all(iou(dets[p.detection_index], gts[p.ground_truth_index]) >= rho for p in pairs)
        assert len({p.detection_index for p in pairs}) == len(pairs)
        assert len({p.ground_truth_index for p in pairs}) == len(pairs)
        best = brute_force_max_matching(dets, gts, rho)
        assert len(pairs) <= best
        if disjoint:
            disjoint_scenes += 1
            assert len(pairs) == best
    assert disjoint_scenes == 500


@pytest.mark.criterion(3)
def test_reward_ledger():
    rnd = random.Random(3)
    state = BanditState.fresh(7)
    for _ in range(10_000):
        g, d = rnd.randint(0, 12), rnd.randint(0, 12)
        b = rnd.randint(0, min(g, d))
        arm = rnd.randrange(7)
        after = update_reward(state, arm, MatchOutcome(g, d, b))
        assert after.Q[arm] - state.Q[arm] == 3 * b - g - d
        assert after.N[arm] == state.N[arm] + 1
        state = after
    assert replay(7, state.pull_log) == state


@pytest.mark.criterion(4)
def test_forced_exploration():
    rnd = random.Random(4)
    for n in range(1, 21):
        state = BanditState.fresh(n)
        picks = []
        for _ in range(n):
            arm = select_arm(state)
            picks.append(arm)
            g = rnd.randint(0, 5)
            state = update_reward(state, arm, MatchOutcome(g, rnd.randint(0, 5), 0))
        assert picks == list(range(n))


BEST_ARM_POOL = [
    SyntheticArmSpec("a0", 0.75, 0.5, 0.05),
    SyntheticArmSpec("a1", 0.70, 0.6, 0.05),
    SyntheticArmSpec("a2", 0.65, 0.8, 0.05),
    SyntheticArmSpec("a3", 0.60, 1.0, 0.05),
    SyntheticArmSpec("a4", 0.55, 1.2, 0.05),
    SyntheticArmSpec("best", 0.97, 0.1, 0.04),
    SyntheticArmSpec("a6", 0.50, 1.5, 0.05),
    SyntheticArmSpec("a7", 0.40, 2.0, 0.05),
]


@pytest.mark.criterion(5)
def test_best_arm_identification():
    started = time.perf_counter()
    scene = SyntheticSceneSpec(image_count=2222, boxes_per_image=(3, 3), seed=0)
    rewards = [expected_reward(a, scene) for a in BEST_ARM_POOL]
    best = rewards.index(max(rewards))
    assert max(rewards) - sorted(rewards)[-2] >= 1.0
    data, pool = simulate(SimulationSpec(scene, BEST_ARM_POOL))
    config = RunConfig(C=0.1, mode="mean", split_ratio=0.9)
    wins, shares = 0, []
    for seed in range(1, 21):
        result = run_ucb_selection(config, data, pool, seed)
        assert result.train_size == 2000
        tail = [e.arm for e in result.trace[-500:]]
        shares.append(tail.count(best) / 500)
        wins += result.winner_index == best
    assert wins >= 18
    assert min(shares) >= 0.8
    assert time.perf_counter() - started < 10.0


@pytest.fixture(scope="module")
def sixteen_arm_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("sixteen")
    res = CliRunner().invoke(main, ["--out", str(out), "simulate", "--arms", "16"])
    assert res.exit_code == 0, res.output
    data = load_annotations(out / "annotations.json")
    return data, load_pool(out / "manifest.json", data)


@pytest.mark.criterion(6)
def test_efficiency_ratio(sixteen_arm_corpus):
    data, pool = sixteen_arm_corpus
    config = RunConfig()
    for n in (1, 2, 5, 16):
        for seed in (1, 2):
            ucb = run_ucb_selection(config, data, pool[:n], seed)
            brute = run_brute_force_baseline(config, data, pool[:n], seed)
            T = ucb.train_size
            assert ucb.inference_count == T == 123
            assert brute.inference_count == n * T
    assert brute.inference_count == 1968
    assert brute.inference_count / ucb.inference_count == 16


@pytest.mark.criterion(7)
def test_single_arm_strategies_coincide():
    data, pool = simulate(SimulationSpec(SyntheticSceneSpec(image_count=137, seed=7), [SyntheticArmSpec("solo", 0.7, 0.8, 0.05)]))
    for seed in range(10):
        ucb = run_ucb_selection(RunConfig(), data, pool, seed)
        brute = run_brute_force_baseline(RunConfig(), data, pool, seed)
        assert ucb.winner_model == brute.winner_model
        assert ucb.test_metrics == brute.test_metrics
        assert ucb.trace == brute.trace


@pytest.mark.criterion(8)
def test_metrics_hand_check():
    r = aggregate_metrics([MatchOutcome(g=5, d=4, b=3)])
    assert (f"{r.precision:.3f}", f"{r.recall:.3f}", f"{r.f1:.3f}") == ("0.750", "0.600", "0.667")
    nothing_claimed = aggregate_metrics([MatchOutcome(g=5, d=0, b=0)])
    assert (nothing_claimed.precision, nothing_claimed.recall, nothing_claimed.f1) == (0.0, 0.0, 0.0)
    nothing_there = aggregate_metrics([MatchOutcome(g=0, d=3, b=0)])
    assert (nothing_there.precision, nothing_there.recall, nothing_there.f1) == (0.0, 0.0, 0.0)
    empty = aggregate_metrics([MatchOutcome(g=0, d=0, b=0)])
    assert (empty.precision, empty.recall, empty.f1) == (1.0, 1.0, 1.0)


@pytest.mark.criterion(9)
def test_consensus_correctness():
    from bds.evaluation import consensus_fuse

    data, (a,) = simulate(SimulationSpec(SyntheticSceneSpec(image_count=60, seed=9), [SyntheticArmSpec("a", 0.7, 0.6, 0.05)]))
    copies = [a] + [make_pset(n, a.predictions_by_image) for n in ("b", "c")]
    crit = EvalCriteria()
    config = RunConfig(split_ratio=1.0, consensus_k=3)
    fused = run_consensus_baseline(config, data, copies)
    assert fused.test_metrics == aggregate_metrics(evaluate_set(data, a, crit))
    for rec in data:
        kept = consensus_fuse([p.detections(rec.image_id) for p in copies], k=3, rho=0.5)
        assert len(kept) == len(a.detections(rec.image_id))

    disjoint = [make_pset(n, {r.image_id: [det(x, x, 5, 5)] for r in data}) for n, x in (("p", 300), ("q", 400))]
    assert run_consensus_baseline(RunConfig(split_ratio=1.0), data, disjoint).test_metrics.recall == 0.0

    # pairwise IoUs: first two 0.818, third overlaps neither
    three = [[det(0, 0, score=0.8)], [det(1, 0, score=0.7)], [det(60, 60, score=0.95)]]
    assert consensus_fuse(three, k=3, rho=0.5) == []
    (kept,) = consensus_fuse(three, k=2, rho=0.5)
    assert kept.score == 0.8
    (one,) = consensus_fuse([[det(0, 0, score=s)] for s in (0.6, 0.9, 0.7)], k=3, rho=0.5)
    assert one.score == 0.9


def _simulate(out):
    res = CliRunner().invoke(main, ["--out", str(out), "simulate"])
    assert res.exit_code == 0, res.output
    return out


def _select_run(corpus, out):
    args = ["--out", str(out), "select", "--annotations", str(corpus / "annotations.json"),
            "--manifest", str(corpus / "manifest.json"), "--strategy", "all", "--seeds", "1,2,3,4", "--split", "0.9"]
    res = CliRunner().invoke(main, args)
    assert res.exit_code == 0, res.output
    return out


@pytest.mark.criterion(10)
def test_protocol_shape(tmp_path):
    run = _select_run(_simulate(tmp_path / "corpus"), tmp_path / "run")
    report = json.loads((run / "report.json").read_text())
    assert report["dataset"] == {"images": 137, "train": 123, "test": 14}
    assert [r["strategy"] for r in report["rows"]] == ["ucb", "brute-force", "consensus"]
    for row in report["rows"]:
        assert row["runs"] == 4 and len(row["per_seed"]) == 4
        for key in ("precision", "recall", "f1"):
            value = row["mean"][key]
            assert value == round(value, 3)
    lines = (run / "report.csv").read_text().splitlines()
    assert len(lines) == 4
    for line in lines[1:]:
        for cell in line.split(",")[1:4]:
            assert len(cell.split(".")[1]) == 3


@pytest.mark.criterion(11)
def test_pipeline_closure(tmp_path):
    runner = CliRunner()
    started = time.perf_counter()
    corpus = tmp_path / "corpus"
    inputs = ["--annotations", str(corpus / "annotations.json"), "--manifest", str(corpus / "manifest.json")]
    steps = [
        ["--out", str(corpus), "simulate"],
        ["validate", *inputs],
        ["--out", str(tmp_path / "eval"), "eval", *inputs],
        ["--out", str(tmp_path / "select"), "select", *inputs, "--strategy", "all"],
    ]
    for step in steps:
        res = runner.invoke(main, step)
        assert res.exit_code == 0, (step, res.output)
    assert time.perf_counter() - started < 60.0


@pytest.mark.criterion(12)
def test_determinism(tmp_path):
    corpus_a, corpus_b = _simulate(tmp_path / "ca"), _simulate(tmp_path / "cb")
    for path in sorted(corpus_a.rglob("*.json")):
        assert path.read_bytes() == (corpus_b / path.relative_to(corpus_a)).read_bytes()
    first, second = _select_run(corpus_a, tmp_path / "a"), _select_run(corpus_a, tmp_path / "b")
    for name in ("report.json", "report.csv", "trace.jsonl"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failures = 0
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    tests.sort(key=lambda f: f.pytestmark[0].args[0])
    for fn in tests:
        number = fn.pytestmark[0].args[0]
        try:
            with tempfile.TemporaryDirectory() as tmp:
                if "sixteen_arm_corpus" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                    out = Path(tmp)
                    CliRunner().invoke(main, ["--out", str(out), "simulate", "--arms", "16"])
                    data = load_annotations(out / "annotations.json")
                    fn((data, load_pool(out / "manifest.json", data)))
                elif fn.__code__.co_argcount:
                    fn(Path(tmp))
                else:
                    fn()
            print(f"criterion {number}: PASS")
        except AssertionError as exc:
            failures += 1
            print(f"criterion {number}: FAIL {exc}")
    sys.exit(1 if failures else 0)
