"""Selection runs: UCB over the training split, and the two exhaustive baselines.

Every strategy selects on the training split and reports the chosen arm's
metrics on the held-out split. Runs are seeded; the seed fixes the split and
with it the order in which training images are visited.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .bandit import BanditState, best_arm, select_arm, update_reward
from .dataset import ImageRecord, PredictionSet, split_dataset
from .errors import InsufficientModels, InvariantViolation, NoArms
from .evaluation import (
    EvalCriteria,
    MatchOutcome,
    MetricsReport,
    aggregate_metrics,
    consensus_predictions,
    evaluate_image,
    evaluate_set,
)

STRATEGIES = ("ucb", "brute-force", "consensus")


@dataclass(frozen=True)
class RunConfig:
    criteria: EvalCriteria = field(default_factory=EvalCriteria)
    C: float = 0.1
    mode: str = "mean"
    split_ratio: float = 0.9
    seeds: tuple[int, ...] = (1, 2, 3, 4)
    pool_manifest: str | None = None
    strategy: str = "ucb"
    consensus_k: int = 2
    bruteforce_scope: str = "train"
    average: str = "micro"
    threads: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.bruteforce_scope not in ("train", "all"):
            raise ValueError("bruteforce_scope must be 'train' or 'all'")
        if self.consensus_k < 1:
            raise ValueError("consensus_k must be positive")

    def to_dict(self) -> dict:
        return {
            "criteria": self.criteria.to_dict(),
            "C": self.C,
            "mode": self.mode,
            "split_ratio": self.split_ratio,
            "seeds": list(self.seeds),
            "pool_manifest": self.pool_manifest,
            "strategy": self.strategy,
            "consensus_k": self.consensus_k,
            "bruteforce_scope": self.bruteforce_scope,
            "average": self.average,
        }


@dataclass(frozen=True, slots=True)
class TraceEntry:
    step: int
    image_id: object
    arm: int
    model: str
    b: int
    g: int
    d: int
    Q: tuple[float, ...]

    @property
    def reward(self) -> int:
        return 3 * self.b - self.g - self.d

    def to_dict(self) -> dict:
        return {
            "step": self.step, "image_id": self.image_id, "arm": self.arm, "model": self.model,
            "b": self.b, "g": self.g, "d": self.d, "reward": self.reward, "Q": list(self.Q),
        }


@dataclass
class RunResult:
    strategy: str
    seed: int
    winner_model: str
    winner_index: int | None
    train_pulls: int
    inference_count: int
    test_metrics: MetricsReport | None
    train_size: int
    test_size: int
    trace: list[TraceEntry]
    state: BanditState

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "winner": self.winner_model,
            "train": self.train_size,
            "test": self.test_size,
            "train_pulls": self.train_pulls,
            "inference_count": self.inference_count,
            "test_metrics": None if self.test_metrics is None else self.test_metrics.to_dict(3),
            "Q": [round(q, 6) for q in self.state.Q],
            "N": list(self.state.N),
        }


def _records(dataset: Sequence[ImageRecord]) -> dict:
    return {rec.image_id: rec for rec in dataset}


def _test_metrics(dataset, pset: PredictionSet, ids, config: RunConfig) -> MetricsReport | None:
    if not ids:
        return None
    return aggregate_metrics(evaluate_set(dataset, pset, config.criteria, ids), config.average)


def _check_pool(pool: Sequence[PredictionSet]) -> None:
    if not pool:
        raise NoArms("the model pool is empty")


def run_ucb_selection(config: RunConfig, dataset: Sequence[ImageRecord], pool: Sequence[PredictionSet], seed: int | None = None) -> RunResult:
    """One UCB pass over the training images, in split order, one arm per image."""
    _check_pool(pool)
    seed = config.seeds[0] if seed is None else seed
    split = split_dataset(dataset, config.split_ratio, seed)
    records = _records(dataset)
    state = BanditState.fresh(len(pool), config.C, config.mode)
    trace = []
    for step, iid in enumerate(split.train_ids, start=1):
        arm = select_arm(state)
        outcome = evaluate_image(pool[arm].detections(iid), records[iid].ground_truth, config.criteria)
        state = update_reward(state, arm, outcome)
        trace.append(TraceEntry(step, iid, arm, pool[arm].model_name, outcome.b, outcome.g, outcome.d, state.Q))
    if not len(trace) == state.t == len(split.train_ids):
        raise InvariantViolation("pull count does not match the training set size")
    winner = best_arm(state)
    return RunResult(
        "ucb", seed, pool[winner].model_name, winner, len(trace), len(trace),
        _test_metrics(dataset, pool[winner], split.test_ids, config),
        len(split.train_ids), len(split.test_ids), trace, state,
    )


def _outcome_grid(pool, ids, records, criteria, threads) -> list[list[MatchOutcome]]:
    """Outcomes indexed ``[image][arm]``."""
    def row(iid):
        gt = records[iid].ground_truth
        return [evaluate_image(p.detections(iid), gt, criteria) for p in pool]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(row, ids))
    return [row(i) for i in ids]


def run_brute_force_baseline(config: RunConfig, dataset: Sequence[ImageRecord], pool: Sequence[PredictionSet], seed: int | None = None) -> RunResult:
    """Every arm on every training image; the winner is the cumulative-reward argmax."""
    _check_pool(pool)
    seed = config.seeds[0] if seed is None else seed
    split = split_dataset(dataset, config.split_ratio, seed)
    ids = split.train_ids if config.bruteforce_scope == "train" else split.train_ids + split.test_ids
    records = _records(dataset)
    state = BanditState.fresh(len(pool), config.C, config.mode)
    trace = []
    for iid, outcomes in zip(ids, _outcome_grid(pool, ids, records, config.criteria, config.threads)):
        for arm, outcome in enumerate(outcomes):
            state = update_reward(state, arm, outcome)
            trace.append(TraceEntry(len(trace) + 1, iid, arm, pool[arm].model_name, outcome.b, outcome.g, outcome.d, state.Q))
    if len(trace) != len(pool) * len(ids):
        raise InvariantViolation("brute force skipped a model-image pair")
    winner = best_arm(state)
    return RunResult(
        "brute-force", seed, pool[winner].model_name, winner, len(trace), len(trace),
        _test_metrics(dataset, pool[winner], split.test_ids, config),
        len(split.train_ids), len(split.test_ids), trace, state,
    )


def run_consensus_baseline(config: RunConfig, dataset: Sequence[ImageRecord], pool: Sequence[PredictionSet], seed: int | None = None) -> RunResult:
    """Score the k-model consensus ensemble as a single pseudo-arm."""
    _check_pool(pool)
    k = config.consensus_k
    if len(pool) < k:
        raise InsufficientModels(f"consensus of {k} models needs a pool of at least {k}, got {len(pool)}")
    seed = config.seeds[0] if seed is None else seed
    split = split_dataset(dataset, config.split_ratio, seed)
    records = _records(dataset)
    rho = config.criteria.rho
    ensemble = consensus_predictions(pool, split.train_ids, k, rho)
    name = ensemble.model_name
    state = BanditState.fresh(1, config.C, config.mode)
    trace = []
    for iid in split.train_ids:
        outcome = evaluate_image(ensemble.detections(iid), records[iid].ground_truth, config.criteria)
        state = update_reward(state, 0, outcome)
        trace.append(TraceEntry(len(trace) + 1, iid, -1, name, outcome.b, outcome.g, outcome.d, state.Q))
    return RunResult(
        "consensus", seed, name, None, len(trace), len(pool) * len(split.train_ids),
        _test_metrics(dataset, consensus_predictions(pool, split.test_ids, k, rho), split.test_ids, config),
        len(split.train_ids), len(split.test_ids), trace, state,
    )


RUNNERS = {
    "ucb": run_ucb_selection,
    "brute-force": run_brute_force_baseline,
    "consensus": run_consensus_baseline,
}


@dataclass
class AveragedResult:
    strategy: str
    runs: list[RunResult]
    precision: float | None
    recall: float | None
    f1: float | None
    winner: str
    winner_frequency: int

    def to_dict(self) -> dict:
        def r3(v):
            return None if v is None else round(v, 3)

        return {
            "strategy": self.strategy,
            "mean": {"precision": r3(self.precision), "recall": r3(self.recall), "f1": r3(self.f1)},
            "winner": self.winner,
            "winner_frequency": self.winner_frequency,
            "runs": len(self.runs),
            "inference_count": [r.inference_count for r in self.runs],
            "per_seed": [r.summary() for r in self.runs],
        }


def repeat_and_average(config: RunConfig, dataset: Sequence[ImageRecord], pool: Sequence[PredictionSet]) -> AveragedResult:
    """Independent runs, one per seed, with arithmetic means of P/R/F1.

    The modal winner is reported with its count; ties go to the winner seen first.
    """
    runner = RUNNERS[config.strategy]
    runs = [runner(config, dataset, pool, seed) for seed in config.seeds]
    scored = [r.test_metrics for r in runs if r.test_metrics is not None]

    def mean(attr):
        return sum(getattr(m, attr) for m in scored) / len(scored) if scored else None

    counts = Counter(r.winner_model for r in runs)
    winner = max(counts, key=lambda w: (counts[w], -[r.winner_model for r in runs].index(w)))
    return AveragedResult(config.strategy, runs, mean("precision"), mean("recall"), mean("f1"), winner, counts[winner])


# Reports -----------------------------------------------------------------------------------

REPORT_COLUMNS = ["strategy", "precision", "recall", "f1", "winner", "winner_frequency", "runs", "inference_count", "train", "test"]


def build_report(results: Sequence[AveragedResult], config: RunConfig, dataset_size: int) -> dict:
    first = results[0].runs[0]
    return {
        "config": {k: v for k, v in config.to_dict().items() if k != "strategy"},
        "strategies": [r.strategy for r in results],
        "dataset": {"images": dataset_size, "train": first.train_size, "test": first.test_size},
        "protocol": {
            "selection_split": "train",
            "metrics_split": "test",
            "averaging": config.average,
            "test_rounding": "half-up",
            "scoring_mode": config.mode,
        },
        "rows": [r.to_dict() for r in results],
    }


def _fmt(v) -> str:
    return "" if v is None else f"{v:.3f}"


def report_rows(report: dict) -> list[dict]:
    rows = []
    for row in report["rows"]:
        first = row["per_seed"][0]
        rows.append({
            "strategy": row["strategy"],
            "precision": _fmt(row["mean"]["precision"]),
            "recall": _fmt(row["mean"]["recall"]),
            "f1": _fmt(row["mean"]["f1"]),
            "winner": row["winner"],
            "winner_frequency": f"{row['winner_frequency']}/{row['runs']}",
            "runs": row["runs"],
            "inference_count": row["inference_count"][0],
            "train": first["train"],
            "test": first["test"],
        })
    return rows


def report_to_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(report_rows(report))
    return buf.getvalue()


def trace_lines(results: Sequence[AveragedResult]) -> str:
    """JSON lines, one pull per line, tagged with strategy and seed."""
    out = []
    for res in results:
        for run in res.runs:
            for entry in run.trace:
                out.append(json.dumps({"strategy": res.strategy, "seed": run.seed, **entry.to_dict()}, sort_keys=True))
    return "\n".join(out) + ("\n" if out else "")
