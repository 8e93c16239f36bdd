"""UCB-based selection of pre-trained object detectors from prediction files."""

from .bandit import BanditState, best_arm, select_arm, update_reward
from .dataset import (
    DatasetSplit,
    Detection,
    GroundTruthInstance,
    ImageRecord,
    PredictionSet,
    load_annotations,
    load_pool,
    load_predictions,
    split_dataset,
)
from .evaluation import (
    EvalCriteria,
    MatchOutcome,
    MetricsReport,
    aggregate_metrics,
    consensus_fuse,
    criteria_sweep,
    evaluate_image,
)
from .geometry import BoundingBox, MatchPair, area, iou, match_detections
from .harness import (
    RunConfig,
    RunResult,
    repeat_and_average,
    run_brute_force_baseline,
    run_consensus_baseline,
    run_ucb_selection,
)

__version__ = "0.1.0"
