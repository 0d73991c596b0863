import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Sequence, Union

import numpy as np

from acis.core.assignment import max_matching, score_matrix
from acis.core.exceptions import ContractViolation, ShapeMismatch

log = logging.getLogger("acis.core.scoring")

ScoreFunction = Callable[[np.ndarray, np.ndarray], float]

BINARIZE_THRESHOLD = 0.5

METRIC_FIELDS = ["run_id", "epoch", "SBD", "DiC", "MWCov", "MUCov", "AvgFP", "AvgFN"]


def binarize(mask, threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
    return np.asarray(mask) >= threshold


def _pair(s, t):
    s, t = np.asarray(s, dtype=bool), np.asarray(t, dtype=bool)
    if s.shape != t.shape:
        raise ShapeMismatch(f"masks have different shapes: {s.shape} vs {t.shape}")
    return s, t


def dice(s, t) -> float:
    s, t = _pair(s, t)
    size = int(s.sum()) + int(t.sum())
    if size == 0:
        return 1.0
    return 2.0 * int(np.logical_and(s, t).sum()) / size


def iou(s, t) -> float:
    s, t = _pair(s, t)
    union = int(np.logical_or(s, t).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(s, t).sum()) / union


def soft_dice(pred, target) -> float:
    """Dice on soft masks, used to assign un-binarized predictions."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"masks have different shapes: {pred.shape} vs {target.shape}")
    size = pred.sum() + target.sum()
    if size == 0:
        return 1.0
    return float(2.0 * (pred * target).sum() / size)


SCORE_FUNCTIONS: Dict[str, ScoreFunction] = {
    "dice": dice,
    "iou": iou,
}


def get_score_function(f: Union[str, ScoreFunction]) -> ScoreFunction:
    if callable(f):
        return f
    try:
        return SCORE_FUNCTIONS[f]
    except KeyError:
        raise ContractViolation(f"unknown score function '{f}', expected one of {sorted(SCORE_FUNCTIONS)}")


def potential(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], f: Union[str, ScoreFunction] = "dice") -> float:
    """Best summed score of the predictions under an injective assignment to the ground truths."""
    if len(gts) == 0:
        raise ContractViolation("potential needs at least one ground-truth mask")
    if len(preds) == 0:
        return 0.0
    return max_matching(score_matrix(preds, gts, get_score_function(f))).total


@dataclass
class RewardTrace:
    potentials: List[float]
    rewards: List[float]
    returns: List[float]
    gamma: float


def discounted_returns(rewards: Sequence[float], gamma: float) -> List[float]:
    returns = [0.0] * len(rewards)
    running = 0.0
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def reward_sequence(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    f: Union[str, ScoreFunction] = "dice",
    gamma: float = 0.9,
) -> RewardTrace:
    if not 0 < gamma <= 1:
        raise ContractViolation(f"gamma must lie in (0, 1], got {gamma}")

    f = get_score_function(f)
    potentials = [0.0]
    for k in range(1, len(preds) + 1):
        # the potential is monotone in the prefix; max() absorbs rounding between matchings
        potentials.append(max(potentials[-1], potential(preds[:k], gts, f)))

    rewards = [potentials[k + 1] - potentials[k] for k in range(len(preds))]
    return RewardTrace(
        potentials=potentials,
        rewards=rewards,
        returns=discounted_returns(rewards, gamma),
        gamma=gamma,
    )


def _best_dice(sources: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> float:
    return float(np.mean([max(dice(s, t) for t in targets) for s in sources]))


def sbd(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    """Symmetric best Dice."""
    if len(gts) == 0:
        raise ContractViolation("sbd needs at least one ground-truth mask")
    if len(preds) == 0:
        return 0.0
    return min(_best_dice(preds, gts), _best_dice(gts, preds))


def dic(pred_count: int, gt_count: int) -> int:
    if pred_count < 0 or gt_count < 0:
        raise ContractViolation(f"counts must be non-negative, got {pred_count} and {gt_count}")
    return abs(pred_count - gt_count)


class Coverage(NamedTuple):
    mwcov: float
    mucov: float
    avg_fp: float
    avg_fn: float


def coverage_metrics(
    preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], overlap_iou_threshold: float = 0.0
) -> Coverage:
    if len(gts) == 0:
        raise ContractViolation("coverage metrics need at least one ground-truth mask")
    if len(preds) == 0:
        return Coverage(mwcov=0.0, mucov=0.0, avg_fp=0.0, avg_fn=1.0)

    ious = score_matrix(gts, preds, iou)
    best_per_gt = ious.max(axis=1)
    best_per_pred = ious.max(axis=0)
    areas = np.array([np.asarray(gt, dtype=bool).sum() for gt in gts], dtype=np.float64)

    return Coverage(
        mwcov=float((areas * best_per_gt).sum() / areas.sum()),
        mucov=float(best_per_gt.mean()),
        avg_fp=float(np.mean(best_per_pred <= overlap_iou_threshold)),
        avg_fn=float(np.mean(best_per_gt <= overlap_iou_threshold)),
    )


@dataclass
class MetricReport:
    run_id: str
    epoch: int
    sbd: float
    dic: float
    mwcov: float
    mucov: float
    avg_fp: float
    avg_fn: float

    def as_row(self) -> List[str]:
        values = [self.sbd, self.dic, self.mwcov, self.mucov, self.avg_fp, self.avg_fn]
        return [self.run_id, str(self.epoch)] + [f"{value:.6f}" for value in values]


def evaluate_predictions(
    predictions: Sequence[Sequence[np.ndarray]],
    ground_truths: Sequence[Sequence[np.ndarray]],
    run_id: str = "",
    epoch: int = 0,
    overlap_iou_threshold: float = 0.0,
) -> MetricReport:
    """Average every metric over scenes; predictions[i] belongs to ground_truths[i]."""
    if len(predictions) != len(ground_truths):
        raise ContractViolation(
            f"got predictions for {len(predictions)} scenes but ground truth for {len(ground_truths)}"
        )
    if len(ground_truths) == 0:
        raise ContractViolation("evaluate_predictions needs at least one scene")

    rows = []
    for preds, gts in zip(predictions, ground_truths):
        coverage = coverage_metrics(preds, gts, overlap_iou_threshold)
        rows.append([sbd(preds, gts), dic(len(preds), len(gts)), *coverage])

    means = np.mean(np.array(rows, dtype=np.float64), axis=0)
    log.debug(f"evaluate_predictions: {len(rows)} scenes, SBD {means[0]:.4f}, |DiC| {means[1]:.4f}")
    return MetricReport(run_id, epoch, *[float(value) for value in means])
