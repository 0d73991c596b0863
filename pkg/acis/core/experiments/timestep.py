import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from acis.core.actor import Actor, infer_episode
from acis.core.assignment import max_matching, score_matrix
from acis.core.environment import Scene
from acis.core.experiments.base import Experiment, ExperimentResult
from acis.core.report import bar_chart_svg, write_csv, write_svg
from acis.core.scoring import dice

log = logging.getLogger("acis.core.experiments.timestep")

HEADER = ["model", "timestep", "mean_dice", "std_dice", "count"]


@dataclass
class TimestepStats:
    timestep: int
    mean: float
    std: float
    count: int


def timestep_statistics(
    predictions: Sequence[Sequence[np.ndarray]], ground_truths: Sequence[Sequence[np.ndarray]]
) -> List[TimestepStats]:
    """
    Dice of the t-th prediction of every scene against the ground truth it is max-matched to,
    averaged per timestep. Unmatched predictions score 0.
    """
    per_step: Dict[int, List[float]] = {}
    for preds, gts in zip(predictions, ground_truths):
        if not preds:
            continue
        scores = score_matrix(preds, gts, dice)
        assignment = max_matching(scores)
        for t, col in enumerate(assignment.mapping):
            per_step.setdefault(t, []).append(float(scores[t, col]) if col is not None else 0.0)

    return [
        TimestepStats(timestep=t, mean=float(np.mean(values)), std=float(np.std(values)), count=len(values))
        for t, values in sorted(per_step.items())
    ]


def per_timestep_dice(actor: Actor, scenes: Sequence[Scene]) -> List[TimestepStats]:
    """Per-timestep Dice with ground-truth stopping: one prediction per instance."""
    predictions = [infer_episode(actor, scene, scene.instance_count, ground_truth_stopping=True) for scene in scenes]
    return timestep_statistics(predictions, [list(scene.gt_masks) for scene in scenes])


def late_dice(stats: Sequence[TimestepStats]) -> float:
    """Mean Dice over the final third of the timesteps."""
    if not stats:
        return 0.0
    tail = stats[len(stats) - max(1, len(stats) // 3) :]
    return float(np.mean([s.mean for s in tail]))


class TimestepExperiment(Experiment):
    name = "timestep-report"

    def run(self) -> ExperimentResult:
        models = [
            self.model("AC-Dice", self.experiment.ac_checkpoint),
            self.model("BL-Trunc", self.experiment.baseline_checkpoint),
        ]

        rows = []
        stats = {}
        for trained in models:
            stats[trained.variant.name] = per_timestep_dice(trained.actor, self.splits.test)
            for s in stats[trained.variant.name]:
                rows.append([trained.variant.name, s.timestep + 1, s.mean, s.std, s.count])
            log.debug(f"{trained.variant.name}: late-timestep Dice {late_dice(stats[trained.variant.name]):.4f}")

        names = list(stats)
        steps = max(len(values) for values in stats.values())
        values, errors = [], []
        for t in range(steps):
            for name in names:
                entry = stats[name][t] if t < len(stats[name]) else None
                values.append(entry.mean if entry else 0.0)
                errors.append(entry.std if entry else 0.0)

        svg = bar_chart_svg(
            "Dice per timestep", [str(t + 1) for t in range(steps)], values, errors=errors, series=names
        )
        echo = self.config.echo()
        artifacts = [write_csv(self.artifact(".csv"), HEADER, rows, echo), write_svg(self.artifact(".svg"), svg)]
        return ExperimentResult(success=True, header=HEADER, rows=rows, artifacts=artifacts)
