import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from acis.core.actor import BLOCK_MODES, Actor, infer_episode
from acis.core.assignment import max_matching, score_matrix
from acis.core.environment import Scene
from acis.core.experiments.base import Experiment, ExperimentResult
from acis.core.report import bar_chart_svg, write_csv, write_svg
from acis.core.scoring import dic, dice

log = logging.getLogger("acis.core.experiments.blocking")

HEADER = ["model", "block", "dice", "dic", "dice_drop", "dic_increase"]


@dataclass
class BlockingMetrics:
    block: str
    dice: float
    dic: float


def matched_dice(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    """Max-matched Dice summed over pairs, divided by the number of ground-truth instances."""
    if not preds:
        return 0.0
    return max_matching(score_matrix(preds, gts, dice)).total / len(gts)


def state_blocking_eval(actor: Actor, scenes: Sequence[Scene], block: str, max_steps: int) -> BlockingMetrics:
    """
    Dice with ground-truth stopping and |DiC| under the learned termination (capped at max_steps),
    with the selected recurrent state zeroed at every step.
    """
    dices, counts = [], []
    for scene in scenes:
        gts = list(scene.gt_masks)
        fixed = infer_episode(actor, scene, scene.instance_count, block=block, ground_truth_stopping=True)
        dices.append(matched_dice(fixed, gts))
        learned = infer_episode(actor, scene, max_steps, block=block)
        counts.append(dic(len(learned), len(gts)))

    return BlockingMetrics(block=block, dice=float(np.mean(dices)), dic=float(np.mean(counts)))


class BlockingExperiment(Experiment):
    name = "state-blocking"

    def run(self) -> ExperimentResult:
        models = [
            self.model("AC-Dice", self.experiment.ac_checkpoint),
            self.model("BL-Trunc", self.experiment.baseline_checkpoint),
        ]

        rows: List[list] = []
        for trained in models:
            results = [
                state_blocking_eval(trained.actor, self.splits.test, block, self.max_steps) for block in BLOCK_MODES
            ]
            reference = results[0]
            for metrics in results:
                rows.append(
                    [
                        trained.variant.name,
                        metrics.block,
                        metrics.dice,
                        metrics.dic,
                        reference.dice - metrics.dice,
                        metrics.dic - reference.dic,
                    ]
                )

        svg = bar_chart_svg(
            "Max-matched Dice under state blocking",
            [f"{row[0]}/{row[1]}" for row in rows],
            [row[2] for row in rows],
        )
        echo = self.config.echo()
        artifacts = [write_csv(self.artifact(".csv"), HEADER, rows, echo), write_svg(self.artifact(".svg"), svg)]
        return ExperimentResult(success=True, header=HEADER, rows=rows, artifacts=artifacts)
