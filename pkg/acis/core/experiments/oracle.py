"""
How much does the order of predictions matter when locations are known?

A small fully-convolutional network segments one instance from a square patch centred on it,
given the image, the mask of everything segmented so far and a centre marker. Each test scene is
segmented under many random instance orderings; the spread of the resulting Dice shows how much
an ordering can help or hurt, in particular when shapes occlude each other.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from acis.core.compute import kernels, ops
from acis.core.compute.module import Conv2d, Module
from acis.core.compute.optim import Adam
from acis.core.compute.tensor import Tensor, no_grad
from acis.core.environment import Scene, scene_split
from acis.core.exceptions import ContractViolation, NonFiniteValue, TrainingAborted
from acis.core.experiments.base import ORACLE_STREAM, Experiment, ExperimentResult
from acis.core.report import bar_chart_svg, write_csv, write_svg
from acis.core.scoring import binarize, dice

log = logging.getLogger("acis.core.experiments.oracle")

HEADER = ["scene", "occluded", "mean_dice", "std_dice", "best", "worst", "gap"]
SUMMARY_HEADER = ["group", "scenes", "mean_dice", "mean_std", "mean_gap"]
PATCH_INPUTS = 3
ORACLE_LR = 1e-3
ORACLE_BATCH = 8


class PatchSegmenter(Module):
    def __init__(self, channels: Sequence[int] = (8, 16), seed: int = 0):
        super(PatchSegmenter, self).__init__()
        rng = np.random.default_rng(seed)
        self.convs: List[Conv2d] = []
        in_channels = PATCH_INPUTS
        for k, out_channels in enumerate(channels):
            self.convs.append(self.add_module(f"conv{k}", Conv2d(in_channels, out_channels, 1, rng)))
            in_channels = out_channels
        self.out = self.add_module("out", Conv2d(in_channels, 1, 1, rng))

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = ops.relu(conv(x))
        logits = self.out(x)
        return ops.sigmoid(logits).reshape(x.shape[0], *x.shape[2:])


def patch_window(center: Tuple[int, int], size: int, shape: Tuple[int, int]) -> Tuple[slice, slice]:
    """A size x size window around center, shifted to lie inside the image."""
    height, width = shape
    if size > min(height, width):
        raise ContractViolation(f"patch of side {size} does not fit a {height}x{width} image")
    top = int(np.clip(center[0] - size // 2, 0, height - size))
    left = int(np.clip(center[1] - size // 2, 0, width - size))
    return slice(top, top + size), slice(left, left + size)


def instance_center(mask: np.ndarray) -> Tuple[int, int]:
    ys, xs = np.nonzero(mask)
    return int(ys.sum() // len(ys)), int(xs.sum() // len(xs))


def patch_size(scene: Scene) -> int:
    return min(scene.height, scene.width) // 2


def patch_input(scene: Scene, context: np.ndarray, instance: int) -> Tuple[np.ndarray, Tuple[slice, slice]]:
    """[3, P, P] stack of image, context mask and a 3x3 centre marker for one instance."""
    center = instance_center(scene.gt_masks[instance])
    window = patch_window(center, patch_size(scene), (scene.height, scene.width))
    marker = np.zeros((scene.height, scene.width))
    marker[max(center[0] - 1, 0) : center[0] + 2, max(center[1] - 1, 0) : center[1] + 2] = 1.0
    stack = np.stack([scene.image[window], context[window], marker[window]])
    return stack, window


def train_patch_segmenter(
    scenes: Sequence[Scene], channels: Sequence[int], epochs: int, seed: int = 0
) -> PatchSegmenter:
    """Train on every instance of every scene, with a random subset of the other instances as context."""
    if not scenes:
        raise ContractViolation("the patch segmenter needs training scenes")

    model = PatchSegmenter(channels, seed)
    optimizer = Adam(model.parameters(), lr=ORACLE_LR)
    rng = np.random.default_rng(seed)
    items = [(s, k) for s, scene in enumerate(scenes) for k in range(scene.instance_count)]

    for epoch in range(epochs):
        order = rng.permutation(len(items))
        losses = []
        for start in range(0, len(order), ORACLE_BATCH):
            inputs, targets = [], []
            for index in order[start : start + ORACLE_BATCH]:
                s, k = items[index]
                scene = scenes[s]
                context = np.zeros((scene.height, scene.width))
                for other, mask in enumerate(scene.gt_masks):
                    if other != k and rng.random() < 0.5:
                        context = np.maximum(context, mask)
                stack, window = patch_input(scene, context, k)
                inputs.append(stack)
                targets.append(scene.gt_masks[k][window].astype(np.float64))

            try:
                loss = kernels.bce_loss(model(Tensor(np.stack(inputs))), np.stack(targets))
                model.zero_grad()
                loss.backward()
            except NonFiniteValue as e:
                raise TrainingAborted(f"patch segmenter diverged in epoch {epoch}: {e}") from e
            optimizer.step()
            losses.append(loss.item())

        log.debug(f"patch segmenter epoch {epoch}: loss {np.mean(losses):.6f}")

    return model


def ordering_dice(model: PatchSegmenter, scene: Scene, ordering: Sequence[int]) -> float:
    """Segment the instances in the given order, accumulating predictions into the context mask."""
    context = np.zeros((scene.height, scene.width))
    scores = []
    with no_grad():
        for k in ordering:
            stack, window = patch_input(scene, context, k)
            patch = binarize(model(Tensor(stack[None])).data[0])
            prediction = np.zeros((scene.height, scene.width), dtype=bool)
            prediction[window] = patch
            scores.append(dice(prediction, scene.gt_masks[k]))
            context = np.maximum(context, prediction)
    return float(np.mean(scores))


@dataclass
class OrderingStats:
    scene: int
    occluded: bool
    mean: float
    std: float
    best: float
    worst: float

    @property
    def gap(self) -> float:
        return self.best - self.worst


def oracle_ordering(
    model: PatchSegmenter, scenes: Sequence[Scene], orderings: int = 20, seed: int = 0
) -> List[OrderingStats]:
    rng = np.random.default_rng(seed)
    stats = []
    for index, scene in enumerate(scenes):
        scores = [ordering_dice(model, scene, rng.permutation(scene.instance_count)) for _ in range(orderings)]
        stats.append(
            OrderingStats(
                scene=index,
                occluded=scene.occluded,
                mean=float(np.mean(scores)),
                std=float(np.std(scores)),
                best=float(np.max(scores)),
                worst=float(np.min(scores)),
            )
        )
    return stats


def summarize(stats: Sequence[OrderingStats]) -> List[list]:
    rows = []
    for group, members in (
        ("occluded", [s for s in stats if s.occluded]),
        ("non-overlapping", [s for s in stats if not s.occluded]),
    ):
        if not members:
            rows.append([group, 0, 0.0, 0.0, 0.0])
            continue
        rows.append(
            [
                group,
                len(members),
                float(np.mean([s.mean for s in members])),
                float(np.mean([s.std for s in members])),
                float(np.mean([s.gap for s in members])),
            ]
        )
    return rows


class OracleOrderingExperiment(Experiment):
    name = "oracle-ordering"

    def run(self) -> ExperimentResult:
        model = train_patch_segmenter(
            self.splits.train, self.experiment.patch_channels, self.experiment.oracle_epochs, self.config.seed
        )
        scenes = scene_split(self.config.scene_config(), self.experiment.oracle_scenes, self.config.seed, ORACLE_STREAM)
        stats = oracle_ordering(model, scenes, self.experiment.orderings, self.config.seed)

        rows = [[s.scene, s.occluded, s.mean, s.std, s.best, s.worst, s.gap] for s in stats]
        summary = summarize(stats)
        svg = bar_chart_svg(
            "Best minus worst ordering Dice",
            [row[0] for row in summary],
            [row[4] for row in summary],
            y_max=max(0.1, max(row[4] for row in summary)),
        )

        echo = self.config.echo()
        artifacts = [
            write_csv(self.artifact(".csv"), HEADER, rows, echo),
            write_csv(self.artifact("_summary.csv"), SUMMARY_HEADER, summary, echo),
            write_svg(self.artifact(".svg"), svg),
        ]
        return ExperimentResult(success=True, header=HEADER, rows=rows, artifacts=artifacts)
