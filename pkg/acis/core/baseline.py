"""
Supervised baselines: BCE against max-matched ground truth.

The actor runs on its mean actions. Full BPTT keeps the accumulated mask and the recurrent state
differentiable across the unroll; the truncated variant detaches both between steps, so every
step only receives the gradient of its own loss.
"""
import logging
from dataclasses import dataclass
from os import PathLike
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from acis.core.actor import Actor, ActorOutput, freeze_decoder
from acis.core.assignment import Assignment, max_matching, perturbed_matching, score_matrix
from acis.core.compute import kernels, ops
from acis.core.compute.optim import Adam
from acis.core.compute.tensor import Tensor, no_grad
from acis.core.environment import EnvState, Scene, initial_state
from acis.core.exceptions import ContractViolation
from acis.core.scoring import soft_dice
from acis.core.trainer import EpochTrainer, TrainerConfig, TrainingResult

log = logging.getLogger("acis.core.baseline")

BaselineMode = Literal["full_bptt", "truncated"]
BASELINE_MODES = ("full_bptt", "truncated")


@dataclass(frozen=True)
class BaselineConfig:
    mode: str = "full_bptt"
    lr: float = 1e-4
    weight_decay: float = 1e-5
    # 0 keeps the exact max-matching assignment
    assignment_sigma: float = 0.0
    term_weight: float = 1.0

    def validate(self):
        if self.mode not in BASELINE_MODES:
            raise ContractViolation(f"baseline mode must be one of {BASELINE_MODES}, got '{self.mode}'")
        if self.lr <= 0 or self.assignment_sigma < 0:
            raise ContractViolation("baseline lr must be positive and assignment_sigma non-negative")


@dataclass
class Unroll:
    outputs: List[ActorOutput]
    # the output of the extra step after the last instance, trained to stop
    terminal: ActorOutput


@dataclass
class EpisodeLoss:
    loss: Tensor
    assignment: Assignment
    predictions: List[np.ndarray]


def unroll(actor: Actor, state: EnvState, steps: int, mode: str = "full_bptt") -> Unroll:
    """Run `steps` mean-action steps plus one terminal step from `state`, keeping the graph."""
    if mode not in BASELINE_MODES:
        raise ContractViolation(f"baseline mode must be one of {BASELINE_MODES}, got '{mode}'")
    if steps < 1:
        raise ContractViolation(f"an unroll needs at least one step, got {steps}")

    height, width = state.accumulated.shape
    context = Tensor(state.context()[None])
    accumulated = Tensor(state.accumulated.reshape(1, 1, height, width))
    hidden = actor.initial_hidden()

    outputs = []
    for _ in range(steps):
        output = actor.step(ops.concat([context, accumulated], axis=1), hidden, mode="mean")
        outputs.append(output)
        mask = output.decoded_mask.reshape(1, 1, height, width)
        if mode == "full_bptt":
            accumulated = ops.maximum(accumulated, mask)
            hidden = output.hidden
        else:
            accumulated = Tensor(np.maximum(accumulated.data, mask.data))
            hidden = output.detached_hidden()

    terminal = actor.step(ops.concat([context, accumulated], axis=1), hidden, mode="mean")
    return Unroll(outputs=outputs, terminal=terminal)


def assign(
    predictions: Sequence[np.ndarray],
    targets: Sequence[np.ndarray],
    sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Assignment:
    scores = score_matrix(predictions, targets, soft_dice)
    if sigma > 0:
        if rng is None:
            raise ContractViolation("perturbed assignment needs a random generator")
        return perturbed_matching(scores, sigma, rng)
    return max_matching(scores)


def episode_loss(
    actor: Actor,
    state: EnvState,
    targets: Sequence[np.ndarray],
    mode: str = "full_bptt",
    sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    term_weight: float = 1.0,
) -> EpisodeLoss:
    """
    Summed BCE of every prediction against its assigned target plus the termination BCE
    (continue on every step, stop on the terminal one).
    """
    if not targets:
        raise ContractViolation("episode_loss needs at least one target")

    rollout = unroll(actor, state, len(targets), mode)
    predictions = [output.decoded_mask.data[0] for output in rollout.outputs]
    assignment = assign(predictions, targets, sigma, rng)

    loss = None
    for row, col in assignment.pairs():
        bce = kernels.bce_loss(rollout.outputs[row].decoded_mask, np.asarray(targets[col], dtype=np.float64)[None])
        loss = bce if loss is None else loss + bce

    if term_weight:
        for output in rollout.outputs:
            loss = loss + kernels.bce_loss(ops.sigmoid(output.termination_logit), np.ones(1)) * term_weight
        loss = loss + kernels.bce_loss(ops.sigmoid(rollout.terminal.termination_logit), np.zeros(1)) * term_weight

    return EpisodeLoss(loss=loss, assignment=assignment, predictions=predictions)


def first_assignment(
    actor: Actor, state: EnvState, targets: Sequence[np.ndarray], sigma: float = 0.0, rng=None
) -> Optional[int]:
    """Index of the target matched to the first prediction, without touching any gradient."""
    with no_grad():
        rollout = unroll(actor, state, len(targets), "truncated")
    predictions = [output.decoded_mask.data[0] for output in rollout.outputs]
    return assign(predictions, targets, sigma, rng).mapping[0]


class BaselineTrainer(EpochTrainer):
    def __init__(
        self,
        config: TrainerConfig,
        baseline: BaselineConfig,
        actor: Actor,
        n_max: int,
        out_dir: Optional[Union[str, PathLike]] = None,
        run_id: str = "bl",
        config_echo: str = "",
    ):
        super(BaselineTrainer, self).__init__(config, actor, n_max, out_dir, run_id, config_echo)
        baseline.validate()
        self.baseline = baseline
        freeze_decoder(actor)
        self.optimizer = Adam(actor.trainable_parameters(), baseline.lr, baseline.weight_decay)

    def optimizers(self) -> List[Adam]:
        return [self.optimizer]

    def model_state(self) -> Dict[str, np.ndarray]:
        return self.actor.state_dict(prefix="actor.")

    def batch_loss(self, batch: Sequence[Scene]) -> Tuple[Tensor, float]:
        total, matched = None, []
        for scene in batch:
            state, targets = initial_state(scene, self.remaining_for(scene), self.rng, self.config.aux_noise)
            result = episode_loss(
                self.actor,
                state,
                targets,
                mode=self.baseline.mode,
                sigma=self.baseline.assignment_sigma,
                rng=self.rng,
                term_weight=self.baseline.term_weight,
            )
            matched.append(result.assignment.total / len(targets))
            total = result.loss if total is None else total + result.loss
        return total * (1.0 / len(batch)), float(np.mean(matched))

    def run_epoch(self, epoch: int, scenes: Sequence[Scene]) -> Tuple[str, float, float]:
        losses, matched = [], []
        for batch in self.minibatches(scenes):
            loss, soft_score = self.batch_loss(batch)
            self.actor.zero_grad()
            loss.backward()
            self.actor.decoder.zero_grad()
            self.optimizer.step()
            losses.append(loss.item())
            matched.append(soft_score)

        self.actor.zero_grad()
        return self.baseline.mode, float(np.mean(matched)), float(np.mean(losses))


def train_baseline(
    config: TrainerConfig,
    baseline: BaselineConfig,
    actor: Actor,
    train_scenes: Sequence[Scene],
    val_scenes: Sequence[Scene],
    n_max: int,
    out_dir: Optional[Union[str, PathLike]] = None,
    run_id: str = "bl",
    config_echo: str = "",
) -> TrainingResult:
    trainer = BaselineTrainer(config, baseline, actor, n_max, out_dir, run_id, config_echo)
    return trainer.train(train_scenes, val_scenes)
