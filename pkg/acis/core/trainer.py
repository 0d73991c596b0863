"""
Actor-critic training.

Each minibatch runs one sampled episode per scene into a fresh replay buffer, fits the critic to the
discounted returns, then (after the warm-up epochs) re-runs the episodes from their stored initial
states with fresh actions and moves the actor up the critic's gradient. Validation after every
epoch drives a curriculum over the number of instances left to find and a learning-rate schedule.
"""
import logging
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from acis.core.actor import Actor, freeze_decoder, infer_episode
from acis.core.compute import checkpoint, kernels, ops
from acis.core.compute.optim import Adam
from acis.core.compute.tensor import Tensor, no_grad
from acis.core.critic import Critic, actor_gradient_via_critic, critic_input, critic_loss
from acis.core.environment import EnvState, Scene, initial_state, transition
from acis.core.exceptions import ContractViolation, NonFiniteValue, TrainingAborted
from acis.core.report import CsvWriter
from acis.core.scoring import MetricReport, RewardTrace, binarize, evaluate_predictions, reward_sequence

log = logging.getLogger("acis.core.trainer")

LOG_FIELDS = ["epoch", "phase", "mean_reward", "critic_loss", "val_sbd", "val_dic"]


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.9
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    beta_act: float = 1e-3
    actor_weight_decay: float = 1e-5
    critic_weight_decay: float = 1e-4
    warmup_epochs: int = 3
    epochs: int = 30
    batch_size: int = 4
    curriculum_start: int = 1
    curriculum_step: int = 5
    plateau_patience: int = 5
    score: str = "dice"
    term_weight: float = 1.0
    # 0 means 10 * latent_dim
    kl_ceiling: float = 0.0
    # 0 means n_max + 1
    max_steps: int = 0
    aux_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if not 0 < self.gamma < 1:
            raise ContractViolation(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("actor_lr", "critic_lr"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_epochs < 0:
            raise ContractViolation("batch_size must be positive and epoch counts non-negative")
        if self.score not in ("dice", "iou"):
            raise ContractViolation(f"score must be 'dice' or 'iou', got '{self.score}'")


@dataclass
class Curriculum:
    """Maximum number of instances left to find per episode: start, then +step on each plateau, capped."""

    start: int = 1
    step: int = 5
    cap: int = 7
    remaining: int = field(init=False)
    trace: List[int] = field(init=False)

    def __post_init__(self):
        self.remaining = min(self.start, self.cap)
        self.trace = [self.remaining]

    @classmethod
    def for_scenes(cls, n_max: int, start: int = 1, step: int = 5) -> "Curriculum":
        return cls(start=start, step=step, cap=n_max + 1)

    @property
    def at_cap(self) -> bool:
        return self.remaining >= self.cap

    def extend(self) -> bool:
        if self.at_cap:
            return False
        self.remaining = min(self.remaining + self.step, self.cap)
        self.trace.append(self.remaining)
        return True


class PlateauTracker:
    def __init__(self, patience: int = 5):
        self.patience = patience
        self.best = -np.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        """Record one validation value; True once `patience` epochs passed without improvement."""
        if value > self.best:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience

    def reset(self):
        self.stale = 0


class TrainingLog(CsvWriter):
    def __init__(self, path: Union[str, PathLike], config_echo: str = ""):
        super(TrainingLog, self).__init__(path, LOG_FIELDS, config_echo)

    def record(self, epoch: int, phase: str, mean_reward: float, loss: float, report: MetricReport):
        self.append([epoch, phase, mean_reward, loss, report.sbd, report.dic])


@dataclass
class StepRecord:
    state: EnvState
    action: np.ndarray
    mask: np.ndarray
    reward: float = 0.0
    target_return: float = 0.0


@dataclass
class Episode:
    scene: Scene
    initial: EnvState
    targets: List[np.ndarray]
    records: List[StepRecord]
    trace: RewardTrace

    @property
    def rewards(self) -> List[float]:
        return [record.reward for record in self.records]

    @property
    def returns(self) -> List[float]:
        return [record.target_return for record in self.records]


class ReplayBuffer:
    def __init__(self):
        self.episodes: List[Episode] = []

    def __len__(self):
        return len(self.episodes)

    def add(self, episode: Episode):
        self.episodes.append(episode)

    def clear(self):
        self.episodes = []

    def transitions(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(state stacks [B, 11, H, W], soft masks [B, H, W], returns [B]) over every stored step."""
        records = [record for episode in self.episodes for record in episode.records]
        if not records:
            raise ContractViolation("replay buffer holds no transitions")
        return (
            np.stack([record.state.stack() for record in records]),
            np.stack([record.mask for record in records]),
            np.array([record.target_return for record in records]),
        )


def run_episode(
    scene: Scene,
    actor: Actor,
    remaining: int,
    rng: np.random.Generator,
    score: str = "dice",
    gamma: float = 0.9,
    aux_noise: float = 0.0,
) -> Episode:
    state, targets = initial_state(scene, remaining, rng, aux_noise)
    start = state
    records = []
    with no_grad():
        hidden = actor.initial_hidden()
        for _ in range(remaining):
            noise = rng.standard_normal((1, actor.arch.latent_dim))
            output = actor.actor_step(state, hidden, mode="sample", noise=noise)
            mask = output.decoded_mask.data[0]
            records.append(StepRecord(state=state, action=output.action.data[0].copy(), mask=mask))
            state = transition(state, mask)
            hidden = output.hidden

    trace = reward_sequence([binarize(record.mask) for record in records], targets, score, gamma)
    for record, reward, target_return in zip(records, trace.rewards, trace.returns):
        record.reward = reward
        record.target_return = target_return

    return Episode(scene=scene, initial=start, targets=targets, records=records, trace=trace)


def update_critic(buffer: ReplayBuffer, critic: Critic, optimizer: Adam) -> float:
    """One Adam step on the mean squared error between Q and the stored returns."""
    states, masks, returns = buffer.transitions()
    critic.train()
    q = critic(critic_input(Tensor(states), Tensor(masks)))
    loss = critic_loss(q, returns)

    critic.zero_grad()
    loss.backward()
    optimizer.step()
    critic.zero_grad()
    return loss.item()


@dataclass
class ActorUpdate:
    objective: float
    mean_kl: float
    steps: int


def _kl_value(output) -> float:
    mu, log_var = output.mu.data, output.log_var.data
    return float(0.5 * np.sum(mu**2 + np.exp(log_var) - 1.0 - log_var) / mu.shape[0])


def update_actor(
    buffer: ReplayBuffer,
    actor: Actor,
    critic: Critic,
    optimizer: Adam,
    rng: np.random.Generator,
    beta_act: float = 1e-3,
    term_weight: float = 1.0,
) -> ActorUpdate:
    """
    Re-run every buffered episode from its initial state with fresh sampled actions, accumulate
    -Q + beta_act * KL + termination BCE (label 1) per step, plus one terminal step per episode
    trained towards label 0, then take one Adam step. Recurrent state is detached between steps.
    """
    if len(buffer) == 0:
        raise ContractViolation("update_actor needs a non-empty buffer")

    total_steps = sum(len(episode.records) + 1 for episode in buffer.episodes)
    scale = 1.0 / total_steps
    objective, kls = 0.0, []

    actor.zero_grad()
    for episode in buffer.episodes:
        state = episode.initial
        hidden = actor.initial_hidden()
        for _ in episode.records:
            noise = rng.standard_normal((1, actor.arch.latent_dim))
            output = actor.actor_step(state, hidden, mode="sample", noise=noise)
            keep_going = kernels.bce_loss(ops.sigmoid(output.termination_logit), np.ones(1)) * term_weight
            objective += actor_gradient_via_critic(
                critic, actor, Tensor(state.stack()[None]), output, beta_act, extra=keep_going, scale=scale
            )
            kls.append(_kl_value(output))
            state = transition(state, output.decoded_mask.data[0])
            hidden = output.detached_hidden()

        noise = rng.standard_normal((1, actor.arch.latent_dim))
        output = actor.actor_step(state, hidden, mode="sample", noise=noise)
        stop = kernels.bce_loss(ops.sigmoid(output.termination_logit), np.zeros(1)) * (term_weight * scale)
        stop.backward()
        objective += stop.item()

    critic.zero_grad()
    actor.decoder.zero_grad()
    optimizer.step()
    actor.zero_grad()
    return ActorUpdate(objective=objective, mean_kl=float(np.mean(kls)) if kls else 0.0, steps=total_steps)


def evaluate_actor(
    actor: Actor,
    scenes: Sequence[Scene],
    max_steps: int,
    run_id: str = "",
    epoch: int = 0,
    overlap_iou_threshold: float = 0.0,
) -> MetricReport:
    predictions = [infer_episode(actor, scene, max_steps) for scene in scenes]
    return evaluate_predictions(
        predictions,
        [list(scene.gt_masks) for scene in scenes],
        run_id=run_id,
        epoch=epoch,
        overlap_iou_threshold=overlap_iou_threshold,
    )


@dataclass
class TrainingResult:
    best_score: float
    best_epoch: int
    checkpoint: Optional[Path]
    log_path: Optional[Path]
    curriculum_trace: List[int]
    reports: List[MetricReport] = field(default_factory=list)


class EpochTrainer:
    """
    Shared epoch loop: train one epoch, validate, log, checkpoint on improvement, and on a
    validation plateau extend the curriculum or, once it is capped, divide the learning rates by 10.
    Subclasses implement run_epoch, optimizers and model_state.
    """

    phase_label = "train"

    def __init__(
        self,
        config: TrainerConfig,
        actor: Actor,
        n_max: int,
        out_dir: Optional[Union[str, PathLike]] = None,
        run_id: str = "run",
        config_echo: str = "",
    ):
        config.validate()
        self.config = config
        self.actor = actor
        self.n_max = n_max
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.run_id = run_id
        self.config_echo = config_echo
        self.rng = np.random.default_rng(config.seed)
        self.curriculum = Curriculum.for_scenes(n_max, start=config.curriculum_start, step=config.curriculum_step)
        self.plateau = PlateauTracker(config.plateau_patience)
        self.max_steps = config.max_steps or n_max + 1
        self.last_checkpoint: Optional[Path] = None
        self.best_state: Optional[Dict[str, np.ndarray]] = None

    def run_epoch(self, epoch: int, scenes: Sequence[Scene]) -> Tuple[str, float, float]:
        """Returns (phase, mean reward, loss)."""
        raise NotImplementedError

    def optimizers(self) -> List[Adam]:
        raise NotImplementedError

    def model_state(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def load_model_state(self, state: Dict[str, np.ndarray]):
        self.actor.load_state_dict(state, prefix="actor.")

    def plateau_enabled(self, epoch: int) -> bool:
        return True

    def monitored(self, report: MetricReport) -> float:
        return report.sbd if self.config.score == "dice" else report.mucov

    def minibatches(self, scenes: Sequence[Scene]) -> List[List[Scene]]:
        order = self.rng.permutation(len(scenes))
        size = self.config.batch_size
        return [[scenes[k] for k in order[start : start + size]] for start in range(0, len(order), size)]

    def remaining_for(self, scene: Scene) -> int:
        return min(self.curriculum.remaining, scene.instance_count)

    def _abort(self, message: str):
        raise TrainingAborted(message, checkpoint=self.last_checkpoint)

    def train(self, train_scenes: Sequence[Scene], val_scenes: Sequence[Scene], restore_best: bool = True):
        if not train_scenes or not val_scenes:
            raise ContractViolation("training needs non-empty train and validation splits")

        training_log = None
        if self.out_dir is not None:
            training_log = TrainingLog(self.out_dir / f"{self.run_id}_log.csv", self.config_echo)

        best_score, best_epoch = -np.inf, -1
        reports = []
        for epoch in range(self.config.epochs):
            try:
                phase, mean_reward, loss = self.run_epoch(epoch, train_scenes)
                if not np.isfinite(loss):
                    self._abort(f"{self.run_id}: loss became {loss} in epoch {epoch}")

                report = evaluate_actor(self.actor, val_scenes, self.max_steps, run_id=self.run_id, epoch=epoch)
            except NonFiniteValue as e:
                self._abort(f"{self.run_id}: {e} in epoch {epoch}")
            reports.append(report)
            if training_log is not None:
                training_log.record(epoch, phase, mean_reward, loss, report)
            log.debug(
                f"{self.run_id} epoch {epoch} ({phase}): reward {mean_reward:.4f}, loss {loss:.6f}, "
                f"val SBD {report.sbd:.4f}, val |DiC| {report.dic:.4f}, remaining {self.curriculum.remaining}"
            )

            score = self.monitored(report)
            if score > best_score:
                best_score, best_epoch = score, epoch
                self.best_state = self.model_state()
                if self.out_dir is not None:
                    self.last_checkpoint = checkpoint.save(self.out_dir / f"{self.run_id}.bin", self.best_state)
                    log.debug(f"{self.run_id}: checkpoint {self.last_checkpoint} (score {score:.4f})")

            if self.plateau_enabled(epoch) and self.plateau.update(score):
                self.on_plateau()

        if restore_best and self.best_state is not None:
            self.load_model_state(self.best_state)

        return TrainingResult(
            best_score=float(best_score),
            best_epoch=best_epoch,
            checkpoint=self.last_checkpoint,
            log_path=training_log.path if training_log is not None else None,
            curriculum_trace=list(self.curriculum.trace),
            reports=reports,
        )

    def on_plateau(self):
        if self.curriculum.extend():
            log.debug(f"{self.run_id}: curriculum extended to {self.curriculum.remaining} remaining instances")
        else:
            for optimizer in self.optimizers():
                optimizer.lr = optimizer.lr / 10.0
            log.debug(f"{self.run_id}: learning rates divided by 10")
        self.plateau.reset()


class ActorCriticTrainer(EpochTrainer):
    def __init__(
        self,
        config: TrainerConfig,
        actor: Actor,
        critic: Critic,
        n_max: int,
        out_dir: Optional[Union[str, PathLike]] = None,
        run_id: str = "ac",
        config_echo: str = "",
    ):
        super(ActorCriticTrainer, self).__init__(config, actor, n_max, out_dir, run_id, config_echo)
        self.critic = critic
        freeze_decoder(actor)
        self.actor_optimizer = Adam(actor.trainable_parameters(), config.actor_lr, config.actor_weight_decay)
        self.critic_optimizer = Adam(critic.trainable_parameters(), config.critic_lr, config.critic_weight_decay)
        self.kl_ceiling = config.kl_ceiling or 10.0 * actor.arch.latent_dim
        self.kl_breaches = 0
        self.buffer = ReplayBuffer()

    def optimizers(self) -> List[Adam]:
        return [self.actor_optimizer, self.critic_optimizer]

    def model_state(self) -> Dict[str, np.ndarray]:
        return {**self.actor.state_dict(prefix="actor."), **self.critic.state_dict(prefix="critic.")}

    def load_model_state(self, state: Dict[str, np.ndarray]):
        self.actor.load_state_dict(state, prefix="actor.")
        self.critic.load_state_dict(state, prefix="critic.")

    def plateau_enabled(self, epoch: int) -> bool:
        return epoch >= self.config.warmup_epochs

    def run_epoch(self, epoch: int, scenes: Sequence[Scene]) -> Tuple[str, float, float]:
        warmup = epoch < self.config.warmup_epochs
        rewards, losses = [], []
        for batch in self.minibatches(scenes):
            self.buffer.clear()
            for scene in batch:
                episode = run_episode(
                    scene,
                    self.actor,
                    self.remaining_for(scene),
                    self.rng,
                    score=self.config.score,
                    gamma=self.config.gamma,
                    aux_noise=self.config.aux_noise,
                )
                self.buffer.add(episode)
                rewards.extend(episode.rewards)

            losses.append(update_critic(self.buffer, self.critic, self.critic_optimizer))
            if warmup:
                continue

            update = update_actor(
                self.buffer,
                self.actor,
                self.critic,
                self.actor_optimizer,
                self.rng,
                beta_act=self.config.beta_act,
                term_weight=self.config.term_weight,
            )
            if not np.isfinite(update.objective):
                self._abort(f"{self.run_id}: actor objective became {update.objective} in epoch {epoch}")
            if self.config.beta_act > 0 and update.mean_kl > self.kl_ceiling:
                self.kl_breaches += 1
                log.warning(f"{self.run_id}: mean KL {update.mean_kl:.3f} above the ceiling {self.kl_ceiling:.3f}")

        self.buffer.clear()
        return ("warmup" if warmup else "train"), float(np.mean(rewards)), float(np.mean(losses))


def train(
    config: TrainerConfig,
    actor: Actor,
    critic: Critic,
    train_scenes: Sequence[Scene],
    val_scenes: Sequence[Scene],
    n_max: int,
    out_dir: Optional[Union[str, PathLike]] = None,
    run_id: str = "ac",
    config_echo: str = "",
) -> TrainingResult:
    trainer = ActorCriticTrainer(config, actor, critic, n_max, out_dir, run_id, config_echo)
    return trainer.train(train_scenes, val_scenes)
