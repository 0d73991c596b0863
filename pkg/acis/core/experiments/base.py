import logging
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import click
import numpy as np

from acis.core.actor import Actor, load_pretrained, pretrain_cvae, reconstruction_dice
from acis.core.baseline import train_baseline
from acis.core.compute import checkpoint
from acis.core.config import RunConfig
from acis.core.critic import Critic
from acis.core.environment import Scene, scene_split, split_hash
from acis.core.trainer import TrainingResult, train
from acis.utils.tools import run_slug

log = logging.getLogger("acis.core.experiments.base")

TRAIN_STREAM, VAL_STREAM, TEST_STREAM, ORACLE_STREAM = 0, 1, 2, 3


@dataclass(frozen=True)
class Variant:
    name: str
    kind: str
    overrides: Tuple[str, ...] = ()


VARIANTS: Dict[str, Variant] = {
    "BL": Variant("BL", "baseline", ("baseline.mode=full_bptt",)),
    "BL-Trunc": Variant("BL-Trunc", "baseline", ("baseline.mode=truncated",)),
    "AC-Dice": Variant("AC-Dice", "ac"),
    "AC-Dice-NoKL": Variant("AC-Dice-NoKL", "ac", ("trainer.beta_act=0",)),
    "AC-Dice-NoSP": Variant("AC-Dice-NoSP", "ac", ("arch.use_state_pyramid=false",)),
    "AC-IoU": Variant("AC-IoU", "ac", ("trainer.score=iou",)),
}


@dataclass
class Splits:
    train: List[Scene]
    val: List[Scene]
    test: List[Scene]

    @property
    def hash(self) -> str:
        return split_hash(self.train + self.val + self.test)


@dataclass
class TrainedModel:
    variant: Variant
    actor: Actor
    config: RunConfig
    result: Optional[TrainingResult] = None


class ExperimentResult:
    def __init__(
        self,
        success: bool,
        header: Optional[List[str]] = None,
        rows: Optional[List[list]] = None,
        artifacts: Optional[List[Path]] = None,
    ):
        self.success = success
        self.header = header or []
        self.rows = rows or []
        self.artifacts = artifacts or []


def make_splits(config: RunConfig) -> Splits:
    scene_config = config.scene_config()
    scene_config.validate()
    train_count, val_count, test_count = config.split_sizes()
    return Splits(
        train=scene_split(scene_config, train_count, config.seed, TRAIN_STREAM),
        val=scene_split(scene_config, val_count, config.seed, VAL_STREAM),
        test=scene_split(scene_config, test_count, config.seed, TEST_STREAM),
    )


def pretrain_actor(config: RunConfig, scenes: Sequence[Scene], val_scenes: Sequence[Scene] = ()) -> Actor:
    actor = Actor(config.arch_config(), seed=config.seed)
    pretrain_cvae(actor, scenes, config.pretrain_config())
    if val_scenes:
        log.debug(f"pretrain: held-out reconstruction Dice {reconstruction_dice(actor, val_scenes):.4f}")
    return actor


def load_actor(config: RunConfig, path: Union[str, PathLike]) -> Actor:
    actor = Actor(config.arch_config(), seed=config.seed)
    actor.load_state_dict(checkpoint.load(path), prefix="actor.")
    return actor


class Experiment:
    name = ""

    def __init__(self, config: RunConfig, out_dir: Optional[Union[str, PathLike]] = None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else config.run_dir
        self.experiment = config.experiment_config()
        self.n_max = config.get("scene", "n_max")
        self.max_steps = config.get("trainer", "max_steps") or self.n_max + 1
        self._pretrained: Dict[Tuple[bool, int], Dict[str, np.ndarray]] = {}
        self._splits: Optional[Splits] = None

    def run(self) -> ExperimentResult:
        raise NotImplementedError

    @property
    def splits(self) -> Splits:
        if self._splits is None:
            self._splits = make_splits(self.config)
        return self._splits

    def artifact(self, suffix: str) -> Path:
        return self.out_dir / f"{run_slug(self.name)}{suffix}"

    def variant_config(self, variant: Variant, seed: int) -> RunConfig:
        return self.config.derive([*variant.overrides, f"run.seed={seed}", f"run.run_id={variant.name}-s{seed}"])

    def pretrained_state(self, config: RunConfig) -> Dict[str, np.ndarray]:
        """Pre-trained cVAE weights for this architecture; read from disk when available, else trained once."""
        pyramid = config.get("arch", "use_state_pyramid")
        key = (pyramid, config.seed)
        if key in self._pretrained:
            return self._pretrained[key]

        configured = config.get("pretrain", "checkpoint")
        if pyramid and configured and Path(configured).is_file():
            state = checkpoint.load(configured)
        else:
            path = self.out_dir / f"pretrain-{'sp' if pyramid else 'nosp'}-s{config.seed}.bin"
            if path.is_file():
                state = checkpoint.load(path)
            else:
                click.secho(f"Pre-training the cVAE for {path.name}", fg="yellow")
                actor = pretrain_actor(config, self.splits.train, self.splits.val)
                state = actor.state_dict(prefix="actor.")
                checkpoint.save(path, state)

        self._pretrained[key] = state
        return state

    def train_variant(self, variant: Variant, seed: int) -> TrainedModel:
        config = self.variant_config(variant, seed)
        actor = Actor(config.arch_config(), seed=seed)
        load_pretrained(actor, self.pretrained_state(config), init_encoder=config.get("arch", "init_from_pretrain"))

        log.debug(f"train_variant: {variant.name} seed {seed}")
        if variant.kind == "ac":
            critic = Critic(config.critic_config(), seed=seed + 1)
            result = train(
                config.trainer_config(),
                actor,
                critic,
                self.splits.train,
                self.splits.val,
                self.n_max,
                out_dir=self.out_dir,
                run_id=config.run_id,
                config_echo=config.echo(),
            )
        else:
            result = train_baseline(
                config.trainer_config(),
                config.baseline_config(),
                actor,
                self.splits.train,
                self.splits.val,
                self.n_max,
                out_dir=self.out_dir,
                run_id=config.run_id,
                config_echo=config.echo(),
            )
        return TrainedModel(variant=variant, actor=actor, config=config, result=result)

    def model(self, name: str, checkpoint_path: str = "") -> TrainedModel:
        """A trained model of the named variant: loaded from checkpoint_path when given, else trained."""
        variant = VARIANTS[name]
        if checkpoint_path:
            config = self.variant_config(variant, self.config.seed)
            return TrainedModel(variant=variant, actor=load_actor(config, checkpoint_path), config=config)
        return self.train_variant(variant, self.config.seed)
