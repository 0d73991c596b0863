import logging
from typing import Optional

import click

from acis.core.actor import Actor, load_pretrained, reconstruction_dice
from acis.core.baseline import BASELINE_MODES, train_baseline
from acis.core.compute.checkpoint import load as load_checkpoint
from acis.core.compute.checkpoint import save as save_checkpoint
from acis.core.config import RunConfig
from acis.core.critic import Critic
from acis.core.exceptions import CheckpointFormatError
from acis.core.experiments.base import load_actor, make_splits, pretrain_actor
from acis.core.report import write_csv
from acis.core.scoring import METRIC_FIELDS
from acis.core.trainer import TrainingResult, evaluate_actor, train

log = logging.getLogger("acis.cli.training")


class TrainingCommand:
    def pretrain(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        log.debug(f"pretrain: (config={config}, set={set}, out={out})")
        run_config = RunConfig.from_cli(config, set, out)
        splits = make_splits(run_config)

        actor = pretrain_actor(run_config, splits.train)
        score = reconstruction_dice(actor, splits.val)
        path = save_checkpoint(run_config.pretrain_checkpoint, actor.state_dict(prefix="actor."))
        click.secho(f"Pre-trained cVAE written to {path} (held-out reconstruction Dice {score:.4f})", fg="green")
        return 0

    def _pretrained_actor(self, run_config: RunConfig) -> Optional[Actor]:
        path = run_config.pretrain_checkpoint
        try:
            state = load_checkpoint(path)
        except CheckpointFormatError as e:
            click.secho(f"{e}. Run 'acis pretrain' first.", fg="red")
            return None

        actor = Actor(run_config.arch_config(), seed=run_config.seed)
        load_pretrained(actor, state, init_encoder=run_config.get("arch", "init_from_pretrain"))
        return actor

    @staticmethod
    def _report(name: str, result: TrainingResult):
        click.secho(f"{name}: best validation score {result.best_score:.4f} in epoch {result.best_epoch}", fg="green")
        if result.checkpoint:
            click.secho(f"Checkpoint: {result.checkpoint}", fg="green")
        if result.log_path:
            click.secho(f"Training log: {result.log_path}", fg="green")

    def train(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        log.debug(f"train: (config={config}, set={set}, out={out})")
        run_config = RunConfig.from_cli(config, set, out)
        actor = self._pretrained_actor(run_config)
        if actor is None:
            return 1

        splits = make_splits(run_config)
        result = train(
            run_config.trainer_config(),
            actor,
            Critic(run_config.critic_config(), seed=run_config.seed + 1),
            splits.train,
            splits.val,
            run_config.get("scene", "n_max"),
            out_dir=run_config.run_dir,
            run_id=run_config.run_id,
            config_echo=run_config.echo(),
        )
        self._report(run_config.run_id, result)
        return 0

    def train_baseline(
        self, config: Optional[str] = None, set=None, out: Optional[str] = None, mode: Optional[str] = None
    ) -> int:
        log.debug(f"train_baseline: (config={config}, set={set}, out={out}, mode={mode})")
        run_config = RunConfig.from_cli(config, set, out)
        if mode:
            if mode not in BASELINE_MODES:
                click.secho(f"Unknown baseline mode '{mode}', expected one of {', '.join(BASELINE_MODES)}", fg="red")
                return 1
            run_config = run_config.derive(f"baseline.mode={mode}")

        actor = self._pretrained_actor(run_config)
        if actor is None:
            return 1

        splits = make_splits(run_config)
        result = train_baseline(
            run_config.trainer_config(),
            run_config.baseline_config(),
            actor,
            splits.train,
            splits.val,
            run_config.get("scene", "n_max"),
            out_dir=run_config.run_dir,
            run_id=run_config.run_id,
            config_echo=run_config.echo(),
        )
        self._report(run_config.run_id, result)
        return 0

    def eval(
        self, config: Optional[str] = None, set=None, out: Optional[str] = None, checkpoint: Optional[str] = None
    ) -> int:
        log.debug(f"eval: (config={config}, set={set}, out={out}, checkpoint={checkpoint})")
        run_config = RunConfig.from_cli(config, set, out)
        path = checkpoint or run_config.get("experiment", "ac_checkpoint") or run_config.checkpoint_path

        try:
            actor = load_actor(run_config, path)
        except CheckpointFormatError as e:
            click.secho(str(e), fg="red")
            return 1

        n_max = run_config.get("scene", "n_max")
        report = evaluate_actor(
            actor,
            make_splits(run_config).test,
            run_config.get("trainer", "max_steps") or n_max + 1,
            run_id=run_config.run_id,
            overlap_iou_threshold=run_config.get("experiment", "coverage_threshold"),
        )
        csv_path = write_csv(run_config.run_dir / "eval.csv", METRIC_FIELDS, [report.as_row()], run_config.echo())
        click.secho(
            f"SBD {report.sbd:.4f}, |DiC| {report.dic:.4f}, MWCov {report.mwcov:.4f}, MUCov {report.mucov:.4f}",
            fg="green",
        )
        click.secho(f"Metrics written to {csv_path}", fg="green")
        return 0
