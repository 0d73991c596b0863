import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np

from acis.core.actor import Actor
from acis.core.compute import checkpoint
from acis.core.experiments import EXPERIMENTS, get_experiment, register_experiment
from acis.core.experiments.base import VARIANTS, Experiment, ExperimentResult, make_splits
from acis.core.experiments.timestep import TimestepExperiment
from tests.core.helpers import tiny_run_config


class EchoExperiment(Experiment):
    name = "Echo Test"

    def run(self) -> ExperimentResult:
        return ExperimentResult(success=True)


class TestRegistry(unittest.TestCase):
    def test_builtin_experiments(self):
        self.assertEqual(
            {"ablation", "timestep-report", "state-blocking", "lockin-demo", "oracle-ordering", "coverage"},
            set(EXPERIMENTS),
        )
        self.assertIs(TimestepExperiment, get_experiment("timestep-report"))
        with self.assertRaises(KeyError):
            get_experiment("nothing")

    def test_register(self):
        register_experiment("echo", EchoExperiment)
        try:
            self.assertIs(EchoExperiment, get_experiment("echo"))
        finally:
            EXPERIMENTS.pop("echo")

    def test_result_defaults(self):
        result = ExperimentResult(success=False)
        self.assertEqual(([], [], []), (result.header, result.rows, result.artifacts))


@mock.patch.dict(os.environ, {"ACIS_SEED": "", "ACIS_OUT": ""})
class TestExperiment(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.config = tiny_run_config()
        self.experiment = EchoExperiment(self.config, self.tmp.name)

    def test_splits(self):
        splits = make_splits(self.config)
        self.assertEqual((4, 2, 2), (len(splits.train), len(splits.val), len(splits.test)))
        seeds = [scene.seed for scene in splits.train + splits.val + splits.test]
        self.assertEqual(len(seeds), len(set(seeds)))
        self.assertEqual(splits.hash, make_splits(self.config).hash)
        self.assertIs(self.experiment.splits, self.experiment.splits)

    def test_defaults_from_config(self):
        self.assertEqual(2, self.experiment.n_max)
        self.assertEqual(3, self.experiment.max_steps)
        self.assertEqual(Path(self.tmp.name) / "echo-test.csv", self.experiment.artifact(".csv"))
        self.assertEqual(self.config.run_dir, EchoExperiment(self.config).out_dir)

    def test_variant_config(self):
        config = self.experiment.variant_config(VARIANTS["AC-Dice-NoKL"], 3)
        self.assertEqual("ac-dice-nokl-s3", config.run_id)
        self.assertEqual(3, config.seed)
        self.assertEqual(0.0, config.trainer_config().beta_act)
        self.assertEqual(1e-3, self.config.trainer_config().beta_act)

        config = self.experiment.variant_config(VARIANTS["AC-Dice-NoSP"], 0)
        self.assertFalse(config.arch_config().use_state_pyramid)
        self.assertEqual("truncated", self.experiment.variant_config(VARIANTS["BL-Trunc"], 0).baseline_config().mode)

        self.assertEqual("iou", self.experiment.variant_config(VARIANTS["AC-IoU"], 0).trainer_config().score)
        self.assertEqual("dice", self.config.trainer_config().score)

    def test_pretrained_state_is_trained_once(self):
        config = self.experiment.variant_config(VARIANTS["AC-Dice"], 0)
        state = self.experiment.pretrained_state(config)
        self.assertTrue((Path(self.tmp.name) / "pretrain-sp-s0.bin").is_file())
        self.assertIn("actor.decoder.out.weight", state)

        with mock.patch("acis.core.experiments.base.pretrain_actor") as mock_pretrain:
            self.assertIs(state, self.experiment.pretrained_state(config))
            fresh = EchoExperiment(self.config, self.tmp.name)
            reloaded = fresh.pretrained_state(config)
            mock_pretrain.assert_not_called()
        np.testing.assert_array_equal(state["actor.decoder.out.weight"], reloaded["actor.decoder.out.weight"])

    def test_model_from_checkpoint(self):
        source = Actor(self.config.arch_config(), seed=7)
        path = checkpoint.save(Path(self.tmp.name) / "given.bin", source.state_dict(prefix="actor."))

        trained = self.experiment.model("BL", str(path))
        self.assertEqual("BL", trained.variant.name)
        self.assertIsNone(trained.result)
        np.testing.assert_array_equal(source.lstm.weight.data, trained.actor.lstm.weight.data)

    def test_train_variant(self):
        trained = self.experiment.train_variant(VARIANTS["AC-Dice"], 0)
        self.assertEqual(0, trained.result.best_epoch)
        self.assertTrue((Path(self.tmp.name) / "ac-dice-s0.bin").is_file())
        self.assertTrue((Path(self.tmp.name) / "ac-dice-s0_log.csv").is_file())
