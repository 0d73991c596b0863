import os
import tempfile
import unittest
from unittest import mock

from acis.core.exceptions import TrainingAborted
from acis.core.experiments.ablation import ABLATION_ORDER, FAILED, HEADER, RUN_HEADER, AblationExperiment
from acis.core.report import read_csv
from tests.core.helpers import tiny_run_config


@mock.patch.dict(os.environ, {"ACIS_SEED": "", "ACIS_OUT": ""})
class TestAblation(unittest.TestCase):
    def test_every_variant_runs_on_the_same_splits(self):
        with tempfile.TemporaryDirectory() as tmp:
            experiment = AblationExperiment(tiny_run_config(), tmp)
            result = experiment.run()

            self.assertTrue(result.success)
            self.assertEqual(ABLATION_ORDER, [row[0] for row in result.rows])
            for row in result.rows:
                self.assertTrue(0.0 <= row[1] <= 1.0)
                self.assertEqual((1, 0, experiment.splits.hash), tuple(row[5:]))

            self.assertEqual(
                ["ablation.csv", "ablation_runs.csv", "ablation.svg"], [path.name for path in result.artifacts]
            )
            self.assertEqual(HEADER, read_csv(result.artifacts[0])[0])
            runs = read_csv(result.artifacts[1])
            self.assertEqual(RUN_HEADER, runs[0])
            self.assertEqual(["ok"] * 5, [row[-1] for row in runs[1:]])
            self.assertTrue(result.artifacts[0].read_text().startswith("# config: run.seed=0;"))

    def test_aborted_runs_are_reported(self):
        with tempfile.TemporaryDirectory() as tmp:
            experiment = AblationExperiment(tiny_run_config("experiment.repeats=2"), tmp)
            with mock.patch.object(AblationExperiment, "train_variant", side_effect=TrainingAborted("loss became nan")):
                result = experiment.run()

            self.assertFalse(result.success)
            for row in result.rows:
                self.assertEqual([FAILED] * 4, row[1:5])
                self.assertEqual((0, 2), (row[5], row[6]))
            self.assertEqual(["ablation.csv", "ablation_runs.csv"], [path.name for path in result.artifacts])
            self.assertEqual(11, len(read_csv(result.artifacts[1])))
