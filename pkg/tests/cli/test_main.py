import contextlib
import io
import unittest
from unittest import mock

import fire

from acis import __main__ as acis
from acis import __version__
from acis.core.exceptions import TrainingAborted


class TestCLIEntrypoint(unittest.TestCase):
    def test_loads_config_command(self):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            fire.Fire(acis.ACIS, ["config"])

        expected_commands = ["path", "show", "view"]

        stdout = stdout.getvalue()
        for command in expected_commands:
            self.assertIn(command, stdout)

    def test_loads_experiment_command(self):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            fire.Fire(acis.ACIS, ["experiment"])

        expected_commands = ["list", "run"]

        stdout = stdout.getvalue()
        for command in expected_commands:
            self.assertIn(command, stdout)

    def test_lists_top_level_commands(self):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            fire.Fire(acis.ACIS, [])

        expected_commands = ["ablation", "config", "eval", "experiment", "pretrain", "train", "version"]

        stdout = stdout.getvalue()
        for command in expected_commands:
            self.assertIn(command, stdout)

    def test_version(self):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            fire.Fire(acis.ACIS, ["version"])
        self.assertIn(__version__, stdout.getvalue())


class TestExitCodes(unittest.TestCase):
    def run_main(self, *argv: str) -> int:
        with mock.patch("sys.argv", ["acis", *argv]):
            with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
                with self.assertRaises(SystemExit) as e:
                    acis.main()
        return e.exception.code

    def test_success(self):
        self.assertEqual(0, self.run_main("experiment", "list"))

    def test_unknown_experiment(self):
        self.assertEqual(1, self.run_main("experiment", "run", "nothing"))

    def test_unknown_command(self):
        self.assertEqual(1, self.run_main("deploy"))

    @mock.patch.dict("os.environ", {"ACIS_SEED": "", "ACIS_OUT": ""})
    def test_config_errors(self):
        self.assertEqual(1, self.run_main("config", "view", "--set", "trainer.gama=0.5"))
        self.assertEqual(1, self.run_main("config", "view", "--config", "/nonexistent/acis.ini"))

    @mock.patch("acis.core.exceptions.click.secho")
    def test_aborted_training(self, *args, **kwargs):
        with mock.patch.object(acis.COMMANDS["training"], "train", side_effect=TrainingAborted("loss became nan")):
            self.assertEqual(2, self.run_main("train"))

    def test_interrupt(self):
        with mock.patch.object(acis.COMMANDS["training"], "pretrain", side_effect=KeyboardInterrupt):
            self.assertEqual(2, self.run_main("pretrain"))
