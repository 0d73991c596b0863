import logging
import os
import sys
from typing import Optional

import click
import fire
from fire.core import FireExit

from acis import __version__
from acis.cli.config import ConfigCommand
from acis.cli.experiments import ExperimentCommand
from acis.cli.scenes import ScenesCommand
from acis.cli.training import TrainingCommand
from acis.core.exceptions import ConfigException, TrainingAborted

# Init logging
logging.basicConfig(level=os.environ.get("LOGLEVEL", "INFO").upper())

log = logging.getLogger("acis.main")


class ACIS:
    def pretrain(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        return COMMANDS["training"].pretrain(config=config, set=set, out=out)

    def train(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        return COMMANDS["training"].train(config=config, set=set, out=out)

    def train_baseline(
        self, config: Optional[str] = None, set=None, out: Optional[str] = None, mode: Optional[str] = None
    ) -> int:
        return COMMANDS["training"].train_baseline(config=config, set=set, out=out, mode=mode)

    def eval(
        self, config: Optional[str] = None, set=None, out: Optional[str] = None, checkpoint: Optional[str] = None
    ) -> int:
        return COMMANDS["training"].eval(config=config, set=set, out=out, checkpoint=checkpoint)

    def ablation(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        return COMMANDS["experiments"].run("ablation", config=config, set=set, out=out)

    def timestep_report(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        return COMMANDS["experiments"].run("timestep-report", config=config, set=set, out=out)

    def state_blocking(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        return COMMANDS["experiments"].run("state-blocking", config=config, set=set, out=out)

    def lockin_demo(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        return COMMANDS["experiments"].run("lockin-demo", config=config, set=set, out=out)

    def oracle_ordering(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        return COMMANDS["experiments"].run("oracle-ordering", config=config, set=set, out=out)

    def coverage(self, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        return COMMANDS["experiments"].run("coverage", config=config, set=set, out=out)

    def export_scenes(
        self,
        config: Optional[str] = None,
        set=None,
        out: Optional[str] = None,
        split: str = "test",
        count: Optional[int] = None,
    ) -> int:
        return COMMANDS["scenes"].export(config=config, set=set, out=out, split=split, count=count)

    def version(self) -> int:
        click.echo(__version__)
        return 0

    def config(self):
        return COMMANDS.get("config")

    def experiment(self):
        return COMMANDS.get("experiments")


COMMANDS = {
    "config": ConfigCommand(),
    "experiments": ExperimentCommand(),
    "scenes": ScenesCommand(),
    "training": TrainingCommand(),
    "cli": ACIS(),
}


def main():
    try:
        # if the command returns an int, then we serialize it as none to prevent fire from printing it
        # (this does not change the actual return value, so it's still good to use as an exit code)
        # everything else is returned as is, so fire can print help messages
        ret = fire.Fire(COMMANDS["cli"], serialize=lambda r: None if isinstance(r, int) else r)

        if isinstance(ret, int):
            sys.exit(ret)

    except FireExit as e:
        # unknown subcommands and bad flags are configuration errors
        sys.exit(1 if e.code else 0)

    except ConfigException as e:
        click.secho(str(e), fg="red")
        sys.exit(1)

    except TrainingAborted as e:
        e.print_summary()
        sys.exit(2)

    except KeyboardInterrupt:
        click.secho("\n[Ctrl-C] Aborting.", fg="red")
        sys.exit(2)


if __name__ == "__main__":
    main()
