import logging
from typing import Optional

import click

from acis.core.config import RunConfig
from acis.core.experiments import EXPERIMENTS, get_experiment

log = logging.getLogger("acis.cli.experiments")


class ExperimentCommand:
    def list(self) -> int:
        for name in EXPERIMENTS:
            click.echo(name)
        return 0

    def run(self, name: str, config: Optional[str] = None, set=None, out: Optional[str] = None) -> int:
        log.debug(f"run: (name={name}, config={config}, set={set}, out={out})")
        try:
            experiment_class = get_experiment(name)
        except KeyError:
            click.secho(f"Unknown experiment '{name}', expected one of {', '.join(EXPERIMENTS)}", fg="red")
            return 1

        run_config = RunConfig.from_cli(config, set, out)
        result = experiment_class(run_config).run()

        for artifact in result.artifacts:
            click.secho(f"Wrote {artifact}", fg="green")

        if not result.success:
            click.secho(f"{name}: some runs aborted, see the FAILED rows", fg="yellow")
            return 2

        return 0
