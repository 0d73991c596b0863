import io
import logging
from typing import Optional

import click

from acis.core.config import RunConfig

log = logging.getLogger("acis.cli.config")


class ConfigCommand:
    def path(self) -> int:
        log.debug("path")
        click.echo(RunConfig.get_data_path())
        return 0

    def show(self, config: Optional[str] = None, set=None, json: bool = False) -> int:
        # alias for the view command
        log.debug(f"show (config={config}, set={set}, json={json})")
        return self.view(config=config, set=set, json=json)

    def view(self, config: Optional[str] = None, set=None, json: bool = False) -> int:
        log.debug(f"view (config={config}, set={set}, json={json})")
        run_config = RunConfig.from_cli(config, set)

        if json:
            click.echo(run_config.as_json(pretty=True))
            return 0

        buffer = io.StringIO()
        run_config.write(buffer)
        click.echo(buffer.getvalue())
        return 0
