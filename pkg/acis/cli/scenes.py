import logging
from typing import Optional

import click

from acis.core.config import RunConfig
from acis.core.environment import export_scene, save_split, split_hash
from acis.core.experiments.base import make_splits

log = logging.getLogger("acis.cli.scenes")

SPLITS = ("train", "val", "test")


class ScenesCommand:
    def export(
        self,
        config: Optional[str] = None,
        set=None,
        out: Optional[str] = None,
        split: str = "test",
        count: Optional[int] = None,
    ) -> int:
        log.debug(f"export: (config={config}, set={set}, out={out}, split={split}, count={count})")
        if split not in SPLITS:
            click.secho(f"Unknown split '{split}', expected one of {', '.join(SPLITS)}", fg="red")
            return 1

        run_config = RunConfig.from_cli(config, set, out)
        scenes = getattr(make_splits(run_config), split)
        if count is not None:
            scenes = scenes[: int(count)]

        directory = run_config.run_dir / "scenes" / split
        written = []
        for index, scene in enumerate(scenes):
            written.extend(export_scene(directory, scene, index))

        record = save_split(directory / f"{split}.bin", scenes)
        click.secho(f"Exported {len(scenes)} scenes ({len(written)} files) to {directory}", fg="green")
        click.secho(f"Split record {record} (sha1 {split_hash(scenes)})", fg="green")
        return 0
