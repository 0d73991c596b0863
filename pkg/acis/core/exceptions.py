from os import PathLike
from typing import Optional, Union

import click


class ContractViolation(ValueError):
    pass


class ShapeMismatch(ContractViolation):
    pass


class NonFiniteValue(ContractViolation):
    pass


class MatchingTooLarge(ContractViolation):
    def __init__(self, size: int, limit: int):
        self.size = size
        self.limit = limit
        super(MatchingTooLarge, self).__init__(size, limit)

    def __str__(self):
        return f"Brute-force matching refused: {self.size} assignable rows exceed the limit of {self.limit}."


class ConfigException(Exception):
    pass


class MissingConfigFile(ConfigException):
    def __init__(self, path: Union[str, PathLike]):
        self.path = path
        super(MissingConfigFile, self).__init__(path)

    def __str__(self):
        return f"Config file '{self.path}' could not be found. Please pass an existing file with --config."


class UnknownConfigKey(ConfigException):
    def __init__(self, key: str):
        self.key = key
        super(UnknownConfigKey, self).__init__(key)

    def __str__(self):
        return f"Unknown config key '{self.key}'. Run 'acis config show' to list the accepted keys."


class InvalidConfigValue(ConfigException):
    pass


class SceneException(Exception):
    pass


class SceneGenerationError(SceneException):
    pass


class SceneFormatError(SceneException):
    pass


class CheckpointFormatError(Exception):
    pass


class TrainingAborted(Exception):
    def __init__(self, *args, checkpoint: Optional[Union[str, PathLike]] = None):
        self.checkpoint = checkpoint
        super(TrainingAborted, self).__init__(*args)

    def print_summary(self):
        click.secho(f"Training aborted: {self}", fg="red")
        if self.checkpoint:
            click.secho(f"Last good checkpoint: {self.checkpoint}", fg="yellow")
        else:
            click.secho("No checkpoint was written before the abort.", fg="yellow")
