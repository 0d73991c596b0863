import configparser
import json
import logging
import os
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import appdirs

from acis import __name__ as pkg_name
from acis.core.actor import ArchConfig, PretrainConfig
from acis.core.baseline import BaselineConfig
from acis.core.critic import CriticConfig
from acis.core.environment import SceneConfig
from acis.core.exceptions import InvalidConfigValue, MissingConfigFile, UnknownConfigKey
from acis.core.trainer import TrainerConfig
from acis.utils.tools import parse_overrides, run_slug

log = logging.getLogger("acis.core.config")

# every accepted section and key with its default; the default's type is the key's type
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "run": {
        "seed": 0,
        "out": "",
        "run_id": "run",
    },
    "scene": {
        "height": 32,
        "width": 32,
        "n_min": 2,
        "n_max": 6,
        "shape_kinds": ("ellipse", "rectangle", "triangle"),
        "overlap_prob": 0.5,
        "aux_noise": 0.0,
        "train_scenes": 64,
        "val_scenes": 16,
        "test_scenes": 32,
    },
    "arch": {
        "encoder_channels": (8, 16, 24, 32),
        "hidden_size": 64,
        "z_size": 64,
        "latent_dim": 8,
        "decoder_channels": (32, 24, 16, 8, 8),
        "use_state_pyramid": True,
        "init_from_pretrain": True,
    },
    "critic": {
        "channels": (8, 16, 24, 32),
        "fc_sizes": (64, 64, 32),
    },
    "pretrain": {
        "epochs": 30,
        "batch_size": 8,
        "lr": 1e-3,
        "kl_weight": 1e-3,
        "weight_decay": 1e-5,
        # empty means <out>/pretrain.bin
        "checkpoint": "",
    },
    "trainer": {
        "gamma": 0.9,
        "actor_lr": 1e-4,
        "critic_lr": 1e-3,
        "beta_act": 1e-3,
        "actor_weight_decay": 1e-5,
        "critic_weight_decay": 1e-4,
        "warmup_epochs": 3,
        "epochs": 30,
        "batch_size": 4,
        "curriculum_start": 1,
        "curriculum_step": 5,
        "plateau_patience": 5,
        "score": "dice",
        "term_weight": 1.0,
        "kl_ceiling": 0.0,
        "max_steps": 0,
    },
    "baseline": {
        "mode": "full_bptt",
        "lr": 1e-4,
        "weight_decay": 1e-5,
        "assignment_sigma": 0.0,
    },
    "experiment": {
        "repeats": 3,
        "coverage_threshold": 0.0,
        "lockin_seeds": 30,
        "lockin_sigmas": (0.0, 0.05, 0.1, 0.2),
        "lockin_steps": 50,
        "orderings": 20,
        "oracle_scenes": 20,
        "oracle_epochs": 10,
        "patch_channels": (8, 16),
        "ac_checkpoint": "",
        "baseline_checkpoint": "",
    },
}

_BOOLEANS = configparser.ConfigParser.BOOLEAN_STATES


@dataclass(frozen=True)
class ExperimentConfig:
    repeats: int = 3
    coverage_threshold: float = 0.0
    lockin_seeds: int = 30
    lockin_sigmas: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.2)
    lockin_steps: int = 50
    orderings: int = 20
    oracle_scenes: int = 20
    oracle_epochs: int = 10
    patch_channels: Tuple[int, ...] = (8, 16)
    ac_checkpoint: str = ""
    baseline_checkpoint: str = ""


def render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(render_value(item) for item in value)
    return str(value)


def coerce_value(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in _BOOLEANS:
                raise ValueError(raw)
            return _BOOLEANS[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [item.strip() for item in raw.split(",") if item.strip()]
            element = type(default[0]) if default else str
            return tuple(element(item) for item in items)
    except ValueError:
        raise InvalidConfigValue(f"Config key '{key}' expects {type(default).__name__}, got '{raw}'")
    return raw


class RunConfig:
    """
    The effective configuration of one run: DEFAULTS, then the config file, then the ACIS_SEED and
    ACIS_OUT environment variables, then --set overrides.
    """

    _env_vars = {
        "ACIS_SEED": ("run", "seed"),
        "ACIS_OUT": ("run", "out"),
    }

    def __init__(
        self,
        path: Optional[Union[str, PathLike]] = None,
        overrides: Union[str, Iterable[str], None] = None,
    ):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_dict(
            {section: {key: render_value(value) for key, value in keys.items()} for section, keys in DEFAULTS.items()}
        )
        self.config = parser
        self.path = Path(path) if path else None

        if self.path is not None:
            self._read_file(self.path)

        self._env_overrides()
        self._apply_overrides(overrides)

    @classmethod
    def from_cli(
        cls,
        config: Optional[Union[str, PathLike]] = None,
        overrides: Union[str, Iterable[str], None] = None,
        out: Optional[Union[str, PathLike]] = None,
    ) -> "RunConfig":
        run_config = cls(config, overrides)
        if out:
            run_config.set_out(out)
        log.debug(f"effective config: {run_config.echo()}")
        return run_config

    def _apply_overrides(self, overrides: Union[str, Iterable[str], None]):
        try:
            pairs = parse_overrides(overrides)
        except ValueError as e:
            raise InvalidConfigValue(str(e))
        for key, value in pairs:
            section, option = self.resolve_key(key)
            self.config[section][option] = value

        # coerce everything once so bad values fail before any work starts
        for section, keys in DEFAULTS.items():
            for option in keys:
                self.get(section, option)

    def derive(self, overrides: Union[str, Iterable[str], None]) -> "RunConfig":
        """A copy of this configuration with further overrides applied."""
        derived = RunConfig.__new__(RunConfig)
        derived.path = self.path
        derived.config = configparser.ConfigParser(interpolation=None)
        derived.config.optionxform = str
        derived.config.read_dict({section: dict(self.config[section]) for section in self.config.sections()})
        derived._apply_overrides(overrides)
        return derived

    def _read_file(self, path: Path):
        if not path.is_file():
            raise MissingConfigFile(path)

        loaded = configparser.ConfigParser(interpolation=None)
        loaded.optionxform = str
        try:
            loaded.read(path)
        except configparser.Error as e:
            raise InvalidConfigValue(f"Config file '{path}' could not be parsed: {e}")

        for section in loaded.sections():
            if section not in DEFAULTS:
                raise UnknownConfigKey(section)
            for option, value in loaded.items(section):
                if option not in DEFAULTS[section]:
                    raise UnknownConfigKey(f"{section}.{option}")
                self.config[section][option] = value

    def _env_overrides(self):
        for env_var, (section, option) in self._env_vars.items():
            env_value = os.getenv(env_var)
            if not env_value:
                continue
            self.config[section][option] = env_value

    @staticmethod
    def resolve_key(key: str) -> Tuple[str, str]:
        """Accept section.key, or a bare key when exactly one section declares it."""
        if "." in key:
            section, option = key.split(".", 1)
            if section not in DEFAULTS or option not in DEFAULTS[section]:
                raise UnknownConfigKey(key)
            return section, option

        owners = [section for section, keys in DEFAULTS.items() if key in keys]
        if len(owners) != 1:
            raise UnknownConfigKey(key)
        return owners[0], key

    def get(self, section: str, option: str) -> Any:
        if section not in DEFAULTS or option not in DEFAULTS[section]:
            raise UnknownConfigKey(f"{section}.{option}")
        return coerce_value(f"{section}.{option}", self.config[section][option], DEFAULTS[section][option])

    def section(self, section: str) -> Dict[str, Any]:
        return {option: self.get(section, option) for option in DEFAULTS[section]}

    def __getitem__(self, key):
        return self.config[key]

    def __contains__(self, key):
        return key in self.config

    def write(self, file_handle):
        return self.config.write(file_handle)

    def as_json(self, pretty=False) -> str:
        data = {}
        for section in self.config.sections():
            data[section] = {}
            for k, v in self.config.items(section):
                data[section][k] = v

        if pretty:
            return json.dumps(data, sort_keys=True, indent=4)

        return json.dumps(data)

    def echo(self) -> str:
        """One-line `section.key=value;...` rendering in declaration order."""
        return ";".join(
            f"{section}.{option}={self.config[section][option]}"
            for section, keys in DEFAULTS.items()
            for option in keys
        )

    @property
    def seed(self) -> int:
        return self.get("run", "seed")

    @property
    def run_id(self) -> str:
        return run_slug(self.get("run", "run_id"))

    @property
    def out_dir(self) -> Path:
        out = self.get("run", "out")
        if out:
            return Path(out)
        return self.get_data_path() / "runs"

    @property
    def run_dir(self) -> Path:
        return self.out_dir / self.run_id

    @property
    def checkpoint_path(self) -> Path:
        return self.run_dir / f"{self.run_id}.bin"

    def set_out(self, out: Union[str, PathLike]):
        self.config["run"]["out"] = str(out)

    @staticmethod
    def get_data_path() -> Path:
        return Path(appdirs.user_data_dir(appname=pkg_name))

    @property
    def pretrain_checkpoint(self) -> Path:
        checkpoint = self.get("pretrain", "checkpoint")
        return Path(checkpoint) if checkpoint else self.out_dir / "pretrain.bin"

    def split_sizes(self) -> Tuple[int, int, int]:
        scene = self.section("scene")
        return scene["train_scenes"], scene["val_scenes"], scene["test_scenes"]

    def scene_config(self) -> SceneConfig:
        scene = self.section("scene")
        return SceneConfig(
            height=scene["height"],
            width=scene["width"],
            n_min=scene["n_min"],
            n_max=scene["n_max"],
            shape_kinds=scene["shape_kinds"],
            overlap_prob=scene["overlap_prob"],
            aux_noise=scene["aux_noise"],
        )

    def arch_config(self) -> ArchConfig:
        scene = self.section("scene")
        return ArchConfig(height=scene["height"], width=scene["width"], **self.section("arch"))

    def critic_config(self) -> CriticConfig:
        return CriticConfig(**self.section("critic"))

    def pretrain_config(self) -> PretrainConfig:
        pretrain = self.section("pretrain")
        pretrain.pop("checkpoint")
        return PretrainConfig(aux_noise=self.get("scene", "aux_noise"), seed=self.seed, **pretrain)

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(aux_noise=self.get("scene", "aux_noise"), seed=self.seed, **self.section("trainer"))

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(term_weight=self.get("trainer", "term_weight"), **self.section("baseline"))

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(**self.section("experiment"))
