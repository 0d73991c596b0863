from typing import Dict, Type

from acis.core.experiments.ablation import AblationExperiment
from acis.core.experiments.base import Experiment
from acis.core.experiments.blocking import BlockingExperiment
from acis.core.experiments.coverage import CoverageExperiment
from acis.core.experiments.lockin import LockinExperiment
from acis.core.experiments.oracle import OracleOrderingExperiment
from acis.core.experiments.timestep import TimestepExperiment

EXPERIMENTS: Dict[str, Type[Experiment]] = {
    "ablation": AblationExperiment,
    "timestep-report": TimestepExperiment,
    "state-blocking": BlockingExperiment,
    "lockin-demo": LockinExperiment,
    "oracle-ordering": OracleOrderingExperiment,
    "coverage": CoverageExperiment,
}


def get_experiment(name: str) -> Type[Experiment]:
    return EXPERIMENTS[name]


def register_experiment(name: str, experiment: Type[Experiment]):
    EXPERIMENTS[name] = experiment
