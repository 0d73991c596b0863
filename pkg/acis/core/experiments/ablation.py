"""
Five-way ablation: supervised baselines with full and truncated BPTT against actor-critic
training with and without the KL term and the State Pyramid. Every variant trains on the same
scene splits; the report gives the median over repeats.
"""
import logging
from typing import Dict, List

import click
import numpy as np

from acis.core.exceptions import TrainingAborted
from acis.core.experiments.base import VARIANTS, Experiment, ExperimentResult
from acis.core.report import bar_chart_svg, write_csv, write_svg
from acis.core.scoring import MetricReport
from acis.core.trainer import evaluate_actor

log = logging.getLogger("acis.core.experiments.ablation")

ABLATION_ORDER = ["BL", "BL-Trunc", "AC-Dice", "AC-Dice-NoKL", "AC-Dice-NoSP"]
HEADER = ["variant", "SBD", "DiC", "MWCov", "MUCov", "runs", "failed", "split_hash"]
RUN_HEADER = ["variant", "repeat", "seed", "SBD", "DiC", "MWCov", "MUCov", "status"]
FAILED = "FAILED"


class AblationExperiment(Experiment):
    name = "ablation"

    def run(self) -> ExperimentResult:
        split_hash = self.splits.hash
        reports: Dict[str, List[MetricReport]] = {name: [] for name in ABLATION_ORDER}
        failures: Dict[str, int] = {name: 0 for name in ABLATION_ORDER}
        run_rows = []

        for repeat in range(self.experiment.repeats):
            seed = self.config.seed + repeat
            for name in ABLATION_ORDER:
                try:
                    trained = self.train_variant(VARIANTS[name], seed)
                except TrainingAborted as e:
                    click.secho(f"{name} (seed {seed}) aborted: {e}", fg="red")
                    failures[name] += 1
                    run_rows.append([name, repeat, seed, FAILED, FAILED, FAILED, FAILED, FAILED])
                    continue

                report = evaluate_actor(
                    trained.actor,
                    self.splits.test,
                    self.max_steps,
                    run_id=name,
                    overlap_iou_threshold=self.experiment.coverage_threshold,
                )
                reports[name].append(report)
                run_rows.append([name, repeat, seed, report.sbd, report.dic, report.mwcov, report.mucov, "ok"])
                click.secho(f"{name} (seed {seed}): SBD {report.sbd:.4f}, |DiC| {report.dic:.4f}", fg="green")

        rows = []
        for name in ABLATION_ORDER:
            done = reports[name]
            if not done:
                rows.append([name, FAILED, FAILED, FAILED, FAILED, 0, failures[name], split_hash])
                continue
            medians = [
                float(np.median([getattr(report, metric) for report in done]))
                for metric in ("sbd", "dic", "mwcov", "mucov")
            ]
            rows.append([name, *medians, len(done), failures[name], split_hash])

        echo = self.config.echo()
        artifacts = [
            write_csv(self.artifact(".csv"), HEADER, rows, echo),
            write_csv(self.artifact("_runs.csv"), RUN_HEADER, run_rows, echo),
        ]
        finished = [row for row in rows if row[1] != FAILED]
        if finished:
            svg = bar_chart_svg("Median SBD per variant", [row[0] for row in finished], [row[1] for row in finished])
            artifacts.append(write_svg(self.artifact(".svg"), svg))

        return ExperimentResult(
            success=all(count == 0 for count in failures.values()), header=HEADER, rows=rows, artifacts=artifacts
        )
