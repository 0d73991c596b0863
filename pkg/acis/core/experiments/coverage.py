"""
Coverage comparison: actor-critic training with an IoU reward against the truncated-BPTT baseline,
scored with the street-scene metrics (weighted and unweighted coverage, false positives and false
negatives per image) instead of SBD.
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

log = logging.getLogger("acis.core.experiments.coverage")

COVERAGE_ORDER = ["BL-Trunc", "AC-IoU"]
COVERAGE_METRICS = ("mwcov", "mucov", "avg_fp", "avg_fn")
HEADER = ["variant", "MWCov", "MUCov", "AvgFP", "AvgFN", "runs", "failed"]
FAILED = "FAILED"


def median_coverage(reports: List[MetricReport]) -> List[float]:
    return [float(np.median([getattr(report, metric) for report in reports])) for metric in COVERAGE_METRICS]


class CoverageExperiment(Experiment):
    name = "coverage"

    def run(self) -> ExperimentResult:
        reports: Dict[str, List[MetricReport]] = {name: [] for name in COVERAGE_ORDER}
        failures: Dict[str, int] = {name: 0 for name in COVERAGE_ORDER}

        for repeat in range(self.experiment.repeats):
            seed = self.config.seed + repeat
            for name in COVERAGE_ORDER:
                try:
                    trained = self.train_variant(VARIANTS[name], seed)
                except TrainingAborted as e:
                    click.secho(f"{name} (seed {seed}) aborted: {e}", fg="red")
                    failures[name] += 1
                    continue

                report = evaluate_actor(
                    trained.actor,
                    self.splits.test,
                    self.max_steps,
                    run_id=name,
                    overlap_iou_threshold=self.experiment.coverage_threshold,
                )
                reports[name].append(report)
                click.secho(
                    f"{name} (seed {seed}): MWCov {report.mwcov:.4f}, MUCov {report.mucov:.4f}, "
                    f"AvgFP {report.avg_fp:.4f}, AvgFN {report.avg_fn:.4f}",
                    fg="green",
                )

        rows = []
        for name in COVERAGE_ORDER:
            if reports[name]:
                rows.append([name, *median_coverage(reports[name]), len(reports[name]), failures[name]])
            else:
                rows.append([name, FAILED, FAILED, FAILED, FAILED, 0, failures[name]])

        artifacts = [write_csv(self.artifact(".csv"), HEADER, rows, self.config.echo())]
        finished = [row for row in rows if row[1] != FAILED]
        if finished:
            # the false positive / negative counts are unbounded, so only the coverages are drawn
            values = [row[column] for column in (1, 2) for row in finished]
            svg = bar_chart_svg("Median coverage", ["MWCov", "MUCov"], values, series=[row[0] for row in finished])
            artifacts.append(write_svg(self.artifact(".svg"), svg))

        return ExperimentResult(
            success=all(count == 0 for count in failures.values()), header=HEADER, rows=rows, artifacts=artifacts
        )
