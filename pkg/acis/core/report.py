"""
CSV and SVG artifacts.

Every CSV starts with one "# config: ..." comment line echoing the run configuration, then a header
row. SVG charts are self-contained documents drawn from rect, line and text primitives.
"""
import csv
import logging
from os import PathLike
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Union
from xml.sax.saxutils import escape

log = logging.getLogger("acis.core.report")

CHART_WIDTH = 640
CHART_HEIGHT = 360
MARGIN = 48
BAR_COLORS = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"]


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


class CsvWriter:
    def __init__(self, path: Union[str, PathLike], header: Sequence[str], config_echo: str = ""):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.header = list(header)
        with open(self.path, "w", newline="") as fp:
            fp.write(f"# config: {config_echo}\n")
            self._writer(fp).writerow(self.header)

    @staticmethod
    def _writer(fp: TextIO):
        return csv.writer(fp, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)

    def append(self, row: Sequence):
        if len(row) != len(self.header):
            raise ValueError(f"row has {len(row)} cells, header has {len(self.header)}")
        with open(self.path, "a", newline="") as fp:
            self._writer(fp).writerow([format_cell(cell) for cell in row])

    def extend(self, rows: Iterable[Sequence]):
        for row in rows:
            self.append(row)


def write_csv(
    path: Union[str, PathLike], header: Sequence[str], rows: Iterable[Sequence], config_echo: str = ""
) -> Path:
    writer = CsvWriter(path, header, config_echo)
    writer.extend(rows)
    log.debug(f"write_csv: {writer.path}")
    return writer.path


def read_csv(path: Union[str, PathLike]) -> List[List[str]]:
    """Rows after the config comment, header first."""
    with open(path, newline="") as fp:
        lines = [line for line in fp if not line.startswith("#")]
    return list(csv.reader(lines))


def bar_chart_svg(
    title: str,
    labels: Sequence[str],
    values: Sequence[float],
    errors: Optional[Sequence[float]] = None,
    series: Optional[Sequence[str]] = None,
    y_max: float = 1.0,
) -> str:
    """
    Vertical bar chart. With series given, values are grouped: labels[i] owns
    values[i * len(series) : (i + 1) * len(series)].
    """
    series = list(series) if series else [""]
    groups = len(labels)
    if len(values) != groups * len(series):
        raise ValueError(f"expected {groups * len(series)} values, got {len(values)}")
    if errors is not None and len(errors) != len(values):
        raise ValueError("errors must match values")

    plot_w = CHART_WIDTH - 2 * MARGIN
    plot_h = CHART_HEIGHT - 2 * MARGIN
    group_w = plot_w / max(groups, 1)
    bar_w = group_w * 0.8 / len(series)
    scale = plot_h / y_max if y_max > 0 else 0.0
    base_y = MARGIN + plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CHART_WIDTH}" height="{CHART_HEIGHT}" '
        f'viewBox="0 0 {CHART_WIDTH} {CHART_HEIGHT}">',
        f'<rect x="0" y="0" width="{CHART_WIDTH}" height="{CHART_HEIGHT}" fill="#ffffff"/>',
        f'<text x="{CHART_WIDTH / 2:.1f}" y="{MARGIN / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{base_y}" x2="{MARGIN + plot_w}" y2="{base_y}" stroke="#000000"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{base_y}" stroke="#000000"/>',
        f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{y_max:g}</text>',
        f'<text x="{MARGIN - 6}" y="{base_y + 4}" text-anchor="end" font-family="sans-serif" font-size="10">0</text>',
    ]

    for g, label in enumerate(labels):
        group_x = MARGIN + g * group_w + group_w * 0.1
        for s in range(len(series)):
            index = g * len(series) + s
            value = max(0.0, min(float(values[index]), y_max))
            height = value * scale
            x = group_x + s * bar_w
            parts.append(
                f'<rect x="{x:.1f}" y="{base_y - height:.1f}" width="{bar_w:.1f}" height="{height:.1f}" '
                f'fill="{BAR_COLORS[s % len(BAR_COLORS)]}"/>'
            )
            if errors is not None:
                center = x + bar_w / 2
                top = base_y - min(y_max, value + errors[index]) * scale
                bottom = base_y - max(0.0, value - errors[index]) * scale
                parts.append(
                    f'<line x1="{center:.1f}" y1="{top:.1f}" x2="{center:.1f}" y2="{bottom:.1f}" stroke="#000000"/>'
                )
        parts.append(
            f'<text x="{MARGIN + (g + 0.5) * group_w:.1f}" y="{base_y + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{escape(str(label))}</text>'
        )

    if len(series) > 1:
        for s, name in enumerate(series):
            y = MARGIN + 14 * s
            parts.append(
                f'<rect x="{CHART_WIDTH - MARGIN - 90}" y="{y}" width="10" height="10" '
                f'fill="{BAR_COLORS[s % len(BAR_COLORS)]}"/>'
            )
            parts.append(
                f'<text x="{CHART_WIDTH - MARGIN - 75}" y="{y + 9}" font-family="sans-serif" '
                f'font-size="10">{escape(name)}</text>'
            )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path: Union[str, PathLike], svg: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    log.debug(f"write_svg: {path}")
    return path
