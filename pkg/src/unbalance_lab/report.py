"""Human-readable reporting: SVG heatmaps, text summary, gap plot data.

Everything here is a pure function of the sweep's CSV outputs, so re-running
a report is byte-identical.  Heatmap color scale: metric 0 maps to dark,
1 to light (grayscale).
"""

from __future__ import annotations

import csv
from pathlib import Path

CELL_W = 72
CELL_H = 40
MARGIN_LEFT = 84
MARGIN_TOP = 56
LEGEND_H = 64


class ReportError(RuntimeError):
    pass


def read_matrix_csv(path) -> tuple[list[str], list[str], list[list[float]]]:
    """(row labels, column labels, values); drops a trailing row_avg_std."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    cols = header[1:]
    grey = cols and cols[-1] == "row_avg_std"
    if grey:
        cols = cols[:-1]
    labels, values = [], []
    for row in rows[1:]:
        labels.append(row[0])
        cells = row[1 : 1 + len(cols)]
        values.append([float(v) for v in cells])
    return labels, cols, values


def _shade(v: float) -> str:
    lum = int(round(255 * min(1.0, max(0.0, v))))
    return f"#{lum:02x}{lum:02x}{lum:02x}"


def heatmap_svg(title: str, row_labels: list[str], col_labels: list[str],
                values: list[list[float]]) -> str:
    n_rows, n_cols = len(row_labels), len(col_labels)
    width = MARGIN_LEFT + n_cols * CELL_W + 20
    height = MARGIN_TOP + n_rows * CELL_H + LEGEND_H
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<text x="{MARGIN_LEFT}" y="18" font-size="14">{title}</text>',
        f'<text x="4" y="{MARGIN_TOP - 10}">theta_y \\ unbalance</text>',
    ]
    for j, cl in enumerate(col_labels):
        x = MARGIN_LEFT + j * CELL_W + CELL_W // 2
        parts.append(f'<text x="{x}" y="{MARGIN_TOP - 10}" text-anchor="middle">{cl}</text>')
    for i, rl in enumerate(row_labels):
        y = MARGIN_TOP + i * CELL_H + CELL_H // 2 + 4
        parts.append(f'<text x="4" y="{y}">{rl}</text>')
        for j in range(n_cols):
            v = values[i][j]
            x = MARGIN_LEFT + j * CELL_W
            yy = MARGIN_TOP + i * CELL_H
            text_fill = "#000000" if v > 0.5 else "#ffffff"
            parts.append(
                f'<rect x="{x}" y="{yy}" width="{CELL_W}" height="{CELL_H}" '
                f'fill="{_shade(v)}" stroke="#808080"/>'
            )
            parts.append(
                f'<text x="{x + CELL_W // 2}" y="{yy + CELL_H // 2 + 4}" '
                f'text-anchor="middle" fill="{text_fill}">{v:.3f}</text>'
            )
    # legend: 0 -> dark, 1 -> light
    ly = MARGIN_TOP + n_rows * CELL_H + 18
    parts.append(f'<text x="{MARGIN_LEFT}" y="{ly}">legend: metric 0 = dark, 1 = light</text>')
    for s in range(11):
        v = s / 10.0
        parts.append(
            f'<rect x="{MARGIN_LEFT + s * 26}" y="{ly + 8}" width="26" height="14" '
            f'fill="{_shade(v)}" stroke="#808080"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT + s * 26 + 13}" y="{ly + 36}" '
            f'text-anchor="middle" font-size="9">{v:.1f}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(results_dir, out_dir) -> list[str]:
    """Emit heatmaps, summary.txt and (when present) gap plot data.

    Returns the list of files written, relative to out_dir."""
    results_dir = Path(results_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mean_files = sorted(results_dir.glob("matrix_*_mean.csv"))
    if not mean_files:
        raise ReportError(f"no matrix_*_mean.csv files found in {results_dir}")
    written = []
    summary_lines = []
    for mean_path in mean_files:
        stem = mean_path.name[len("matrix_") : -len("_mean.csv")]  # {method}_{group}
        method, group = stem.rsplit("_", 1)
        rows, cols, means = read_matrix_csv(mean_path)
        std_path = results_dir / f"matrix_{stem}_std.csv"
        stds = None
        if std_path.exists():
            _, _, stds = read_matrix_csv(std_path)
        svg_name = f"heatmap_{stem}.svg"
        (out_dir / svg_name).write_text(
            heatmap_svg(f"{method} / {group}", rows, cols, means)
        )
        written.append(svg_name)
        summary_lines.append(f"== {method} / {group} ==")
        summary_lines.append("theta_y\\unbalance | " + " | ".join(cols))
        for i, rl in enumerate(rows):
            cells = []
            for j in range(len(cols)):
                if stds is not None:
                    cells.append(f"{means[i][j]:.4f}±{stds[i][j]:.4f}")
                else:
                    cells.append(f"{means[i][j]:.4f}")
            summary_lines.append(f"{rl:>17} | " + " | ".join(cells))
        summary_lines.append("")
    trend_path = results_dir / "kxi_trend.csv"
    if trend_path.exists():
        summary_lines.append("== selected K^xi per cell ==")
        summary_lines.extend(trend_path.read_text().strip().splitlines())
        summary_lines.append("")
    gaps_path = results_dir / "fairness_gaps.csv"
    if gaps_path.exists():
        # plot data: one row per (theta, unbalance), one column pair per method
        with open(gaps_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        methods = sorted({r["method"] for r in rows})
        cells = sorted({(r["theta_y"], r["unbalance"]) for r in rows},
                       key=lambda c: (c[0], float(c[1])))
        by = {(r["method"], r["theta_y"], r["unbalance"]): r for r in rows}
        header = ["theta_y", "unbalance"]
        for m in methods:
            header += [f"{m}_fpr_gap", f"{m}_fnr_gap"]
        lines = [",".join(header)]
        for theta, unb in cells:
            row = [theta, unb]
            for m in methods:
                rec = by[(m, theta, unb)]
                row += [rec["fpr_gap_mean"], rec["fnr_gap_mean"]]
            lines.append(",".join(row))
        (out_dir / "fpr_fnr_gaps.csv").write_text("\n".join(lines) + "\n")
        written.append("fpr_fnr_gaps.csv")
    (out_dir / "summary.txt").write_text("\n".join(summary_lines) + "\n")
    written.append("summary.txt")
    return written
