"""Tables (CSV, Markdown) and line charts (SVG) from RunReports."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .metrics import RunReport, format_mean_std

MISSING = "-"


def _columns(reports: Sequence[RunReport]) -> list[str]:
    cols: dict[str, None] = {}
    for r in reports:
        cols.update(dict.fromkeys(r.metrics))
    return list(cols)


def summary_rows(reports: Sequence[RunReport]) -> tuple[list[str], list[list[str]]]:
    """Header and rows of ``mean ± std`` cells (percent); missing metrics are ``-``."""
    cols = _columns(reports)
    header = ["name", "mode", "shot", "seeds", *cols]
    rows = []
    for r in reports:
        agg = r.aggregate
        cells = [format_mean_std(agg[c]["mean"], agg[c]["std"]) if c in agg else MISSING for c in cols]
        rows.append([r.name, r.mode.value, r.shot or MISSING, str(len(r.seeds)), *cells])
    return header, rows


def write_csv_table(reports: Sequence[RunReport], path: str | Path) -> Path:
    header, rows = summary_rows(reports)
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return Path(path)


def markdown_table(reports: Sequence[RunReport]) -> str:
    header, rows = summary_rows(reports)
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def chart_series(reports: Sequence[RunReport], metric: str) -> dict[str, tuple[list[str], list[float], list[float]]]:
    """Per report name: shot labels, means and stds (percent) of ``metric``, in report order."""
    out: dict[str, tuple[list[str], list[float], list[float]]] = {}
    for r in reports:
        agg = r.aggregate.get(metric)
        if agg is None:
            continue
        shots, means, stds = out.setdefault(r.name, ([], [], []))
        shots.append(r.shot or MISSING)
        means.append(agg["mean"] * 100)
        stds.append(agg["std"] * 100)
    return out


def write_charts(reports: Sequence[RunReport], out_dir: str | Path) -> list[Path]:
    """One SVG per metric: shot level on x, mean on y, a ±std band, one line per report name."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    shots = list(dict.fromkeys(r.shot or MISSING for r in reports))
    paths = []
    for metric in _columns(reports):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, (labels, means, stds) in chart_series(reports, metric).items():
            xs = [shots.index(l) for l in labels]
            ax.plot(xs, means, marker="o", label=name)
            ax.fill_between(xs, [m - s for m, s in zip(means, stds)], [m + s for m, s in zip(means, stds)], alpha=0.2)
        ax.set_xticks(range(len(shots)))
        ax.set_xticklabels(shots)
        ax.set_xlabel("training data")
        ax.set_ylabel(metric)
        ax.grid(alpha=0.3)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = out_dir / f"{metric}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        paths.append(path)
    return paths


def emit_report(reports: Sequence[RunReport], out_dir: str | Path, formats: Sequence[str] = ("csv", "md", "svg")) -> list[Path]:
    reports = list(reports)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            written.append(write_csv_table(reports, out_dir / "summary.csv"))
        elif fmt == "md":
            path = out_dir / "summary.md"
            path.write_text(markdown_table(reports), encoding="utf-8")
            written.append(path)
        elif fmt == "svg":
            written.extend(write_charts(reports, out_dir))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    return written
