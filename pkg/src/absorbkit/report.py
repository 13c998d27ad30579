"""Render the per-contrast metric grid of a finished run."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DataError
from .evaluation import TABLE_COLUMNS

# display header per JSON field
HEADERS = {"Acc": "Acc", "CK": "CK", "AUC": "AUC", "Precision": "Precision",
           "Recall": "Recall/Sens.", "F1": "F1", "Specificity": "Specificity", "p-Value": "p-Value"}


def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise DataError(f"no summary in {run_dir}: {e}") from e


def _fmt(v) -> str:
    if v is None:
        return "NA"
    return f"{v:.4f}"


def metric_grid(summary: dict) -> list[list[str]]:
    """Header row plus one row per contrast and a final row of means."""
    rows = [["Contrast"] + [HEADERS[c] for c in TABLE_COLUMNS]]
    for name, block in summary["contrasts"].items():
        rows.append([name] + [_fmt(block["final"].get(c)) for c in TABLE_COLUMNS])
    overall = summary.get("overall", {})
    rows.append(["Overall mean"] + [_fmt(overall.get(c)) for c in TABLE_COLUMNS])
    return rows


def render_grid(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for j, r in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                               for i, (cell, w) in enumerate(zip(r, widths))))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_run(run_dir) -> str:
    return render_grid(metric_grid(load_summary(run_dir)))
