"""Plot-ready summaries: smoothed training curves and a ranked comparison table."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .harness import SUMMARY_COLUMNS, _write_csv, moving_average, read_csv
from .trainer import METRIC_COLUMNS

CURVE_COLUMNS = (
    "global_step", "episode", "episodic_return", "episodic_return_ma", "td_loss", "td_loss_ma",
    "episodic_length", "episodic_length_ma", "mean_q_ma", "epsilon",
)
COMPARISON_COLUMNS = ("rank", "dataset", "model", "policy", "epsilon", "mean_lost", "std_lost",
                      "mean_lost_rentals", "mean_lost_returns", "mean_length", "days")


class ReportInputError(ValueError):
    pass


def _floats(rows, key):
    try:
        return np.array([float(r[key]) for r in rows])
    except (KeyError, ValueError) as e:
        raise ReportInputError(f"bad column {key!r}: {e}") from e


def downsample_indices(n: int, points: int) -> np.ndarray:
    """At most ``points`` evenly spaced indices, always keeping the first and last."""
    if points <= 0 or n <= points:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, points).round().astype(int))


def smooth_curves(metrics_path: str | Path, window: int = 100, points: int = 500) -> list[list]:
    rows = read_csv(metrics_path)
    if rows and set(METRIC_COLUMNS) - set(rows[0]):
        raise ReportInputError(f"{metrics_path}: missing columns {sorted(set(METRIC_COLUMNS) - set(rows[0]))}")
    ret, loss, length, q = (_floats(rows, k) for k in ("episodic_return", "td_loss", "episodic_length", "mean_q"))
    ret_ma, loss_ma, len_ma, q_ma = (moving_average(x, window) for x in (ret, loss, length, q))
    out = []
    for i in downsample_indices(len(rows), points):
        r = rows[i]
        out.append([int(r["global_step"]), int(r["episode"]), ret[i], ret_ma[i], loss[i], loss_ma[i],
                    length[i], len_ma[i], q_ma[i], float(r["epsilon"])])
    return out


def comparison_table(summary_paths: Sequence[str | Path]) -> list[list]:
    """Merge summary files and rank models by mean lost demand within each dataset and epsilon."""
    merged = []
    for p in summary_paths:
        rows = read_csv(p)
        if rows and set(SUMMARY_COLUMNS) - set(rows[0]):
            raise ReportInputError(f"{p}: missing columns {sorted(set(SUMMARY_COLUMNS) - set(rows[0]))}")
        merged.extend(rows)
    for r in merged:
        r["_mean"] = float(r["mean_lost"])
    merged.sort(key=lambda r: (r["dataset"], float(r["epsilon"]), r["_mean"], r["model"]))
    out = []
    rank = 0
    group = None
    for r in merged:
        key = (r["dataset"], float(r["epsilon"]))
        rank = rank + 1 if key == group else 1
        group = key
        out.append([rank, r["dataset"], r["model"], r["policy"], float(r["epsilon"]), r["_mean"],
                    float(r["std_lost"]), float(r["mean_lost_rentals"]), float(r["mean_lost_returns"]),
                    float(r["mean_length"]), int(r["days"])])
    return out


def cmd_report(
    metrics: Sequence[tuple[str, str | Path]],
    summaries: Sequence[str | Path],
    out_dir: str | Path,
    window: int = 100,
    points: int = 500,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for label, path in metrics:
        if not Path(path).exists():
            raise ReportInputError(f"{path} does not exist")
        _write_csv(out / f"curves_{label}.csv", CURVE_COLUMNS, smooth_curves(path, window, points))
    if summaries:
        for p in summaries:
            if not Path(p).exists():
                raise ReportInputError(f"{p} does not exist")
        _write_csv(out / "comparison.csv", COMPARISON_COLUMNS, comparison_table(summaries))
    return out
