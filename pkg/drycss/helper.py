"""Report formatting: CSV tables, grayscale heatmaps and plain-text summaries."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd

NODATA_RGB = (255, 0, 255)


def write_csv(df: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, encoding="utf-8", float_format="%.17g", lineterminator="\n")
    return path


def write_heatmap(values: np.ndarray, path: str | Path, vmin: float | None = None, vmax: float | None = None) -> Path:
    """Binary PPM, north up; dark is low, light is high, no-data is magenta."""
    values = np.asarray(values, dtype=np.float64)[::-1]
    finite = np.isfinite(values)
    if vmin is None:
        vmin = float(values[finite].min()) if finite.any() else 0.0
    if vmax is None:
        vmax = float(values[finite].max()) if finite.any() else 1.0
    lo, hi = vmin, vmax
    span = hi - lo if hi > lo else 1.0
    gray = np.zeros(values.shape, dtype=np.uint8)
    gray[finite] = np.rint(np.clip((values[finite] - lo) / span, 0.0, 1.0) * 255).astype(np.uint8)
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    rgb[~finite] = NODATA_RGB
    path = Path(path).with_suffix(".ppm")
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P6\n{values.shape[1]} {values.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + rgb.tobytes())
    return path


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.4f}"
    return str(value)


def format_table(df: pd.DataFrame, title: str = "") -> str:
    """Fixed-width text table in the style of the evaluation reports."""
    cells = [[str(c) for c in df.columns]] + [[_fmt(v) for v in row] for row in df.itertuples(index=False)]
    widths = [max(len(r[k]) for r in cells) for k in range(len(df.columns))]
    lines = []
    if title:
        lines += ["=" * 72, title, "=" * 72]
    header = "  ".join(c.rjust(w) for c, w in zip(cells[0], widths))
    lines += [header, "-" * len(header)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells[1:]]
    return "\n".join(lines)


def format_metrics_table(aggregate: pd.DataFrame) -> str:
    view = aggregate.copy()
    for metric in ("train_rmse", "val_rmse", "train_r", "val_r"):
        mean, std = f"{metric}_mean", f"{metric}_std"
        if mean in view:
            view[metric] = [f"{m:.3f} ± {s:.3f}" if not math.isnan(s) else f"{m:.3f}" for m, s in zip(view[mean], view[std])]
            view = view.drop(columns=[mean, std])
    return format_table(view, "TRAINING METRICS (mean ± std over repetitions)")


def format_stage_summary(stage: str, artifacts: dict[str, str], notes: list[str] | None = None) -> str:
    lines = [f"drycss {stage}: wrote {len(artifacts)} artifacts"]
    lines += [f"  {name}" for name in sorted(artifacts)]
    lines += [f"  * {note}" for note in notes or []]
    return "\n".join(lines)


def format_uplift_summary(summary: dict) -> str:
    excluded = summary.get("excluded_sites") or []
    lines = [
        f"NDVI uplift over {summary['sites']} sites",
        f"  ratio of mean NDVIs : {_fmt(summary['ratio_of_means'])}",
        f"  mean of site ratios : {_fmt(summary['mean_of_ratios'])}",
    ]
    if excluded:
        lines.append(f"  excluded (NDVI <= 0): {excluded}")
    return "\n".join(lines)
