import numpy as np
import polars as pl
from scipy.ndimage import label, maximum_filter
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import mean_squared_error, pairwise_distances

from pyrgate.data import LEVELS, SynthSample


def detect_peaks(heatmap: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """
    Peaks of a 2-d heatmap: positions strictly above `threshold` that equal
    the maximum of their 3x3 neighbourhood. A plateau of equal maxima counts
    once, at its first cell in row-major order.

    Returns
    -------
    Array of shape (n_peaks, 2) holding (row, col) cell coordinates.
    """
    local_max = maximum_filter(heatmap, size=3, mode="constant", cval=-np.inf)
    candidates = (heatmap > threshold) & (heatmap == local_max)
    plateaus, _ = label(candidates, structure=np.ones((3, 3)))
    cells = np.argwhere(candidates)
    _, first = np.unique(plateaus[candidates], return_index=True)
    return cells[np.sort(first)].astype(np.float64)


def blob_cells(sample: SynthSample, level: int) -> np.ndarray:
    """(row, col) cell coordinates of the centres of blobs assigned to `level`."""
    stride = 2 ** level
    cells = [(cy / stride - 0.5, cx / stride - 0.5) for cx, cy, _ in sample.blobs_at_level(level)]
    return np.array(cells, dtype=np.float64).reshape(-1, 2)


def match_count(peaks: np.ndarray, centres: np.ndarray, radius: float = 1.5) -> int:
    """
    Size of a maximum one-to-one matching of peaks to centres, allowing
    only pairs at most `radius` cells apart.
    """
    if len(peaks) == 0 or len(centres) == 0:
        return 0
    dist = pairwise_distances(peaks, centres)
    allowed = dist <= radius
    cost = np.where(allowed, 0.0, 1.0)
    rows, cols = linear_sum_assignment(cost)
    return int(allowed[rows, cols].sum())


def score_sample(predictions: list[np.ndarray], sample: SynthSample,
                 threshold: float = 0.5, radius: float = 1.5) -> list[dict]:
    """
    One row per level with the squared error and detection counts of a single
    sample's heatmap predictions.
    """
    rows = []
    for k, pred, target in zip(LEVELS, predictions, sample.targets):
        heat = pred.reshape(target.shape[2:])
        peaks = detect_peaks(heat, threshold)
        centres = blob_cells(sample, k)
        rows.append({
            "sample": sample.seed,
            "level": k,
            "mse": float(mean_squared_error(target.ravel(), pred.ravel())),
            "tp": match_count(peaks, centres, radius),
            "n_pred": len(peaks),
            "n_true": len(centres),
        })
    return rows


def _f1(tp: pl.Expr, n_pred: pl.Expr, n_true: pl.Expr) -> pl.Expr:
    # nothing to find and nothing claimed counts as a perfect score
    denom = n_pred + n_true
    return pl.when(denom == 0).then(1.0).otherwise(2 * tp / denom)


def level_summary(scores: pl.DataFrame) -> pl.DataFrame:
    """
    Aggregate per-sample rows from :func:`score_sample` into one row per
    level with columns level, mse and f1.
    """
    return (
        scores
        .group_by("level")
        .agg(pl.col("mse").mean(), pl.col("tp").sum(), pl.col("n_pred").sum(), pl.col("n_true").sum())
        .with_columns(f1=_f1(pl.col("tp"), pl.col("n_pred"), pl.col("n_true")))
        .sort("level")
        .select("level", "mse", "f1")
    )


def summarize(scores: pl.DataFrame) -> dict[str, float]:
    """
    Overall and per-level metrics: ``mse`` is averaged over levels, ``f1``
    pools detections over all levels.
    """
    if scores.is_empty():
        keys = ["mse", "f1"] + [f"{m}_level{k}" for k in LEVELS for m in ("mse", "f1")]
        return dict.fromkeys(keys, float("nan"))
    by_level = level_summary(scores)
    totals = scores.select(pl.col("tp").sum(), pl.col("n_pred").sum(), pl.col("n_true").sum())
    f1 = totals.select(_f1(pl.col("tp"), pl.col("n_pred"), pl.col("n_true"))).item()
    out = {"mse": float(by_level["mse"].mean()), "f1": float(f1)}
    for row in by_level.iter_rows(named=True):
        out[f"mse_level{row['level']}"] = float(row["mse"])
        out[f"f1_level{row['level']}"] = float(row["f1"])
    return out
