"""Evaluation metrics. Degenerate inputs return NaN rather than a misleading number."""
from __future__ import annotations

from collections import Counter
from itertools import combinations

import numpy as np
import pandas as pd
from prefect.logging import get_logger
from scipy.stats import rankdata

from drycss.errors import DataError, DimensionMismatchError, GridMismatchError

logger = get_logger(__name__)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size:
        raise DimensionMismatchError(f"{pred.size} predictions for {truth.size} targets")
    if pred.size == 0:
        raise DataError("metrics need at least one value")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def pearson(pred, truth) -> float:
    """Pearson correlation; NaN when either side has zero variance."""
    pred, truth = _pair(pred, truth)
    dp = pred - pred.mean()
    dt = truth - truth.mean()
    ss = float(np.dot(dp, dp)) * float(np.dot(dt, dt))
    if ss == 0.0:
        logger.warning("pearson: zero variance input, returning NaN")
        return float("nan")
    return float(np.clip(np.dot(dp, dt) / np.sqrt(ss), -1.0, 1.0))


def roc_auc(scores, labels) -> float:
    """Probability a positive outscores a negative (ties count half)."""
    scores, labels = _pair(scores, labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def map_agreement_iou(map_a, map_b, threshold: float = 0.5, valid=None) -> float:
    """IoU of above-threshold pixels over pixels valid in both maps."""
    a = np.asarray(map_a, dtype=np.float64)
    b = np.asarray(map_b, dtype=np.float64)
    if a.shape != b.shape:
        raise GridMismatchError(f"maps are not aligned: {a.shape} vs {b.shape}")
    ok = np.isfinite(a) & np.isfinite(b)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    pa = (a > threshold) & ok
    pb = (b > threshold) & ok
    union = int((pa | pb).sum())
    if union == 0:
        logger.warning(f"IoU: no pixel above {threshold} in either map, returning NaN")
        return float("nan")
    return int((pa & pb).sum()) / union


# ---------------------------------------------------------------------------
# Ranking overlap
# ---------------------------------------------------------------------------

def _as_pairs(name: str, ranking) -> list[tuple]:
    if isinstance(ranking, pd.Series):
        pairs = list(zip(ranking.index, ranking.to_numpy(dtype=np.float64)))
    elif isinstance(ranking, dict):
        pairs = list(ranking.items())
    else:
        pairs = [(i, float(s)) for i, s in ranking]
    ids = [i for i, _ in pairs]
    if len(set(ids)) != len(ids):
        raise DataError(f"ranking {name!r} contains duplicate ids")
    return pairs


def ranking_ends(pairs: list[tuple], n: int) -> dict[str, list]:
    """Top-n by (−score, id) and bottom-n by (score, id)."""
    top = sorted(pairs, key=lambda p: (-p[1], p[0]))[:n]
    bottom = sorted(pairs, key=lambda p: (p[1], p[0]))[:n]
    return {"top": [i for i, _ in top], "bottom": [i for i, _ in bottom]}


def ranking_overlap(rankings: dict, n: int = 20, ends=("top", "bottom")) -> pd.DataFrame:
    """Exclusive intersection sizes of the top-/bottom-n sets of several rankings.

    Each id counts once, in the row of exactly the rankings whose end contains
    it; every non-empty combination of rankings gets a row, zeros included.
    """
    names = list(rankings)
    if not names:
        raise DataError("no rankings given")
    pairs = {name: _as_pairs(name, rankings[name]) for name in names}
    id_sets = {name: {i for i, _ in p} for name, p in pairs.items()}
    reference = id_sets[names[0]]
    for name in names[1:]:
        if id_sets[name] != reference:
            raise DataError(f"ranking {name!r} covers different ids than {names[0]!r}")
    if not 1 <= n <= len(reference):
        raise DataError(f"n={n} outside 1..{len(reference)}")

    selected = {name: ranking_ends(p, n) for name, p in pairs.items()}
    rows = []
    for end in ends:
        membership: dict[object, frozenset] = {}
        for name in names:
            for i in selected[name][end]:
                membership[i] = membership.get(i, frozenset()) | {name}
        signatures = Counter(membership.values())
        for size in range(len(names), 0, -1):
            for combo in combinations(names, size):
                rows.append(
                    {
                        "end": end,
                        "sets": " & ".join(combo),
                        "n_sets": size,
                        "count": signatures[frozenset(combo)],
                    }
                )
    return pd.DataFrame(rows, columns=["end", "sets", "n_sets", "count"])
