"""Ridge-regression BLUP on spectral features.

Effects solve (XᵀX + λI)β = Xᵀ(y − ȳ) with intercept ȳ. When there are more
features than samples the equivalent dual system (XXᵀ + λI)α = y − ȳ,
β = Xᵀα is solved instead, so the factorization is always min(n, p) wide.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from prefect.logging import get_logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from drycss.bundles import read_bundle, write_bundle
from drycss.errors import BlupSolverError, DataError, DimensionMismatchError

logger = get_logger(__name__)


@dataclass(frozen=True)
class BlupModel:
    effects: np.ndarray
    intercept: float
    lam: float
    k: int | None = None
    seed: int = 0
    variables: tuple[str, ...] = field(default_factory=tuple)
    lineage: str | None = None

    @property
    def p(self) -> int:
        return int(self.effects.shape[0])


def lambda_grid(p: int) -> list[float]:
    return [p / 100, p / 10, float(p), 10.0 * p, 100.0 * p]


def _check_training_data(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError(f"BLUP needs an n x p feature matrix with n >= 2, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise DimensionMismatchError(f"{y.shape[0] if y.ndim else 0} labels for {X.shape[0]} feature rows")
    if not np.isfinite(X).all():
        raise DataError("feature matrix contains non-finite values")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("BLUP labels must be 0 or 1")
    return X, y


def solve_effects(X: np.ndarray, r: np.ndarray, lam: float, form: str = "auto") -> np.ndarray:
    n, p = X.shape
    if form == "auto":
        form = "dual" if p > n else "primal"
    try:
        if form == "dual":
            system = X @ X.T
            system[np.diag_indices(n)] += lam
            alpha = cho_solve(cho_factor(system, lower=True), r)
            beta = X.T @ alpha
        elif form == "primal":
            system = X.T @ X
            system[np.diag_indices(p)] += lam
            beta = cho_solve(cho_factor(system, lower=True), X.T @ r)
        else:
            raise ValueError(f"unknown solver form {form!r}")
    except LinAlgError as e:
        raise BlupSolverError(f"ridge system with lambda={lam:g} could not be factorized: {e}") from e
    if not np.isfinite(beta).all():
        raise BlupSolverError(f"ridge solve with lambda={lam:g} produced non-finite effects")
    return beta


def fit_blup(
    X,
    y,
    lam: float | None = None,
    *,
    k: int | None = None,
    seed: int = 0,
    variables: tuple[str, ...] = (),
    lineage: str | None = None,
    form: str = "auto",
) -> BlupModel:
    X, y = _check_training_data(X, y)
    lam = float(X.shape[1]) if lam is None else float(lam)
    if not lam > 0:
        raise DataError(f"lambda must be positive, got {lam}")
    intercept = float(y.mean())
    effects = solve_effects(X, y - intercept, lam, form)
    return BlupModel(effects, intercept, lam, k=k, seed=seed, variables=tuple(variables), lineage=lineage)


def predict_blup(model: BlupModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.p:
        raise DimensionMismatchError(f"feature width {X.shape[-1]} does not match model width {model.p}")
    return model.intercept + X @ model.effects


def select_lambda(X, y, grid: list[float] | None = None) -> tuple[float, dict[float, float]]:
    """Exact leave-one-out refits over ``grid``; lowest LOO RMSE wins, ties to the smaller λ."""
    X, y = _check_training_data(X, y)
    grid = sorted(grid or lambda_grid(X.shape[1]))
    n = X.shape[0]
    scores = {}
    for lam in grid:
        errors = np.empty(n)
        for i in range(n):
            keep = np.arange(n) != i
            intercept = y[keep].mean()
            beta = solve_effects(X[keep], y[keep] - intercept, lam)
            errors[i] = intercept + X[i] @ beta - y[i]
        scores[lam] = float(np.sqrt(np.mean(errors**2)))
    best = min(grid, key=lambda lam: scores[lam])
    logger.info(f"Selected lambda {best:g} (LOO RMSE {scores[best]:.4f}) from {len(grid)} candidates")
    return best, scores


def save_blup(model: BlupModel, path: str | Path) -> Path:
    header = {
        "kind": "blup",
        "lambda": model.lam,
        "intercept": model.intercept,
        "k": model.k,
        "seed": model.seed,
        "variables": list(model.variables),
        "lineage": model.lineage,
    }
    return write_bundle(path, header, {"effects": model.effects})


def load_blup(path: str | Path) -> BlupModel:
    header, arrays = read_bundle(path)
    if header.get("kind") != "blup":
        raise DataError(f"bundle {path} holds a {header.get('kind')} model, not blup")
    return BlupModel(
        effects=arrays["effects"].astype(np.float64),
        intercept=float(header["intercept"]),
        lam=float(header["lambda"]),
        k=header.get("k"),
        seed=int(header.get("seed", 0)),
        variables=tuple(header.get("variables", ())),
        lineage=header.get("lineage"),
    )
