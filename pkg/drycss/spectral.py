"""Fourier features of per-pixel climate series.

Series arrays put time on the last axis: ``(T,)`` for one series,
``(n_vars, T)`` for one pixel, ``(n, n_vars, T)`` for a sample set.
Feature vectors are ordered variable-major, then selected bin (in selection
order), then (real, imag).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from prefect.logging import get_logger

from drycss.errors import DataError, DimensionMismatchError, LineageError, SelectionError

logger = get_logger(__name__)

STD_FLOOR = 1e-12
TABLES_VERSION = 1
DISTANCE_CHANNELS = 32


def dft_coefficients(series) -> np.ndarray:
    """One-sided DFT scaled by 1/T, so bin 0 is the series mean."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise DataError(f"series needs at least 2 samples, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("series contains non-finite values")
    return np.fft.rfft(x, axis=-1) / x.shape[-1]


def _pair_weights(n_bins: int, n_steps: int) -> np.ndarray:
    weights = np.ones(n_bins)
    upper = n_bins - 1 if n_steps % 2 == 0 else n_bins
    weights[1:upper] = 2.0
    return weights


def amplitudes(coeffs: np.ndarray, n_steps: int) -> np.ndarray:
    """Modulus per bin; bins other than DC and Nyquist count their conjugate pair."""
    amp = np.abs(coeffs)
    return amp * _pair_weights(amp.shape[-1], n_steps)


def bin_energy(coeffs: np.ndarray, n_steps: int) -> np.ndarray:
    """Share of ``mean(x**2)`` carried by each bin; sums to it over all bins."""
    power = np.abs(coeffs) ** 2
    return power * _pair_weights(power.shape[-1], n_steps)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrequencySelection:
    variables: tuple[str, ...]
    bins: np.ndarray  # (n_vars, k), rank order per variable
    n_steps: int

    @property
    def k(self) -> int:
        return int(self.bins.shape[1])

    @property
    def n_features(self) -> int:
        return len(self.variables) * self.k * 2

    def truncate(self, k: int) -> "FrequencySelection":
        if not 1 <= k <= self.k:
            raise SelectionError(f"cannot truncate a {self.k}-bin selection to {k} bins")
        return FrequencySelection(self.variables, _readonly(self.bins[:, :k]), self.n_steps)


@dataclass(frozen=True)
class NormalizationTable:
    mean: np.ndarray  # (n_vars, k, 2): real, imag
    std: np.ndarray

    def truncate(self, k: int) -> "NormalizationTable":
        return NormalizationTable(_readonly(self.mean[:, :k]), _readonly(self.std[:, :k]))


@dataclass(frozen=True)
class SpectralTables:
    """A frequency selection with the normalization fit on the same samples."""

    selection: FrequencySelection
    norm: NormalizationTable

    def __post_init__(self):
        if self.norm.mean.shape != (*self.selection.bins.shape, 2):
            raise DimensionMismatchError(
                f"normalization table shape {self.norm.mean.shape} does not match "
                f"selection {self.selection.bins.shape}"
            )

    @property
    def k(self) -> int:
        return self.selection.k

    @property
    def n_features(self) -> int:
        return self.selection.n_features

    def truncate(self, k: int) -> "SpectralTables":
        return SpectralTables(self.selection.truncate(k), self.norm.truncate(k))

    def to_dict(self) -> dict:
        return {
            "format_version": TABLES_VERSION,
            "variables": list(self.selection.variables),
            "n_steps": self.selection.n_steps,
            "k": self.k,
            "bins": self.selection.bins.tolist(),
            "mean": self.norm.mean.tolist(),
            "std": self.norm.std.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpectralTables":
        if data.get("format_version") != TABLES_VERSION:
            raise LineageError(f"unsupported feature table version {data.get('format_version')}")
        selection = FrequencySelection(
            tuple(data["variables"]),
            _readonly(np.asarray(data["bins"], dtype=np.int64)),
            int(data["n_steps"]),
        )
        norm = NormalizationTable(
            _readonly(np.asarray(data["mean"], dtype=np.float64)),
            _readonly(np.asarray(data["std"], dtype=np.float64)),
        )
        return cls(selection, norm)

    @property
    def lineage(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class SpectralFeatureSet:
    tables: SpectralTables
    features: np.ndarray  # (n, n_features)


def _check_series(series: np.ndarray, variables: tuple[str, ...], n_steps: int) -> None:
    if series.ndim < 2 or series.shape[-2] != len(variables) or series.shape[-1] != n_steps:
        raise DimensionMismatchError(
            f"series shape {series.shape} does not match {len(variables)} variables x {n_steps} steps"
        )


def _as_samples(series) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] < 1:
        raise DimensionMismatchError(f"expected (samples, variables, steps) series, got shape {x.shape}")
    return x


def select_frequencies(series, k: int, variables: tuple[str, ...] | None = None) -> FrequencySelection:
    """Top-``k`` bins per variable by mean energy over the training samples.

    Energy is additive over bins, so the top ``k`` keep the most of the series
    energy any ``k`` bins can. Ties go to the lower bin index, so the ranking is
    a fixed order and every smaller selection is a prefix of a larger one.
    """
    x = _as_samples(series)
    n_steps = x.shape[-1]
    variables = tuple(variables) if variables is not None else tuple(f"v{i}" for i in range(x.shape[1]))
    _check_series(x, variables, n_steps)
    mean_energy = bin_energy(dft_coefficients(x), n_steps).mean(axis=0)
    n_bins = mean_energy.shape[-1]
    if not 1 <= k <= n_bins:
        raise SelectionError(f"k={k} outside 1..{n_bins} available bins")
    index = np.arange(n_bins)
    bins = np.stack([np.lexsort((index, -row))[:k] for row in mean_energy])
    return FrequencySelection(variables, _readonly(bins), n_steps)


def _selected_parts(x: np.ndarray, selection: FrequencySelection) -> np.ndarray:
    coeffs = dft_coefficients(x)
    rows = np.arange(len(selection.variables))[:, None]
    picked = coeffs[..., rows, selection.bins]
    return np.stack([picked.real, picked.imag], axis=-1)


def fit_normalization(series, selection: FrequencySelection) -> NormalizationTable:
    x = _as_samples(series)
    _check_series(x, selection.variables, selection.n_steps)
    parts = _selected_parts(x, selection)
    std = np.maximum(parts.std(axis=0), STD_FLOOR)
    return NormalizationTable(_readonly(parts.mean(axis=0)), _readonly(std))


def fit_tables(series, k: int, variables: tuple[str, ...] | None = None) -> SpectralTables:
    selection = select_frequencies(series, k, variables)
    return SpectralTables(selection, fit_normalization(series, selection))


def featurize(series, tables: SpectralTables) -> np.ndarray:
    """Standardized real and imaginary parts at the selected bins.

    ``(n_vars, T)`` gives one vector, ``(n, n_vars, T)`` gives an ``(n, p)`` matrix.
    """
    x = np.asarray(series, dtype=np.float64)
    _check_series(x, tables.selection.variables, tables.selection.n_steps)
    z = (_selected_parts(x, tables.selection) - tables.norm.mean) / tables.norm.std
    return z.reshape(*x.shape[:-2], tables.n_features)


def build_feature_set(series, k: int, variables: tuple[str, ...] | None = None) -> SpectralFeatureSet:
    tables = fit_tables(series, k, variables)
    return SpectralFeatureSet(tables, featurize(_as_samples(series), tables))


# ---------------------------------------------------------------------------
# Climate distance
# ---------------------------------------------------------------------------

def lowest_selection(variables: tuple[str, ...], n_steps: int, channels: int = DISTANCE_CHANNELS) -> FrequencySelection:
    n_bins = n_steps // 2 + 1
    if not 1 <= channels <= n_bins:
        raise SelectionError(f"{channels} channels outside 1..{n_bins} available bins")
    bins = np.tile(np.arange(channels), (len(variables), 1))
    return FrequencySelection(tuple(variables), _readonly(bins), n_steps)


def distance_tables(
    series, variables: tuple[str, ...], channels: int = DISTANCE_CHANNELS, mode: str = "lowest"
) -> SpectralTables:
    """Channels for climate distance: the lowest-frequency bins or the energy-ranked ones."""
    x = _as_samples(series)
    if mode == "lowest":
        selection = lowest_selection(tuple(variables), x.shape[-1], channels)
    elif mode == "ranked":
        selection = select_frequencies(x, channels, variables)
    else:
        raise SelectionError(f"unknown channel mode {mode!r} (expected 'lowest' or 'ranked')")
    return SpectralTables(selection, fit_normalization(x, selection))


def truncated_coefficients(series, tables: SpectralTables, normalized: bool = False) -> np.ndarray:
    """Distance vector of one pixel (or a stack): raw or standardized coefficient parts."""
    if normalized:
        return featurize(series, tables)
    x = np.asarray(series, dtype=np.float64)
    _check_series(x, tables.selection.variables, tables.selection.n_steps)
    return _selected_parts(x, tables.selection).reshape(*x.shape[:-2], tables.n_features)


def climate_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"climate vectors differ in shape: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_tables(tables: dict[str, SpectralTables], path: str | Path) -> None:
    """Write named tables to one JSON document; floats keep their repr."""
    doc = {name: t.to_dict() for name, t in tables.items()}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_tables(path: str | Path) -> dict[str, SpectralTables]:
    doc = json.loads(Path(path).read_text())
    return {name: SpectralTables.from_dict(entry) for name, entry in doc.items()}
