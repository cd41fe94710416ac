"""Model bundle envelope shared by BLUP and network models.

A bundle is ``<id>.json`` (header) next to ``<id>.f32`` (all arrays as
little-endian float32, concatenated in header order).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from drycss.errors import ArtifactMissingError, LineageError, MetadataError

BUNDLE_VERSION = 1
DTYPE = np.dtype("<f4")


def write_bundle(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> Path:
    stem = Path(path).with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    layout = []
    offset = 0
    for name, arr in arrays.items():
        layout.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        offset += int(np.size(arr))
    doc = {"format_version": BUNDLE_VERSION, **header, "arrays": layout}
    flat = [np.asarray(arr, dtype=DTYPE).ravel() for arr in arrays.values()]
    blob = np.concatenate(flat) if flat else np.zeros(0, dtype=DTYPE)
    blob.astype(DTYPE).tofile(stem.with_suffix(".f32"))
    stem.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return stem


def read_bundle(path: str | Path, stage: str = "train") -> tuple[dict, dict[str, np.ndarray]]:
    stem = Path(path).with_suffix("")
    header_path, blob_path = stem.with_suffix(".json"), stem.with_suffix(".f32")
    if not header_path.exists() or not blob_path.exists():
        raise ArtifactMissingError(header_path, stage)
    header = json.loads(header_path.read_text())
    if header.get("format_version") != BUNDLE_VERSION:
        raise MetadataError(f"bundle {header_path} has unsupported version {header.get('format_version')}")
    blob = np.fromfile(blob_path, dtype=DTYPE)
    arrays = {}
    for entry in header.pop("arrays"):
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > blob.size:
            raise MetadataError(f"bundle {blob_path} is truncated at array {entry['name']}")
        arrays[entry["name"]] = blob[start : start + size].reshape(entry["shape"])
    return header, arrays


def check_lineage(headers: list[dict], expected: str | None = None) -> str:
    """All bundles must come from one feature-table lineage; returns it."""
    lineages = {h.get("lineage") for h in headers}
    if expected is not None:
        lineages.add(expected)
    if len(lineages) != 1 or None in lineages:
        raise LineageError(f"model bundles come from different feature tables: {sorted(map(str, lineages))}")
    return lineages.pop()
