"""File formats: PNG faces, 81-row landmark CSVs, and CSV manifests."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .datamodel import NUM_LANDMARKS, LandmarkSet


class SchemaError(ValueError):
    """A data file exists but does not follow its documented layout."""


def read_image(path) -> np.ndarray:
    """HxWx3 float64 array in [-1, 1]."""
    with Image.open(path) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float64)
    return a / 127.5 - 1.0


def quantize(pixels: np.ndarray) -> np.ndarray:
    return np.round((np.clip(pixels, -1, 1) + 1) * 127.5).astype(np.uint8)


def write_image(path, pixels: np.ndarray) -> None:
    Image.fromarray(quantize(np.asarray(pixels))).save(path)


def read_landmarks(path, group=None) -> LandmarkSet:
    try:
        pts = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if pts.shape != (NUM_LANDMARKS, 2):
        raise SchemaError(f"{path}: expected {NUM_LANDMARKS} rows of 'x,y', got shape {pts.shape}")
    return LandmarkSet(pts, group)


def write_landmarks(path, l: LandmarkSet) -> None:
    np.savetxt(path, l.points, delimiter=",", fmt="%.6f")


def read_csv(path, required: tuple[str, ...]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in required if c not in fields]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        return [{k: (v or "").strip() for k, v in row.items()} for row in reader]


def write_csv(path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def dataset_manifest(directory, required: tuple[str, ...]) -> list[dict[str, str]]:
    """Rows of ``DIR/manifest.csv`` with ``path`` resolved against DIR."""
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    rows = read_csv(manifest, ("path",) + required)
    for r in rows:
        r["path"] = str(directory / r["path"])
    return rows
