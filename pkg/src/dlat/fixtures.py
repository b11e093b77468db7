"""Deterministic synthetic datasets for smoke runs and tests.

Faces are soft-edged ellipses with eyes, brows and a mouth placed from a
deformed landmark template; age groups change head proportions, skin tone and
add wrinkle bands. Nothing here resembles real data beyond its layout.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .datamodel import AgeGroup, LandmarkSet, RunConfig
from .io import write_csv, write_image, write_landmarks
from .template import unit_template

TOY_GROUPS = (AgeGroup.A, AgeGroup.E, AgeGroup.I)


def _age_factor(group: AgeGroup) -> float:
    """0 for infants rising to 1 for the oldest bins."""
    return min(1.0, group.lo / 60.0)


def toy_landmarks(rng: np.random.Generator, group: AgeGroup, size: int, subject_shape=None) -> np.ndarray:
    """Template deformed by age, subject identity, and a small similarity pose."""
    a = _age_factor(group)
    t = unit_template() - 0.5
    # children: shorter lower face, features lower on the head; elders: longer jaw
    t[:, 1] *= np.where(t[:, 1] > 0, 0.85 + 0.25 * a, 1.0)
    t[:, 1] += 0.04 * (1 - a)
    if subject_shape is None:
        subject_shape = rng.standard_normal(4)
    s1, s2, s3, s4 = subject_shape * 0.02
    t[:, 0] *= 1 + s1
    t[:, 1] *= 1 + s2
    eyes = slice(36, 48)
    t[eyes, 0] *= 1 + s3
    t[48:68, 0] *= 1 + s4
    t += rng.normal(0, 0.004, t.shape)
    ang = rng.normal(0, 0.03)
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    scale = 0.92 * (1 + rng.normal(0, 0.02))
    shift = rng.normal(0, 0.01, 2)
    pts = (t @ rot.T) * scale + 0.5 + shift
    return np.clip(pts * (size - 1), 0, size - 1)


def _blob(xx, yy, cx, cy, rx, ry, softness=1.0):
    d = np.sqrt(((xx - cx) / max(rx, 1e-3)) ** 2 + ((yy - cy) / max(ry, 1e-3)) ** 2)
    return np.clip((1 - d) * max(rx, ry) / softness + 0.5, 0, 1)


def render_face(points: np.ndarray, group: AgeGroup, skin: np.ndarray, size: int) -> np.ndarray:
    """Rasterize a face from its 81 landmarks; returns HxWx3 in [-1, 1]."""
    a = _age_factor(group)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = -np.ones((size, size, 3))
    jaw, fore = points[:17], points[68:]
    outline = np.vstack([jaw, fore])
    cx, cy = outline[:, 0].mean(), outline[:, 1].mean()
    rx = (outline[:, 0].max() - outline[:, 0].min()) / 2
    ry = (outline[:, 1].max() - outline[:, 1].min()) / 2
    face = _blob(xx, yy, cx, cy, rx, ry)
    tone = skin * (1 - 0.25 * a)
    img = img * (1 - face[..., None]) + tone * face[..., None]
    # hair band above the forehead, graying with age
    hair = _blob(xx, yy, cx, fore[:, 1].min() + 1, rx * 0.95, ry * 0.25) * face
    hair_col = np.array([-0.6, -0.7, -0.8]) * (1 - a) + np.array([0.6, 0.6, 0.6]) * a
    img = img * (1 - hair[..., None]) + hair_col * hair[..., None]
    for eye in (points[36:42], points[42:48]):
        ex, ey = eye.mean(axis=0)
        er = (eye[:, 0].max() - eye[:, 0].min()) / 2 * (1.2 - 0.3 * a)
        e = _blob(xx, yy, ex, ey, er, er * 0.6)
        img = img * (1 - e[..., None]) + np.array([-0.8, -0.8, -0.7]) * e[..., None]
    for brow in (points[17:22], points[22:27]):
        bx, by = brow.mean(axis=0)
        b = _blob(xx, yy, bx, by, (brow[:, 0].max() - brow[:, 0].min()) / 2, 0.8)
        img = img * (1 - 0.7 * b[..., None]) + hair_col * 0.7 * b[..., None]
    mouth = points[48:60]
    m = _blob(xx, yy, *mouth.mean(axis=0), (mouth[:, 0].max() - mouth[:, 0].min()) / 2, 1.2)
    img = img * (1 - m[..., None]) + np.array([0.5, -0.4, -0.4]) * m[..., None]
    if a > 0.5:
        bands = 0.5 + 0.5 * np.sin(yy * 1.3)
        forehead = np.clip((fore[:, 1].max() + 3 - yy) / 4, 0, 1) * face * (1 - hair)
        img -= 0.25 * a * (bands * forehead)[..., None]
    return np.clip(img, -1, 1)


def write_toy_images(directory, n_subjects: int = 8, groups: Sequence[AgeGroup] = TOY_GROUPS,
                     size: int = 64, gender: str = "m", seed: int = 0) -> Path:
    """``n_subjects * len(groups)`` faces plus landmark CSVs and a manifest
    (path, group, gender, subject, landmarks)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(n_subjects):
        skin = np.array([0.55, 0.25, 0.05]) + rng.uniform(-0.35, 0.25) + rng.normal(0, 0.05, 3)
        shape = rng.standard_normal(4)
        for g in groups:
            pts = toy_landmarks(rng, g, size, shape)
            name = f"s{s:02d}_{g.name}"
            write_image(d / f"{name}.png", render_face(pts, g, skin, size))
            write_landmarks(d / f"{name}.csv", LandmarkSet(pts, g))
            rows.append({"path": f"{name}.png", "group": g.bounds_str, "gender": gender,
                         "subject": f"s{s:02d}", "landmarks": f"{name}.csv"})
    write_csv(d / "manifest.csv", rows, ["path", "group", "gender", "subject", "landmarks"])
    return d


def write_toy_landmarks(directory, n: int = 100, groups: Sequence[AgeGroup] = TOY_GROUPS,
                        size: int = 64, gender: str = "m", seed: int = 1) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        g = groups[i % len(groups)]
        pts = toy_landmarks(rng, g, size)
        write_landmarks(d / f"l{i:03d}.csv", LandmarkSet(pts, g))
        rows.append({"path": f"l{i:03d}.csv", "group": g.bounds_str, "gender": gender})
    write_csv(d / "manifest.csv", rows, ["path", "group", "gender"])
    return d


def toy_config(kind: str, data: str = "", steps: int | None = None, **overrides) -> RunConfig:
    """Desk-scale smoke configuration: 64x64, K=3, batch 2."""
    base = dict(resolution=64, groups=tuple(g.bounds_str for g in TOY_GROUPS), seed=0, data=data,
                steps=steps if steps is not None else (200 if kind == "img" else 500))
    base.update(overrides)
    return RunConfig(**base)


def toy_dir() -> Path:
    """Bundled toy fixtures: ``faces/``, ``landmarks/``, ``img.toml``, ``lmk.toml``."""
    return Path(__file__).parent / "data" / "toy"


def rebuild_bundled(directory=None) -> Path:
    d = Path(directory) if directory else toy_dir()
    write_toy_images(d / "faces")
    write_toy_landmarks(d / "landmarks")
    toy_config("img", data="faces", checkpoint_every=100).save(d / "img.toml")
    toy_config("lmk", data="landmarks", checkpoint_every=250).save(d / "lmk.toml")
    return d
