"""Landmark-driven warping that fuses the landmark network into image syntheses.

Coordinates are (x, y) = (column, row) in pixels with pixel centres on integers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RBFInterpolator

from .datamodel import AgeGroup, LandmarkSet
from .imgnet import generate_image
from .lmknet import generate_landmarks
from .mapper import map_noise

COND_TOL = 1e-10


def _points(l) -> np.ndarray:
    return l.points if isinstance(l, LandmarkSet) else np.asarray(l, float)


def estimate_warp(l_src, l_dst) -> np.ndarray:
    """Least-squares 2x3 affine A with A @ [x, y, 1] ~ dst for every correspondence."""
    src, dst = _points(l_src), _points(l_dst)
    if src.shape != dst.shape or src.shape[1] != 2:
        raise ValueError("landmark sets must be matching (n, 2) arrays")
    design = np.hstack([src, np.ones((len(src), 1))])
    sv = np.linalg.svd(design, compute_uv=False)
    if sv[-1] <= COND_TOL * sv[0]:
        raise np.linalg.LinAlgError("source landmarks are collinear; affine warp is not determined")
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return sol.T


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` (H, W, C) at float coordinates with edge clamping."""
    h, w = img.shape[:2]
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def invert_affine(a: np.ndarray) -> np.ndarray:
    lin, t = a[:, :2], a[:, 2]
    if abs(np.linalg.det(lin)) <= 1e-8:
        raise np.linalg.LinAlgError("affine warp is not invertible")
    inv = np.linalg.inv(lin)
    return np.hstack([inv, (-inv @ t)[:, None]])


def apply_warp(img: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Warp an (H, W, C) image forward by ``a`` using inverse-mapped bilinear sampling."""
    a = np.asarray(a, float)
    if a.shape != (2, 3) or not np.all(np.isfinite(a)):
        raise ValueError("warp must be a finite 2x3 matrix")
    inv = invert_affine(a)
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return _bilinear(np.asarray(img, float), sx, sy)


def apply_tps_warp(img: np.ndarray, l_src, l_dst, smoothing: float = 0.0) -> np.ndarray:
    """Thin-plate-spline alternative: maps every destination pixel back through a
    spline fitted from destination to source landmarks."""
    src, dst = _points(l_src), _points(l_dst)
    back = RBFInterpolator(dst, src, kernel="thin_plate_spline", smoothing=smoothing)
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    mapped = back(np.column_stack([xs.ravel(), ys.ravel()]))
    return _bilinear(np.asarray(img, float), mapped[:, 0].reshape(h, w), mapped[:, 1].reshape(h, w))


@dataclass(frozen=True)
class FusedSample:
    image: np.ndarray  # warped synthesis, HxWx3 in [-1, 1]
    base: np.ndarray  # image-network output before warping
    landmarks: LandmarkSet  # landmark-network output the warp aims at
    warp: np.ndarray  # least-squares 2x3 affine between the landmark sets


def _group_index(groups, k) -> int:
    if isinstance(k, AgeGroup):
        if k not in groups:
            raise ValueError(f"group {k} is not one of the trained groups {[str(g) for g in groups]}")
        return groups.index(k)
    return int(k)


def fuse(x: np.ndarray, l_x: LandmarkSet, n: np.ndarray, k, img_nets, lmk_nets, method: str = "affine") -> FusedSample:
    """Image synthesis warped towards the landmark synthesis; both codes come from the same noise."""
    if img_nets is None or lmk_nets is None:
        raise ValueError("fusion needs both an image and a landmark checkpoint")
    group = k if isinstance(k, AgeGroup) else img_nets.groups[int(k)]
    u_img = map_noise(n, img_nets.mapper, img_nets.groups)[_group_index(img_nets.groups, group)]
    u_lmk = map_noise(n, lmk_nets.mapper, lmk_nets.groups)[_group_index(lmk_nets.groups, group)]
    base = generate_image(x, u_img, img_nets.generator)
    l_y = generate_landmarks(l_x, u_lmk, lmk_nets.pca, lmk_nets.generator)
    a = estimate_warp(l_x, l_y)
    if method == "affine":
        out = apply_warp(base, a)
    elif method == "tps":
        out = apply_tps_warp(base, l_x, l_y)
    else:
        raise ValueError(f"unknown warp method {method!r}")
    return FusedSample(np.clip(out, -1, 1), base, l_y, a)


def dlat_plus_infer(x: np.ndarray, l_x: LandmarkSet, n: np.ndarray, k, img_nets, lmk_nets,
                    method: str = "affine") -> np.ndarray:
    return fuse(x, l_x, n, k, img_nets, lmk_nets, method).image
