"""Canonical 81-point face layout (68-point layout plus 13 forehead points),
in unit coordinates with the face filling most of a square crop."""
from __future__ import annotations

import numpy as np


def _arc(cx, cy, rx, ry, start, stop, n):
    t = np.linspace(start, stop, n)
    return np.column_stack([cx + rx * np.cos(t), cy + ry * np.sin(t)])


def unit_template() -> np.ndarray:
    pi = np.pi
    jaw = _arc(0.5, 0.42, 0.36, 0.48, pi + 0.05 * pi, -0.05 * pi, 17)[::-1]
    jaw[:, 0] = 1 - jaw[:, 0]  # left ear first
    brow_l = _arc(0.33, 0.33, 0.11, 0.04, pi, 2 * pi, 5)
    brow_r = _arc(0.67, 0.33, 0.11, 0.04, pi, 2 * pi, 5)
    bridge = np.column_stack([np.full(4, 0.5), np.linspace(0.40, 0.56, 4)])
    nostrils = np.column_stack([np.linspace(0.43, 0.57, 5), 0.60 + 0.015 * np.array([0, 1, 1.5, 1, 0])])
    eye_angles = np.array([pi, 1.25 * pi, 1.75 * pi, 0.0, 0.25 * pi, 0.75 * pi])
    eye_l = np.column_stack([0.35 + 0.07 * np.cos(eye_angles), 0.42 + 0.03 * np.sin(eye_angles)])
    eye_r = np.column_stack([0.65 + 0.07 * np.cos(eye_angles), 0.42 + 0.03 * np.sin(eye_angles)])
    mouth_t = np.linspace(pi, 3 * pi, 13)[:-1]
    mouth_o = np.column_stack([0.5 + 0.14 * np.cos(mouth_t), 0.75 + 0.06 * np.sin(mouth_t)])
    inner_t = np.linspace(pi, 3 * pi, 9)[:-1]
    mouth_i = np.column_stack([0.5 + 0.09 * np.cos(inner_t), 0.75 + 0.025 * np.sin(inner_t)])
    forehead = _arc(0.5, 0.36, 0.35, 0.30, pi + 0.05 * pi, 2 * pi - 0.05 * pi, 13)
    pts = np.vstack([jaw, brow_l, brow_r, bridge, nostrils, eye_l, eye_r, mouth_o, mouth_i, forehead])
    assert pts.shape == (81, 2)
    return pts


def face_template(size: int) -> np.ndarray:
    """Template in pixel coordinates for a ``size`` x ``size`` crop."""
    return unit_template() * (size - 1)
