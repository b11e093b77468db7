"""Landmark-side machinery: PCA shape model, FiLM landmark generator, code
predictor, discriminator, and weak-perspective pose estimation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .datamodel import LMK_CODE_DIM, PCA_DIM, AgeLatentCode, LandmarkSet, Modality
from .imgnet import LRELU_SLOPE, lrelu

# 68-point layout indices (the 81-point layout extends it with 13 forehead points):
# outer eye corners, nose tip, mouth corners, chin, brow midpoints
POSE_SUBSET: tuple[int, ...] = (36, 45, 30, 48, 54, 8, 19, 24)


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray  # (162,)
    components: np.ndarray  # (32, 162), orthonormal rows
    explained_variance: np.ndarray  # (32,), descending

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    def project(self, flat: np.ndarray) -> np.ndarray:
        return (np.asarray(flat) - self.mean) @ self.components.T

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        return self.mean + np.asarray(coeffs) @ self.components

    def project_t(self, flat: torch.Tensor) -> torch.Tensor:
        mean, comps = self._tensors(flat)
        return (flat - mean) @ comps.T

    def reconstruct_t(self, coeffs: torch.Tensor) -> torch.Tensor:
        mean, comps = self._tensors(coeffs)
        return mean + coeffs @ comps

    def _tensors(self, like: torch.Tensor):
        return (torch.as_tensor(self.mean, dtype=like.dtype), torch.as_tensor(self.components, dtype=like.dtype))

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean, "components": self.components, "explained_variance": self.explained_variance}

    def save(self, path) -> None:
        np.savez(path, **self.to_arrays())

    @classmethod
    def load(cls, path) -> "PcaBasis":
        with np.load(path) as z:
            return cls(z["mean"], z["components"], z["explained_variance"])


def fit_pca(landmarks: Sequence[LandmarkSet] | np.ndarray, dim: int = PCA_DIM) -> PcaBasis:
    """Top-``dim`` principal axes of the flattened landmarks.

    Variances use the 1/n covariance, so the mean squared reconstruction error of
    the training set equals the sum of the discarded eigenvalues.
    """
    data = np.asarray([l.flatten() for l in landmarks] if not isinstance(landmarks, np.ndarray) else landmarks, float)
    if data.ndim != 2:
        raise ValueError("expected a list of landmark sets or an (n, d) array")
    n = data.shape[0]
    if n < dim + 1:
        raise ValueError(f"PCA of dimension {dim} needs at least {dim + 1} samples, got {n}")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:dim]
    comps = evecs[:, order].T
    # sign convention: largest-magnitude entry positive
    idx = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(dim), idx])[:, None]
    return PcaBasis(mean, comps, np.clip(evals[order], 0.0, None))


def pca_project(l: LandmarkSet, b: PcaBasis) -> np.ndarray:
    return b.project(l.flatten())


def pca_reconstruct(c: np.ndarray, b: PcaBasis, group=None) -> LandmarkSet:
    return LandmarkSet.from_flat(b.reconstruct(c), group)


class FiLMLayer(nn.Module):
    """h -> LReLU(gamma(u) * (W h) + beta(u)); gamma and beta come from one affine map of u."""

    def __init__(self, in_f, out_f, code_dim=LMK_CODE_DIM):
        super().__init__()
        self.linear = nn.Linear(in_f, out_f)
        self.film = nn.Linear(code_dim, 2 * out_f)
        with torch.no_grad():
            self.film.weight.mul_(0.25)
            self.film.bias.zero_()
            self.film.bias[:out_f] = 1.0

    def forward(self, h, code):
        gamma, beta = self.film(code).chunk(2, dim=-1)
        return F.leaky_relu(gamma * self.linear(h) + beta, LRELU_SLOPE)


class LandmarkGenerator(nn.Module):
    """Eight FiLM layers of width 256 then a linear map to a PCA-space offset."""

    def __init__(self, pca_dim=PCA_DIM, code_dim=LMK_CODE_DIM, width=256, depth=8):
        super().__init__()
        dims = [pca_dim] + [width] * depth
        self.layers = nn.ModuleList(FiLMLayer(a, b, code_dim) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(width, pca_dim)
        self.code_dim = code_dim

    def offset(self, coeffs: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        if code.shape[-1] != self.code_dim:
            raise ValueError(f"landmark generator expects a length-{self.code_dim} code, got {code.shape[-1]}")
        h = coeffs
        for layer in self.layers:
            h = layer(h, code)
        return self.out(h)

    def forward(self, coeffs: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        """Deformed PCA coefficients."""
        return coeffs + self.offset(coeffs, code)


def _lrelu_mlp(dims: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for a, b in zip(dims[:-1], dims[1:]):
        layers += [nn.Linear(a, b), lrelu()]
    return nn.Sequential(*layers)


class LandmarkPredictor(nn.Module):
    def __init__(self, num_groups: int, pca_dim=PCA_DIM, code_dim=LMK_CODE_DIM, width=512, depth=10):
        super().__init__()
        self.trunk = _lrelu_mlp([pca_dim] + [width] * depth)
        self.heads = nn.ModuleList(nn.Linear(width, code_dim) for _ in range(num_groups))
        self.num_groups = num_groups

    def forward(self, coeffs):
        h = self.trunk(coeffs)
        return torch.stack([head(h) for head in self.heads], dim=-2)

    def head(self, coeffs, k):
        if isinstance(k, int):
            if not 0 <= k < self.num_groups:
                raise IndexError(f"group index {k} outside [0, {self.num_groups})")
            return self.heads[k](self.trunk(coeffs))
        out = self(coeffs)
        return out[torch.arange(out.shape[0]), k]


class LandmarkDiscriminator(nn.Module):
    """Shared 4x256 trunk; each of K branches ends in a sigmoid probability."""

    def __init__(self, num_groups: int, pca_dim=PCA_DIM, width=256):
        super().__init__()
        self.trunk = _lrelu_mlp([pca_dim] + [width] * 4)
        self.branches = nn.ModuleList(
            nn.Sequential(_lrelu_mlp([width, 256, 256, 128]), nn.Linear(128, 1)) for _ in range(num_groups)
        )
        self.num_groups = num_groups

    def logits(self, coeffs):
        h = self.trunk(coeffs)
        return torch.cat([b(h) for b in self.branches], dim=-1)

    def forward(self, coeffs):
        return torch.sigmoid(self.logits(coeffs))


def generate_landmarks(l_src: LandmarkSet, u: AgeLatentCode, b: PcaBasis, gen: LandmarkGenerator) -> LandmarkSet:
    if u.modality is not Modality.LANDMARK:
        raise ValueError(f"landmark generator needs a landmark code, got {u.modality.value}")
    dtype = next(gen.parameters()).dtype
    c = pca_project(l_src, b)
    with torch.no_grad():
        off = gen.offset(torch.as_tensor(c, dtype=dtype)[None], torch.as_tensor(u.values, dtype=dtype)[None])
    return pca_reconstruct(c + off[0].double().numpy(), b, u.group)


def predict_age_code_lmk(c: np.ndarray, k: int, pred: LandmarkPredictor, group=None) -> AgeLatentCode:
    c = np.asarray(c, float)
    if c.shape != (PCA_DIM,):
        raise ValueError(f"PCA coefficients must have length {PCA_DIM}")
    dtype = next(pred.parameters()).dtype
    with torch.no_grad():
        code = pred.head(torch.as_tensor(c, dtype=dtype)[None], k)[0]
    return AgeLatentCode(code.double().numpy(), Modality.LANDMARK, group)


def discriminate_lmk(c: np.ndarray, disc: LandmarkDiscriminator) -> np.ndarray:
    c = np.asarray(c, float)
    if c.shape != (PCA_DIM,):
        raise ValueError(f"PCA coefficients must have length {PCA_DIM}")
    dtype = next(disc.parameters()).dtype
    with torch.no_grad():
        return disc(torch.as_tensor(c, dtype=dtype)[None])[0].double().numpy()


# pose -----------------------------------------------------------------------

@dataclass(frozen=True)
class ReferencePoints3D:
    points: np.ndarray  # (P, 3)

    def __post_init__(self):
        p = self.points
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 4:
            raise ValueError("reference points must be a (P>=4, 3) array")
        if np.linalg.matrix_rank(p - p.mean(axis=0), tol=1e-6) != 3:
            raise ValueError("reference points are coplanar")

    def min_separation(self) -> float:
        d = np.linalg.norm(self.points[:, None] - self.points[None], axis=-1)
        return float(d[np.triu_indices(len(d), 1)].min())

    @classmethod
    def sample(cls, rng: np.random.Generator, count: int = 8, min_separation: float = 0.5,
               max_tries: int = 10000) -> "ReferencePoints3D":
        """Rejection-sample ``count`` points on the unit sphere, pairwise >= ``min_separation`` apart."""
        pts: list[np.ndarray] = []
        for _ in range(max_tries):
            v = rng.standard_normal(3)
            v /= np.linalg.norm(v)
            if all(np.linalg.norm(v - q) >= min_separation for q in pts):
                pts.append(v)
                if len(pts) == count:
                    return cls(np.array(pts))
        raise RuntimeError("could not place reference points; lower the separation")


@dataclass(frozen=True)
class PoseEstimate:
    rotation: np.ndarray  # (2, 3) scale * first two rows of a rotation
    translation: np.ndarray  # (2,) pixels

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.rotation, axis=1).mean())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rotation.ravel(), self.translation])


def pose_params(l2d: torch.Tensor, ref: torch.Tensor, cond_tol: float = 1e-9) -> torch.Tensor:
    """Weak-perspective pose of (..., P, 2) points against (P, 3) reference points.

    Fits the affine camera by least squares, then projects its 2x3 linear part onto
    scale * (orthonormal rows) with the closed-form polar factor of a 2x2 Gram
    matrix (smooth even when the two singular values coincide). Returns
    (..., 8): the flattened scaled rotation followed by the translation.
    """
    ref = ref.to(l2d.dtype)
    x_mean = ref.mean(dim=0)
    xc = ref - x_mean
    l_mean = l2d.mean(dim=-2, keepdim=True)
    lc = l2d - l_mean
    # M = Lc^T Xc (Xc^T Xc)^-1
    m = lc.transpose(-1, -2) @ xc @ torch.linalg.inv(xc.T @ xc)
    a = m @ m.transpose(-1, -2)
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if torch.any(det <= cond_tol * (a[..., 0, 0] + a[..., 1, 1]) ** 2):
        raise np.linalg.LinAlgError("degenerate landmark subset: projected points are (near) collinear")
    d = torch.sqrt(det)
    tau = torch.sqrt(a[..., 0, 0] + a[..., 1, 1] + 2 * d)
    eye = torch.eye(2, dtype=l2d.dtype)
    sqrt_a = (a + d[..., None, None] * eye) / tau[..., None, None]
    rot = torch.linalg.solve(sqrt_a, m)
    srot = (tau / 2)[..., None, None] * rot
    t = l_mean.squeeze(-2) - (srot @ x_mean.unsqueeze(-1)).squeeze(-1)
    return torch.cat([srot.flatten(-2), t], dim=-1)


def estimate_pose(l: LandmarkSet | np.ndarray, ref: ReferencePoints3D,
                  subset: Sequence[int] = POSE_SUBSET) -> PoseEstimate:
    pts = l.points if isinstance(l, LandmarkSet) else np.asarray(l, float)
    subset = list(subset)
    if len(subset) != len(ref.points):
        raise ValueError(f"subset has {len(subset)} indices but there are {len(ref.points)} reference points")
    v = pose_params(torch.as_tensor(pts[subset], dtype=torch.float64), torch.as_tensor(ref.points)).numpy()
    return PoseEstimate(v[:6].reshape(2, 3), v[6:])
