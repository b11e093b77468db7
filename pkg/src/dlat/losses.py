"""Training objectives for both sub-networks.

Unspecified norms are mean-reduced L1. Each function averages over the leading
batch dimension where one exists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F

from .datamodel import HyperParams

IMG_TERMS = ("adv", "div", "age", "cyc", "rac", "ppc", "idc")
LMK_TERMS = ("adv", "div", "age", "cyc", "pos", "pcc")
_IMG_LAMBDAS = dict(zip(IMG_TERMS, range(1, 8)))
_LMK_LAMBDAS = dict(zip(LMK_TERMS, range(8, 14)))
PCC_MIN_NORM = 1e-8


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is not finite ({value})")
        self.term = term


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def diversity_loss(y1: torch.Tensor, y2: torch.Tensor) -> torch.Tensor:
    _same_shape(y1, y2, "diversity_loss")
    return (y1 - y2).abs().mean()


def age_code_loss(pred: torch.Tensor, sampled: torch.Tensor) -> torch.Tensor:
    _same_shape(pred, sampled, "age_code_loss")
    return (pred - sampled).abs().mean()


def cycle_loss(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    _same_shape(x, x_rec, "cycle_loss")
    return (x - x_rec).abs().mean()


def adversarial_losses(real_logit: torch.Tensor, fake_logit: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Logistic GAN losses on the (already group-masked) logits.

    Returns (discriminator loss, non-saturating generator loss).
    """
    d_loss = (F.softplus(-real_logit) + F.softplus(fake_logit)).mean()
    g_loss = F.softplus(-fake_logit).mean()
    return d_loss, g_loss


def bce_adversarial_losses(real_prob: torch.Tensor, fake_prob: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Binary cross-entropy on sigmoid probabilities (landmark discriminator)."""
    d_loss = F.binary_cross_entropy(real_prob, torch.ones_like(real_prob)) + F.binary_cross_entropy(
        fake_prob, torch.zeros_like(fake_prob)
    )
    g_loss = F.binary_cross_entropy(fake_prob, torch.ones_like(fake_prob))
    return d_loss, g_loss


def r1_penalty(real_logit: torch.Tensor, real: torch.Tensor, weight: float = 1.0) -> torch.Tensor:
    """weight/2 * E[|grad_x D(x)|^2]; ``real`` must require grad."""
    (grad,) = torch.autograd.grad(real_logit.sum(), real, create_graph=True)
    return 0.5 * weight * grad.pow(2).flatten(1).sum(1).mean()


def race_consistency_loss(src_dist: torch.Tensor, gen_dist: torch.Tensor, atol: float = 1e-6) -> torch.Tensor:
    """0 where the argmax races agree, else 1 - gen_dist[argmax(src_dist)].

    The agreement test is a hard gate; gradients flow only through the
    confidence term.
    """
    _same_shape(src_dist, gen_dist, "race_consistency_loss")
    for name, d in (("source", src_dist), ("generated", gen_dist)):
        if torch.any((d.sum(-1) - 1).abs() > atol):
            raise ValueError(f"{name} race distribution does not sum to 1")
    src_cls = src_dist.argmax(-1, keepdim=True)
    agree = (gen_dist.argmax(-1, keepdim=True) == src_cls).squeeze(-1)
    conf = gen_dist.gather(-1, src_cls).squeeze(-1)
    return torch.where(agree, torch.zeros_like(conf), 1 - conf).mean()


def pose_consistency_loss(p_x: torch.Tensor, p_y: torch.Tensor) -> torch.Tensor:
    """Summed absolute difference of (scaled rotation, translation) pose vectors."""
    _same_shape(p_x, p_y, "pose_consistency_loss")
    return (p_x - p_y).abs().sum(-1).mean()


def perceptual_loss(feats_x: Sequence[torch.Tensor], feats_rec: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(feats_x) != 4 or len(feats_rec) != 4:
        raise ValueError("perceptual loss needs exactly four feature maps per input")
    per_layer = []
    for a, b in zip(feats_x, feats_rec):
        _same_shape(a, b, "perceptual_loss")
        per_layer.append((a - b).abs().mean())
    return torch.stack(per_layer).mean()


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a * b).sum(-1) / (a.norm(dim=-1) * b.norm(dim=-1))


def identity_feature_loss(e_x: torch.Tensor, e_y: torch.Tensor) -> torch.Tensor:
    _same_shape(e_x, e_y, "identity_feature_loss")
    if torch.any(e_x.norm(dim=-1) == 0) or torch.any(e_y.norm(dim=-1) == 0):
        raise ValueError("identity embedding has zero norm")
    return (1 - _cosine(e_x, e_y)).mean()


def personal_characteristic_loss(l_x, l_y, mean_src, mean_tgt, return_skipped: bool = False):
    """1 - cos(l_x - mean_src, l_y - mean_tgt) over flattened landmarks.

    Samples whose deviation norm is below 1e-8 are left out of the average;
    ``return_skipped`` also returns how many were dropped.
    """
    dx = l_x - mean_src
    dy = l_y - mean_tgt
    if dx.shape[-1] != dy.shape[-1]:
        raise ValueError("landmark vectors differ in length")
    dx, dy = torch.atleast_2d(dx), torch.atleast_2d(dy)
    ok = (dx.norm(dim=-1) >= PCC_MIN_NORM) & (dy.norm(dim=-1) >= PCC_MIN_NORM)
    skipped = int((~ok).sum())
    if skipped == len(ok):
        loss = dx.sum() * 0.0
    else:
        loss = (1 - _cosine(dx[ok], dy[ok])).mean()
    return (loss, skipped) if return_skipped else loss


@dataclass
class LossReport:
    terms: dict[str, float]
    total: torch.Tensor
    extra: dict[str, float] = field(default_factory=dict)

    def row(self) -> dict[str, float]:
        return {**self.terms, "total": float(self.total.detach())}

    def check_finite(self) -> None:
        for k, v in {**self.terms, **self.extra, "total": float(self.total.detach())}.items():
            if not math.isfinite(v):
                raise NonFiniteLossError(k, v)


def _weighted_total(parts, names, lambdas, hp: HyperParams, div_clamp: float) -> LossReport:
    missing = [n for n in names if n not in parts]
    if missing:
        raise KeyError(f"missing loss terms: {missing}")
    total = 0.0
    for n in names:
        v = parts[n]
        w = hp.lam(lambdas[n])
        if n == "div":
            total = total - w * torch.clamp(torch.as_tensor(v), max=div_clamp)
        else:
            total = total + w * v
    total = torch.as_tensor(total)
    return LossReport({n: float(torch.as_tensor(parts[n]).detach()) for n in names}, total)


def total_image_loss(parts: Mapping[str, torch.Tensor], hp: HyperParams, div_clamp: float = 1.0) -> LossReport:
    """adv - div + age + cyc + rac + ppc + idc, weighted by lambda1..7; div clamped at ``div_clamp``."""
    return _weighted_total(parts, IMG_TERMS, _IMG_LAMBDAS, hp, div_clamp)


def total_landmark_loss(parts: Mapping[str, torch.Tensor], hp: HyperParams, div_clamp: float = 1.0) -> LossReport:
    """adv - div + age + cyc + pos + pcc, weighted by lambda8..13."""
    return _weighted_total(parts, LMK_TERMS, _LMK_LAMBDAS, hp, div_clamp)
