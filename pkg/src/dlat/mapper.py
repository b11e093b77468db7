"""Diverse age mappers: one noise vector -> K age latent codes."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .datamodel import IMG_CODE_DIM, LMK_CODE_DIM, NOISE_DIM, AgeGroup, AgeLatentCode, Modality

# (shared depth, unshared hidden depth, code dim)
_LAYOUT = {
    Modality.IMAGE: (6, 1, IMG_CODE_DIM),
    Modality.LANDMARK: (4, 3, LMK_CODE_DIM),
}


def fan_in_linear(in_f: int, out_f: int) -> nn.Linear:
    layer = nn.Linear(in_f, out_f)
    nn.init.normal_(layer.weight, std=1.0 / math.sqrt(in_f))
    nn.init.zeros_(layer.bias)
    return layer


def _mlp(dims: list[int], final_act: bool) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(fan_in_linear(a, b))
        if final_act or i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class AgeMapper(nn.Module):
    """Shared ReLU trunk of width 512 followed by K unshared branches.

    ``forward`` returns a (B, K, code_dim) tensor; branch i belongs to trainable group i.
    """

    def __init__(self, num_groups: int, modality: Modality = Modality.IMAGE, width: int = 512):
        super().__init__()
        self.modality = Modality(modality)
        n_shared, n_hidden, code_dim = _LAYOUT[self.modality]
        self.num_groups = num_groups
        self.code_dim = code_dim
        self.shared = _mlp([NOISE_DIM] + [width] * n_shared, final_act=True)
        self.branches = nn.ModuleList(
            _mlp([width] * (n_hidden + 1) + [code_dim], final_act=False) for _ in range(num_groups)
        )

    def forward(self, noise: torch.Tensor) -> torch.Tensor:
        if noise.shape[-1] != NOISE_DIM:
            raise ValueError(f"noise must have length {NOISE_DIM}, got {noise.shape[-1]}")
        h = self.shared(noise)
        return torch.stack([b(h) for b in self.branches], dim=-2)

    def code_for(self, noise: torch.Tensor, k: torch.Tensor | int) -> torch.Tensor:
        """Codes of group index ``k`` (scalar or per-sample) for a batch of noise."""
        codes = self(noise)
        if isinstance(k, int):
            return codes[..., k, :]
        return codes[torch.arange(codes.shape[0]), k]


def map_noise(noise, mapper: AgeMapper, groups: Sequence[AgeGroup]) -> list[AgeLatentCode]:
    """The K codes for a single noise vector, tagged with their groups."""
    if len(groups) != mapper.num_groups:
        raise ValueError(f"mapper has {mapper.num_groups} branches, got {len(groups)} groups")
    n = torch.as_tensor(np.asarray(noise), dtype=next(mapper.parameters()).dtype)
    with torch.no_grad():
        codes = mapper(n.reshape(1, -1))[0]
    return [AgeLatentCode(c.numpy().astype(float), mapper.modality, g) for c, g in zip(codes, groups)]
