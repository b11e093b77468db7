"""Image-side networks: age-modulated generator, age-code predictor and the
multi-task discriminator. All tensors are NCHW with pixels in [-1, 1]."""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .datamodel import IMG_CODE_DIM, AgeLatentCode, Modality

LRELU_SLOPE = 0.2
PIXEL_NORM_EPS = 1e-8
DEMOD_EPS = 1e-8


def scaled_channels(c: int, resolution: int) -> int:
    """Channel count for a desk-scale resolution; exact table widths at 256."""
    if resolution >= 256:
        return c
    return max(16, c * resolution // 256)


def num_downsamples(resolution: int) -> int:
    """Halvings needed to reach a 4x4 map."""
    if resolution < 32 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= 32, got {resolution}")
    return int(math.log2(resolution)) - 2


def pixel_norm(x: torch.Tensor) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(dim=1, keepdim=True) + PIXEL_NORM_EPS)


class PixelNorm(nn.Module):
    def forward(self, x):
        return pixel_norm(x)


def lrelu():
    return nn.LeakyReLU(LRELU_SLOPE)


class ResBlock(nn.Module):
    """Pre-activation residual block: two 3x3 convs plus a (1x1 when reshaping) skip.

    With ``downsample`` the first conv and the skip are strided.
    """

    def __init__(self, in_ch, out_ch, *, downsample=False, act="relu", norm=False):
        super().__init__()
        stride = 2 if downsample else 1
        self.act = nn.ReLU() if act == "relu" else lrelu()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = None
        if downsample or in_ch != out_ch:
            self.skip = nn.Conv2d(in_ch, out_ch, 1, stride=stride)
        self.norm = norm

    def forward(self, x):
        h = self.conv2(self.act(self.conv1(self.act(x))))
        s = x if self.skip is None else self.skip(x)
        out = s + h
        return pixel_norm(out) if self.norm else out


class ModulatedConv2d(nn.Module):
    """Conv whose weights are scaled per input channel by a style derived from
    the age code, then demodulated so every output filter has unit norm."""

    def __init__(self, in_ch, out_ch, kernel_size, code_dim=IMG_CODE_DIM, demodulate=True):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel_size = in_ch, out_ch, kernel_size
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel_size, kernel_size))
        self.scale = 1.0 / math.sqrt(in_ch * kernel_size**2)
        self.style = nn.Linear(code_dim, in_ch)
        nn.init.normal_(self.style.weight, std=1.0 / math.sqrt(code_dim))
        nn.init.ones_(self.style.bias)
        self.demodulate = demodulate

    def modulated_weight(self, code: torch.Tensor) -> torch.Tensor:
        """Per-sample weights of shape (B, out, in, k, k)."""
        style = self.style(code).view(-1, 1, self.in_ch, 1, 1)
        w = self.scale * self.weight.unsqueeze(0) * style
        if self.demodulate:
            w = w * torch.rsqrt(w.pow(2).sum(dim=(2, 3, 4), keepdim=True) + DEMOD_EPS)
        return w

    def forward(self, x, code):
        b, _, h, wd = x.shape
        w = self.modulated_weight(code).reshape(b * self.out_ch, self.in_ch, self.kernel_size, self.kernel_size)
        out = F.conv2d(x.reshape(1, b * self.in_ch, h, wd), w, padding=self.kernel_size // 2, groups=b)
        return out.view(b, self.out_ch, h, wd)


class StyledConv(nn.Module):
    def __init__(self, in_ch, out_ch, code_dim=IMG_CODE_DIM):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, out_ch, 3, code_dim)
        self.bias = nn.Parameter(torch.zeros(1, out_ch, 1, 1))
        self.act = lrelu()

    def forward(self, x, code):
        return pixel_norm(self.act(self.conv(x, code) + self.bias))


def _conv_block(in_ch, out_ch, k, stride=1):
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, k, stride=stride, padding=k // 2), nn.ReLU(), PixelNorm())


class ImageGenerator(nn.Module):
    """Encoder (3 convs + 5 residual blocks, pixel-normalized) and a decoder of
    six styled convs, upsampling bilinearly after the last two."""

    def __init__(self, resolution: int = 256, code_dim: int = IMG_CODE_DIM, n_res: int = 5):
        super().__init__()
        num_downsamples(resolution)
        c = lambda n: scaled_channels(n, resolution)  # noqa: E731
        self.resolution = resolution
        self.code_dim = code_dim
        self.encoder = nn.Sequential(
            _conv_block(3, c(64), 7),
            _conv_block(c(64), c(128), 3, stride=2),
            _conv_block(c(128), c(256), 3, stride=2),
            *[ResBlock(c(256), c(256), norm=True) for _ in range(n_res)],
        )
        widths = [c(256)] * 5 + [c(128), c(64)]
        self.decoder = nn.ModuleList(StyledConv(a, b, code_dim) for a, b in zip(widths[:-1], widths[1:]))
        self.to_rgb = nn.Conv2d(c(64), 3, 1)

    def encode(self, x):
        return self.encoder(x)

    def forward(self, x: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        if code.shape[-1] != self.code_dim:
            raise ValueError(f"generator expects a length-{self.code_dim} code, got {code.shape[-1]}")
        h = self.encoder(x)
        n = len(self.decoder)
        for i, block in enumerate(self.decoder):
            h = block(h, code)
            if i >= n - 2:
                h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        return torch.tanh(self.to_rgb(h))


_PRED_WIDTHS = [128, 256, 512, 512, 512, 512]


class ImagePredictor(nn.Module):
    """Shared conv trunk down to 1x1 and K unshared linear heads."""

    def __init__(self, num_groups: int, resolution: int = 256, code_dim: int = IMG_CODE_DIM):
        super().__init__()
        n = num_downsamples(resolution)
        c = lambda k: scaled_channels(k, resolution)  # noqa: E731
        widths = [c(64)] + [c(w) for w in (_PRED_WIDTHS + [512] * n)[:n]]
        blocks = [ResBlock(a, b, downsample=True, act="lrelu") for a, b in zip(widths[:-1], widths[1:])]
        self.trunk = nn.Sequential(
            nn.Conv2d(3, widths[0], 1), lrelu(),
            *blocks,
            nn.Conv2d(widths[-1], c(512), 4), lrelu(),
            nn.Flatten(),
        )
        self.heads = nn.ModuleList(nn.Linear(c(512), code_dim) for _ in range(num_groups))
        self.num_groups = num_groups

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """All heads: (B, K, code_dim)."""
        h = self.trunk(y)
        return torch.stack([head(h) for head in self.heads], dim=1)

    def head(self, y: torch.Tensor, k: torch.Tensor | int) -> torch.Tensor:
        """Head ``k`` (scalar or per-sample index) without evaluating the others."""
        h = self.trunk(y)
        if isinstance(k, int):
            if not 0 <= k < self.num_groups:
                raise IndexError(f"group index {k} outside [0, {self.num_groups})")
            return self.heads[k](h)
        out = torch.stack([head(h) for head in self.heads], dim=1)
        return out[torch.arange(out.shape[0]), k]


def minibatch_stddev(x: torch.Tensor) -> torch.Tensor:
    """Append one channel holding the mean across-batch standard deviation."""
    std = torch.sqrt(x.var(dim=0, unbiased=False) + 1e-8).mean()
    return torch.cat([x, std.expand(x.shape[0], 1, x.shape[2], x.shape[3])], dim=1)


_DISC_STAGES = [(64, 128), (128, 256), (256, 512), (512, 512), (512, 512), (512, 512)]


class ImageDiscriminator(nn.Module):
    """Conv pyramid with average-pool downsampling, minibatch stddev, and a final
    4x4 conv producing one logit per trainable group."""

    def __init__(self, num_groups: int, resolution: int = 256):
        super().__init__()
        n = num_downsamples(resolution)
        c = lambda k: scaled_channels(k, resolution)  # noqa: E731
        stages = (_DISC_STAGES + [(512, 512)] * n)[:n]
        layers: list[nn.Module] = [nn.Conv2d(3, c(64), 1), lrelu()]
        prev = c(64)
        for a, b in stages:
            layers += [
                nn.Conv2d(prev, c(a), 3, padding=1), lrelu(),
                nn.Conv2d(c(a), c(b), 3, padding=1), lrelu(),
                nn.AvgPool2d(2),
            ]
            prev = c(b)
        self.body = nn.Sequential(*layers)
        self.final_conv = nn.Conv2d(prev + 1, c(512), 3, padding=1)
        self.out = nn.Conv2d(c(512), num_groups, 4)
        self.num_groups = num_groups

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """Logits of shape (B, K)."""
        h = minibatch_stddev(self.body(y))
        h = F.leaky_relu(self.final_conv(h), LRELU_SLOPE)
        return self.out(h).flatten(1)


# numpy-facing helpers -------------------------------------------------------

def to_nchw(pixels: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """HxWx3 (or BxHxWx3) array -> NCHW tensor."""
    a = np.asarray(pixels)
    if a.ndim == 3:
        a = a[None]
    return torch.as_tensor(np.ascontiguousarray(a.transpose(0, 3, 1, 2)), dtype=dtype)


def to_hwc(t: torch.Tensor) -> np.ndarray:
    a = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return a[0] if a.shape[0] == 1 else a


def _check_image(pixels: np.ndarray) -> None:
    h, w = pixels.shape[:2]
    if pixels.ndim != 3 or pixels.shape[2] != 3 or h != w:
        raise ValueError(f"expected a square HxWx3 image, got {pixels.shape}")
    num_downsamples(h)


def generate_image(x: np.ndarray, u: AgeLatentCode, gen: ImageGenerator) -> np.ndarray:
    """Age-transform one HxWx3 image with an image-modality code."""
    _check_image(x)
    if u.modality is not Modality.IMAGE:
        raise ValueError(f"generator needs an image code, got {u.modality.value}")
    dtype = next(gen.parameters()).dtype
    with torch.no_grad():
        y = gen(to_nchw(x, dtype), torch.as_tensor(u.values, dtype=dtype)[None])
    return to_hwc(y)


def predict_age_code(y: np.ndarray, k: int, pred: ImagePredictor, group=None) -> AgeLatentCode:
    _check_image(y)
    if not 0 <= k < pred.num_groups:
        raise IndexError(f"group index {k} outside [0, {pred.num_groups})")
    dtype = next(pred.parameters()).dtype
    with torch.no_grad():
        code = pred.head(to_nchw(y, dtype), k)[0]
    return AgeLatentCode(code.numpy().astype(float), Modality.IMAGE, group)


def discriminate_image(y: np.ndarray, disc: ImageDiscriminator) -> np.ndarray:
    _check_image(y)
    dtype = next(disc.parameters()).dtype
    with torch.no_grad():
        return disc(to_nchw(y, dtype))[0].numpy()
