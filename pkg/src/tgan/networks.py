"""Generator with age-conditioned attention fusion, patch discriminator and multi-scale indicator head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    code_length: int = 1000
    n_indicators: int = 10
    gen_widths: tuple[int, ...] = (64, 128, 256, 512)
    cond_hidden: int = 512
    d_a: int = 64
    d_k: int = 64
    adv_widths: tuple[int, ...] = (64, 128, 256, 512)
    ind_widths: tuple[int, ...] = (64, 128, 256, 512)
    fpn_width: int = 128
    init_std: float = 0.02
    # ŷ = tanh(atanh(x) + r) with r from the output conv, so an untrained generator is ~identity
    input_residual: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for k in ("gen_widths", "adv_widths", "ind_widths"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @property
    def bottleneck_side(self) -> int:
        return self.image_size // 16


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def _check_image(x: torch.Tensor, name: str, divisor: int = 16, min_side: int = 16) -> None:
    if x.dim() != 4 or x.shape[1] != 1:
        raise ShapeError(f"{name}: expected N x 1 x H x W, got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h != w or h % divisor or h < min_side:
        raise ShapeError(f"{name}: side must be square, >= {min_side} and divisible by {divisor}; got {h}x{w}")


# --------------------------------------------------------------------------- attention fusion


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Row-stochastic softmax(Q K^T / sqrt(d_k)); inputs are (..., tokens, d_k)."""
    return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(k.shape[-1]), dim=-1)


class AttentionFusion(nn.Module):
    """Cross-attention where condition vectors query channel tokens of the image features.

    Each bottleneck channel is a token whose feature is its flattened h*w map.
    The attended values are reshaped back to C x h x w and added residually.
    """

    def __init__(self, spatial: int, d_a: int, d_k: int):
        super().__init__()
        self.spatial = spatial
        self.w_q = nn.Linear(d_a, d_k, bias=False)
        self.w_k = nn.Linear(spatial, d_k, bias=False)
        self.w_v = nn.Linear(spatial, spatial, bias=False)
        self.last_weights: torch.Tensor | None = None

    def attend(self, f_x: torch.Tensor, f_a: torch.Tensor) -> torch.Tensor:
        """f_x: (N, C, h*w) channel tokens, f_a: (N, C, d_a) queries -> (N, C, h*w)."""
        if f_x.shape[-1] != self.spatial:
            raise ShapeError(f"W_k expects token width {self.spatial}, got {f_x.shape[-1]}")
        if f_a.shape[:-1] != f_x.shape[:-1]:
            raise ShapeError(f"query tokens {tuple(f_a.shape)} do not match key tokens {tuple(f_x.shape)}")
        q, k, v = self.w_q(f_a), self.w_k(f_x), self.w_v(f_x)
        weights = attention_weights(q, k)
        self.last_weights = weights.detach()
        return weights @ v

    def forward(self, feats: torch.Tensor, f_a: torch.Tensor) -> torch.Tensor:
        n, c, h, w = feats.shape
        fused = self.attend(feats.reshape(n, c, h * w), f_a)
        return feats + fused.reshape(n, c, h, w)


# --------------------------------------------------------------------------- generator


def _down(cin: int, cout: int, norm: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(cin, cout, 4, 2, 1)]
    if norm:
        layers.append(nn.InstanceNorm2d(cout, affine=True))
    layers.append(nn.LeakyReLU(0.2))
    return nn.Sequential(*layers)


def _up(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.ConvTranspose2d(cin, cout, 4, 2, 1), nn.InstanceNorm2d(cout, affine=True), nn.ReLU())


RESIDUAL_CLIP = 0.999


class Generator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.image_size % 16:
            raise ShapeError(f"image_size must be divisible by 16, got {cfg.image_size}")
        self.cfg = cfg
        w1, w2, w3, w4 = cfg.gen_widths
        self.enc = nn.ModuleList([_down(1, w1, norm=False), _down(w1, w2), _down(w2, w3), _down(w3, w4)])
        self.cond = nn.Sequential(
            nn.Linear(cfg.code_length, cfg.cond_hidden), nn.ReLU(), nn.Linear(cfg.cond_hidden, w4 * cfg.d_a)
        )
        self.fusion = AttentionFusion(cfg.bottleneck_side ** 2, cfg.d_a, cfg.d_k)
        self.dec = nn.ModuleList([_up(w4, w3), _up(2 * w3, w2), _up(2 * w2, w1), _up(2 * w1, w1)])
        self.out = nn.Conv2d(w1, 1, 3, 1, 1)
        init_weights(self, cfg.init_std)

    def forward(self, x: torch.Tensor, diff: torch.Tensor, skips: bool = True) -> torch.Tensor:
        _check_image(x, "generator input")
        if x.shape[-1] != self.cfg.image_size:
            raise ShapeError(f"generator built for {self.cfg.image_size}px input, got {x.shape[-1]}px")
        if diff.shape != (x.shape[0], self.cfg.code_length):
            raise ShapeError(f"diff code must be N x {self.cfg.code_length}, got {tuple(diff.shape)}")
        feats = []
        h = x
        for stage in self.enc:
            h = stage(h)
            feats.append(h)
        f_a = self.cond(diff.to(h.dtype)).reshape(x.shape[0], h.shape[1], self.cfg.d_a)
        h = self.fusion(h, f_a)
        for i, stage in enumerate(self.dec):
            if i > 0:
                skip = feats[-1 - i]
                h = torch.cat([h, skip if skips else torch.zeros_like(skip)], dim=1)
            h = stage(h)
        r = self.out(h)
        if self.cfg.input_residual:
            r = r + torch.atanh(x.clamp(-RESIDUAL_CLIP, RESIDUAL_CLIP))
        return torch.tanh(r)


# --------------------------------------------------------------------------- patch discriminator

ADV_STRIDES = (2, 2, 2, 1, 1)
ADV_PADDINGS = (1, 1, 1, 0, 1)
ADV_KERNEL = 4


def patch_map_side(image_side: int) -> int:
    side = image_side
    for s, p in zip(ADV_STRIDES, ADV_PADDINGS):
        side = (side + 2 * p - ADV_KERNEL) // s + 1
    return side


class PatchDiscriminator(nn.Module):
    """Five 4x4 convolutions over the (input, candidate) channel pair; sigmoid patch map of side H/8 - 4."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w1, w2, w3, w4 = cfg.adv_widths
        chans = [2, w1, w2, w3, w4, 1]
        layers: list[nn.Module] = []
        for i, (s, p) in enumerate(zip(ADV_STRIDES, ADV_PADDINGS)):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], ADV_KERNEL, s, p))
            if i == len(ADV_STRIDES) - 1:
                break
            if i > 0:
                layers.append(nn.InstanceNorm2d(chans[i + 1], affine=True))
            layers.append(nn.LeakyReLU(0.2))
        self.net = nn.Sequential(*layers)
        init_weights(self, cfg.init_std)

    def logits(self, x: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        if x.shape != candidate.shape:
            raise ShapeError(f"input {tuple(x.shape)} and candidate {tuple(candidate.shape)} differ")
        _check_image(x, "discriminator input", divisor=8, min_side=40)
        return self.net(torch.cat([x, candidate], dim=1)).squeeze(1)

    def forward(self, x: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x, candidate))


# --------------------------------------------------------------------------- indicator discriminator


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 2):
        super().__init__()
        groups = math.gcd(8, cout)
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, stride, 1, bias=False), nn.GroupNorm(groups, cout), nn.ReLU(),
            nn.Conv2d(cout, cout, 3, 1, 1, bias=False), nn.GroupNorm(groups, cout),
        )
        self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.GroupNorm(groups, cout))

    def forward(self, x):
        return F.relu(self.body(x) + self.shortcut(x))


class ScaleHead(nn.Module):
    def __init__(self, width: int, n_out: int):
        super().__init__()
        self.conv = nn.Conv2d(width, width, 3, 1, 1)
        self.fc = nn.Linear(width, n_out)

    def forward(self, x):
        h = F.relu(self.conv(x)).mean(dim=(2, 3))
        return self.fc(h)


class IndicatorDiscriminator(nn.Module):
    """Residual backbone with a top-down pyramid over blocks 2-4; one regression head per scale, averaged."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = [1] + list(cfg.ind_widths)
        self.blocks = nn.ModuleList([ResidualBlock(chans[i], chans[i + 1]) for i in range(4)])
        self.lateral = nn.ModuleList([nn.Conv2d(c, cfg.fpn_width, 1) for c in cfg.ind_widths[1:]])
        self.heads = nn.ModuleList([ScaleHead(cfg.fpn_width, cfg.n_indicators) for _ in range(3)])
        init_weights(self, cfg.init_std)

    def scale_outputs(self, y: torch.Tensor) -> list[torch.Tensor]:
        _check_image(y, "indicator input", min_side=32)
        feats = []
        h = y
        for block in self.blocks:
            h = block(h)
            feats.append(h)
        # top-down over blocks 2..4; block 1 is not part of the pyramid
        levels = [lat(f) for lat, f in zip(self.lateral, feats[1:])]
        pyramid = [levels[-1]]
        for lvl in reversed(levels[:-1]):
            up = F.interpolate(pyramid[0], size=lvl.shape[-2:], mode="bilinear", align_corners=False)
            pyramid.insert(0, lvl + up)
        return [head(p) for head, p in zip(self.heads, pyramid)]

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return torch.stack(self.scale_outputs(y), dim=0).mean(dim=0)


# --------------------------------------------------------------------------- bundle


class TGANModels(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.generator = Generator(cfg)
        self.adv = PatchDiscriminator(cfg)
        self.indicator = IndicatorDiscriminator(cfg)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
