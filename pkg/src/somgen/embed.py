"""Patch tokens for RGB and depth, a frequency token, and their fusion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeMismatchError


@dataclass
class EmbedConfig:
    kernel: int = 8
    embed_dim: int = 128
    resolution: int = 64
    depth_scale: float = 250.0
    frequency_unit: float = 1e9
    freq_hidden: int = 64
    trainable_positions: bool = True
    position_std: float = 0.02

    @property
    def patch_side(self) -> int:
        return self.resolution // self.kernel

    @property
    def n_patches(self) -> int:
        return (self.resolution * self.resolution) // (self.kernel * self.kernel)

    def validate(self):
        if self.kernel < 1 or self.resolution < 1 or self.resolution % self.kernel:
            raise ConfigError(f"resolution {self.resolution} is not divisible by kernel {self.kernel}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if not self.depth_scale > 0:
            raise ConfigError("depth_scale must be positive")


class FusedSequence(NamedTuple):
    tokens: torch.Tensor  # (B, n_r + n_d + 1, E)
    n_r: int
    n_d: int

    def rgb(self):
        return self.tokens[:, : self.n_r]

    def depth(self):
        return self.tokens[:, self.n_r : self.n_r + self.n_d]

    def frequency(self):
        return self.tokens[:, -1:]


class PatchEmbed(nn.Module):
    """Strided conv (kernel = stride = k) -> batch norm -> ReLU -> (B, n, E).

    Token ``i`` comes from patch ``(i // n_p, i % n_p)``.
    """

    def __init__(self, in_channels: int, cfg: EmbedConfig):
        super().__init__()
        self.in_channels = in_channels
        self.resolution = cfg.resolution
        self.proj = nn.Conv2d(in_channels, cfg.embed_dim, kernel_size=cfg.kernel, stride=cfg.kernel)
        self.norm = nn.BatchNorm2d(cfg.embed_dim)
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels or x.shape[2:] != (self.resolution, self.resolution):
            raise ShapeMismatchError(
                f"expected (B, {self.in_channels}, {self.resolution}, {self.resolution}), got {tuple(x.shape)}"
            )
        x = self.act(self.norm(self.proj(x)))
        return x.flatten(2).transpose(1, 2)


def add_positions(tokens: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    if tokens.shape[-2:] != table.shape[-2:]:
        raise ShapeMismatchError(f"tokens {tuple(tokens.shape)} vs position table {tuple(table.shape)}")
    return tokens + table


def frequency_input(freq_hz, unit: float = 1e9) -> torch.Tensor:
    """Scalar MLP input log10(f / unit)."""
    f = torch.as_tensor(freq_hz, dtype=torch.float64)
    if torch.any(f <= 0):
        raise ConfigError("carrier frequency must be positive")
    return torch.log10(f / unit)


class FrequencyMLP(nn.Module):
    def __init__(self, cfg: EmbedConfig):
        super().__init__()
        self.unit = cfg.frequency_unit
        self.net = nn.Sequential(nn.Linear(1, cfg.freq_hidden), nn.ReLU(), nn.Linear(cfg.freq_hidden, cfg.embed_dim))

    def forward(self, freq_hz) -> torch.Tensor:
        x = frequency_input(freq_hz, self.unit).reshape(-1, 1)
        x = x.to(self.net[0].weight.dtype)
        return self.net(x).unsqueeze(1)  # (B, 1, E)


def fuse(rgb: torch.Tensor | None, depth: torch.Tensor | None, freq: torch.Tensor) -> FusedSequence:
    """Concatenate (rgb, depth, frequency) along the token axis.

    A missing stream contributes zero tokens.
    """
    parts = [t for t in (rgb, depth) if t is not None] + [freq]
    width = {p.shape[-1] for p in parts}
    if len(width) != 1:
        raise ShapeMismatchError(f"embedding widths differ: {sorted(width)}")
    n_r = 0 if rgb is None else rgb.shape[1]
    n_d = 0 if depth is None else depth.shape[1]
    return FusedSequence(torch.cat(parts, dim=1), n_r, n_d)


MODALITIES = ("rgb", "depth")


class Embedding(nn.Module):
    """Per-stream patchifiers with their own position tables, plus the frequency MLP."""

    def __init__(self, cfg: EmbedConfig, modalities=MODALITIES, generator: torch.Generator | None = None):
        super().__init__()
        cfg.validate()
        modalities = tuple(modalities)
        if not modalities or any(m not in MODALITIES for m in modalities):
            raise ConfigError(f"modalities must be a non-empty subset of {MODALITIES}, got {modalities}")
        self.cfg = cfg
        self.modalities = modalities
        self.patch = nn.ModuleDict()
        n, e = cfg.n_patches, cfg.embed_dim
        for name in modalities:
            self.patch[name] = PatchEmbed(3 if name == "rgb" else 1, cfg)
            table = torch.randn(n, e, generator=generator) * cfg.position_std
            if cfg.trainable_positions:
                self.register_parameter(f"pos_{name}", nn.Parameter(table))
            else:
                self.register_buffer(f"pos_{name}", table)
        self.freq = FrequencyMLP(cfg)

    def position_table(self, name: str) -> torch.Tensor:
        return getattr(self, f"pos_{name}")

    def stream(self, name: str, image: torch.Tensor) -> torch.Tensor:
        return add_positions(self.patch[name](image), self.position_table(name))

    def forward(self, rgb: torch.Tensor | None, depth: torch.Tensor | None, freq_hz) -> FusedSequence:
        r = self.stream("rgb", rgb) if "rgb" in self.modalities else None
        d = self.stream("depth", depth) if "depth" in self.modalities else None
        return fuse(r, d, self.freq(freq_hz))


def normalize_rgb(rgb_u8) -> torch.Tensor:
    """(..., r, r, 3) uint8 -> (..., 3, r, r) float in [0, 1]."""
    x = torch.as_tensor(rgb_u8).to(torch.float32) / 255.0
    return x.movedim(-1, -3)


def normalize_depth(depth_m, depth_scale: float) -> torch.Tensor:
    """(..., r, r) meters -> (..., 1, r, r) clamped to [0, 1]."""
    x = torch.as_tensor(depth_m).to(torch.float32) / depth_scale
    return x.clamp(0.0, 1.0).unsqueeze(-3)

