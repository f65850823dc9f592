"""Token-to-grid bridge and the transposed-convolution pathloss decoder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeMismatchError


def default_channels(embed_dim: int, n_stages: int) -> list[int]:
    """[E, 256, 64, 16] for the three-stage wide model; otherwise halve per stage."""
    if n_stages == 3 and embed_dim > 256:
        return [embed_dim, 256, 64, 16]
    return [embed_dim] + [max(1, embed_dim >> (i + 1)) for i in range(n_stages)]


@dataclass
class DecoderConfig:
    n_stages: int = 3
    embed_dim: int = 128
    patch_side: int = 8
    channels: list[int] | None = None
    leaky_slope: float = 0.2
    kernel: int = 4
    output_head: bool = True

    @property
    def channel_plan(self) -> list[int]:
        return list(self.channels) if self.channels else default_channels(self.embed_dim, self.n_stages)

    @property
    def output_side(self) -> int:
        return self.patch_side * 2**self.n_stages

    def validate(self):
        plan = self.channel_plan
        if self.n_stages < 1:
            raise ConfigError(f"n_stages must be >= 1, got {self.n_stages}")
        if len(plan) != self.n_stages + 1 or plan[0] != self.embed_dim:
            raise ConfigError(f"channel plan {plan} must have n_stages+1 entries starting at {self.embed_dim}")
        if any(b >= a for a, b in zip(plan, plan[1:])) or plan[-1] < 1:
            raise ConfigError(f"channel plan {plan} must strictly decrease to >= 1")


def tokens_to_grid(tokens: torch.Tensor, n_r: int, n_d: int, norm: nn.Module | None = None) -> torch.Tensor:
    """Fold a (B, n_r + n_d + 1, E) sequence into a (B, E, n_p, n_p) grid.

    The rgb and depth tokens of each patch are summed, the frequency token
    (last row) is broadcast onto every cell, and the result is layer-normed.
    One of the two streams may be absent (count 0).
    """
    b, length, e = tokens.shape
    if length != n_r + n_d + 1:
        raise ShapeMismatchError(f"sequence length {length} != {n_r} + {n_d} + 1")
    if n_r and n_d and n_r != n_d:
        raise ShapeMismatchError(f"stream lengths differ: {n_r} vs {n_d}")
    n = max(n_r, n_d)
    side = math.isqrt(n)
    if n == 0 or side * side != n:
        raise ShapeMismatchError(f"stream length {n} is not a positive perfect square")
    cells = tokens[:, -1:]
    if n_r:
        cells = cells + tokens[:, :n_r]
    if n_d:
        cells = cells + tokens[:, n_r : n_r + n_d]
    if norm is not None:
        cells = norm(cells)
    return cells.transpose(1, 2).reshape(b, e, side, side)


class UpStage(nn.Sequential):
    """Transposed conv (k=4, s=2, p=1) -> batch norm -> LeakyReLU; doubles the side."""

    def __init__(self, c_in, c_out, slope, kernel=4):
        super().__init__(
            nn.ConvTranspose2d(c_in, c_out, kernel_size=kernel, stride=2, padding=(kernel - 2) // 2),
            nn.BatchNorm2d(c_out),
            nn.LeakyReLU(slope),
        )


class Decoder(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        plan = cfg.channel_plan
        self.grid_norm = nn.LayerNorm(cfg.embed_dim)
        self.stages = nn.ModuleList(UpStage(a, b, cfg.leaky_slope, cfg.kernel) for a, b in zip(plan, plan[1:]))
        self.head = nn.Conv2d(plan[-1], 1, kernel_size=1) if cfg.output_head else None

    def decode_grid(self, grid: torch.Tensor) -> torch.Tensor:
        """(B, E, n_p, n_p) feature grid -> (B, p, p) map in (0, 1)."""
        c = self.cfg
        if grid.ndim != 4 or grid.shape[1:] != (c.embed_dim, c.patch_side, c.patch_side):
            raise ShapeMismatchError(
                f"expected grid (B, {c.embed_dim}, {c.patch_side}, {c.patch_side}), got {tuple(grid.shape)}"
            )
        x = grid
        for stage in self.stages:
            x = stage(x)
        if self.head is not None:
            x = torch.sigmoid(self.head(x))
        return x[:, 0] if x.shape[1] == 1 else x

    def forward(self, tokens: torch.Tensor, n_r: int, n_d: int) -> torch.Tensor:
        return self.decode_grid(tokens_to_grid(tokens, n_r, n_d, self.grid_norm))
