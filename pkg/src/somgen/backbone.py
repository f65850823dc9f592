"""GPT-2 shaped transformer stack with a layer-norm-only trainable partition.

Parameter names and layouts follow the GPT-2 convention (``h.{i}.attn.c_attn``
and friends, projection weights stored ``(in, out)``) so converted GPT-2
checkpoints can be imported without renaming or transposing.

Weight files are a flat sequence of records, read until EOF::

    u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank] | float32 payload

with every integer and float little-endian.
"""
from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, MissingTensorError, ShapeMismatchError, WeightFileError

FROZEN_SUBMODULES = (".attn.", ".mlp.")


@dataclass
class BackboneConfig:
    n_layers: int = 2
    embed_dim: int = 128
    n_heads: int = 4
    mlp_ratio: int = 4
    causal: bool = True
    source: str = "random_init"  # or "imported_weights"
    weight_file: str | None = None
    max_len: int = 1024

    def validate(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1 or self.embed_dim % self.n_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.source not in ("random_init", "imported_weights"):
            raise ConfigError(f"unknown backbone source {self.source!r}")
        if self.source == "imported_weights" and not self.weight_file:
            raise ConfigError("source=imported_weights needs weight_file")


@dataclass
class ParamPartition:
    frozen: frozenset
    trainable: frozenset


class Conv1D(nn.Module):
    """Affine map with GPT-2's ``(in, out)`` weight layout."""

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_in, n_out))
        self.bias = nn.Parameter(torch.zeros(n_out))

    def forward(self, x):
        return torch.addmm(self.bias, x.reshape(-1, x.shape[-1]), self.weight).reshape(*x.shape[:-1], -1)


class Attention(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        e = cfg.embed_dim
        self.n_heads = cfg.n_heads
        self.causal = cfg.causal
        self.c_attn = Conv1D(e, 3 * e)
        self.c_proj = Conv1D(e, e)

    def forward(self, x):
        b, t, e = x.shape
        q, k, v = self.c_attn(x).split(e, dim=-1)
        hd = e // self.n_heads
        q, k, v = (z.reshape(b, t, self.n_heads, hd).transpose(1, 2) for z in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        if self.causal:
            mask = torch.ones(t, t, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(mask, float("-inf"))
        out = F.softmax(scores, dim=-1) @ v
        return self.c_proj(out.transpose(1, 2).reshape(b, t, e))


class MLP(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        hidden = cfg.mlp_ratio * cfg.embed_dim
        self.c_fc = Conv1D(cfg.embed_dim, hidden)
        self.c_proj = Conv1D(hidden, cfg.embed_dim)

    def forward(self, x):
        return self.c_proj(F.gelu(self.c_fc(x), approximate="tanh"))


class Block(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.ln_1 = nn.LayerNorm(cfg.embed_dim, eps=1e-5)
        self.attn = Attention(cfg)
        self.ln_2 = nn.LayerNorm(cfg.embed_dim, eps=1e-5)
        self.mlp = MLP(cfg)

    def forward(self, x):
        x = x + self.attn(self.ln_1(x))
        return x + self.mlp(self.ln_2(x))


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.h = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.embed_dim, eps=1e-5)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.cfg.embed_dim:
            raise ShapeMismatchError(f"token width {tokens.shape[-1]} != {self.cfg.embed_dim}")
        if tokens.shape[-2] > self.cfg.max_len:
            raise ShapeMismatchError(f"sequence length {tokens.shape[-2]} exceeds {self.cfg.max_len}")
        x = tokens
        for block in self.h:
            x = block(x)
        return self.ln_f(x)


def _init_weights(backbone: Backbone, generator: torch.Generator):
    # GPT-2 init: N(0, 0.02) weights, residual projections scaled by depth
    std = 0.02
    with torch.no_grad():
        for name, p in backbone.named_parameters():
            if name.endswith("weight") and p.ndim == 2:
                scale = std / math.sqrt(2 * backbone.cfg.n_layers) if name.endswith("c_proj.weight") else std
                p.copy_(torch.randn(p.shape, generator=generator) * scale)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.fill_(1.0)


def build_backbone(cfg: BackboneConfig, seed: int = 0) -> Backbone:
    """Deterministically initialised stack; imports weights when configured."""
    backbone = Backbone(cfg)
    _init_weights(backbone, torch.Generator().manual_seed(int(seed)))
    if cfg.source == "imported_weights":
        import_weights(backbone, cfg.weight_file)
    return backbone


def apply_freeze_policy(module: nn.Module, prefix: str = "") -> ParamPartition:
    """Freeze every attention and feed-forward tensor; leave layer norms trainable.

    ``prefix`` selects a sub-tree when ``module`` is a full model, e.g.
    ``"backbone."``; parameters outside it are left untouched and excluded
    from the partition.
    """
    frozen, trainable = set(), set()
    for name, p in module.named_parameters():
        if not name.startswith(prefix):
            continue
        local = "." + name[len(prefix) :]
        if any(tag in local for tag in FROZEN_SUBMODULES):
            p.requires_grad_(False)
            frozen.add(name)
        else:
            trainable.add(name)
    return ParamPartition(frozenset(frozen), frozenset(trainable))


def write_weight_file(path, tensors) -> None:
    with open(path, "wb") as fh:
        for name, value in tensors.items():
            arr = np.ascontiguousarray(
                value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else value, dtype="<f4"
            )
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_weight_file(path) -> "OrderedDict[str, np.ndarray]":
    data = Path(path).read_bytes()
    out = OrderedDict()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise WeightFileError(f"{path}: truncated at byte {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).copy()
    return out


def import_weights(backbone: Backbone, weight_file) -> Backbone:
    """Copy the first ``n_layers`` blocks (and ``ln_f`` if present) from a file.

    A leading ``transformer.`` on names is accepted; extra layers and any
    other tensors are ignored.
    """
    raw = read_weight_file(weight_file)
    tensors = {(k[len("transformer.") :] if k.startswith("transformer.") else k): v for k, v in raw.items()}
    updates = {}
    for name, p in backbone.state_dict().items():
        if name.startswith("ln_f."):
            if name not in tensors:
                continue
        elif name not in tensors:
            raise MissingTensorError(f"{weight_file}: missing tensor {name!r}")
        src = tensors[name]
        if tuple(src.shape) != tuple(p.shape):
            raise ShapeMismatchError(f"{name}: file has {tuple(src.shape)}, model expects {tuple(p.shape)}")
        updates[name] = torch.from_numpy(src).to(p.dtype)
    with torch.no_grad():
        state = backbone.state_dict()
        for name, value in updates.items():
            state[name].copy_(value)
    return backbone
