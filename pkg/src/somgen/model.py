"""Embedding -> frozen backbone -> decoder, assembled into one module."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .backbone import BackboneConfig, apply_freeze_policy, build_backbone
from .decode import Decoder, DecoderConfig
from .embed import MODALITIES, EmbedConfig, Embedding
from .errors import ConfigError


@dataclass
class ModelConfig:
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    decode: DecoderConfig = field(default_factory=DecoderConfig)
    modalities: tuple = MODALITIES
    freeze: bool = True

    def validate(self):
        self.embed.validate()
        self.backbone.validate()
        self.decode.validate()
        e = self.embed.embed_dim
        if self.backbone.embed_dim != e or self.decode.embed_dim != e:
            raise ConfigError(
                f"embed dims disagree: embed {e}, backbone {self.backbone.embed_dim}, decode {self.decode.embed_dim}"
            )
        if self.decode.patch_side != self.embed.patch_side:
            raise ConfigError(
                f"decoder patch side {self.decode.patch_side} != resolution/kernel = {self.embed.patch_side}"
            )
        n_tokens = len(self.modalities) * self.embed.n_patches + 1
        if n_tokens > self.backbone.max_len:
            raise ConfigError(f"{n_tokens} tokens exceed backbone max_len {self.backbone.max_len}")


class PathlossGenerator(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        # fork so model construction never disturbs the caller's RNG stream
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(seed))
            self.embed = Embedding(cfg.embed, cfg.modalities)
            self.backbone = build_backbone(cfg.backbone, seed)
            self.decoder = Decoder(cfg.decode)
        self.partition = apply_freeze_policy(self, "backbone.") if cfg.freeze else None

    @property
    def output_side(self) -> int:
        return self.cfg.decode.output_side

    def forward(self, rgb, depth, freq_hz) -> torch.Tensor:
        seq = self.embed(rgb, depth, freq_hz)
        ctx = self.backbone(seq.tokens)
        return self.decoder(ctx, seq.n_r, seq.n_d)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def frozen_names(self) -> frozenset:
        return self.partition.frozen if self.partition is not None else frozenset()


def count_parameters(module: nn.Module) -> dict:
    """Exact element counts, grouped by top-level child, split trainable/total."""
    out = {"total": 0, "trainable": 0, "groups": {}}
    for name, p in module.named_parameters():
        group = name.split(".", 1)[0]
        g = out["groups"].setdefault(group, {"total": 0, "trainable": 0})
        n = p.numel()
        g["total"] += n
        out["total"] += n
        if p.requires_grad:
            g["trainable"] += n
            out["trainable"] += n
    return out

