"""Walk one batch through the generator and count what is frozen."""
import torch

from somgen.config import load_config
from somgen.decode import tokens_to_grid
from somgen.model import PathlossGenerator, count_parameters

for profile in ("desk", "paper"):
    cfg = load_config(profile=profile).model_config()
    model = PathlossGenerator(cfg).eval()
    rgb, depth = torch.rand(2, 3, 64, 64), torch.rand(2, 1, 64, 64)
    with torch.no_grad():
        seq = model.embed(rgb, depth, [28e9, 1.6e9])
        ctx = model.backbone(seq.tokens)
        grid = tokens_to_grid(ctx, seq.n_r, seq.n_d, model.decoder.grid_norm)
        out = model.decoder.decode_grid(grid)
    print(f"[{profile}] E={cfg.embed.embed_dim}, {cfg.backbone.n_layers} layers")
    print(f"  tokens per stream {seq.n_r}, fused {tuple(seq.tokens.shape)}, backbone {tuple(ctx.shape)}")
    print(f"  grid {tuple(grid.shape)}, decoder channels {cfg.decode.channel_plan}, map {tuple(out.shape)}")

    counts = count_parameters(model)
    for group, c in counts["groups"].items():
        print(f"  {group:8s} {c['trainable']:>11,} trainable of {c['total']:>11,}")
    bb = counts["groups"]["backbone"]
    print(f"  backbone frozen fraction {1 - bb['trainable'] / bb['total']:.2%}")

# Only layer norms survive inside the backbone.
model = PathlossGenerator(load_config().model_config())
print("\ntrainable backbone tensors:", sorted(n for n, p in model.backbone.named_parameters() if p.requires_grad))
