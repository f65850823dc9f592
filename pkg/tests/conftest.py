import copy

import numpy as np
import pytest
import torch

from somgen.backbone import BackboneConfig
from somgen.dataset import ConditionTag, DatasetManifest, ManifestEntry, build_records, split
from somgen.decode import DecoderConfig
from somgen.embed import EmbedConfig
from somgen.model import ModelConfig
from somgen.scene import SceneSpec
from somgen.trainer import SnapshotTensors

torch.set_num_threads(1)


def flat_scene(width=64, cell=2.0, road=True) -> SceneSpec:
    w = width
    return SceneSpec(
        scenario="crossroad",
        cell_size=cell,
        grid=np.zeros((w, w)),
        road_mask=np.full((w, w), road),
        seed=0,
        building_ids=np.zeros((w, w), dtype=np.int32),
    )


def tiny_model_config(embed_dim=8, resolution=8, kernel=4, n_layers=1, heads=2, channels=None, modalities=("rgb", "depth")):
    n_p = resolution // kernel
    return ModelConfig(
        embed=EmbedConfig(kernel=kernel, embed_dim=embed_dim, resolution=resolution, freq_hidden=4),
        backbone=BackboneConfig(n_layers=n_layers, embed_dim=embed_dim, n_heads=heads),
        decode=DecoderConfig(n_stages=2, embed_dim=embed_dim, patch_side=n_p, channels=channels or [embed_dim, 4, 2]),
        modalities=tuple(modalities),
    )


def brute_force_blocked(scene, tx, rx, n=1000) -> bool:
    """Dense-sampling reference for line-of-sight."""
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = tx + t * (rx - tx)
    i, j = scene.cell_index(pts[:, 0], pts[:, 1])
    return bool(np.any(scene.grid[i, j] > pts[:, 2]))


def fd_relative_error(module, make_loss, eps=1e-6, include=None):
    """Relative L2 error between float32 autograd and float64 central differences.

    ``make_loss(module, dtype)`` returns a scalar loss; ``include`` filters
    parameter names. Only parameters with ``requires_grad`` are checked.
    """
    module = module.float()
    names = [n for n, p in module.named_parameters() if p.requires_grad and (include is None or include(n))]
    module.zero_grad()
    make_loss(module, torch.float32).backward()
    params32 = dict(module.named_parameters())
    analytic = torch.cat([params32[n].grad.detach().double().flatten() for n in names])

    ref = copy.deepcopy(module).double()
    params64 = dict(ref.named_parameters())
    numeric = []
    with torch.no_grad():
        for n in names:
            flat = params64[n].view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                up = make_loss(ref, torch.float64).item()
                flat[k] = orig - eps
                down = make_loss(ref, torch.float64).item()
                flat[k] = orig
                numeric.append((up - down) / (2 * eps))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    return float((analytic - numeric).norm() / numeric.norm()), len(numeric)


def tensors_for(condition: ConditionTag, n: int, model_cfg: ModelConfig, seed=0, **kw):
    recs = list(build_records(condition, n, seed, resolution=model_cfg.embed.resolution, **kw))
    manifest = split(DatasetManifest([ManifestEntry(r.id, condition, "") for r in recs], {}), seed)
    by_id = {r.id: r for r in recs}
    side = model_cfg.decode.output_side
    return {
        s: SnapshotTensors([by_id[i] for i in manifest.ids(split=s)], model_cfg.embed, side)
        for s in ("train", "val", "test")
    }


@pytest.fixture(scope="session")
def toy_records():
    cond = ConditionTag("crossroad", 50.0, 28e9)
    return list(build_records(cond, 16, 0))


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, ok: bool, detail: str, seconds: float) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} [{seconds:.1f} s]"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
