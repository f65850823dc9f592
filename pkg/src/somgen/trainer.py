"""Training, NMSE evaluation, modality ablation, few-shot transfer, cost reports."""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import BackboneConfig, read_weight_file, write_weight_file
from .dataset import SnapshotRecord
from .decode import DecoderConfig
from .embed import EmbedConfig, normalize_depth, normalize_rgb
from .errors import ConfigError, DataError, DivergenceError, WeightFileError
from .model import ModelConfig, PathlossGenerator, count_parameters

log = logging.getLogger(__name__)

DB_SCALE = 255.0


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    epochs: int = 50
    seed: int = 0
    max_steps: int | None = None
    weight_decay: float = 0.0

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


class SnapshotTensors:
    """Model-ready tensors for a list of snapshot records.

    ``target`` is the quantized dB map divided by 255 and bilinearly resampled
    to the decoder resolution; ``truth_db`` keeps the stored maps untouched.
    """

    def __init__(self, records: list[SnapshotRecord], embed_cfg: EmbedConfig, output_side: int):
        if not records:
            raise DataError("no records")
        self.ids = [r.id for r in records]
        self.conditions = [r.condition.key for r in records]
        self.rgb = normalize_rgb(np.stack([r.rgb.payload for r in records]))
        self.depth = normalize_depth(np.stack([r.depth.payload for r in records]), embed_cfg.depth_scale)
        self.freq = torch.tensor([r.frequency_hz for r in records], dtype=torch.float64)
        self.truth_db = torch.from_numpy(np.stack([r.pathloss.values for r in records]).astype(np.float32))
        self.target = F.interpolate(
            self.truth_db[:, None] / DB_SCALE, size=(output_side, output_side), mode="bilinear", align_corners=False
        )[:, 0]

    def __len__(self):
        return len(self.ids)

    def subset(self, index) -> "SnapshotTensors":
        index = list(index)
        out = copy.copy(self)
        out.ids = [self.ids[i] for i in index]
        out.conditions = [self.conditions[i] for i in index]
        idx = torch.as_tensor(index, dtype=torch.long)
        for name in ("rgb", "depth", "freq", "truth_db", "target"):
            setattr(out, name, getattr(self, name)[idx])
        return out

    def batch(self, idx):
        return self.rgb[idx], self.depth[idx], self.freq[idx], self.target[idx]


class MetricsLog:
    """Line-delimited JSON metric records ``{step, split, metric, value}``."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def emit(self, step, split, metric, value):
        rec = {"step": int(step), "split": split, "metric": metric, "value": float(value)}
        self.records.append(rec)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")


@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # per-epoch dicts
    steps: int = 0
    best_epoch: int | None = None
    best_val: float | None = None


def _mse(model, data: SnapshotTensors, batch_size=64) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            idx = torch.arange(start, min(start + batch_size, len(data)))
            rgb, depth, freq, target = data.batch(idx)
            pred = model(rgb, depth, freq)
            total += float(((pred - target) ** 2).sum())
            count += target.numel()
    return total / count


def train(model: PathlossGenerator, train_data: SnapshotTensors, cfg: TrainConfig, val_data=None, metrics=None):
    """Fit the trainable partition with Adam on the MSE of normalized maps.

    With ``val_data`` the weights of the best validation epoch are restored
    at the end; otherwise the final weights are kept.
    """
    cfg.validate()
    if train_data is None or len(train_data) == 0:
        raise DataError("empty training split")
    if len(train_data) < cfg.batch_size:
        raise DataError(f"{len(train_data)} training records < batch size {cfg.batch_size}")
    metrics = metrics or MetricsLog()
    params = model.trainable_parameters()
    opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(int(cfg.seed))
    result = TrainResult()
    best_state = None
    n = len(train_data)

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = torch.randperm(n, generator=gen)
        running, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            rgb, depth, freq, target = train_data.batch(idx)
            loss = F.mse_loss(model(rgb, depth, freq), target)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {result.steps}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            result.steps += 1
            running += loss.item() * len(idx)
            seen += len(idx)
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                break
        row = {"epoch": epoch, "step": result.steps, "train_mse": running / seen}
        metrics.emit(result.steps, "train", "mse", row["train_mse"])
        if val_data is not None and len(val_data):
            model.eval()
            row["val_mse"] = _mse(model, val_data)
            metrics.emit(result.steps, "val", "mse", row["val_mse"])
            if result.best_val is None or row["val_mse"] < result.best_val:
                result.best_val, result.best_epoch = row["val_mse"], epoch
                best_state = copy.deepcopy(model.state_dict())
        result.history.append(row)
        log.debug("epoch %d: %s", epoch, row)
        if cfg.max_steps is not None and result.steps >= cfg.max_steps:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


def nmse(pred, truth, per_sample: bool = False) -> float:
    """Summed squared error over summed squared truth.

    ``per_sample=True`` instead averages the per-map ratios.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if truth.size == 0:
        raise DataError("empty evaluation set")
    if truth.ndim == 2:
        pred, truth = pred[None], truth[None]
    err = ((pred - truth) ** 2).reshape(len(truth), -1).sum(axis=1)
    energy = (truth**2).reshape(len(truth), -1).sum(axis=1)
    if per_sample:
        if np.any(energy == 0):
            raise DataError("all-zero ground truth map; NMSE undefined")
        return float(np.mean(err / energy))
    if energy.sum() == 0:
        raise DataError("all-zero ground truth; NMSE undefined")
    return float(err.sum() / energy.sum())


def predict_db(model, data: SnapshotTensors, batch_size=64) -> torch.Tensor:
    """Predictions in dB at the stored ground-truth grid resolution."""
    model.eval()
    out = []
    side = data.truth_db.shape[-1]
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            idx = torch.arange(start, min(start + batch_size, len(data)))
            rgb, depth, freq, _ = data.batch(idx)
            pred = model(rgb, depth, freq)[:, None] * DB_SCALE
            if pred.shape[-1] != side:
                pred = F.interpolate(pred, size=(side, side), mode="bilinear", align_corners=False)
            out.append(pred[:, 0])
    return torch.cat(out)


@dataclass
class EvalReport:
    nmse: float
    nmse_per_sample: float
    per_condition: dict
    n_test: int
    trainable_params: int
    total_params: int
    inference_ms: float | None = None
    train_step_ms: float | None = None

    def to_dict(self):
        return dataclasses.asdict(self)


def evaluate_nmse(model, test_data: SnapshotTensors) -> EvalReport:
    if test_data is None or len(test_data) == 0:
        raise DataError("empty test split")
    t0 = time.perf_counter()
    pred = predict_db(model, test_data).numpy()
    elapsed = time.perf_counter() - t0
    truth = test_data.truth_db.numpy()
    per_condition = {}
    conds = np.array(test_data.conditions)
    for key in sorted(set(test_data.conditions)):
        mask = conds == key
        per_condition[key] = nmse(pred[mask], truth[mask])
    counts = count_parameters(model)
    return EvalReport(
        nmse=nmse(pred, truth),
        nmse_per_sample=nmse(pred, truth, per_sample=True),
        per_condition=per_condition,
        n_test=len(test_data),
        trainable_params=counts["trainable"],
        total_params=counts["total"],
        inference_ms=1000.0 * elapsed / len(test_data),
    )


def with_modalities(cfg: ModelConfig, modalities) -> ModelConfig:
    return dataclasses.replace(cfg, modalities=tuple(modalities))


ABLATION_VARIANTS = {"rgb-only": ("rgb",), "depth-only": ("depth",), "rgb-d": ("rgb", "depth")}


def ablate_modalities(model_cfg: ModelConfig, train_data, val_data, test_data, cfg: TrainConfig, seeds=(0, 1, 2)):
    """Train one model per (input variant, seed); report test NMSE and medians."""
    report = {}
    for name, mods in ABLATION_VARIANTS.items():
        scores = []
        for seed in seeds:
            model = PathlossGenerator(with_modalities(model_cfg, mods), seed=seed)
            train(model, train_data, dataclasses.replace(cfg, seed=seed), val_data)
            scores.append(evaluate_nmse(model, test_data).nmse)
            log.info("ablation %s seed %d: nmse %.5f", name, seed, scores[-1])
        report[name] = {"per_seed": scores, "median": statistics.median(scores)}
    return report


@dataclass
class TransferPlan:
    source: list  # condition keys the checkpoint was trained on
    target: str
    k_list: list = field(default_factory=lambda: [0, 32, 128])
    finetune_epochs: int = 30
    seeds: list = field(default_factory=lambda: [0])
    batch_size: int = 16
    lr: float = 1e-4

    def validate(self):
        if list(self.k_list) != sorted(self.k_list) or any(k < 0 for k in self.k_list):
            raise ConfigError(f"k_list must be ascending and non-negative: {self.k_list}")
        if self.target in self.source:
            raise ConfigError(f"target {self.target} is also a source condition")

    def to_dict(self):
        return dataclasses.asdict(self)


def few_shot_transfer(model, plan: TransferPlan, target_pool: SnapshotTensors, target_test: SnapshotTensors):
    """Fine-tune fresh copies of ``model`` on k target samples and evaluate.

    Returns ``{"k": [...], "per_seed": {seed: [nmse per k]}, "median": [...]}``.
    Subsets for one seed are nested: the k samples are the first k of a
    seeded permutation of the target training pool.
    """
    plan.validate()
    if len(target_test) == 0:
        raise DataError("empty target test split")
    k_max = max(plan.k_list) if plan.k_list else 0
    if len(target_pool) < k_max:
        raise DataError(f"target pool has {len(target_pool)} records, plan needs {k_max}")
    if set(target_pool.ids) & set(target_test.ids):
        raise DataError("target fine-tune pool overlaps the target test split")

    zero_shot = evaluate_nmse(model, target_test).nmse
    per_seed = {}
    for seed in plan.seeds:
        perm = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF5])).permutation(len(target_pool))
        scores = []
        for k in plan.k_list:
            if k == 0:
                scores.append(zero_shot)
                continue
            subset = target_pool.subset(perm[:k])
            tuned = copy.deepcopy(model)
            cfg = TrainConfig(
                batch_size=min(plan.batch_size, k), lr=plan.lr, epochs=plan.finetune_epochs, seed=int(seed)
            )
            train(tuned, subset, cfg)
            scores.append(evaluate_nmse(tuned, target_test).nmse)
            log.info("transfer seed %d k=%d: nmse %.5f", seed, k, scores[-1])
        per_seed[int(seed)] = scores
    medians = [statistics.median(per_seed[s][i] for s in per_seed) for i in range(len(plan.k_list))]
    return {"k": list(plan.k_list), "per_seed": per_seed, "median": medians, "zero_shot": zero_shot}


def report_costs(model: PathlossGenerator, batch_size: int = 1, steps: int = 50, warmup: int = 5) -> dict:
    """Exact parameter counts and mean train-step / inference wall times (ms)."""
    counts = count_parameters(model)
    cfg = model.cfg
    r = cfg.embed.resolution
    side = cfg.decode.output_side
    gen = torch.Generator().manual_seed(0)
    rgb = torch.rand(batch_size, 3, r, r, generator=gen)
    depth = torch.rand(batch_size, 1, r, r, generator=gen)
    freq = torch.full((batch_size,), 28e9, dtype=torch.float64)
    target = torch.rand(batch_size, side, side, generator=gen)

    work = copy.deepcopy(model)
    opt = torch.optim.Adam(work.trainable_parameters(), lr=1e-4)
    work.train()

    def step():
        loss = F.mse_loss(work(rgb, depth, freq), target)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    for _ in range(warmup):
        step()
    t0 = time.perf_counter()
    for _ in range(steps):
        step()
    train_ms = 1000.0 * (time.perf_counter() - t0) / steps

    work.eval()
    with torch.no_grad():
        for _ in range(warmup):
            work(rgb, depth, freq)
        t0 = time.perf_counter()
        for _ in range(steps):
            work(rgb, depth, freq)
    infer_ms = 1000.0 * (time.perf_counter() - t0) / steps
    return {
        "trainable_params": counts["trainable"],
        "total_params": counts["total"],
        "groups": counts["groups"],
        "train_step_ms": train_ms,
        "inference_ms": infer_ms,
        "batch_size": batch_size,
        "timed_steps": steps,
    }


# checkpoints: all tensors in the backbone weight-file format plus a JSON sidecar


def model_config_to_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["modalities"] = list(cfg.modalities)
    return d


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        embed=EmbedConfig(**d["embed"]),
        backbone=BackboneConfig(**d["backbone"]),
        decode=DecoderConfig(**d["decode"]),
        modalities=tuple(d.get("modalities", ("rgb", "depth"))),
        freeze=bool(d.get("freeze", True)),
    )


def save_checkpoint(model: PathlossGenerator, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_weight_file(directory / "model.bin", {k: v.float() for k, v in model.state_dict().items()})
    cfg = model_config_to_dict(model.cfg)
    # imported weights are already baked into model.bin
    cfg["backbone"]["source"] = "random_init"
    cfg["backbone"]["weight_file"] = None
    sidecar = {"model": cfg, **(extra or {})}
    (directory / "config.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[PathlossGenerator, dict]:
    directory = Path(directory)
    if not (directory / "config.json").exists() or not (directory / "model.bin").exists():
        raise DataError(f"{directory} is not a checkpoint directory")
    sidecar = json.loads((directory / "config.json").read_text())
    model = PathlossGenerator(model_config_from_dict(sidecar["model"]))
    tensors = read_weight_file(directory / "model.bin")
    state = model.state_dict()
    missing = set(state) - set(tensors)
    if missing:
        raise WeightFileError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
    model.load_state_dict({k: torch.from_numpy(tensors[k]).to(v.dtype).reshape(v.shape) for k, v in state.items()})
    model.eval()
    return model, sidecar
