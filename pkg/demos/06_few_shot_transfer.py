"""Adapt a crossroad-trained model to the wide-lane scenario with a few maps.

Trains a source model, then fine-tunes copies on k = 0, 8, 32 target maps.
Takes a few minutes on one CPU core.
"""
import torch

from somgen.config import load_config
from somgen.dataset import ConditionTag, DatasetManifest, ManifestEntry, build_records, split
from somgen.model import PathlossGenerator
from somgen.trainer import SnapshotTensors, TrainConfig, TransferPlan, few_shot_transfer, train

torch.set_num_threads(1)
cfg = load_config().model_config()


def splits(cond, n):
    recs = list(build_records(cond, n, seed=0))
    m = split(DatasetManifest([ManifestEntry(r.id, cond, "") for r in recs], {}), seed=0)
    by_id = {r.id: r for r in recs}
    return {s: SnapshotTensors([by_id[i] for i in m.ids(split=s)], cfg.embed, cfg.decode.output_side)
            for s in ("train", "val", "test")}


source_cond = ConditionTag("crossroad", 50.0, 28e9)
target_cond = ConditionTag("widelane", 200.0, 28e9)
source, target = splits(source_cond, 100), splits(target_cond, 80)

model = PathlossGenerator(cfg, seed=0)
train(model, source["train"], TrainConfig(batch_size=16, lr=1e-3, epochs=15), source["val"])

plan = TransferPlan(source=[source_cond.key], target=target_cond.key, k_list=[0, 8, 32],
                    finetune_epochs=15, seeds=[0], batch_size=8, lr=1e-3)
curve = few_shot_transfer(model, plan, target["train"], target["test"])
for k, v in zip(curve["k"], curve["median"]):
    print(f"k = {k:3d}: target test NMSE {v:.4f}")
