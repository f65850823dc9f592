"""Train the desk-size model on one condition and score it on held-out maps.

About two minutes on one CPU core. Writes prediction/truth PNGs to demos/out/.
"""
from pathlib import Path

import torch

from somgen.cli import render_comparison
from somgen.config import load_config
from somgen.dataset import ConditionTag, DatasetManifest, ManifestEntry, build_records, split
from somgen.model import PathlossGenerator
from somgen.trainer import SnapshotTensors, TrainConfig, evaluate_nmse, predict_db, train

torch.set_num_threads(1)
out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

cfg = load_config().model_config()
cond = ConditionTag("crossroad", 50.0, 28e9)
records = list(build_records(cond, 120, seed=0))
manifest = split(DatasetManifest([ManifestEntry(r.id, cond, "") for r in records], {}), seed=0)
by_id = {r.id: r for r in records}
data = {
    s: SnapshotTensors([by_id[i] for i in manifest.ids(split=s)], cfg.embed, cfg.decode.output_side)
    for s in ("train", "val", "test")
}
print({s: len(d) for s, d in data.items()})

model = PathlossGenerator(cfg, seed=0)
print("untrained test NMSE:", round(evaluate_nmse(model, data["test"]).nmse, 4))
result = train(model, data["train"], TrainConfig(batch_size=16, lr=1e-3, epochs=20), data["val"])
for row in result.history[::4]:
    print(f"  epoch {row['epoch']:2d} train mse {row['train_mse']:.5f} val mse {row['val_mse']:.5f}")
print(f"best epoch {result.best_epoch}")

report = evaluate_nmse(model, data["test"])
print(f"test NMSE {report.nmse:.4f} (per-sample mean {report.nmse_per_sample:.4f}) on {report.n_test} maps")

pred = predict_db(model, data["test"]).numpy()
for i in range(3):
    render_comparison(pred[i], data["test"].truth_db[i].numpy(), out / f"test{i}_pred_vs_truth.png")
print("renders written to", out)
