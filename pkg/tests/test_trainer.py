import copy
import json
import statistics

import numpy as np
import pytest
import torch

from somgen.dataset import ConditionTag
from somgen.errors import ConfigError, DataError, DivergenceError
from somgen.model import PathlossGenerator, count_parameters
from somgen.trainer import (
    EvalReport,
    MetricsLog,
    TrainConfig,
    TransferPlan,
    _mse,
    ablate_modalities,
    evaluate_nmse,
    few_shot_transfer,
    load_checkpoint,
    nmse,
    predict_db,
    report_costs,
    save_checkpoint,
    train,
)

from conftest import tensors_for, tiny_model_config

CROSS = ConditionTag("crossroad", 50.0, 28e9)
WIDE = ConditionTag("widelane", 200.0, 28e9)


@pytest.fixture(scope="module")
def tiny_cfg():
    return tiny_model_config()


@pytest.fixture(scope="module")
def cross(tiny_cfg):
    return tensors_for(CROSS, 40, tiny_cfg, grid_size=8)


@pytest.fixture(scope="module")
def wide(tiny_cfg):
    return tensors_for(WIDE, 40, tiny_cfg, grid_size=8)


def test_nmse_hand_cases():
    p = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert nmse(p, p) == 0.0
    assert nmse(np.zeros((3, 2, 2)), np.stack([p, 2 * p, p + 1])) == pytest.approx(1.0, abs=1e-12)
    assert nmse(np.array([[1.0, 1.0], [0.0, 1.0]]), p) == pytest.approx(0.5, abs=1e-12)


def test_nmse_single_ratio_vs_per_sample():
    truth = np.stack([np.full((2, 2), 1.0), np.full((2, 2), 10.0)])
    pred = truth + np.stack([np.full((2, 2), 1.0), np.zeros((2, 2))])
    assert nmse(pred, truth) == pytest.approx(4.0 / 404.0)
    assert nmse(pred, truth, per_sample=True) == pytest.approx(0.5)
    with pytest.raises(DataError):
        nmse(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))
    with pytest.raises(ConfigError):
        nmse(np.zeros((2, 2)), np.zeros((3, 3)))


def test_snapshot_tensors(cross, tiny_cfg):
    data = cross["train"]
    assert len(data) == 24 and len(cross["val"]) == 8 and len(cross["test"]) == 8
    assert data.rgb.shape == (24, 3, 8, 8) and data.depth.shape == (24, 1, 8, 8)
    assert data.target.shape == (24, 8, 8) and data.truth_db.shape == (24, 8, 8)
    # same grid size: bilinear resampling is the identity
    torch.testing.assert_close(data.target * 255, data.truth_db)
    sub = data.subset([3, 1])
    assert sub.ids == [data.ids[3], data.ids[1]] and torch.equal(sub.rgb[0], data.rgb[3])


def test_training_reduces_loss_and_respects_freeze(cross, tiny_cfg):
    firsts, lasts = [], []
    for seed in range(3):
        model = PathlossGenerator(tiny_cfg, seed=seed)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        res = train(model, cross["train"], TrainConfig(batch_size=8, lr=3e-3, epochs=20, seed=seed))
        firsts.append(res.history[0]["train_mse"])
        lasts.append(res.history[19]["train_mse"])
        params = dict(model.named_parameters())
        for n in model.frozen_names():
            assert torch.equal(params[n], before[n])
        assert any(not torch.equal(params[n], before[n]) for n in params if n.startswith("decoder."))
    assert statistics.median(lasts) < statistics.median(firsts)


def test_training_deterministic(cross, tiny_cfg):
    finals = []
    for _ in range(2):
        model = PathlossGenerator(tiny_cfg, seed=4)
        train(model, cross["train"], TrainConfig(batch_size=8, lr=1e-3, epochs=3, seed=4), cross["val"])
        finals.append(model.state_dict())
    for k in finals[0]:
        assert torch.equal(finals[0][k], finals[1][k])


def test_best_val_weights_and_metrics_log(cross, tiny_cfg, tmp_path):
    model = PathlossGenerator(tiny_cfg)
    log = MetricsLog(tmp_path / "m.jsonl")
    res = train(model, cross["train"], TrainConfig(batch_size=8, lr=1e-2, epochs=6), cross["val"], log)
    vals = [row["val_mse"] for row in res.history]
    assert res.best_val == min(vals) and res.best_epoch == 1 + vals.index(min(vals))
    assert _mse(model, cross["val"]) == pytest.approx(res.best_val, rel=1e-6)
    lines = [json.loads(x) for x in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert len(lines) == 12
    assert {tuple(sorted(x)) for x in lines} == {("metric", "split", "step", "value")}
    assert {x["split"] for x in lines} == {"train", "val"}


def test_max_steps(cross, tiny_cfg):
    res = train(PathlossGenerator(tiny_cfg), cross["train"], TrainConfig(batch_size=8, epochs=50, max_steps=7))
    assert res.steps == 7


def test_train_errors(cross, tiny_cfg):
    model = PathlossGenerator(tiny_cfg)
    with pytest.raises(DataError):
        train(model, cross["test"], TrainConfig(batch_size=16))
    with pytest.raises(ConfigError):
        train(model, cross["train"], TrainConfig(lr=0))
    with torch.no_grad():
        model.decoder.head.bias.fill_(float("nan"))
    with pytest.raises(DivergenceError):
        train(model, cross["train"], TrainConfig(batch_size=8, epochs=1))


def test_evaluate_report(cross, tiny_cfg):
    model = PathlossGenerator(tiny_cfg)
    rep = evaluate_nmse(model, cross["test"])
    assert isinstance(rep, EvalReport) and rep.n_test == 8 and rep.nmse >= 0
    pred = predict_db(model, cross["test"]).numpy()
    assert rep.nmse == nmse(pred, cross["test"].truth_db.numpy())
    assert rep.per_condition == {CROSS.key: rep.nmse}
    counts = count_parameters(model)
    assert (rep.trainable_params, rep.total_params) == (counts["trainable"], counts["total"])


def test_prediction_resampled_to_truth_grid(tiny_cfg):
    data = tensors_for(CROSS, 5, tiny_cfg, grid_size=4)["test"]
    assert predict_db(PathlossGenerator(tiny_cfg), data).shape == (1, 4, 4)


def test_ablation_variants(cross, tiny_cfg):
    for mods in (("rgb",), ("depth",)):
        model = PathlossGenerator(tiny_model_config(modalities=mods))
        seq = model.embed(cross["test"].rgb, cross["test"].depth, cross["test"].freq)
        assert seq.tokens.shape[1] == tiny_cfg.embed.n_patches + 1
    rep = ablate_modalities(tiny_cfg, cross["train"], cross["val"], cross["test"], TrainConfig(batch_size=8, epochs=1), seeds=(0, 1))
    assert set(rep) == {"rgb-only", "depth-only", "rgb-d"}
    for v in rep.values():
        assert len(v["per_seed"]) == 2 and v["median"] == statistics.median(v["per_seed"])


def test_few_shot_transfer(cross, wide, tiny_cfg):
    model = PathlossGenerator(tiny_cfg)
    train(model, cross["train"], TrainConfig(batch_size=8, lr=3e-3, epochs=2))
    reference = copy.deepcopy(model.state_dict())
    plan = TransferPlan(source=[CROSS.key], target=WIDE.key, k_list=[0, 4, 16], finetune_epochs=2, seeds=[0, 1], batch_size=8)
    curve = few_shot_transfer(model, plan, wide["train"], wide["test"])
    assert curve["k"] == [0, 4, 16]
    assert curve["per_seed"][0][0] == evaluate_nmse(model, wide["test"]).nmse == curve["zero_shot"]
    assert len(curve["median"]) == 3
    for k, v in reference.items():  # the source checkpoint itself is never modified
        assert torch.equal(model.state_dict()[k], v)
    again = few_shot_transfer(model, plan, wide["train"], wide["test"])
    assert again["per_seed"] == curve["per_seed"]


def test_transfer_hygiene(cross, wide, tiny_cfg):
    model = PathlossGenerator(tiny_cfg)
    plan = TransferPlan(source=[CROSS.key], target=WIDE.key, k_list=[0, 100])
    with pytest.raises(DataError):
        few_shot_transfer(model, plan, wide["train"], wide["test"])
    plan = TransferPlan(source=[CROSS.key], target=WIDE.key, k_list=[0, 4])
    with pytest.raises(DataError):
        few_shot_transfer(model, plan, wide["test"], wide["test"])
    with pytest.raises(ConfigError):
        TransferPlan(source=[CROSS.key], target=WIDE.key, k_list=[32, 0]).validate()
    with pytest.raises(ConfigError):
        TransferPlan(source=[WIDE.key], target=WIDE.key).validate()


def test_report_costs_counts(tiny_cfg):
    model = PathlossGenerator(tiny_cfg)
    rep = report_costs(model, batch_size=2, steps=3, warmup=1)
    assert rep["total_params"] == sum(p.numel() for p in model.parameters())
    assert rep["trainable_params"] == sum(p.numel() for p in model.parameters() if p.requires_grad)
    frozen = sum(p.numel() for n, p in model.named_parameters() if n in model.frozen_names())
    assert rep["total_params"] - rep["trainable_params"] == frozen > 0
    assert sum(g["total"] for g in rep["groups"].values()) == rep["total_params"]
    assert set(rep["groups"]) == {"embed", "backbone", "decoder"}
    assert rep["train_step_ms"] > 0 and rep["inference_ms"] > 0


def test_checkpoint_round_trip(cross, tiny_cfg, tmp_path):
    model = PathlossGenerator(tiny_cfg, seed=2)
    train(model, cross["train"], TrainConfig(batch_size=8, epochs=1))
    save_checkpoint(model, tmp_path / "ck", extra={"note": 1})
    loaded, sidecar = load_checkpoint(tmp_path / "ck")
    assert sidecar["note"] == 1
    for k, v in model.state_dict().items():
        assert torch.equal(loaded.state_dict()[k], v)
    assert loaded.frozen_names() == model.frozen_names()
    d = cross["test"]
    with torch.no_grad():
        assert torch.equal(loaded(d.rgb, d.depth, d.freq), model.eval()(d.rgb, d.depth, d.freq))
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nothing")
