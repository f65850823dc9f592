"""Command-line entry point: ``somgen {gen-data,train,eval,transfer,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PROFILES, load_config, save_config
from .dataset import ConditionTag, build_dataset, load_manifest, load_records
from .errors import ConfigError, DataError, SomgenError, TrainingError, WeightFileError
from .trainer import (
    MetricsLog,
    SnapshotTensors,
    TransferPlan,
    evaluate_nmse,
    few_shot_transfer,
    load_checkpoint,
    predict_db,
    report_costs,
    save_checkpoint,
    train,
)

log = logging.getLogger("somgen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4


def _write_json(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config(args):
    cfg = load_config(args.config, profile=args.profile)
    if args.seed is not None:
        cfg.dataset.seed = args.seed
        cfg.train.seed = args.seed
        cfg.model.seed = args.seed
    return cfg


def _split_tensors(manifest, split, model_cfg, conditions=None):
    ids = []
    for cond in conditions or [None]:
        ids += manifest.ids(split=split, condition=cond)
    if not ids:
        return None
    return SnapshotTensors(load_records(manifest, ids), model_cfg.embed, model_cfg.decode.output_side)


def _conditions(keys):
    return None if not keys else [ConditionTag.parse(k) for k in keys]


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    ds = cfg.dataset
    manifest = build_dataset(
        ds.condition_tags(),
        ds.snapshots_per_condition,
        ds.seed,
        out,
        resolution=ds.resolution,
        grid_size=ds.grid_size,
        layouts=cfg.scene.layout_objects(),
        rx_height=cfg.propagation.rx_height,
        diffraction=cfg.propagation.diffraction,
    )
    save_config(cfg, out / "config.json")
    counts = {s: len(manifest.ids(split=s)) for s in ("train", "val", "test")}
    print(json.dumps({"manifest": str(out / "manifest.json"), "records": len(manifest.records), **counts}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import PathlossGenerator

    cfg = _config(args)
    manifest = load_manifest(args.dataset)
    mcfg = cfg.model_config()
    conds = _conditions(cfg.experiment.train_conditions)
    train_data = _split_tensors(manifest, "train", mcfg, conds)
    if train_data is None:
        raise DataError("no training records for the selected conditions")
    val_data = _split_tensors(manifest, "val", mcfg, conds)
    out = Path(args.out)
    model = PathlossGenerator(mcfg, seed=cfg.model.seed)
    result = train(model, train_data, cfg.train, val_data, MetricsLog(out / "metrics.jsonl"))
    save_checkpoint(
        model,
        out,
        extra={
            "train": dataclasses.asdict(cfg.train),
            "train_conditions": [c.key for c in conds] if conds else None,
            "best_epoch": result.best_epoch,
            "steps": result.steps,
        },
    )
    test_data = _split_tensors(manifest, "test", mcfg, conds)
    if test_data is not None:
        report = evaluate_nmse(model, test_data).to_dict()
        _write_json(report, out / "eval.json")
    print(json.dumps({"checkpoint": str(out), "best_epoch": result.best_epoch, "steps": result.steps}))
    return EXIT_OK


def render_comparison(pred_db, truth_db, path: Path):
    """Grayscale PNG: prediction left, ground truth right, pixel = dB."""
    from PIL import Image

    pair = np.concatenate([pred_db, truth_db], axis=1)
    img = np.clip(np.floor(pair + 0.5), 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img[::-1], mode="L").save(path)  # flip so +y points up


def cmd_eval(args) -> int:
    model, sidecar = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.dataset)
    conds = _conditions(args.conditions or sidecar.get("train_conditions"))
    test_data = _split_tensors(manifest, "test", model.cfg, conds)
    if test_data is None:
        raise DataError("empty test split")
    report = evaluate_nmse(model, test_data)
    out = Path(args.out) if args.out else Path(args.checkpoint) / "eval.json"
    _write_json(report.to_dict(), out)
    if args.render:
        pred = predict_db(model, test_data.subset(range(min(args.render, len(test_data))))).numpy()
        for i, rid in enumerate(test_data.ids[: len(pred)]):
            render_comparison(pred[i], test_data.truth_db[i].numpy(), out.parent / "renders" / f"{rid}.png")
    print(json.dumps({"nmse": report.nmse, "n_test": report.n_test, "report": str(out)}))
    return EXIT_OK


def cmd_transfer(args) -> int:
    model, sidecar = load_checkpoint(args.checkpoint)
    if args.plan:
        try:
            plan = TransferPlan(**json.loads(Path(args.plan).read_text()))
        except (OSError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad transfer plan {args.plan}: {exc}") from exc
    else:
        plan = _config(args).transfer_plan()
    if args.seed is not None:
        plan.seeds = [args.seed]
    manifest = load_manifest(args.dataset)
    target = [ConditionTag.parse(plan.target)]
    pool = _split_tensors(manifest, "train", model.cfg, target)
    test = _split_tensors(manifest, "test", model.cfg, target)
    if pool is None or test is None:
        raise DataError(f"dataset has no train/test records for {plan.target}")
    curve = few_shot_transfer(model, plan, pool, test)
    curve["plan"] = plan.to_dict()
    curve["per_seed"] = {str(k): v for k, v in curve["per_seed"].items()}
    out = Path(args.out) if args.out else Path(args.checkpoint) / "transfer.json"
    _write_json(curve, out)
    print(json.dumps({"k": curve["k"], "median": curve["median"], "curve": str(out)}))
    return EXIT_OK


def cmd_report(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    costs = report_costs(model, batch_size=args.batch_size, steps=args.steps)
    out = Path(args.out) if args.out else Path(args.checkpoint) / "costs.json"
    _write_json(costs, out)
    print(json.dumps({k: costs[k] for k in ("trainable_params", "total_params", "train_step_ms", "inference_ms")}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="somgen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON run configuration")
            p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset tree")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset's train split")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="NMSE of a checkpoint on a dataset's test split")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--conditions", nargs="*", help="condition keys such as crossroad/50m/28GHz")
    p.add_argument("--render", type=int, default=0, help="write N prediction/truth PNGs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="few-shot transfer curve")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--plan", help="JSON transfer plan; defaults to the config's experiment.transfer")
    p.add_argument("--out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("report", help="parameter counts and step timings")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, WeightFileError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except SomgenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
