"""On-disk snapshot records, dataset manifests, and stratified splitting.

Each record is a directory holding ``meta.json`` plus three raw tensor
files with no header:

* ``rgb.u8``        r x r x 3 unsigned bytes, row-major
* ``depth.f32``     r x r little-endian float32 meters, row-major
* ``pathloss.f32``  G x G little-endian float32 quantized dB, row-major

``manifest.json`` at the dataset root lists every record with its condition
tag, relative path, and split assignment.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptRecordError, DataError
from .propagate import PathlossMap, PropagationConfig, pathloss_map, quantize_map
from .scene import (
    SCENARIOS,
    SceneSpec,
    SensingImage,
    UavPose,
    generate_scene,
    render_depth,
    render_rgb,
    sample_trajectory,
)

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")

_TENSORS = {
    "rgb": ("rgb.u8", "uint8"),
    "depth": ("depth.f32", "<f4"),
    "pathloss": ("pathloss.f32", "<f4"),
}


@dataclass(frozen=True)
class ConditionTag:
    scenario: str
    altitude_m: float
    frequency_hz: float

    @property
    def key(self) -> str:
        return f"{self.scenario}/{self.altitude_m:g}m/{self.frequency_hz / 1e9:g}GHz"

    def to_dict(self):
        return {"scenario": self.scenario, "altitude_m": self.altitude_m, "frequency_hz": self.frequency_hz}

    @classmethod
    def from_dict(cls, d):
        return cls(str(d["scenario"]), float(d["altitude_m"]), float(d["frequency_hz"]))

    @classmethod
    def parse(cls, text: str) -> "ConditionTag":
        """Parse ``crossroad/50m/28GHz`` style keys."""
        try:
            scenario, alt, freq = text.split("/")
            return cls(scenario, float(alt.rstrip("m")), float(freq.upper().rstrip("GHZ")) * 1e9)
        except ValueError as exc:
            raise ConfigError(f"cannot parse condition {text!r}") from exc


@dataclass(eq=False)
class SnapshotRecord:
    id: str
    rgb: SensingImage
    depth: SensingImage
    pathloss: PathlossMap  # values are quantized dB stored as float32
    scenario: str
    altitude_m: float
    frequency_hz: float
    pose: UavPose
    seed: int

    @property
    def condition(self) -> ConditionTag:
        return ConditionTag(self.scenario, self.altitude_m, self.frequency_hz)


@dataclass
class ManifestEntry:
    id: str
    condition: ConditionTag
    path: str


@dataclass
class DatasetManifest:
    records: list[ManifestEntry]
    split: dict[str, str]
    format_version: int = FORMAT_VERSION
    seed: int = 0
    root: Path | None = None

    def ids(self, split=None, condition=None):
        out = []
        for entry in self.records:
            if split is not None and self.split.get(entry.id) != split:
                continue
            if condition is not None and entry.condition != condition:
                continue
            out.append(entry.id)
        return out

    def entry(self, record_id):
        for e in self.records:
            if e.id == record_id:
                return e
        raise KeyError(record_id)

    @property
    def conditions(self) -> list[ConditionTag]:
        seen = []
        for e in self.records:
            if e.condition not in seen:
                seen.append(e.condition)
        return seen

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "seed": self.seed,
            "records": [
                {"id": e.id, "condition": e.condition.to_dict(), "path": e.path} for e in self.records
            ],
            "split": {k: self.split[k] for k in sorted(self.split)},
        }

    @classmethod
    def from_dict(cls, d, root=None):
        return cls(
            records=[ManifestEntry(r["id"], ConditionTag.from_dict(r["condition"]), r["path"]) for r in d["records"]],
            split=dict(d.get("split", {})),
            format_version=int(d["format_version"]),
            seed=int(d.get("seed", 0)),
            root=Path(root) if root is not None else None,
        )


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_record(record: SnapshotRecord, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {
        "rgb": np.ascontiguousarray(record.rgb.payload, dtype=np.uint8),
        "depth": np.ascontiguousarray(record.depth.payload, dtype="<f4"),
        "pathloss": np.ascontiguousarray(record.pathloss.values, dtype="<f4"),
    }
    tensors = {}
    for name, arr in arrays.items():
        fname, dtype = _TENSORS[name]
        data = arr.tobytes()
        (directory / fname).write_bytes(data)
        tensors[name] = {"file": fname, "dtype": dtype, "shape": list(arr.shape), "sha256": _sha256(data)}
    pm = record.pathloss
    meta = {
        "format_version": FORMAT_VERSION,
        "id": record.id,
        "scenario": record.scenario,
        "altitude_m": record.altitude_m,
        "frequency_hz": record.frequency_hz,
        "pose": {"x": record.pose.x, "y": record.pose.y, "z": record.pose.z},
        "seed": record.seed,
        "pathloss_grid": {
            "origin": list(pm.grid_origin),
            "spacing": pm.grid_spacing,
            "frequency_hz": pm.frequency_hz,
            "tx_pose": {"x": pm.tx_pose.x, "y": pm.tx_pose.y, "z": pm.tx_pose.z},
        },
        "tensors": tensors,
    }
    _dump_json(meta, directory / "meta.json")


def _read_tensor(directory: Path, spec: dict) -> np.ndarray:
    path = directory / spec["file"]
    if not path.exists():
        raise DataError(f"missing tensor file {path}")
    data = path.read_bytes()
    dtype = np.dtype(spec["dtype"])
    shape = tuple(int(s) for s in spec["shape"])
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(data) != expected:
        raise CorruptRecordError(f"{path}: {len(data)} bytes on disk, meta declares {shape} ({expected} bytes)")
    if "sha256" in spec and _sha256(data) != spec["sha256"]:
        raise CorruptRecordError(f"{path}: checksum mismatch")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def read_record(directory) -> SnapshotRecord:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataError(f"missing {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptRecordError(f"{meta_path}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise CorruptRecordError(f"{meta_path}: unsupported format_version {meta.get('format_version')}")
    tensors = {name: _read_tensor(directory, meta["tensors"][name]) for name in _TENSORS}
    rgb, depth = tensors["rgb"], tensors["depth"]
    if rgb.ndim != 3 or rgb.shape[2] != 3 or depth.shape != rgb.shape[:2]:
        raise CorruptRecordError(f"{directory}: rgb {rgb.shape} and depth {depth.shape} disagree")

    pose = UavPose(**{k: float(v) for k, v in meta["pose"].items()})
    grid = meta["pathloss_grid"]
    pmap = PathlossMap(
        values=tensors["pathloss"],
        grid_origin=tuple(float(v) for v in grid["origin"]),
        grid_spacing=float(grid["spacing"]),
        frequency_hz=float(grid["frequency_hz"]),
        tx_pose=UavPose(**{k: float(v) for k, v in grid["tx_pose"].items()}),
    )
    return SnapshotRecord(
        id=meta["id"],
        rgb=SensingImage("rgb", rgb),
        depth=SensingImage("depth", depth),
        pathloss=pmap,
        scenario=meta["scenario"],
        altitude_m=float(meta["altitude_m"]),
        frequency_hz=float(meta["frequency_hz"]),
        pose=pose,
        seed=int(meta["seed"]),
    )


def split_counts(n: int) -> tuple[int, int, int]:
    """3:1:1 train/val/test counts, each rounded half-up, test takes the rest."""
    n_train = int(np.floor(3 * n / 5 + 0.5))
    n_val = int(np.floor(n / 5 + 0.5))
    return n_train, n_val, n - n_train - n_val


def split(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Assign every record to train/val/test, 3:1:1 within each condition."""
    if not manifest.records:
        raise DataError("cannot split an empty dataset")
    assignment = {}
    for ci, cond in enumerate(sorted(manifest.conditions, key=lambda c: c.key)):
        ids = sorted(e.id for e in manifest.records if e.condition == cond)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), ci]))
        order = rng.permutation(len(ids))
        n_train, n_val, _ = split_counts(len(ids))
        for rank, idx in enumerate(order):
            if rank < n_train:
                assignment[ids[idx]] = "train"
            elif rank < n_train + n_val:
                assignment[ids[idx]] = "val"
            else:
                assignment[ids[idx]] = "test"
    return DatasetManifest(
        records=list(manifest.records),
        split=assignment,
        format_version=manifest.format_version,
        seed=int(seed),
        root=manifest.root,
    )


@dataclass
class SceneLayout:
    """Scene size per scenario family; the route needs side >= 4 * altitude."""

    width_cells: int
    cell_size: float


DEFAULT_LAYOUTS = {
    "crossroad": SceneLayout(160, 2.0),
    "widelane": SceneLayout(208, 4.0),
}


def _condition_seed(seed, scenario):
    return int(np.random.SeedSequence([int(seed), SCENARIOS.index(scenario), 0x5CE]).generate_state(1)[0])


def record_id(cond: ConditionTag, index: int) -> str:
    return f"{cond.scenario}-{cond.altitude_m:g}m-{cond.frequency_hz / 1e9:g}GHz-{index:05d}"


def build_records(
    cond: ConditionTag,
    n_snapshots: int,
    seed: int,
    resolution: int = 64,
    grid_size: int = 32,
    layouts=None,
    rx_height: float = 1.5,
    diffraction: bool = True,
    scene: SceneSpec | None = None,
):
    """Yield the snapshot records of one condition without touching disk."""
    if cond.scenario not in SCENARIOS:
        raise ConfigError(f"invalid condition scenario {cond.scenario!r}")
    if not (cond.altitude_m > 0 and cond.frequency_hz > 0):
        raise ConfigError(f"invalid condition {cond}")
    layouts = layouts or DEFAULT_LAYOUTS
    scene_seed = _condition_seed(seed, cond.scenario)
    if scene is None:
        lay = layouts[cond.scenario]
        scene = generate_scene(cond.scenario, scene_seed, lay.width_cells, lay.cell_size)
    poses = sample_trajectory(scene, cond.altitude_m, n_snapshots, scene_seed)
    pcfg = PropagationConfig(frequency_hz=cond.frequency_hz, rx_height=rx_height, diffraction=diffraction)
    for idx, pose in enumerate(poses):
        pmap = pathloss_map(scene, pose, grid_size, pcfg)
        pmap.values = quantize_map(pmap).astype(np.float32)
        yield SnapshotRecord(
            id=record_id(cond, idx),
            rgb=render_rgb(scene, pose, resolution),
            depth=render_depth(scene, pose, resolution),
            pathloss=pmap,
            scenario=cond.scenario,
            altitude_m=float(cond.altitude_m),
            frequency_hz=float(cond.frequency_hz),
            pose=pose,
            seed=scene_seed,
        )


def build_dataset(
    conditions,
    snapshots_per_condition: int,
    seed: int,
    out_dir,
    resolution: int = 64,
    grid_size: int = 32,
    layouts=None,
    rx_height: float = 1.5,
    diffraction: bool = True,
) -> DatasetManifest:
    """Generate, write, and split a multi-condition dataset under ``out_dir``.

    Conditions sharing a scenario share one scene and one ground track, so
    altitude sub-datasets fly identical (x, y) routes.
    """
    if snapshots_per_condition < 5:
        raise ConfigError(f"snapshots_per_condition must be >= 5, got {snapshots_per_condition}")
    conditions = [c if isinstance(c, ConditionTag) else ConditionTag.from_dict(c) for c in conditions]
    if len(set(conditions)) != len(conditions):
        raise ConfigError("duplicate conditions")
    out = Path(out_dir)
    try:
        (out / "records").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc

    entries = []
    for cond in conditions:
        for rec in build_records(
            cond, snapshots_per_condition, seed, resolution, grid_size, layouts, rx_height, diffraction
        ):
            rel = f"records/{rec.id}"
            write_record(rec, out / rel)
            entries.append(ManifestEntry(rec.id, cond, rel))

    manifest = split(DatasetManifest(records=entries, split={}, seed=seed, root=out), seed)
    write_manifest(manifest, out)
    return manifest


def write_manifest(manifest: DatasetManifest, root) -> Path:
    path = Path(root) / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    _dump_json(manifest.to_dict(), tmp)
    os.replace(tmp, path)
    return path


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json" if root.is_dir() else root
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    return DatasetManifest.from_dict(json.loads(path.read_text(encoding="utf-8")), root=path.parent)


def load_records(manifest: DatasetManifest, ids=None) -> list[SnapshotRecord]:
    if manifest.root is None:
        raise DataError("manifest has no root directory")
    wanted = manifest.ids() if ids is None else list(ids)
    paths = {e.id: e.path for e in manifest.records}
    missing = [i for i in wanted if i not in paths]
    if missing:
        raise DataError(f"ids not in manifest: {missing[:3]}")
    return [read_record(manifest.root / paths[i]) for i in wanted]
