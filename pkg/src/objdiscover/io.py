"""On-disk formats.

* point blob: raw little-endian float32, (x, y, z) per point, no header
* persistence field: raw little-endian float32, one value per current point
* box lines: one JSON object per line with x, y, z, w, l, h, yaw and optional
  reward / class / breakdown
* scene manifest: JSON with paths relative to the manifest's directory
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import OrientedBox
from .persistence import ScenePointSet, TraversalSet

__all__ = [
    "FormatError",
    "BoxRecord",
    "load_points",
    "save_points",
    "load_field",
    "save_field",
    "load_boxes",
    "save_boxes",
    "SceneManifest",
    "load_manifest",
    "save_manifest",
    "save_scene",
    "find_manifests",
]

BOX_KEYS = ("x", "y", "z", "w", "l", "h", "yaw")
_LE_F32 = np.dtype("<f4")


class FormatError(ValueError):
    pass


def save_points(path, points) -> None:
    arr = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3), dtype=_LE_F32)
    Path(path).write_bytes(arr.tobytes())


def load_points(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 12:
        raise FormatError(f"{path}: size {len(raw)} bytes is not a multiple of 12 (remainder {len(raw) % 12})")
    pts = np.frombuffer(raw, dtype=_LE_F32).reshape(-1, 3).astype(np.float64)
    if not np.all(np.isfinite(pts)):
        raise FormatError(f"{path}: non-finite coordinate values")
    return pts


def save_field(path, values) -> None:
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64).reshape(-1), dtype=_LE_F32)
    Path(path).write_bytes(arr.tobytes())


def load_field(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: size {len(raw)} bytes is not a multiple of 4")
    vals = np.frombuffer(raw, dtype=_LE_F32).astype(np.float64)
    if not np.all(np.isfinite(vals)):
        raise FormatError(f"{path}: non-finite values")
    return vals


@dataclass
class BoxRecord:
    box: OrientedBox
    reward: float | None = None
    class_name: str | None = None
    breakdown: dict | None = None

    def to_json(self) -> str:
        d = {k: float(getattr(self.box, k)) for k in BOX_KEYS}
        if self.reward is not None:
            d["reward"] = float(self.reward)
        if self.class_name is not None:
            d["class"] = self.class_name
        if self.breakdown is not None:
            d["breakdown"] = self.breakdown
        # repr-based float serialization round-trips exactly
        return json.dumps(d, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "BoxRecord":
        box = OrientedBox(*(float(d[k]) for k in BOX_KEYS))
        reward = d.get("reward")
        return cls(box, None if reward is None else float(reward), d.get("class"), d.get("breakdown"))


def save_boxes(path, records: Iterable[BoxRecord | OrientedBox]) -> None:
    lines = []
    for r in records:
        rec = r if isinstance(r, BoxRecord) else BoxRecord(r)
        lines.append(rec.to_json() + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_boxes(path) -> list[BoxRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                missing = [k for k in BOX_KEYS if k not in d]
                if missing:
                    raise FormatError(f"missing key(s) {', '.join(missing)}")
                out.append(BoxRecord.from_dict(d))
            except (ValueError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed box line: {exc}") from exc
    return out


@dataclass
class SceneManifest:
    scene_id: str
    current: str
    history: list[str]
    ground_z: float | None = 0.0
    gt: str | None = None
    tau: str | None = None
    origin: str | None = None
    path: Path | None = field(default=None, repr=False)

    def resolve(self, rel: str) -> Path:
        base = self.path.parent if self.path is not None else Path(".")
        return base / rel

    def load_traversals(self) -> TraversalSet:
        return TraversalSet(
            load_points(self.resolve(self.current)),
            [load_points(self.resolve(h)) for h in self.history],
            location_id=self.scene_id,
            ground_z=self.ground_z,
        )

    def load_scene(self) -> ScenePointSet:
        if self.tau is None:
            raise FormatError(f"{self.path}: no persistence field; run ppscore first")
        pts = load_points(self.resolve(self.current))
        tau = load_field(self.resolve(self.tau))
        if len(tau) != len(pts):
            raise FormatError(f"{self.path}: {len(pts)} points but {len(tau)} persistence values")
        return ScenePointSet(pts, tau, ground_z=self.ground_z, scene_id=self.scene_id)

    def load_gt(self) -> list[BoxRecord]:
        if self.gt is None:
            return []
        return load_boxes(self.resolve(self.gt))


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
        m = SceneManifest(
            scene_id=str(d["scene_id"]),
            current=d["current"],
            history=list(d["history"]),
            ground_z=d.get("ground_z"),
            gt=d.get("gt"),
            tau=d.get("tau"),
            origin=d.get("origin"),
            path=path,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: invalid manifest: {exc}") from exc
    for rel in [m.current, *m.history] + [p for p in (m.gt, m.tau, m.origin) if p]:
        if not m.resolve(rel).exists():
            raise FormatError(f"{path}: referenced file {rel} does not exist")
    return m


def save_manifest(m: SceneManifest, path) -> Path:
    path = Path(path)
    d = {"scene_id": m.scene_id, "current": m.current, "history": list(m.history), "ground_z": m.ground_z}
    for key in ("gt", "tau", "origin"):
        if getattr(m, key) is not None:
            d[key] = getattr(m, key)
    path.write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
    m.path = path
    return path


def save_scene(scene, out_dir) -> Path:
    """Write a GroundTruthScene into ``out_dir/<scene_id>/``; returns the manifest path."""
    ts = scene.traversals
    d = Path(out_dir) / ts.location_id
    try:
        d.mkdir(parents=True, exist_ok=True)
        save_points(d / "current.bin", ts.current)
        hist = []
        for t, cloud in enumerate(ts.history):
            name = f"history_{t:02d}.bin"
            save_points(d / name, cloud)
            hist.append(name)
        save_boxes(d / "gt.jsonl", [BoxRecord(b, class_name=c) for b, c in zip(scene.gt_boxes, scene.gt_classes)])
        (d / "origin.bin").write_bytes(np.asarray(scene.origin, dtype="<i4").tobytes())
        m = SceneManifest(ts.location_id, "current.bin", hist, ts.ground_z, gt="gt.jsonl", origin="origin.bin")
        return save_manifest(m, d / "manifest.json")
    except OSError as exc:
        raise OSError(f"failed writing scene {ts.location_id} under {d}: {exc}") from exc


def find_manifests(root) -> list[Path]:
    """A manifest file itself, or every ``*/manifest.json`` under a dataset directory."""
    root = Path(root)
    if root.is_file():
        return [root]
    if (root / "manifest.json").exists():
        return [root / "manifest.json"]
    return sorted(p for p in root.glob("*/manifest.json"))


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
