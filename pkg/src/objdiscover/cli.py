"""Command line toolkit: synth -> ppscore -> seed -> discover -> score -> eval.

Every subcommand reads and writes per-scene directories keyed by scene id, so
scenes can be processed in parallel with ``--jobs`` without write contention.
Hyperparameters resolve as command-line flag > ``--config`` file > default.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .evaluation import assign_class, evaluate
from .exploration import ExplorationConfig
from .io import (BoxRecord, FormatError, find_manifests, load_boxes, load_manifest, save_boxes,
                 save_field, save_manifest, save_scene, write_text_atomic)
from .loop import BoxSetSource, LoopConfig, discover_run
from .persistence import pp_score
from .reward import RewardConfig, SceneReward, score_boxes
from .seeding import SeedConfig, generate_seeds
from .synth import SynthConfig, generate_scene

__all__ = ["main", "PARAMS", "load_config_file", "resolve_params"]


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Param:
    name: str
    type: Callable[[str], Any]
    default: Any
    help: str
    flag: str | None = None

    @property
    def option(self) -> str:
        return self.flag or "--" + self.name.replace("_", "-")


_COMMON = [
    Param("seed", int, 0, "random seed"),
    Param("jobs", int, 1, "worker processes (does not affect outputs)"),
]
_SYNTH = [
    Param("scenes", int, 5, "number of scenes"),
    Param("traversals", int, 6, "historical traversals per location"),
    Param("objects_min", int, 1, "minimum objects per scene"),
    Param("objects_max", int, 6, "maximum objects per scene"),
    Param("extent", float, 80.0, "half-width of the square scene in meters"),
    Param("incidence_power", float, 0.0, "surface return density exponent on cos(incidence)"),
    Param("size_spread", float, 0.5, "object size spread in units of the class std"),
]
_PPSCORE = [
    Param("radius", float, 0.3, "neighbor count radius in meters"),
]
_REWARD = [
    Param("lambda_shape", float, 1.0, "shape prior weight"),
    Param("lambda_align", float, 1.0, "alignment weight"),
    Param("lambda_dyn", float, 0.001, "per dynamic point bonus"),
    Param("lambda_bg", float, 0.001, "per background point penalty"),
    Param("tau_dyn", float, 0.6, "persistence below which a point is dynamic"),
    Param("tau_bg", float, 0.9, "persistence at or above which a point is background"),
    Param("min_dyn_points", int, 4, "dynamic points required inside a box"),
    Param("max_persistent_fraction", float, 0.8, "largest allowed background fraction inside a box"),
]
_SEED = [
    Param("eps", float, 0.5, "DBSCAN radius in meters"),
    Param("min_pts", int, 5, "DBSCAN core point threshold"),
]
_DISCOVER = [
    Param("sigma", float, 0.3, "exploration noise scale"),
    Param("samples", int, 200, "perturbed boxes per scene and iteration"),
    Param("topk", float, 75.0, "percent of NMS survivors kept"),
    Param("iterations", int, 100, "maximum iterations"),
    Param("nms_iou", float, 0.1, "NMS IoU threshold"),
    Param("epsilon", float, 1e-4, "convergence tolerance on the total reward"),
    Param("patience", int, 10, "stalled iterations before stopping"),
    Param("spawn_dynamic", _parse_bool, False, "spawn boxes on uncovered dynamic clusters"),
]

PARAMS: dict[str, list[Param]] = {
    "synth": _COMMON + _SYNTH,
    "ppscore": _COMMON + _PPSCORE,
    "seed": _COMMON + _SEED + _REWARD,
    "score": _COMMON + _REWARD,
    "discover": _COMMON + _DISCOVER + _REWARD,
    "eval": _COMMON,
}

# keys that never influence output files and are left out of the run log
_NOT_LOGGED = {"jobs"}


class UsageError(Exception):
    pass


def load_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_params(command: str, flags: dict[str, Any], config: dict[str, str]) -> dict[str, Any]:
    """Merge flag values, config file values and defaults, in that order."""
    params = {p.name: p for p in PARAMS[command]}
    unknown = sorted(set(config) - set(params))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    out = {}
    for name, p in params.items():
        if flags.get(name) is not None:
            out[name] = flags[name]
        elif name in config:
            try:
                out[name] = p.type(config[name])
            except ValueError as exc:
                raise UsageError(f"config key {name}: {exc}") from exc
        else:
            out[name] = p.default
    return out


def _reward_config(p: dict) -> RewardConfig:
    return RewardConfig(
        lambda_shape=p["lambda_shape"], lambda_align=p["lambda_align"],
        lambda_dyn=p["lambda_dyn"], lambda_bg=p["lambda_bg"],
        tau_dyn=p["tau_dyn"], tau_bg=p["tau_bg"],
        min_dyn_points=p["min_dyn_points"], max_persistent_fraction=p["max_persistent_fraction"],
    )


def _loop_config(p: dict) -> LoopConfig:
    return LoopConfig(
        top_k_percent=p["topk"], nms_iou=p["nms_iou"], max_iterations=p["iterations"],
        epsilon=p["epsilon"], patience=p["patience"],
        exploration=ExplorationConfig(sigma=p["sigma"], samples_per_scene=p["samples"],
                                      rng_seed=p["seed"], spawn_from_dynamic=p["spawn_dynamic"]),
    )


def _scene_dir(out: Path, scene_id: str) -> Path:
    d = out / scene_id
    d.mkdir(parents=True, exist_ok=True)
    return d


def _records(boxes, rewards, breakdown) -> list[BoxRecord]:
    recs = []
    for i, (b, r) in enumerate(zip(boxes, rewards)):
        recs.append(BoxRecord(b, float(r), assign_class(b), breakdown.record(i)))
    return recs


def _boxes_for(boxes_root: Path, scene_id: str) -> list[BoxRecord]:
    path = boxes_root / scene_id / "boxes.jsonl"
    if not path.exists():
        raise FormatError(f"{path}: no boxes for scene {scene_id}")
    return load_boxes(path)


# per-scene workers; module level so they pickle for the process pool

def _synth_one(args):
    index, p, out = args
    cfg = SynthConfig(traversals=p["traversals"], objects=(p["objects_min"], p["objects_max"]),
                      extent=p["extent"], incidence_power=p["incidence_power"],
                      size_spread=p["size_spread"], rng_seed=p["seed"])
    scene = generate_scene(cfg, index)
    return str(save_scene(scene, out))


def _ppscore_one(args):
    manifest, p, _ = args
    m = load_manifest(manifest)
    tau = pp_score(m.load_traversals(), radius=p["radius"])
    save_field(m.resolve("tau.bin"), tau)
    m.tau = "tau.bin"
    save_manifest(m, m.path)
    return m.scene_id


def _seed_one(args):
    manifest, p, out = args
    m = load_manifest(manifest)
    scene = m.load_scene()
    rcfg = _reward_config(p)
    seeds = generate_seeds(scene, SeedConfig(eps=p["eps"], min_pts=p["min_pts"]), rcfg)
    bd = score_boxes(seeds, scene, cfg=rcfg)
    save_boxes(_scene_dir(out, m.scene_id) / "boxes.jsonl", _records(seeds, bd.total, bd))
    return m.scene_id


def _score_one(args):
    manifest, p, (boxes_root, out) = args
    m = load_manifest(manifest)
    scene = m.load_scene()
    rcfg = _reward_config(p)
    boxes = [r.box for r in _boxes_for(boxes_root, m.scene_id)]
    bd = score_boxes(boxes, scene, cfg=rcfg)
    save_boxes(_scene_dir(out, m.scene_id) / "boxes.jsonl", _records(boxes, bd.total, bd))
    return m.scene_id


def _discover_one(args):
    manifest, p, (seeds_root, out) = args
    m = load_manifest(manifest)
    scene = m.load_scene()
    rcfg = _reward_config(p)
    seeds = [r.box for r in _boxes_for(seeds_root, m.scene_id)]
    reward = SceneReward(scene, cfg=rcfg)
    state = discover_run(scene, BoxSetSource(seeds), reward, _loop_config(p))
    bd = score_boxes(state.boxes, scene, cfg=rcfg)
    d = _scene_dir(out, m.scene_id)
    save_boxes(d / "boxes.jsonl", _records(state.boxes, bd.total, bd))
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "kept", "total_reward", "mean_reward"])
    for it, kept, total, mean in state.trace:
        writer.writerow([it, kept, repr(float(total)), repr(float(mean))])
    write_text_atomic(d / "trace.csv", buf.getvalue())
    return m.scene_id


def _map(fn, items, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _manifests(data: Path) -> list[Path]:
    found = find_manifests(data)
    if not found:
        raise FormatError(f"{data}: no scene manifests found")
    return found


def _run_log(out: Path, command: str, p: dict) -> None:
    lines = [f"command = {command}\n", f"version = {__version__}\n"]
    lines += [f"{k} = {p[k]!r}\n" for k in sorted(p) if k not in _NOT_LOGGED]
    out.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out / f"run.{command}.log", "".join(lines))


def _cmd_synth(a, p) -> None:
    out = Path(a.out)
    _run_log(out, "synth", p)
    _map(_synth_one, [(i, p, out) for i in range(p["scenes"])], p["jobs"])


def _cmd_ppscore(a, p) -> None:
    data = Path(a.data)
    manifests = _manifests(data)
    _run_log(data if data.is_dir() else data.parent, "ppscore", p)
    _map(_ppscore_one, [(m, p, None) for m in manifests], p["jobs"])


def _cmd_seed(a, p) -> None:
    out = Path(a.out)
    manifests = _manifests(Path(a.data))
    _run_log(out, "seed", p)
    _map(_seed_one, [(m, p, out) for m in manifests], p["jobs"])


def _cmd_score(a, p) -> None:
    out = Path(a.out)
    manifests = _manifests(Path(a.data))
    _run_log(out, "score", p)
    _map(_score_one, [(m, p, (Path(a.boxes), out)) for m in manifests], p["jobs"])


def _cmd_discover(a, p) -> None:
    out = Path(a.out)
    manifests = _manifests(Path(a.data))
    _run_log(out, "discover", p)
    _map(_discover_one, [(m, p, (Path(a.seeds), out)) for m in manifests], p["jobs"])


def _cmd_eval(a, p) -> None:
    out = Path(a.out)
    preds, scores, gts = [], [], []
    for path in _manifests(Path(a.data)):
        m = load_manifest(path)
        recs = _boxes_for(Path(a.pred), m.scene_id)
        preds.append([r.box for r in recs])
        scores.append([1.0 if r.reward is None else r.reward for r in recs])
        gts.append([r.box for r in m.load_gt()])
    report = evaluate(preds, scores, gts)
    _run_log(out, "eval", p)
    write_text_atomic(out / "report.txt", report.to_text())
    write_text_atomic(out / "metrics.kv", report.to_kv())
    sys.stdout.write(report.to_text())


_COMMANDS = {
    "synth": (_cmd_synth, "generate a synthetic multi-traversal dataset", [("out", "output dataset directory")]),
    "ppscore": (_cmd_ppscore, "compute per-point persistence scores in place",
                [("data", "dataset directory or manifest")]),
    "seed": (_cmd_seed, "cluster dynamic points into seed boxes",
             [("data", "dataset directory or manifest"), ("out", "output directory")]),
    "score": (_cmd_score, "annotate boxes with reward and breakdown",
              [("data", "dataset directory or manifest"), ("boxes", "directory of per-scene boxes"),
               ("out", "output directory")]),
    "discover": (_cmd_discover, "refine seed boxes by reward-ranked exploration",
                 [("data", "dataset directory or manifest"), ("seeds", "directory of per-scene seed boxes"),
                  ("out", "output directory")]),
    "eval": (_cmd_eval, "evaluate predictions against ground truth",
             [("data", "dataset directory or manifest"), ("pred", "directory of per-scene predictions"),
              ("out", "report directory")]),
}

# inputs that must exist before a command runs
_INPUTS = {"ppscore": ("data",), "seed": ("data",), "score": ("data", "boxes"),
           "discover": ("data", "seeds"), "eval": ("data", "pred")}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="objdiscover", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text, paths) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        for dest, path_help in paths:
            sp.add_argument(f"--{dest}", required=True, metavar="PATH", help=path_help)
        sp.add_argument("--config", metavar="FILE", help="key = value file overriding defaults")
        for prm in PARAMS[name]:
            if prm.type is _parse_bool:
                sp.add_argument(prm.option, dest=prm.name, action="store_const", const=True, default=None,
                                help=f"{prm.help} (default: {prm.default})")
            else:
                sp.add_argument(prm.option, dest=prm.name, type=prm.type, default=None,
                                help=f"{prm.help} (default: {prm.default})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[a.command]
    try:
        config = load_config_file(a.config) if a.config else {}
        flags = {prm.name: getattr(a, prm.name) for prm in PARAMS[a.command]}
        p = resolve_params(a.command, flags, config)
        if p["jobs"] < 1:
            raise UsageError("--jobs must be >= 1")
        for dest in _INPUTS.get(a.command, ()):
            if not Path(getattr(a, dest)).exists():
                raise UsageError(f"input {getattr(a, dest)} does not exist")
    except (UsageError, OSError) as exc:
        sub.print_usage(sys.stderr)
        print(f"{sub.prog}: error: {exc}", file=sys.stderr)
        return 2
    try:
        _COMMANDS[a.command][0](a, p)
    except (FormatError, ValueError, OSError) as exc:
        print(f"{sub.prog}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
