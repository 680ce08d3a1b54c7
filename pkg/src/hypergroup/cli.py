"""Command-line entry points.

Exit codes: 0 success, 2 bad configuration or inputs, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import mean_seconds, run_benchmark, summarize
from .evaluation.candidates import generate_candidates
from .evaluation.completeness import completeness_levelwise, completeness_viewwise, ctr
from .evaluation.recall import DEFAULT_BUDGETS, group_recall
from .hierarchy.pipeline import TREE_BUILDERS
from .hierarchy.trees import HierForest, TreeError
from .lorentz import GeometryError, log_map_origin
from .pca import principal_components
from .synthetic import SceneSpec, gen_scene, load_scene, save_scene
from .training.losses import LossConfig, NumericalError, TrainableEmbedding
from .training.trainer import HISTORY_COLUMNS, ImageRays, Schedule, train

log = logging.getLogger("hypergroup")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _pop_keys(cfg: dict, allowed: set[str], where: str) -> None:
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_embedding(path, curvature: float) -> TrainableEmbedding:
    return TrainableEmbedding(io.read_matrix(path, io.EMBEDDING_MAGIC), curvature)


def _check_embedding(scene, emb: TrainableEmbedding) -> None:
    if emb.U.shape[0] != scene.n_rays:
        raise ConfigError(f"embedding has {emb.U.shape[0]} rays but the scene has {scene.n_rays}")


# --- commands ------------------------------------------------------------------


def cmd_gen_scene(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = SceneSpec.from_dict(cfg)
    save_scene(gen_scene(spec), _out_dir(args))
    return EXIT_OK


def cmd_build_forest(args) -> int:
    scene = load_scene(args.scene)
    out = _out_dir(args)
    for v in range(len(scene.views)):
        build = scene.build_view_forest(v, args.method)
        (out / f"view{v}_forest.json").write_text(build.forest.dumps() + "\n")
    return EXIT_OK


def _train_config(cfg: dict) -> tuple[LossConfig, Schedule, int, float]:
    _pop_keys(cfg, {"loss", "schedule", "dim", "init_std"}, "train config")
    loss = LossConfig.from_dict(cfg.get("loss", {}))
    sched = Schedule.from_dict(cfg.get("schedule", {}))
    return loss, sched, int(cfg.get("dim", 16)), float(cfg.get("init_std", 0.05))


def _images_from_forests(scene, forest_dir) -> list[ImageRays]:
    images = []
    for v, view in enumerate(scene.views):
        path = Path(forest_dir) / f"view{v}_forest.json"
        if not path.exists():
            raise ConfigError(f"missing forest file {path}")
        forest = HierForest.loads(path.read_text())
        labels = forest.label_grid(view.index_map.shape)
        keep = labels >= 0
        images.append(ImageRays(forest, view.index_map[keep], labels[keep]))
    return images


def cmd_train(args) -> int:
    loss, sched, dim, std = _train_config(_load_config(args.config))
    seed = 0 if args.seed is None else args.seed
    scene = load_scene(args.scene)
    images = _images_from_forests(scene, args.forests) if args.forests else scene.training_images(args.method)
    emb = TrainableEmbedding.initialize(scene.n_rays, dim, seed=seed, std=std, curvature=loss.curvature)
    out = _out_dir(args)
    try:
        result = train(emb, images, sched, loss, rng_seed=seed)
    except NumericalError as exc:
        history = getattr(exc, "history", [])
        io.write_csv(out / "loss_history.csv", HISTORY_COLUMNS, [[h[c] for c in HISTORY_COLUMNS] for h in history])
        raise
    io.write_matrix(out / "embedding.bin", result.embedding.U, io.EMBEDDING_MAGIC)
    io.write_csv(out / "loss_history.csv", HISTORY_COLUMNS, [[h[c] for c in HISTORY_COLUMNS] for h in result.history])
    io.write_json(out / "train_config.json", {"loss": loss.to_dict(), "schedule": sched.to_dict(), "dim": dim, "init_std": std, "seed": seed})
    return EXIT_OK


def _scene_pairs(args):
    if len(args.scene) != len(args.embedding):
        raise ConfigError("give one --embedding per --scene")
    for s, e in zip(args.scene, args.embedding):
        scene = load_scene(s)
        emb = _load_embedding(e, args.curvature)
        _check_embedding(scene, emb)
        yield Path(s).name, scene, emb


def cmd_eval_completeness(args) -> int:
    rows, views, levels = [], [], []
    for name, scene, emb in _scene_pairs(args):
        bundle = scene.bundle(emb)
        vw = completeness_viewwise(bundle)
        lw, thresholds = completeness_levelwise(bundle)
        views.append(vw)
        levels.append(lw)
        for level in bundle.levels:
            rows.append((name, level, "viewwise", vw[level]))
            rows.append((name, level, "levelwise", lw[level]))
            rows.append((name, level, "threshold", thresholds[level]))
    per_level, overall = ctr(views, levels)
    rows.extend(("all", level, "ctr", val) for level, val in per_level.items())
    rows.append(("all", "mean", "ctr", overall))
    io.write_csv(_out_dir(args) / "completeness.csv", ("scene", "level", "mode", "value"), rows)
    return EXIT_OK


def cmd_eval_recall(args) -> int:
    cfg = _load_config(args.config)
    _pop_keys(cfg, {"budgets", "seeds", "base_seed", "view", "min_region"}, "recall config")
    budgets = cfg.get("budgets", list(DEFAULT_BUDGETS))
    seeds = int(cfg.get("seeds", 100))
    base_seed = int(cfg.get("base_seed", 0)) if args.seed is None else args.seed
    v = int(cfg.get("view", 0))
    if len(args.scene) != 1:
        raise ConfigError("eval-recall takes exactly one --scene")
    _, scene, emb = next(_scene_pairs(args))
    if not 0 <= v < len(scene.views):
        raise ConfigError(f"view {v} out of range")
    feats = emb.points(scene.views[v].index_map)
    pool = generate_candidates(feats, emb.curvature, min_region=int(cfg.get("min_region", 30)))
    gt = [m for node, m in scene.view_masks(v).items() if scene.parent[node] is not None]
    rep = group_recall(pool.masks, gt, budgets, seeds, base_seed)
    rows = rep.rows()
    rows.extend(("auc", m, val, 0.0) for m, val in rep.auc.items())
    rows.append(("pool", "size", float(len(pool)), 0.0))
    io.write_csv(_out_dir(args) / "recall.csv", ("budget", "metric", "mean", "std"), rows)
    return EXIT_OK


def cmd_bench_dasgupta(args) -> int:
    cfg = _load_config(args.config)
    _pop_keys(cfg, {"ns", "trials", "dim", "shared"}, "benchmark config")
    ns = [int(n) for n in cfg.get("ns", list(range(4, 13)))]
    seed = 0 if args.seed is None else args.seed
    records = run_benchmark(ns, int(cfg.get("trials", 50)), seed, int(cfg.get("dim", 64)), float(cfg.get("shared", 1.0)))
    out = _out_dir(args)
    io.write_csv(
        out / "bench_records.csv",
        ("n", "trial", "method", "cost", "normalized_cost"),
        [(r.n, r.trial, r.method, r.cost, r.normalized_cost) for r in records],
    )
    io.write_csv(out / "bench_summary.csv", ("n", "mean_gap", "median_gap", "max_abs_gap"), summarize(records))
    # wall times vary run to run, so they live apart from the reproducible tables
    io.write_csv(out / "bench_timing.csv", ("n", "method", "mean_seconds"), [(n, m, s) for (n, m), s in mean_seconds(records).items()])
    return EXIT_OK


def cmd_export_pca(args) -> int:
    if args.features:
        x = io.read_matrix(args.features)
        grid_shape = None
    else:
        if not (args.scene and args.embedding):
            raise ConfigError("export-pca needs --features or both --scene and --embedding")
        scene = load_scene(args.scene[0])
        emb = _load_embedding(args.embedding[0], args.curvature)
        _check_embedding(scene, emb)
        idx = scene.views[args.view].index_map
        x = log_map_origin(emb.points(idx.ravel()), emb.curvature)
        grid_shape = idx.shape
    res = principal_components(x, 3)
    out = _out_dir(args)
    k = res.components.shape[0]
    header = ("row", "col") + tuple(f"pc{i + 1}" for i in range(k))
    if grid_shape is None:
        coords = [(i, 0) for i in range(x.shape[0])]
    else:
        coords = [tuple(int(v) for v in np.unravel_index(i, grid_shape)) for i in range(x.shape[0])]
    io.write_csv(out / "pca.csv", header, [(*rc, *p) for rc, p in zip(coords, res.projected.tolist())])
    io.write_csv(out / "pca_variance.csv", ("component", "variance", "ratio"), [(i + 1, v, r) for i, (v, r) in enumerate(zip(res.variances, res.explained_ratio))])
    if grid_shape is not None:
        for i in range(k):
            p = res.projected[:, i]
            span = p.max() - p.min()
            scaled = np.zeros_like(p) if span == 0 else (p - p.min()) / span
            io.write_pgm(out / f"pca_pc{i + 1}.pgm", np.round(scaled * 255).astype(np.int64).reshape(grid_shape))
    return EXIT_OK


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "build-forest": cmd_build_forest,
    "train": cmd_train,
    "eval-completeness": cmd_eval_completeness,
    "eval-recall": cmd_eval_recall,
    "bench-dasgupta": cmd_bench_dasgupta,
    "export-pca": cmd_export_pca,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypergroup", description="Hierarchical grouping with hyperbolic ray features.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--method", choices=sorted(TREE_BUILDERS), default="spectral")
        p.add_argument("--curvature", type=float, default=1.0)
        if name in ("build-forest", "train"):
            p.add_argument("--scene", required=True)
        if name == "train":
            p.add_argument("--forests", help="directory of view forests from build-forest")
        if name in ("eval-completeness", "eval-recall", "export-pca"):
            p.add_argument("--scene", action="append", default=[], required=name != "export-pca")
            p.add_argument("--embedding", action="append", default=[], required=name != "export-pca")
        if name == "export-pca":
            p.add_argument("--features", help="descriptor matrix file instead of a scene")
            p.add_argument("--view", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        log.error("seed must be nonnegative")
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, GeometryError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, TreeError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
