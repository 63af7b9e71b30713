"""Pipeline command line: generate, split, features, pretrain, classify,
evaluate, report.

Configuration comes from an optional JSON file plus flag overrides (flags
win). Every command writes its artifacts plus a ``<command>_manifest.json``
holding the resolved config, input hashes and timings; re-running with
identical inputs is a no-op thanks to hash-keyed caching, and replaying the
manifest's config reproduces the artifacts byte for byte.

Exit codes: 0 success, 2 configuration or dependency error, 3 infeasible
split, 4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autoencoder as ae_mod
from . import mae as mae_mod
from . import metrics as metrics_mod
from .classifiers import NearestNeighborClassifier, RandomForest
from .features import (
    FEATURE_LENGTH,
    PatchFeatureConfig,
    extract_patch_feature,
    write_features_csv,
)
from .manifest import RunManifest, atomic_write_text, cache_key, load_manifest, sha256_file, stable_json
from .nets import DivergenceError
from .scene import (
    generate_synthetic_scene,
    group_polygons,
    load_ground_truth,
    load_scene,
    rasterize_ground_truth,
    rasterize_groups,
    save_ground_truth,
    save_scene,
    class_pixel_counts,
)
from .splitting import (
    SplitProblem,
    enumerate_diverse_splits,
    load_split,
    problem_hash,
    save_split,
)

MODELS = ("knn", "ae+knn", "mae+knn", "rf", "ae+rf", "mae+rf")
REPORT_ROWS = {
    "knn": "KNN", "ae+knn": "AE+KNN", "mae+knn": "MAE+KNN",
    "rf": "RF", "ae+rf": "AE+RF", "mae+rf": "MAE+RF",
}


class ConfigError(Exception):
    """Invalid configuration; carries the full list of violations."""

    exit_code = 2

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DependencyError(Exception):
    """An upstream artifact is missing; names the command that makes it."""

    exit_code = 2


class InfeasibleSplitError(Exception):
    exit_code = 3


def default_config() -> dict:
    return {
        "seed": 0,
        "scene": None,
        "ground_truth": None,
        "split_file": None,
        "generate": {
            "height": 96, "width": 96, "bands": 310, "materials": 5,
            "polygons": 24, "gsd_m": 1.0, "brightness_jitter": 0.15,
            "noise_sigma": 0.01,
        },
        "split": {
            "p_train": 0.10, "p_val": 0.10, "p_test": 0.40, "count": 1,
            "min_hamming": 2, "radius_m": 50.0, "exact_cap": 24,
            "budget": 50000,
        },
        "features": {"tile": 64, "stride": 64},
        "mae": {
            "token_len": 10, "embed_dim": 32, "n_heads": 32,
            "encoder_depth": 2, "decoder_depth": 1, "decoder_dim": None,
            "decoder_heads": 4, "mask_ratio": 0.7, "learning_rate": 0.05,
            "weight_decay": 0.0, "epochs": 20, "batch_size": 128, "seed": None,
        },
        "ae": {
            "latent_dim": 32, "learning_rate": 0.05, "weight_decay": 0.0,
            "epochs": 20, "batch_size": 128, "seed": None, "init": "glorot",
        },
        "pretrain": {"max_unlabeled": 5000},
        "classify": {"knn_k": 5, "rf_trees": 100, "models": list(MODELS)},
        "report": {"runs": []},
    }


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    config = default_config()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError([f"config file not found: {path}"])
        try:
            config = _merge(config, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file is not valid JSON: {exc}"])
    for flag in ("seed", "scene", "ground_truth", "split_file"):
        value = getattr(args, flag, None)
        if value is not None:
            config[flag] = value
    if getattr(args, "model", None):
        config["classify"]["models"] = list(args.model)
    if config["mae"]["seed"] is None:
        config["mae"]["seed"] = config["seed"]
    if config["ae"]["seed"] is None:
        config["ae"]["seed"] = config["seed"]
    return config


def validate_config(config: dict) -> list[str]:
    errors = []
    gen = config["generate"]
    for field in ("height", "width", "bands", "materials", "polygons"):
        if not isinstance(gen.get(field), int) or gen[field] <= 0:
            errors.append(f"generate.{field} must be a positive integer")
    split = config["split"]
    for field in ("p_train", "p_val", "p_test"):
        v = split.get(field)
        if not isinstance(v, (int, float)) or not (0 <= v < 1):
            errors.append(f"split.{field} must lie in [0, 1)")
    if all(isinstance(split.get(f), (int, float)) for f in ("p_train", "p_val", "p_test")):
        if split["p_train"] + split["p_val"] + split["p_test"] >= 1:
            errors.append("split proportions must sum to < 1")
    if not isinstance(split.get("count"), int) or split["count"] < 1:
        errors.append("split.count must be a positive integer")
    if split.get("radius_m") is None or split["radius_m"] <= 0:
        errors.append("split.radius_m must be positive")
    feat = config["features"]
    if feat.get("tile") != 64:
        errors.append("features.tile must be 64 (the descriptor is defined on 64x64 patches)")
    if not isinstance(feat.get("stride"), int) or feat["stride"] <= 0:
        errors.append("features.stride must be a positive integer")
    mae = config["mae"]
    try:
        mae_mod.MAEConfig(**mae)
    except (TypeError, ValueError) as exc:
        errors.append(f"mae: {exc}")
    try:
        ae_mod.AEConfig(**config["ae"])
    except (TypeError, ValueError) as exc:
        errors.append(f"ae: {exc}")
    bad = [m for m in config["classify"]["models"] if m not in MODELS]
    if bad:
        errors.append(f"classify.models contains unknown models {bad}; valid: {list(MODELS)}")
    if not isinstance(config["classify"].get("knn_k"), int) or config["classify"]["knn_k"] < 1:
        errors.append("classify.knn_k must be a positive integer")
    if not isinstance(config["classify"].get("rf_trees"), int) or config["classify"]["rf_trees"] < 1:
        errors.append("classify.rf_trees must be a positive integer")
    return errors


def _require(path: str | Path | None, what: str, producer: str) -> Path:
    if path is None or not Path(path).exists():
        raise DependencyError(
            f"missing {what} ({path}); run `hsikit {producer}` first or pass the correct path"
        )
    return Path(path)


def _cached(out: Path, command: str, key: str) -> bool:
    manifest_path = out / f"{command}_manifest.json"
    if not manifest_path.exists():
        return False
    try:
        previous = load_manifest(manifest_path)
    except json.JSONDecodeError:
        return False
    if previous.get("cache_key") != key:
        return False
    return all(Path(p).exists() for p in previous.get("outputs", {}).values())


def _finish(manifest: RunManifest, out: Path, command: str, key: str) -> None:
    payload = manifest.payload()
    payload["cache_key"] = key
    atomic_write_text(out / f"{command}_manifest.json", stable_json(payload))


# -- commands -------------------------------------------------------------------


def cmd_generate(config: dict, out: Path) -> None:
    gen = config["generate"]
    key = cache_key({"generate": gen, "seed": config["seed"]}, {})
    if _cached(out, "generate", key):
        print("generate: cached, nothing to do")
        return
    manifest = RunManifest("generate", config, __version__)
    scene, gt = generate_synthetic_scene(
        seed=config["seed"], height=gen["height"], width=gen["width"],
        bands=gen["bands"], n_materials=gen["materials"],
        n_polygons=gen["polygons"], gsd_m=gen["gsd_m"],
        brightness_jitter=gen["brightness_jitter"], noise_sigma=gen["noise_sigma"],
    )
    scene_path = out / "scene.bip"
    gt_path = out / "ground_truth.json"
    save_scene(scene, scene_path)
    save_ground_truth(gt, gt_path)
    manifest.record_timing("generate")
    manifest.add_output("scene", scene_path)
    manifest.add_output("scene_header", Path(str(scene_path) + ".json"))
    manifest.add_output("ground_truth", gt_path)
    _finish(manifest, out, "generate", key)
    print(f"generate: wrote {scene_path} and {gt_path}")


def _world_paths(config: dict, out: Path) -> tuple[Path, Path]:
    scene_path = Path(config["scene"]) if config["scene"] else out / "scene.bip"
    gt_path = Path(config["ground_truth"]) if config["ground_truth"] else out / "ground_truth.json"
    return scene_path, gt_path


def _grouped_world(config: dict, scene_path: Path, gt_path: Path):
    scene = load_scene(scene_path)
    gt = load_ground_truth(gt_path)
    gt_grouped, n_groups = group_polygons(
        gt, radius_m=config["split"]["radius_m"], gsd_m=scene.gsd_m
    )
    labels = rasterize_ground_truth(scene, gt_grouped)
    groups = rasterize_groups(scene, gt_grouped)
    counts = class_pixel_counts(labels, groups)
    return scene, gt_grouped, labels, groups, counts


def cmd_split(config: dict, out: Path) -> None:
    scene_path, gt_path = _world_paths(config, out)
    _require(scene_path, "scene", "generate")
    _require(gt_path, "ground truth", "generate")
    split_cfg = config["split"]
    inputs = {"scene": sha256_file(scene_path), "ground_truth": sha256_file(gt_path)}
    key = cache_key({"split": split_cfg, "seed": config["seed"]}, inputs)
    if _cached(out, "split", key):
        print("split: cached, nothing to do")
        return
    manifest = RunManifest("split", config, __version__)
    manifest.add_input(scene_path)
    manifest.add_input(gt_path)
    scene, gt_grouped, labels, groups, counts = _grouped_world(config, scene_path, gt_path)
    manifest.record_timing("group_and_count")
    problem = SplitProblem(
        counts, p_train=split_cfg["p_train"], p_val=split_cfg["p_val"],
        p_test=split_cfg["p_test"],
    )
    portfolio = enumerate_diverse_splits(
        problem, k=split_cfg["count"], min_hamming=split_cfg["min_hamming"],
        seed=config["seed"], cap=split_cfg["exact_cap"], budget=split_cfg["budget"],
    )
    manifest.record_timing("solve")
    if not portfolio.assignments:
        raise InfeasibleSplitError(
            f"no feasible split for p=({split_cfg['p_train']}, {split_cfg['p_val']}, "
            f"{split_cfg['p_test']}) over {problem.n_groups} groups"
        )
    for i, assignment in enumerate(portfolio.assignments):
        path = out / f"split_{i:02d}.json"
        save_split(problem, assignment, path)
        manifest.add_output(f"split_{i:02d}", path)
    _finish(manifest, out, "split", key)
    print(
        f"split: wrote {len(portfolio.assignments)} split file(s); "
        f"exhausted={portfolio.exhausted}"
    )


def cmd_features(config: dict, out: Path) -> None:
    scene_path, _ = _world_paths(config, out)
    _require(scene_path, "scene", "generate")
    feat_cfg = config["features"]
    inputs = {"scene": sha256_file(scene_path)}
    key = cache_key({"features": feat_cfg}, inputs)
    if _cached(out, "features", key):
        print("features: cached, nothing to do")
        return
    manifest = RunManifest("features", config, __version__)
    manifest.add_input(scene_path)
    scene = load_scene(scene_path)
    tile, stride = feat_cfg["tile"], feat_cfg["stride"]
    ids, rows = [], []
    fconfig = PatchFeatureConfig()
    for y0 in range(0, scene.height - tile + 1, stride):
        for x0 in range(0, scene.width - tile + 1, stride):
            patch = scene.cube[y0 : y0 + tile, x0 : x0 + tile, :]
            ids.append(f"tile_{y0}_{x0}")
            rows.append(extract_patch_feature(patch, scene.axis, scene.gsd_m, fconfig))
    if not ids:
        raise ConfigError(
            [f"scene is smaller than one {tile}x{tile} tile; nothing to extract"]
        )
    path = out / "features.csv"
    write_features_csv(path, ids, np.stack(rows), fconfig)
    manifest.record_timing("extract")
    manifest.add_output("features", path)
    _finish(manifest, out, "features", key)
    print(f"features: wrote {path} ({len(ids)} patches x {FEATURE_LENGTH})")


def _split_files(config: dict, out: Path) -> list[Path]:
    if config["split_file"]:
        return [_require(config["split_file"], "split file", "split")]
    files = sorted(out.glob("split_*.json"))
    if not files:
        raise DependencyError(f"no split files in {out}; run `hsikit split` first")
    return files


def _set_map(groups: np.ndarray, assignment) -> np.ndarray:
    set_map = np.zeros_like(groups)
    grouped = groups >= 0
    set_map[grouped] = assignment.sets[groups[grouped]]
    return set_map


def _check_problem_hash(problem: SplitProblem, payload: dict, path: Path) -> None:
    if problem_hash(problem) != payload["problem_hash"]:
        raise DependencyError(
            f"{path} was solved for a different grouping or proportions than the "
            "current config produces; re-run `hsikit split` or fix split.radius_m/p_*"
        )


def cmd_pretrain(config: dict, out: Path) -> None:
    scene_path, gt_path = _world_paths(config, out)
    _require(scene_path, "scene", "generate")
    _require(gt_path, "ground truth", "generate")
    split_path = _split_files(config, out)[0]
    inputs = {
        "scene": sha256_file(scene_path),
        "ground_truth": sha256_file(gt_path),
        "split": sha256_file(split_path),
    }
    key = cache_key(
        {"mae": config["mae"], "ae": config["ae"], "pretrain": config["pretrain"],
         "radius_m": config["split"]["radius_m"]},
        inputs,
    )
    if _cached(out, "pretrain", key):
        print("pretrain: cached, nothing to do")
        return
    manifest = RunManifest("pretrain", config, __version__)
    for p in (scene_path, gt_path, split_path):
        manifest.add_input(p)
    scene, gt_grouped, labels, groups, counts = _grouped_world(config, scene_path, gt_path)
    problem = SplitProblem(
        counts, p_train=config["split"]["p_train"], p_val=config["split"]["p_val"],
        p_test=config["split"]["p_test"],
    )
    payload, assignment = load_split(split_path)
    _check_problem_hash(problem, payload, split_path)
    set_map = _set_map(groups, assignment)

    spectra = scene.cube.reshape(-1, scene.band_count).astype(np.float64)
    pool = spectra[(set_map == 2).ravel()]
    unlabeled = spectra[(set_map == 0).ravel()]
    max_unlabeled = config["pretrain"]["max_unlabeled"]
    if unlabeled.shape[0] > max_unlabeled:
        rng = np.random.default_rng([config["seed"], 515041])
        unlabeled = unlabeled[rng.choice(unlabeled.shape[0], max_unlabeled, replace=False)]
    train_set = np.concatenate([pool, unlabeled], axis=0)
    if train_set.shape[0] < 10:
        raise DependencyError(
            "fewer than 10 pretraining spectra (labeled pool + unlabeled); "
            "the split leaves nothing to pretrain on"
        )
    manifest.record_timing("assemble")

    mae_net, mae_curve = mae_mod.train_mae(train_set, mae_mod.MAEConfig(**config["mae"]))
    mae_path = out / "mae.ckpt"
    mae_mod.save_checkpoint(
        mae_net, mae_path,
        metadata={"epochs": len(mae_curve.train),
                  "final_train_loss": mae_curve.train[-1],
                  "final_val_loss": mae_curve.validation[-1]},
    )
    mae_curve.to_csv(out / "mae_loss.csv")
    manifest.record_timing("train_mae")

    ae_net, ae_curve = ae_mod.train_autoencoder(train_set, ae_mod.AEConfig(**config["ae"]))
    ae_path = out / "ae.ckpt"
    ae_mod.save_checkpoint(
        ae_net, ae_path,
        metadata={"epochs": len(ae_curve.train),
                  "final_train_loss": ae_curve.train[-1],
                  "final_val_loss": ae_curve.validation[-1]},
    )
    ae_curve.to_csv(out / "ae_loss.csv")
    manifest.record_timing("train_ae")

    for name, path in (
        ("mae_checkpoint", mae_path),
        ("mae_metadata", Path(str(mae_path) + ".json")),
        ("mae_loss", out / "mae_loss.csv"),
        ("ae_checkpoint", ae_path),
        ("ae_metadata", Path(str(ae_path) + ".json")),
        ("ae_loss", out / "ae_loss.csv"),
    ):
        manifest.add_output(name, path)
    _finish(manifest, out, "pretrain", key)
    print(f"pretrain: wrote {mae_path} and {ae_path}")


def _pixel_sets(labels, groups, assignment):
    set_map = _set_map(groups, assignment)
    labeled = labels > 0
    train_mask = labeled & (set_map == 1)
    test_mask = labeled & (set_map == 4)
    return train_mask, test_mask


def _embedder(model_name: str, out: Path):
    if model_name.startswith("mae+"):
        path = _require(out / "mae.ckpt", "MAE checkpoint", "pretrain")
        net = mae_mod.load_checkpoint(path)
        return lambda X: net.cls_embeddings(X), path
    if model_name.startswith("ae+"):
        path = _require(out / "ae.ckpt", "autoencoder checkpoint", "pretrain")
        net = ae_mod.load_checkpoint(path)
        return lambda X: net.embed(X), path
    return (lambda X: X), None


def cmd_classify(config: dict, out: Path) -> None:
    scene_path, gt_path = _world_paths(config, out)
    _require(scene_path, "scene", "generate")
    _require(gt_path, "ground truth", "generate")
    split_paths = _split_files(config, out)
    models = config["classify"]["models"]
    inputs = {
        "scene": sha256_file(scene_path),
        "ground_truth": sha256_file(gt_path),
    }
    for p in split_paths:
        inputs[p.name] = sha256_file(p)
    for m in models:
        if m.startswith("mae+"):
            inputs["mae.ckpt"] = sha256_file(_require(out / "mae.ckpt", "MAE checkpoint", "pretrain"))
        if m.startswith("ae+"):
            inputs["ae.ckpt"] = sha256_file(_require(out / "ae.ckpt", "autoencoder checkpoint", "pretrain"))
    key = cache_key(
        {"classify": config["classify"], "radius_m": config["split"]["radius_m"],
         "seed": config["seed"]},
        inputs,
    )
    if _cached(out, "classify", key):
        print("classify: cached, nothing to do")
        return
    manifest = RunManifest("classify", config, __version__)
    for p in (scene_path, gt_path, *split_paths):
        manifest.add_input(p)
    scene, gt_grouped, labels, groups, counts = _grouped_world(config, scene_path, gt_path)
    problem = SplitProblem(
        counts, p_train=config["split"]["p_train"], p_val=config["split"]["p_val"],
        p_test=config["split"]["p_test"],
    )
    spectra = scene.cube.reshape(-1, scene.band_count).astype(np.float64)
    flat_labels = labels.ravel()
    embeddings: dict[str, np.ndarray] = {}

    for split_idx, split_path in enumerate(split_paths):
        payload, assignment = load_split(split_path)
        _check_problem_hash(problem, payload, split_path)
        train_mask, test_mask = _pixel_sets(labels, groups, assignment)
        train_ids = np.nonzero(train_mask.ravel())[0]
        test_ids = np.nonzero(test_mask.ravel())[0]
        if train_ids.size == 0 or test_ids.size == 0:
            raise DependencyError(
                f"{split_path} leaves an empty train or test pixel set on this scene"
            )
        for model_name in models:
            prefix = model_name.split("+")[0] if "+" in model_name else "raw"
            if prefix not in embeddings:
                embed, _ = _embedder(model_name, out)
                embeddings[prefix] = embed(spectra)
            feats = embeddings[prefix]
            head = model_name.split("+")[-1]
            if head == "knn":
                clf = NearestNeighborClassifier(k=config["classify"]["knn_k"])
            else:
                clf = RandomForest(
                    n_trees=config["classify"]["rf_trees"], seed=config["seed"]
                )
            clf.fit(feats[train_ids], flat_labels[train_ids])
            predicted = clf.predict(feats[test_ids])
            path = out / f"predictions_{model_name}_split{split_idx:02d}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["pixel_id", "true_label", "predicted_label"])
                for pid, t, pr in zip(test_ids, flat_labels[test_ids], predicted):
                    writer.writerow([int(pid), int(t), int(pr)])
            manifest.add_output(f"predictions_{model_name}_split{split_idx:02d}", path)
        manifest.record_timing(f"split{split_idx:02d}")
    _finish(manifest, out, "classify", key)
    print(f"classify: wrote predictions for {models} on {len(split_paths)} split(s)")


def cmd_evaluate(config: dict, out: Path) -> None:
    scene_path, gt_path = _world_paths(config, out)
    _require(scene_path, "scene", "generate")
    _require(gt_path, "ground truth", "generate")
    prediction_files = sorted(out.glob("predictions_*.csv"))
    if not prediction_files:
        raise DependencyError(f"no predictions in {out}; run `hsikit classify` first")
    split_paths = _split_files(config, out)
    inputs = {p.name: sha256_file(p) for p in prediction_files}
    inputs["scene"] = sha256_file(scene_path)
    inputs["ground_truth"] = sha256_file(gt_path)
    for p in split_paths:
        inputs[p.name] = sha256_file(p)
    key = cache_key({"radius_m": config["split"]["radius_m"]}, inputs)
    if _cached(out, "evaluate", key):
        print("evaluate: cached, nothing to do")
        return
    manifest = RunManifest("evaluate", config, __version__)
    for p in (scene_path, gt_path, *prediction_files):
        manifest.add_input(p)
    scene, gt_grouped, labels, groups, counts = _grouped_world(config, scene_path, gt_path)
    n_classes = int(labels.max())
    flat_labels = labels.ravel()
    test_ids_per_split: dict[int, set] = {}
    for split_idx, split_path in enumerate(split_paths):
        _, assignment = load_split(split_path)
        _, test_mask = _pixel_sets(labels, groups, assignment)
        test_ids_per_split[split_idx] = set(np.nonzero(test_mask.ravel())[0].tolist())

    for path in prediction_files:
        stem = path.stem.removeprefix("predictions_")
        model_name, _, split_tag = stem.rpartition("_split")
        split_idx = int(split_tag)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = [(int(r[0]), int(r[1]), int(r[2])) for r in reader]
        ids = {r[0] for r in rows}
        expected = test_ids_per_split.get(split_idx, set())
        if ids != expected:
            raise DependencyError(
                f"{path.name} does not cover exactly the test pixels of split "
                f"{split_idx} ({len(ids)} vs {len(expected)} pixels)"
            )
        for pid, true, _ in rows:
            if flat_labels[pid] != true:
                raise DependencyError(f"{path.name}: true label mismatch at pixel {pid}")
        y_true = np.array([r[1] for r in rows])
        y_pred = np.array([r[2] for r in rows])
        report = metrics_mod.metrics_report(y_true, y_pred, n_classes)
        out_path = out / f"metrics_{model_name}_split{split_idx:02d}.json"
        metrics_mod.save_report(report, out_path)
        manifest.add_output(f"metrics_{model_name}_split{split_idx:02d}", out_path)
    manifest.record_timing("evaluate")
    _finish(manifest, out, "evaluate", key)
    print(f"evaluate: wrote metrics for {len(prediction_files)} prediction file(s)")


def cmd_report(config: dict, out: Path) -> None:
    run_dirs = [out] + [Path(p) for p in config["report"]["runs"]]
    metric_files = []
    for run in run_dirs:
        metric_files.extend(sorted(run.glob("metrics_*_split*.json")))
    if not metric_files:
        raise DependencyError(
            f"no metrics files in {[str(r) for r in run_dirs]}; run `hsikit evaluate` first"
        )
    inputs = {str(p): sha256_file(p) for p in metric_files}
    key = cache_key({"report": config["report"]}, inputs)
    if _cached(out, "report", key):
        print("report: cached, nothing to do")
        return
    manifest = RunManifest("report", config, __version__)
    for p in metric_files:
        manifest.add_input(p)
    scores: dict[str, list] = {}
    for path in metric_files:
        stem = path.stem.removeprefix("metrics_")
        model_name, _, _ = stem.rpartition("_split")
        data = json.loads(path.read_text())
        scores.setdefault(model_name, []).append((data["oa"], data["macro_f1"]))
    rows = {}
    for model_name, pairs in sorted(scores.items()):
        row = REPORT_ROWS.get(model_name, model_name)
        oa = [p[0] for p in pairs]
        f1 = [p[1] for p in pairs]
        rows[row] = {
            "oa": float(np.mean(oa)),
            "f1": float(np.mean(f1)),
            "n_runs": len(pairs),
        }
    report = {"models": rows, "toolkit_version": __version__}
    path = out / "report.json"
    atomic_write_text(path, stable_json(report))
    manifest.add_output("report", path)
    manifest.record_timing("report")
    _finish(manifest, out, "report", key)
    print(f"report: wrote {path} with rows {sorted(rows)}")


COMMANDS = {
    "generate": cmd_generate,
    "split": cmd_split,
    "features": cmd_features,
    "pretrain": cmd_pretrain,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsikit",
        description="Hyperspectral scene engineering and spectral baselines pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--scene", help="scene file (BIP + .json sidecar)")
        p.add_argument("--ground-truth", dest="ground_truth", help="ground-truth JSON")
        p.add_argument("--split-file", dest="split_file", help="specific split JSON")
        p.add_argument(
            "--model", action="append", choices=MODELS,
            help="restrict classify to these models (repeatable)",
        )
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        errors = validate_config(config)
        if errors:
            raise ConfigError(errors)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](config, out)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleSplitError as exc:
        print(f"infeasible split: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4
    return 0


def replay_manifest(manifest_path: str | Path, out: str | Path) -> int:
    """Re-run a command from its manifest's config snapshot into a new dir."""
    payload = load_manifest(manifest_path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    config = payload["config"]
    COMMANDS[payload["command"]](config, out)
    return 0


def main() -> None:
    sys.exit(run())
