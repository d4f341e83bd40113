"""Command-line entry point: ``equimesh <subcommand> ...``.

Exit codes: 0 on success, 2 when a check or input validation fails, 1 on any
other error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .checks import fixture_sample, invariance_check, model_gradcheck
from .errors import EquimeshError, LengthMismatch, ParseError, UnknownColor, UnsupportedFormat
from .features import PRESETS, FeatureConfig
from .mesh import reflection_x, rotation_z
from .meshio import load_labels, load_mesh, save_labels, save_mesh
from .model import VARIANTS, Model, load_checkpoint, shipped_config
from .objectives import LossWeights
from .pipeline import (
    CACHE_ENV,
    DATASET_LEVELS,
    DatasetManifest,
    Sample,
    cache_root,
    featurize,
    level_labels,
    load_entry_mesh,
    load_features,
    prepare_mesh,
    save_features,
)
from .spectral import cached_basis
from .synth import KINDS, synth_mesh
from .train_eval import (
    TrainConfig,
    evaluate,
    format_table,
    kfold_split,
    perturbation_suite,
    rows_to_csv,
    train_loop,
)

INDEX = "index.json"


class ValidationFailure(Exception):
    """A check ran to completion and its result is outside tolerance."""


# -- configuration ---------------------------------------------------------------------


def resolve_config(args) -> dict:
    """Merge a preset tag or JSON file with command-line overrides."""
    spec = getattr(args, "config", None) or "intra"
    if spec in PRESETS:
        cfg = {"dataset": spec}
    else:
        path = Path(spec)
        if not path.exists():
            raise FileNotFoundError(f"--config {spec!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
        cfg = json.loads(path.read_text())
    dataset = cfg.get("dataset", "intra")
    train = asdict(TrainConfig.for_dataset(dataset))
    train.update(cfg.get("train", {}))
    for name in ("epochs", "batch_size", "lr_init"):
        val = getattr(args, name, None)
        if val is not None:
            train[name] = val
    train["seed"] = args.seed
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(train) - known
    if unknown:
        raise ValueError(f"unknown training options {sorted(unknown)}")
    loss = asdict(LossWeights.for_dataset(dataset))
    loss.update(cfg.get("loss", {}))
    variant = getattr(args, "variant", None) or cfg.get("variant", "base")
    return {
        "dataset": dataset,
        "variant": variant,
        "seed": args.seed,
        "deterministic": bool(getattr(args, "deterministic", False)),
        "train": train,
        "loss": loss,
    }


def _echo(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, **resolved}, sort_keys=True))


# -- stored datasets ---------------------------------------------------------------------


def _read_index(directory: Path) -> dict:
    path = directory / INDEX
    if not path.exists():
        raise FileNotFoundError(f"{directory} has no {INDEX}; run the previous pipeline step first")
    return json.loads(path.read_text())


def load_feature_samples(features_dir) -> tuple[list[Sample], dict]:
    """Samples from a ``featurize`` output directory."""
    features_dir = Path(features_dir)
    index = _read_index(features_dir)
    prepared = Path(index["prepared"])
    tag = index["dataset_tag"]
    config = FeatureConfig.preset(tag) if tag in PRESETS else FeatureConfig()
    samples = []
    for e in index["entries"]:
        mesh = load_mesh(prepared / "meshes" / f"{e['id']}.off")
        n = {"vertex": mesh.n_vertices, "face": mesh.n_faces}.get(index["level"])
        feats = load_features(features_dir / f"{e['id']}.npz")
        if n is None:
            n = len(np.unique(np.sort(feats.directed_edges, axis=1), axis=0))
        labels = load_labels(prepared / "labels" / f"{e['id']}.txt", index["level"], n)
        samples.append(Sample(e["id"], mesh, feats, labels, index["level"], config, {"fold": e.get("fold")}))
    return samples, index


# -- subcommands ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    params = {}
    if args.kind in ("icosphere_cap", "ellipsoid"):
        params["level"] = args.level
    if args.kind == "icosphere_cap":
        params.update(cap_angle=args.cap_angle, bulge=args.bulge, noise=args.noise, random_axis=args.random_axis)
    _echo("synth", {"kind": args.kind, "seed": args.seed, "count": args.count, **params})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.count):
        seed = args.seed + i
        mesh = synth_mesh(args.kind, seed=seed, **params)
        stem = f"{args.kind}_{seed:03d}"
        save_mesh(out / f"{stem}.off", mesh)
        entry = {"id": stem, "mesh": f"{stem}.off", "level": "vertex"}
        if mesh.vertex_labels is not None:
            save_labels(out / f"{stem}.txt", mesh.vertex_labels)
            entry["labels"] = f"{stem}.txt"
        entries.append(entry)
        print(f"wrote {out / (stem + '.off')}")
    if args.manifest:
        manifest = {"dataset_tag": args.dataset, "entries": entries}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return 0


def cmd_preprocess(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    resolved = {"dataset": manifest.dataset_tag, "seed": args.seed, "n_meshes": len(manifest.entries)}
    _echo("preprocess", resolved)
    out = Path(args.out)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(exist_ok=True)
    cache = cache_root(args.cache) or manifest.cache_dir or out / "spectra"
    entries = []
    for e in manifest.entries:
        mesh = prepare_mesh(load_entry_mesh(e))
        labels = level_labels(mesh, e.level)
        if labels is None:
            raise LengthMismatch(f"{e.mesh_id}: no labels at level {e.level}")
        save_mesh(out / "meshes" / f"{e.mesh_id}.off", mesh)
        save_labels(out / "labels" / f"{e.mesh_id}.txt", labels)
        cached_basis(mesh, cache, e.mesh_id)
        entries.append({"id": e.mesh_id, "fold": e.fold})
        print(f"prepared {e.mesh_id}: {mesh.n_vertices} vertices, {mesh.n_faces} faces")
    level = manifest.entries[0].level if manifest.entries else DATASET_LEVELS.get(manifest.dataset_tag, "vertex")
    index = {"dataset_tag": manifest.dataset_tag, "level": level, "cache": str(cache), "entries": entries}
    (out / INDEX).write_text(json.dumps(index, indent=2))
    return 0


def cmd_featurize(args) -> int:
    prepared = Path(args.prepared)
    index = _read_index(prepared)
    tag = index["dataset_tag"]
    config = FeatureConfig.preset(tag) if tag in PRESETS else FeatureConfig()
    _echo("featurize", {"dataset": tag, "seed": args.seed, "features": list(config.node_feature_list)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = cache_root(args.cache) or Path(index["cache"])
    for e in index["entries"]:
        mesh = load_mesh(prepared / "meshes" / f"{e['id']}.off")
        feats = featurize(mesh, config, cache, e["id"])
        save_features(out / f"{e['id']}.npz", feats)
        print(f"featurized {e['id']}: node dim {feats.node_scalars.shape[1]}")
    out_index = dict(index, prepared=str(prepared.resolve()))
    (out / INDEX).write_text(json.dumps(out_index, indent=2))
    return 0


def _folds(samples, k: int, seed: int) -> list[list[str]]:
    ids = [s.mesh_id for s in samples]
    given = [s.meta.get("fold") for s in samples]
    if all(f is not None for f in given):
        return [[i for i, f in zip(ids, given) if f == fold] for fold in sorted(set(given))]
    return kfold_split(ids, k, seed)


def cmd_train(args) -> int:
    resolved = resolve_config(args)
    samples, index = load_feature_samples(args.features)
    resolved["dataset"] = index["dataset_tag"]
    _echo("train", resolved)
    config = TrainConfig(**resolved["train"])
    weights = LossWeights(**resolved["loss"])
    out = Path(args.out)
    plans = []
    if args.folds > 1:
        for i, held in enumerate(_folds(samples, args.folds, args.seed)):
            held = set(held)
            plans.append((out / f"fold{i}", [s for s in samples if s.mesh_id not in held], [s for s in samples if s.mesh_id in held]))
    else:
        plans.append((out, samples, None))
    for run_dir, train, val in plans:
        model = Model(shipped_config(index["dataset_tag"], resolved["variant"]), seed=args.seed)
        result = train_loop(
            model,
            train,
            config,
            val_samples=val,
            weights=weights,
            out_dir=run_dir,
            resume=args.resume,
            log=lambda r: print(json.dumps(r)),
        )
        rows = [{k: r[k] for k in ("epoch", "train_loss", "val_loss", "lr")} for r in result.history]
        rows_to_csv(rows, run_dir / "history.csv")
        print(f"{run_dir}: best epoch {result.best_epoch}, val loss {result.best_val!r}")
    return 0


def _load_model(path) -> Model:
    path = Path(path)
    if (path / "best").exists():
        path = path / "best"
    return load_checkpoint(path)[0]


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    samples, index = load_feature_samples(args.features)
    _echo("eval", {"dataset": index["dataset_tag"], "seed": args.seed, "variant": model.config.variant})
    report, _, _ = evaluate(model, samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = [{"n_meshes": len(samples), **report.summary()}]
    rows_to_csv(summary, out / "metrics.csv")
    rows_to_csv(report.class_rows(), out / "class_metrics.csv")
    per_mesh = [{"mesh": s.mesh_id, "avg_iou": iou} for s, iou in zip(samples, report.mesh_iou)]
    rows_to_csv(per_mesh, out / "mesh_metrics.csv")
    print(format_table(summary))
    print(format_table(report.class_rows()))
    return 0


def cmd_perturb(args) -> int:
    model = _load_model(args.checkpoint)
    samples, index = load_feature_samples(args.features)
    _echo("perturb", {"dataset": index["dataset_tag"], "seed": args.seed, "variant": model.config.variant})
    result = perturbation_suite(model, samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(out / "perturbation.csv")
    rows_to_csv(result.class_rows(), out / "perturbation_classes.csv")
    print(result.table())
    return 0


def cmd_gradcheck(args) -> int:
    resolved = resolve_config(args)
    variants = VARIANTS if args.variant in (None, "all") else (args.variant,)
    _echo("gradcheck", {"dataset": resolved["dataset"], "seed": args.seed, "variants": list(variants), "tol": args.tol})
    worst = 0.0
    for v in variants:
        rep = model_gradcheck(resolved["dataset"], v, seed=args.seed, max_coords=args.coords)
        print(f"{v}: max error {rep.worst:.3e} over {len(rep.per_block)} parameter blocks")
        worst = max(worst, rep.worst)
    if worst >= args.tol:
        raise ValidationFailure(f"gradient error {worst:.3e} >= {args.tol}")
    return 0


def cmd_invariance(args) -> int:
    resolved = resolve_config(args)
    tag = resolved["dataset"]
    _echo("invariance", {"dataset": tag, "variant": resolved["variant"], "seed": args.seed, "meshes": args.meshes, "tol": args.tol})
    model = Model(shipped_config(tag, resolved["variant"]), seed=args.seed)
    samples = [fixture_sample(tag, seed=args.seed + i) for i in range(args.meshes)]
    conditions = [("rot_z15", rotation_z(15.0), np.zeros(3)), ("rot_z40", rotation_z(40.0), np.zeros(3))]
    # cylindrical frame features are chiral, so only the intrinsic preset is reflection invariant
    if tag == "intra":
        conditions.append(("refl_x", reflection_x(), np.zeros(3)))
    rep = invariance_check(model, samples, conditions, seed=args.seed)
    for name, dev in rep.max_logit_dev.items():
        print(f"{name}: max logit deviation {dev:.3e}, argmax identical {rep.argmax_identical[name]}")
    if not rep.ok(args.tol):
        raise ValidationFailure(f"max deviation {rep.worst:.3e} >= {args.tol} or argmax changed")
    return 0


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help=f"preset ({', '.join(PRESETS)}) or JSON file")
    common.add_argument("--deterministic", action="store_true", help="64-bit seeded execution (runs are always deterministic; the flag is recorded)")
    common.add_argument("--cache", help=f"spectral cache directory (default ${CACHE_ENV})")

    parser = argparse.ArgumentParser(prog="equimesh", description="Equivariant mesh segmentation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic fixture meshes")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--cap-angle", type=float, default=30.0)
    p.add_argument("--bulge", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--random-axis", action="store_true")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", default=".")
    p.add_argument("--manifest", action="store_true", help="also write manifest.json")
    p.add_argument("--dataset", default="intra", help="dataset tag recorded in the manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="clean, normalise and cache spectra")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("featurize", parents=[common], help="write feature files")
    p.add_argument("prepared")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="train (optionally k-fold)")
    p.add_argument("features")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="lr_init", type=float)
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "score a checkpoint"), ("perturb", cmd_perturb, "rigid perturbation tables")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("checkpoint")
        p.add_argument("features")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of a full model")
    p.add_argument("--variant", choices=(*VARIANTS, "all"), default="all")
    p.add_argument("--coords", type=int, default=4, help="coordinates probed per parameter block")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("invariance", parents=[common], help="rigid-motion invariance of a random model")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--meshes", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_invariance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationFailure as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return 2
    except (ParseError, UnsupportedFormat, LengthMismatch, UnknownColor, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except (EquimeshError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
