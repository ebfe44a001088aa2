"""Command-line entry point: data generation, training, sampling, evaluation
and the resolution sweep.

Flags override values from an optional JSON config (--config); every run
writes the fully resolved configuration to <out>/run.json, and a run is
reproducible from that file alone via --config run.json.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import baselines as baselines_mod
from .errors import RoofgenError
from .geometry import Mesh
from .meshio import read_pgm, write_obj, write_pgm
from .metrics import evaluate_batch, report_to_json, write_report_csv
from .model import SamplerConfig, TrainSchedule, preset, sample_batch
from .raster import coverage_mask, frame_for_bounds
from .synthroof import ROOF_KINDS, RenderConfig, generate_dataset, load_manifest
from .tokenizer import SequenceLimits
from .training import load_model, train


def _resolve(args: argparse.Namespace, config: dict, defaults: dict) -> dict:
    """Flags win over config-file values, which win over defaults."""
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in config:
            resolved[key] = config[key]
        else:
            resolved[key] = default
    return resolved


def _write_run_json(out_dir: str, subcommand: str, resolved: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    doc = {"subcommand": subcommand, "args": resolved}
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _global_seed(args, config) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in config:
        return int(config["seed"])
    env = os.environ.get("ROOFGEN_SEED")
    if env is not None:
        return int(env)
    return 0


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return doc.get("args", doc) if isinstance(doc, dict) else {}


# -- subcommands ------------------------------------------------------------

GEN_DEFAULTS = {
    "n": 1000, "resolution": 32, "kinds": ",".join(ROOF_KINDS),
    "margin": 0.15, "out": None, "seed": 0,
}


def cmd_gen_data(args, config) -> int:
    resolved = _resolve(args, config, GEN_DEFAULTS)
    resolved["seed"] = _global_seed(args, config)
    if not resolved["out"]:
        raise RoofgenError("gen-data needs --out")
    kinds = tuple(k.strip() for k in resolved["kinds"].split(",") if k.strip())
    cfg = RenderConfig(resolution=resolved["resolution"], margin=resolved["margin"])
    manifest = generate_dataset(resolved["n"], resolved["seed"], cfg, kinds,
                                resolved["out"])
    _write_run_json(resolved["out"], "gen-data", resolved)
    print(os.path.join(resolved["out"], "manifest.json"))
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"split sizes: {counts}", file=sys.stderr)
    return 0


TRAIN_DEFAULTS = {
    "manifest": None, "preset": "toy", "out": None, "epochs": None,
    "patience": None, "batch_size": None, "lr": None, "mode": None,
    "max_steps": None, "seed": 0,
}


def _build_schedule(resolved: dict, base: TrainSchedule) -> TrainSchedule:
    updates = {}
    if resolved["epochs"] is not None:
        updates["max_epochs"] = resolved["epochs"]
    if resolved["patience"] is not None:
        updates["patience"] = resolved["patience"]
    if resolved["batch_size"] is not None:
        updates["batch_size"] = resolved["batch_size"]
    if resolved["lr"] is not None:
        updates["learning_rate"] = resolved["lr"]
    if resolved["mode"] is not None:
        updates["mode"] = resolved["mode"]
    if resolved["max_steps"] is not None:
        updates["max_steps"] = resolved["max_steps"]
    updates["seed"] = resolved["seed"]
    return replace(base, **updates)


def cmd_train(args, config) -> int:
    resolved = _resolve(args, config, TRAIN_DEFAULTS)
    resolved["seed"] = _global_seed(args, config)
    if not resolved["manifest"] or not resolved["out"]:
        raise RoofgenError("train needs --manifest and --out")
    manifest = load_manifest(resolved["manifest"])
    model_cfg, schedule = preset(resolved["preset"],
                                 image_resolution=manifest.image_resolution)
    schedule = _build_schedule(resolved, schedule)
    echo = {
        "preset": resolved["preset"],
        "config": model_cfg.to_dict(),
        "learning_rate": schedule.learning_rate,
        "beta1": schedule.beta1,
        "beta2": schedule.beta2,
        "dropouts": {
            "image_encoder": model_cfg.dropout_image_encoder,
            "vertex_decoder_and_face_encoder":
                model_cfg.dropout_vertex_decoder_and_face_encoder,
            "face_decoder": model_cfg.dropout_face_decoder,
        },
        "max_epochs": schedule.max_epochs,
        "patience": schedule.patience,
        "batch_size": schedule.batch_size,
        "mode": schedule.mode,
    }
    print(json.dumps(echo, indent=2, sort_keys=True))
    _write_run_json(resolved["out"], "train", resolved)
    result = train(manifest, model_cfg, schedule, out_dir=resolved["out"])
    print(result.checkpoint_path)
    print(f"epochs run: {result.epochs_run}, best val nll: "
          f"{result.best_val_nll:.4f}", file=sys.stderr)
    return 0


SAMPLE_DEFAULTS = {
    "checkpoint": None, "image": None, "manifest": None, "split": "test",
    "p": 0.95, "n_samples": 1, "out": None, "grammar_mask": True, "seed": 0,
}


def cmd_sample(args, config) -> int:
    resolved = _resolve(args, config, SAMPLE_DEFAULTS)
    resolved["seed"] = _global_seed(args, config)
    if getattr(args, "no_grammar_mask", False):
        resolved["grammar_mask"] = False
    if not resolved["checkpoint"] or not resolved["out"]:
        raise RoofgenError("sample needs --checkpoint and --out")
    if not resolved["image"] and not resolved["manifest"]:
        raise RoofgenError("sample needs --image or --manifest/--split")
    sampler = SamplerConfig(nucleus_p=resolved["p"], seed=resolved["seed"],
                            grammar_mask=resolved["grammar_mask"])
    print(f"nucleus p: {sampler.nucleus_p}", file=sys.stderr)
    model, _ = load_model(resolved["checkpoint"])
    os.makedirs(resolved["out"], exist_ok=True)
    _write_run_json(resolved["out"], "sample", resolved)

    degenerate = 0
    if resolved["image"]:
        image = read_pgm(resolved["image"])
        for j in range(resolved["n_samples"]):
            res = sample_batch(model, [image], sampler, row_offset=j)[0]
            degenerate += res.degenerate
            path = os.path.join(resolved["out"], f"sample_{j:03d}.obj")
            write_obj(res.mesh, path)
            print(path)
    else:
        manifest = load_manifest(resolved["manifest"])
        entries = manifest.split(resolved["split"])
        images = [read_pgm(manifest.resolve(e.image)) for e in entries]
        for j in range(resolved["n_samples"]):
            results = sample_batch(model, images, sampler,
                                   row_offset=j * len(images))
            for entry, res in zip(entries, results):
                degenerate += res.degenerate
                suffix = "" if j == 0 else f"_s{j}"
                path = os.path.join(resolved["out"],
                                    f"pred{entry.index:05d}{suffix}.obj")
                write_obj(res.mesh, path)
        print(resolved["out"])
    if degenerate:
        print(f"degenerate samples (fewer than 3 vertices): {degenerate}",
              file=sys.stderr)
    return 0


EVAL_DEFAULTS = {
    "manifest": None, "split": "test", "checkpoint": None, "predictions": None,
    "baseline": [], "k": 1, "knn_features": "auto", "iou_resolution": 256,
    "overlays": False, "polis_3d_vertices": False, "out": None, "seed": 0,
}


def _model_pairs(resolved, manifest, entries, truths):
    if resolved["predictions"]:
        pairs = []
        for entry, truth in zip(entries, truths):
            path = os.path.join(resolved["predictions"], f"pred{entry.index:05d}.obj")
            from .meshio import read_obj
            pairs.append((read_obj(path), truth))
        return pairs
    model, _ = load_model(resolved["checkpoint"])
    images = [read_pgm(manifest.resolve(e.image)) for e in entries]
    sampler = SamplerConfig(seed=resolved["seed"])
    results = sample_batch(model, images, sampler)
    n_deg = sum(r.degenerate for r in results)
    if n_deg:
        print(f"degenerate samples: {n_deg}", file=sys.stderr)
    return [(r.mesh, truth) for r, truth in zip(results, truths)]


def _write_overlays(out_dir, pairs):
    from .geometry import ImageGrid
    os.makedirs(out_dir, exist_ok=True)
    for i, (pred, truth) in enumerate(pairs):
        pts = [m.vertices[:, :2] for m in (pred, truth) if not m.is_empty()]
        if not pts:
            continue
        allpts = np.concatenate(pts, axis=0)
        frame = frame_for_bounds(allpts.min(axis=0), allpts.max(axis=0), 128,
                                 margin=0.05)
        for tag, mesh in (("pred", pred), ("truth", truth)):
            mask = coverage_mask(mesh.vertices, mesh.faces, frame)
            write_pgm(ImageGrid(mask.astype(float)),
                      os.path.join(out_dir, f"{i:05d}_{tag}.pgm"))


def _summary_line(name, report) -> str:
    agg = report.aggregate
    bits = [name]
    for metric in ("polis", "angular", "iou"):
        s = agg[metric]
        bits.append(f"{metric}={s.mean:.4f}+-{s.sdm:.4f}(n={s.count},excl={s.excluded})")
    return " ".join(bits)


def cmd_eval(args, config) -> int:
    resolved = _resolve(args, config, EVAL_DEFAULTS)
    resolved["seed"] = _global_seed(args, config)
    if not resolved["manifest"] or not resolved["out"]:
        raise RoofgenError("eval needs --manifest and --out")
    if resolved["checkpoint"] and resolved["predictions"]:
        raise RoofgenError("pass either --checkpoint or --predictions, not both")
    manifest = load_manifest(resolved["manifest"])
    entries = manifest.split(resolved["split"])
    if not entries:
        raise RoofgenError(f"split {resolved['split']!r} is empty")
    truths = [baselines_mod.eval_frame_mesh(manifest.resolve(e.mesh))
              for e in entries]
    os.makedirs(resolved["out"], exist_ok=True)
    _write_run_json(resolved["out"], "eval", resolved)

    methods: dict[str, list] = {}
    if resolved["checkpoint"] or resolved["predictions"]:
        methods["model"] = _model_pairs(resolved, manifest, entries, truths)
    for name in resolved["baseline"]:
        if name == "random":
            methods["random"] = baselines_mod.random_baseline(
                manifest, manifest, resolved["seed"])
        elif name == "knn":
            encoder = None
            if resolved["knn_features"] in ("auto", "encoder") and resolved["checkpoint"]:
                encoder, _ = load_model(resolved["checkpoint"])
            elif resolved["knn_features"] == "encoder":
                raise RoofgenError("--knn-features encoder needs --checkpoint")
            methods["knn"] = baselines_mod.feature_knn_baseline(
                manifest, manifest, encoder_model=encoder, k=resolved["k"])
        else:
            raise RoofgenError(f"unknown baseline {name!r}")
    if not methods:
        raise RoofgenError("nothing to evaluate: pass --checkpoint, "
                           "--predictions or --baseline")

    for name, pairs in methods.items():
        report = evaluate_batch(pairs, iou_resolution=resolved["iou_resolution"])
        with open(os.path.join(resolved["out"], f"report_{name}.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(report_to_json(report))
            fh.write("\n")
        write_report_csv(report,
                         os.path.join(resolved["out"], f"report_{name}.csv"))
        if resolved["polis_3d_vertices"]:
            from .metrics import polis_3d_vertices
            vals = []
            for pred, truth in pairs:
                try:
                    vals.append(polis_3d_vertices(pred, truth))
                except RoofgenError:
                    pass
            if vals:
                print(f"{name} polis3d={np.mean(vals):.4f}", file=sys.stderr)
        print(_summary_line(name, report))
    if resolved["overlays"] and "model" in methods:
        _write_overlays(os.path.join(resolved["out"], "overlays"),
                        methods["model"])
    return 0


SWEEP_DEFAULTS = {
    "manifest": None, "resolutions": "8,16,32", "preset": "toy", "out": None,
    "epochs": None, "patience": None, "batch_size": None, "lr": None,
    "max_steps": None, "mode": None, "seed": 0,
}


def cmd_resolution_sweep(args, config) -> int:
    resolved = _resolve(args, config, SWEEP_DEFAULTS)
    resolved["seed"] = _global_seed(args, config)
    if not resolved["manifest"] or not resolved["out"]:
        raise RoofgenError("resolution-sweep needs --manifest and --out")
    base = load_manifest(resolved["manifest"])
    n = base.meta.get("n", len(base.entries))
    kinds = tuple(base.meta.get("kinds", ROOF_KINDS))
    margin = base.meta.get("margin", 0.15)
    resolutions = [int(r) for r in str(resolved["resolutions"]).split(",")]
    os.makedirs(resolved["out"], exist_ok=True)
    _write_run_json(resolved["out"], "resolution-sweep", resolved)

    rows = []
    for res in resolutions:
        print(f"resolution {res}: generating + training", file=sys.stderr)
        data_dir = os.path.join(resolved["out"], f"res{res}", "data")
        cfg = RenderConfig(resolution=res, margin=margin)
        manifest = generate_dataset(n, base.seed, cfg, kinds, data_dir)
        model_cfg, schedule = preset(resolved["preset"], image_resolution=res)
        schedule = _build_schedule(resolved, schedule)
        run_dir = os.path.join(resolved["out"], f"res{res}", "run")
        result = train(manifest, model_cfg, schedule, out_dir=run_dir)
        entries = manifest.split("test")
        truths = [baselines_mod.eval_frame_mesh(manifest.resolve(e.mesh))
                  for e in entries]
        images = [read_pgm(manifest.resolve(e.image)) for e in entries]
        samples = sample_batch(result.model, images,
                               SamplerConfig(seed=resolved["seed"]))
        report = evaluate_batch([(s.mesh, t) for s, t in zip(samples, truths)],
                                iou_resolution=128)
        agg = report.aggregate
        rows.append((res, agg["polis"].mean, agg["polis"].sdm,
                     agg["angular"].mean, agg["angular"].sdm))

    best = min((r for r in rows if not np.isnan(r[1])), key=lambda r: r[1],
               default=rows[0])
    sweep_path = os.path.join(resolved["out"], "sweep.csv")
    with open(sweep_path, "w", newline="") as fh:
        fh.write("resolution,mean_polis,sdm_polis,mean_angular,sdm_angular,best_polis\n")
        for r in rows:
            flag = 1 if r[0] == best[0] else 0
            fh.write(f"{r[0]},{r[1]:.9g},{r[2]:.9g},{r[3]:.9g},{r[4]:.9g},{flag}\n")
    print(sweep_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roofgen",
        description="Single-image roof mesh generation pipeline")
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed (falls back to ROOFGEN_SEED)")
    parser.add_argument("--config", default=None,
                        help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic roof dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--kinds")
    p.add_argument("--margin", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the vertex and face models")
    p.add_argument("--manifest")
    p.add_argument("--preset", choices=("toy", "paper"))
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--mode", choices=("joint", "separate"))
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample meshes from a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--image")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--p", type=float)
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--no-grammar-mask", action="store_true",
                   dest="no_grammar_mask")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate predictions and baselines")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--baseline", action="append")
    p.add_argument("--k", type=int)
    p.add_argument("--knn-features", choices=("auto", "encoder", "pixels"),
                   dest="knn_features")
    p.add_argument("--iou-resolution", type=int, dest="iou_resolution")
    p.add_argument("--overlays", action="store_true", default=None)
    p.add_argument("--polis-3d-vertices", action="store_true", default=None,
                   dest="polis_3d_vertices")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("resolution-sweep",
                       help="train and evaluate across image resolutions")
    p.add_argument("--manifest")
    p.add_argument("--resolutions")
    p.add_argument("--preset", choices=("toy", "paper"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--mode", choices=("joint", "separate"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_resolution_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "p", None) is not None and not 0.0 < args.p <= 1.0:
        parser.error(f"--p must be in (0, 1], got {args.p}")
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except RoofgenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
