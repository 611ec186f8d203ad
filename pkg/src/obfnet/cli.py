"""Command-line entry points tying the pipeline together.

Every command takes `--config FILE` plus namespaced overrides such as
`--schedule.total-epochs 5`, writes its artifacts into a run directory
(timestamped under output_dir, or fixed via --run-dir) and exits nonzero
with a machine-readable error record on failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import detector as det_mod
from . import models as models_mod
from .config import ConfigError, ExperimentConfig, apply_overrides
from .core import (
    FrameManifest,
    FrameRecord,
    load_image,
    resolve_frame_path,
    save_image,
)
from .efficiency import count_macs, width_sweep
from .pipeline import (
    DependencyError,
    IngestionError,
    create_run_dir,
    ingest_video,
    read_artifact,
    write_artifact,
)
from .privacy_eval.ap import average_precision
from .privacy_eval.baselines import add_noise, blur, quantize
from .privacy_eval.harness import table3_harness
from .privacy_eval.metrics import similarity_report, mean_similarity
from .synth import SceneSpec, generate_dataset, two_camera_variant
from .training import TrainSchedule, train_adversarial


def _scene_from_config(cfg: ExperimentConfig) -> SceneSpec:
    s = cfg.dataset.synth
    return SceneSpec(
        height=s.height,
        width=s.width,
        min_figures=s.min_figures,
        max_figures=s.max_figures,
        seed=cfg.seed,
        figure_scale_range=(s.figure_scale_min, s.figure_scale_max),
    )


def _schedule_from_config(cfg: ExperimentConfig) -> TrainSchedule:
    sc = cfg.schedule
    return TrainSchedule(
        total_epochs=sc.total_epochs,
        lr_obf_initial=sc.lr_obf_initial,
        lr_deobf_initial=sc.lr_deobf_initial,
        milestone_period=sc.milestone_period,
        obf_decay_factor=sc.obf_decay_factor,
        deobf_decay_factor=sc.deobf_decay_factor,
        weight_decay=sc.weight_decay,
        batch_size=sc.batch_size,
        adversarial_weight=cfg.model.adversarial_weight,
        alternation=sc.alternation,
    )


def _spec_from_config(cfg: ExperimentConfig) -> models_mod.AutoencoderSpec:
    return models_mod.AutoencoderSpec(
        width_multiplier=cfg.model.width_multiplier,
        input_height=cfg.model.input_height,
        input_width=cfg.model.input_width,
    )


def _make_adapter(cfg: ExperimentConfig, detector_id: str, args) -> det_mod.DetectorAdapter:
    if detector_id == "toy-conv":
        toy_weights = getattr(args, "toy_weights", None)
        if toy_weights:
            return det_mod.load_toy_detector(toy_weights)
        raise DependencyError(
            "toy-conv adapter needs trained weights; pass --toy-weights "
            "(produced by the train command) or train one first"
        )
    return det_mod.create_adapter(detector_id, weights_dir=cfg.detector.weights_dir)


def _absolutize(manifest: FrameManifest, base: Path) -> FrameManifest:
    records = []
    for r in manifest:
        records.append(
            FrameRecord(
                r.frame_id,
                str(resolve_frame_path(r, base).resolve()),
                r.split,
                r.camera,
                r.labels,
            )
        )
    return FrameManifest(tuple(records))


def _load_manifest(path) -> tuple[FrameManifest, Path]:
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"missing upstream artifact: manifest {path}")
    return FrameManifest.load(path), path.parent


def _gt_boxes(manifest: FrameManifest, person_class_id: int = 1) -> dict:
    gt = {}
    for r in manifest:
        if r.labels is None:
            raise DependencyError(f"frame {r.frame_id} has no labels; run pseudo-gt first")
        gt[r.frame_id] = r.labels.person_boxes(person_class_id)
    return gt


# -- commands ---------------------------------------------------------------


def cmd_synth(cfg, args, run_dir: Path):
    scene = _scene_from_config(cfg)
    s = cfg.dataset.synth
    if s.two_cameras:
        man_a, man_b = two_camera_variant(scene, s.n_frames, run_dir / "dataset", s.split_ratio)
        return {
            "manifest_a": str(run_dir / "dataset" / "cam_a" / "manifest.jsonl"),
            "manifest_b": str(run_dir / "dataset" / "cam_b" / "manifest.jsonl"),
            "frames_a": len(man_a),
            "frames_b": len(man_b),
        }
    man = generate_dataset(scene, s.n_frames, s.split_ratio, run_dir / "dataset")
    return {"manifest": str(run_dir / "dataset" / "manifest.jsonl"), "frames": len(man)}


def cmd_ingest(cfg, args, run_dir: Path):
    man = ingest_video(
        args.input,
        run_dir / "dataset",
        target_resolution=(cfg.model.input_height, cfg.model.input_width),
        stride=args.stride,
        camera=args.camera,
    )
    return {"manifest": str(run_dir / "dataset" / "manifest.jsonl"), "frames": len(man)}


def cmd_pseudo_gt(cfg, args, run_dir: Path):
    manifest, base = _load_manifest(args.manifest)
    adapter = _make_adapter(cfg, args.adapter or cfg.detector.train_adapter, args)
    labeled = det_mod.generate_pseudo_ground_truth(
        adapter, manifest, base, cfg.detector.pseudo_gt_threshold
    )
    out = run_dir / "labeled_manifest.jsonl"
    _absolutize(labeled, base).save(out)
    return {"manifest": str(out), "frames": len(labeled)}


def cmd_train(cfg, args, run_dir: Path):
    manifest, base = _load_manifest(args.manifest)
    detector_id = cfg.detector.train_adapter
    if detector_id == "toy-conv":
        if getattr(args, "toy_weights", None):
            adapter = det_mod.load_toy_detector(args.toy_weights)
        else:
            adapter = det_mod.train_toy_detector(
                manifest,
                base,
                epochs=cfg.detector.toy_epochs,
                seed=cfg.seed,
                adapter=det_mod.ToyConvDetector(
                    seed=cfg.seed, anchor=cfg.detector.toy_anchor
                ),
            )
        det_mod.save_toy_detector(adapter, run_dir / "toy_detector.pt")
    else:
        adapter = det_mod.create_adapter(detector_id, weights_dir=cfg.detector.weights_dir)

    spec = _spec_from_config(cfg)
    obf = models_mod.build_autoencoder(spec, models_mod.ROLE_OBFUSCATOR, cfg.seed)
    deobf = models_mod.build_autoencoder(spec, models_mod.ROLE_DEOBFUSCATOR, cfg.seed + 1)
    schedule = _schedule_from_config(cfg)
    obf, deobf, history = train_adversarial(
        obf,
        deobf,
        adapter,
        manifest,
        base,
        schedule,
        seed=cfg.seed,
        checkpoint_path=run_dir / "checkpoint.pt",
        resume_from=args.resume,
        config_hash=cfg.config_hash(),
    )
    models_mod.save_model(obf, run_dir / "obfuscator.model")
    models_mod.save_model(deobf, run_dir / "deobfuscator.model")
    history.save(run_dir / "history.jsonl")
    return {
        "obfuscator": str(run_dir / "obfuscator.model"),
        "deobfuscator": str(run_dir / "deobfuscator.model"),
        "history": str(run_dir / "history.jsonl"),
        "epochs": len(history.records),
        "final_loss_obj": history.records[-1].loss_obj if history.records else None,
    }


def cmd_obfuscate(cfg, args, run_dir: Path):
    manifest, base = _load_manifest(args.manifest)
    model = models_mod.load_model(args.model, expected_role=models_mod.ROLE_OBFUSCATOR)
    out_dir = run_dir / "obfuscated"
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    records = []
    for r in manifest:
        image = load_image(resolve_frame_path(r, base))
        (out,) = models_mod.forward(model, [image])
        rel = f"frames/{r.frame_id}.png"
        save_image(out, out_dir / rel)
        records.append(FrameRecord(r.frame_id, rel, r.split, r.camera, r.labels))
    out_man = FrameManifest(tuple(records))
    out_man.save(out_dir / "manifest.jsonl")
    return {"manifest": str(out_dir / "manifest.jsonl"), "frames": len(out_man)}


def cmd_eval_ap(cfg, args, run_dir: Path):
    gt_manifest, gt_base = _load_manifest(args.gt_manifest)
    frames_manifest, frames_base = (
        _load_manifest(args.frames_manifest)
        if args.frames_manifest
        else (gt_manifest, gt_base)
    )
    adapter = _make_adapter(cfg, args.adapter or cfg.detector.train_adapter, args)
    gt = _gt_boxes(gt_manifest, adapter.person_class_id)
    dets = {}
    for r in frames_manifest:
        image = load_image(resolve_frame_path(r, frames_base))
        dets[r.frame_id] = [
            d
            for d in adapter.detect(image, cfg.eval.det_score_threshold)
            if d.class_id == adapter.person_class_id
        ]
    result = average_precision(dets, gt, cfg.eval.iou_threshold)
    write_artifact(run_dir / "ap.json", result.to_dict(), cfg.config_hash())
    return {"ap": str(run_dir / "ap.json"), "person_ap": result.person_ap}


def cmd_eval_similarity(cfg, args, run_dir: Path):
    man_a, base_a = _load_manifest(args.original)
    man_b, base_b = _load_manifest(args.obfuscated)
    ids_a = {r.frame_id: r for r in man_a}
    per_frame = {}
    pairs = []
    for r in man_b:
        if r.frame_id not in ids_a:
            raise DependencyError(f"frame {r.frame_id} missing from original manifest")
        a = load_image(resolve_frame_path(ids_a[r.frame_id], base_a))
        b = load_image(resolve_frame_path(r, base_b))
        per_frame[r.frame_id] = similarity_report(a, b).to_dict()
        pairs.append((a, b))
    mean = mean_similarity(iter(pairs))
    payload = {"mean": mean.to_dict(), "per_frame": per_frame}
    write_artifact(run_dir / "similarity.json", payload, cfg.config_hash())
    return {"similarity": str(run_dir / "similarity.json"), "mean": mean.to_dict()}


def cmd_table3(cfg, args, run_dir: Path):
    manifest, base = _load_manifest(args.manifest)
    adapter = _make_adapter(cfg, args.adapter or cfg.detector.train_adapter, args)
    model = models_mod.load_model(args.model, expected_role=models_mod.ROLE_OBFUSCATOR)
    e = cfg.eval
    seed = cfg.seed
    methods = {
        "ours": lambda img: models_mod.forward(model, [img])[0],
        "blur": lambda img: blur(img, tuple(e.blur_kernel)),
        "noise": lambda img: add_noise(img, e.noise_factor, seed),
        "quantize": lambda img: quantize(img, e.quantize_levels),
    }
    has_exact = all(
        r.labels is not None and r.labels.provenance.kind == "synthetic-exact"
        for r in manifest
    )
    gt = _gt_boxes(manifest, adapter.person_class_id) if has_exact else None
    table = table3_harness(
        methods,
        manifest,
        base,
        adapter,
        gt_score_threshold=cfg.detector.pseudo_gt_threshold,
        det_score_threshold=e.det_score_threshold,
        iou_threshold=e.iou_threshold,
        thumbnail_dir=run_dir / "thumbnails",
        ground_truth=gt,
    )
    (run_dir / "table3.txt").write_text(table.to_text() + "\n")
    write_artifact(run_dir / "table3.json", table.to_dict(), cfg.config_hash())
    return {"table": str(run_dir / "table3.txt")}


def cmd_cross_model(cfg, args, run_dir: Path):
    manifest, base = _load_manifest(args.manifest)
    obfuscators = [("identity", None)]
    for entry in args.model or []:
        if "=" not in entry:
            raise ConfigError(f"--model expects NAME=PATH, got {entry!r}")
        name, path = entry.split("=", 1)
        obfuscators.append(
            (name, models_mod.load_model(path, expected_role=models_mod.ROLE_OBFUSCATOR))
        )
    adapters = [
        _make_adapter(cfg, det_id, args) for det_id in cfg.detector.eval_adapters
    ]
    gt_adapter = _make_adapter(cfg, args.gt_adapter or cfg.detector.eval_adapters[0], args)
    grid = det_mod.cross_model_matrix(
        obfuscators,
        adapters,
        manifest,
        base,
        gt_adapter,
        gt_score_threshold=cfg.detector.pseudo_gt_threshold,
        det_score_threshold=cfg.eval.det_score_threshold,
        iou_threshold=cfg.eval.iou_threshold,
    )
    (run_dir / "cross_model.txt").write_text(grid.to_text() + "\n")
    write_artifact(
        run_dir / "cross_model.json",
        {
            "rows": list(grid.row_names),
            "cols": list(grid.col_names),
            "cells": [list(r) for r in grid.cells],
            "errors": list(grid.errors),
        },
        cfg.config_hash(),
    )
    return {"grid": str(run_dir / "cross_model.txt")}


def cmd_macs(cfg, args, run_dir: Path):
    spec = _spec_from_config(cfg)
    report = count_macs(spec)
    (run_dir / "efficiency.txt").write_text(report.to_text() + "\n")
    write_artifact(
        run_dir / "efficiency.json",
        {
            "macs_gops": report.macs_gops,
            "params_m": report.params_m,
            "input_resolution": list(report.input_resolution),
            "convention": report.convention,
            "layers": [dataclasses.asdict(l) for l in report.layers],
        },
        cfg.config_hash(),
    )
    return {
        "report": str(run_dir / "efficiency.txt"),
        "macs_gops": report.macs_gops,
        "params_m": report.params_m,
    }


def cmd_sweep(cfg, args, run_dir: Path):
    manifest, base = _load_manifest(args.manifest)
    adapter = det_mod.train_toy_detector(
        manifest,
        base,
        epochs=cfg.detector.toy_epochs,
        seed=cfg.seed,
        adapter=det_mod.ToyConvDetector(seed=cfg.seed, anchor=cfg.detector.toy_anchor),
    )
    schedule = _schedule_from_config(cfg)
    test = manifest.subset(split="test")
    gt = _gt_boxes(test, adapter.person_class_id)
    clean = {r.frame_id: load_image(resolve_frame_path(r, base)) for r in test}

    def run_one(spec: models_mod.AutoencoderSpec) -> float:
        obf = models_mod.build_autoencoder(spec, models_mod.ROLE_OBFUSCATOR, cfg.seed)
        deobf = models_mod.build_autoencoder(
            spec, models_mod.ROLE_DEOBFUSCATOR, cfg.seed + 1
        )
        obf, _, _ = train_adversarial(
            obf, deobf, adapter, manifest, base, schedule, seed=cfg.seed
        )
        fids = list(clean)
        outs = models_mod.forward(obf, [clean[f] for f in fids])
        dets = {
            f: [
                d
                for d in adapter.detect(img, cfg.eval.det_score_threshold)
                if d.class_id == adapter.person_class_id
            ]
            for f, img in zip(fids, outs)
        }
        return average_precision(dets, gt, cfg.eval.iou_threshold).person_ap

    results = width_sweep(
        cfg.eval.sweep_alphas,
        run_one,
        base_spec=_spec_from_config(cfg),
        plot_path=run_dir / "sweep.png",
    )
    write_artifact(run_dir / "sweep.json", {"results": results}, cfg.config_hash())
    return {"sweep": str(run_dir / "sweep.json"), "plot": str(run_dir / "sweep.png")}


def cmd_report(cfg, args, run_dir: Path):
    train_run = Path(args.train_run)
    meta = read_artifact(train_run / "meta.json")
    for artifact in args.artifact or []:
        payload = read_artifact(Path(artifact))
        if payload.get("config_hash") != meta["config_hash"] and not args.force:
            raise DependencyError(
                f"artifact {artifact} was produced under config hash "
                f"{payload.get('config_hash', '?')[:12]}, train run has "
                f"{meta['config_hash'][:12]}; pass --force to combine anyway"
            )
    manifest, base = _load_manifest(args.manifest)
    obf = models_mod.load_model(
        train_run / "obfuscator.model", expected_role=models_mod.ROLE_OBFUSCATOR
    )
    deobf = models_mod.load_model(
        train_run / "deobfuscator.model", expected_role=models_mod.ROLE_DEOBFUSCATOR
    )
    test = manifest.subset(split="test")
    rows = []
    for r in list(test)[: args.n_frames]:
        x = load_image(resolve_frame_path(r, base))
        (ox,) = models_mod.forward(obf, [x])
        (rx,) = models_mod.forward(deobf, [ox])
        rows.append((x, ox, rx))
    grid = np.concatenate(
        [np.concatenate([im.values for im in row], axis=1) for row in rows], axis=0
    )
    from .core import clamp_image

    save_image(clamp_image(grid), run_dir / "report.png")
    return {"report": str(run_dir / "report.png"), "frames": len(rows)}


# -- argument parsing ---------------------------------------------------------


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic labeled dataset"),
    "ingest": (cmd_ingest, "extract frames from video or an image directory"),
    "pseudo-gt": (cmd_pseudo_gt, "label a manifest with detector pseudo-ground-truth"),
    "train": (cmd_train, "adversarially train obfuscator and deobfuscator"),
    "obfuscate": (cmd_obfuscate, "run a trained obfuscator over a manifest"),
    "eval-ap": (cmd_eval_ap, "person AP of a detector against manifest labels"),
    "eval-similarity": (cmd_eval_similarity, "SSIM/MSE/PSNR/NMI between two manifests"),
    "table3": (cmd_table3, "compare the obfuscator with classical baselines"),
    "cross-model": (cmd_cross_model, "AP grid of obfuscators x detectors"),
    "macs": (cmd_macs, "MAC/parameter report for the configured model"),
    "sweep": (cmd_sweep, "width-multiplier sweep: MACs vs person AP"),
    "report": (cmd_report, "original/obfuscated/reconstructed image grids"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obfnet")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--run-dir", help="fixed run directory (default: timestamped)")
        if name == "ingest":
            p.add_argument("--input", required=True)
            p.add_argument("--stride", type=int, default=1)
            p.add_argument("--camera", default="ingested")
        if name in ("pseudo-gt", "train", "table3", "cross-model", "sweep"):
            p.add_argument("--manifest", required=True)
        if name in ("pseudo-gt", "eval-ap", "table3"):
            p.add_argument("--adapter", help="detector id (default from config)")
        if name in ("pseudo-gt", "eval-ap", "table3", "cross-model", "train"):
            p.add_argument("--toy-weights", help="trained toy detector weights")
        if name == "train":
            p.add_argument("--resume", help="checkpoint to resume from")
        if name == "obfuscate":
            p.add_argument("--manifest", required=True)
            p.add_argument("--model", required=True)
        if name == "table3":
            p.add_argument("--model", required=True)
        if name == "cross-model":
            p.add_argument("--model", action="append", help="NAME=PATH, repeatable")
            p.add_argument("--gt-adapter")
        if name == "eval-ap":
            p.add_argument("--gt-manifest", required=True)
            p.add_argument("--frames-manifest")
        if name == "eval-similarity":
            p.add_argument("--original", required=True)
            p.add_argument("--obfuscated", required=True)
        if name == "report":
            p.add_argument("--train-run", required=True)
            p.add_argument("--manifest", required=True)
            p.add_argument("--artifact", action="append")
            p.add_argument("--n-frames", type=int, default=4)
            p.add_argument("--force", action="store_true")
    return parser


def _parse_overrides(extra: list[str]) -> dict:
    """`--schedule.total-epochs 5` style namespaced flags."""
    overrides = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            i += 1
            if i >= len(extra):
                raise ConfigError(f"override {tok} needs a value")
            raw = extra[i]
        overrides[key] = yaml.safe_load(raw)
        i += 1
    return overrides


def main(argv=None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    run_dir = None
    try:
        overrides = _parse_overrides(extra)
        cfg = (
            ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        )
        if overrides:
            cfg = apply_overrides(cfg, overrides)
        run_dir = create_run_dir(cfg, args.command, args.run_dir)
        handler, _ = COMMANDS[args.command]
        result = handler(cfg, args, run_dir)
        write_artifact(run_dir / "result.json", result, cfg.config_hash())
        print(json.dumps(result, indent=2))
        return 0
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        if run_dir is not None:
            try:
                (Path(run_dir) / "error.json").write_text(
                    json.dumps(record, indent=2) + "\n"
                )
            except OSError:
                pass
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
