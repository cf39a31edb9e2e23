"""Command-line driver: dataset synthesis, segmentation, the fitting stages,
training, inference, reposing, evaluation, and an end-to-end pipeline."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger("osso_kit.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2


def _setup_logging():
    level = os.environ.get("OSSO_KIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _hash_tree(root) -> dict:
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = _sha256_file(p)
    return out


def _write_run_manifest(out_dir, command, extra=None):
    out = Path(out_dir)
    files = {k: v for k, v in _hash_tree(out).items() if k != "run_manifest.json"}
    manifest = {"command": command, "files": files}
    if extra:
        manifest.update(extra)
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# pipeline configuration


@dataclass
class PipelineConfig:
    """End-to-end run description; unknown JSON keys are rejected."""

    schema_version: int = 1
    bundle: str = ""
    dataset: str = ""
    out: str = ""
    n_subjects: int = 10
    seed: int = 0
    jobs: int = 1
    stages: dict = field(
        default_factory=lambda: {
            "synth": True,
            "fit": True,
            "train": True,
            "infer": True,
            "repose": True,
            "eval": True,
        }
    )
    fit_max_iter: int = 0  # 0 keeps the stage defaults
    reject_iou: float = 0.85
    energy: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        data = json.loads(text)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        if data.get("schema_version", 1) != 1:
            raise ValueError("unsupported pipeline config schema version")
        return cls(**data)

    def to_json(self) -> str:
        from dataclasses import asdict

        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _energy_config(overrides: dict):
    from .energy import EnergyConfig

    if not overrides:
        return EnergyConfig()
    return EnergyConfig.from_json(json.dumps({**json.loads(EnergyConfig().to_json()), **overrides}))


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_synth(args) -> int:
    from . import synth

    out = Path(args.out)
    if args.dry_run:
        print(f"synth: would write {args.n} subjects to {out}")
        return EXIT_OK
    if args.bundle and Path(args.bundle).exists():
        bundle = synth.ToyBundle.load(args.bundle)
    else:
        bundle = synth.make_toy_bundle(seed=args.seed)
        bundle.save(args.bundle or out / "bundle")
    aug = synth.AugmentConfig() if args.augment else None
    synth.generate_dataset(bundle, args.n, args.seed, out, augment_cfg=aug)
    _write_run_manifest(out, "synth", {"seed": args.seed, "n": args.n})
    print(f"synth: wrote {args.n} subjects to {out}")
    return EXIT_OK


def _cmd_segment(args) -> int:
    from .masks import GrayImage, segment_bones, segment_skin

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dry_run:
        print("segment: config valid")
        return EXIT_OK
    wrote = []
    if args.skin_image:
        img = GrayImage.load_pgm(args.skin_image)
        mask = segment_skin(img, args.skin_threshold, hole_max=args.hole_max,
                            mm_per_pixel=args.mm_per_pixel)
        mask.save_pgm(out / "skin_mask.pgm")
        wrote.append("skin_mask.pgm")
    if args.bones_image:
        img = GrayImage.load_pgm(args.bones_image)
        mask = segment_bones(img, args.bones_percentile, mm_per_pixel=args.mm_per_pixel)
        mask.save_pgm(out / "bones_mask.pgm")
        wrote.append("bones_mask.pgm")
    if not wrote:
        print("segment: nothing to do (pass --skin-image and/or --bones-image)", file=sys.stderr)
        return EXIT_USAGE
    _write_run_manifest(out, "segment")
    print(f"segment: wrote {', '.join(wrote)} to {out}")
    return EXIT_OK


def _subject_dirs(dataset, subject, split=None):
    from . import synth

    manifest = synth.load_dataset_manifest(dataset)
    subs = manifest["subjects"]
    if subject:
        subs = [s for s in subs if s["id"] == subject]
        if not subs:
            raise ValueError(f"subject {subject!r} not found in dataset")
    if split:
        subs = [s for s in subs if s["split"] == split]
    return [(s["id"], Path(dataset) / "subjects" / s["id"]) for s in subs]


def _fit_one_skin(bundle, subject_dir, energy_cfg, reject_iou, max_iter):
    from . import fitters, synth

    sub = synth.load_subject(subject_dir)
    stages = fitters.DEFAULT_SKIN_STAGES
    if max_iter:
        stages = [replace(s, max_iter=max_iter) for s in stages]
    fit = fitters.fit_skin(
        sub.skin_mask,
        sub.landmarks2d,
        bundle.body,
        bundle.pose_prior,
        energy_cfg,
        cam=sub.camera,
        stages=stages,
        reject_iou=reject_iou,
        landmark_offsets=bundle.li_anchor_offsets,
    )
    return sub, fit


def _fit_one_skeleton(bundle, sub, skin_mesh, energy_cfg, max_iter):
    from . import fitters

    assets = fitters.SkeletonFitAssets(
        canonical_part_rotations=bundle.canonical_part_rotations,
        contacts=bundle.contacts,
        proximity=bundle.proximity,
        contact_offset_mm=bundle.contact_offset_mm,
    )
    stages = fitters.DEFAULT_SKELETON_STAGES
    if max_iter:
        stages = [replace(s, max_iter=max_iter) for s in stages]
    return fitters.fit_skeleton(
        sub.bones_mask,
        sub.landmarks2d,
        skin_mesh,
        bundle.puppet,
        energy_cfg,
        assets=assets,
        cam=sub.camera,
        stages=stages,
    )


def _save_fit_outputs(out_dir, name, mesh, payload):
    from .geom import save_ply

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_ply(mesh, out / f"{name}.ply")
    (out / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cmd_fit_skin(args) -> int:
    from . import synth

    bundle = synth.ToyBundle.load(args.bundle)
    cfg = _energy_config({})
    if args.dry_run:
        print("fit-skin: config valid")
        return EXIT_OK
    for sid, sdir in _subject_dirs(args.dataset, args.subject):
        sub, fit = _fit_one_skin(bundle, sdir, cfg, args.reject_iou, args.max_iter)
        payload = {
            "subject": sid,
            "iou": fit.iou,
            "rejected": fit.rejected,
            "shape": fit.shape.tolist(),
            "rotations": fit.pose.rotations.tolist(),
            "translation": fit.pose.translation.tolist(),
            "energies": fit.energies,
        }
        _save_fit_outputs(Path(args.out) / sid, "skin_fit", fit.mesh, payload)
        print(f"fit-skin {sid}: iou={fit.iou:.4f} rejected={fit.rejected}")
    _write_run_manifest(args.out, "fit-skin")
    return EXIT_OK


def _cmd_fit_skeleton(args) -> int:
    from . import synth
    from .geom import load_ply

    bundle = synth.ToyBundle.load(args.bundle)
    cfg = _energy_config({})
    if args.dry_run:
        print("fit-skeleton: config valid")
        return EXIT_OK
    for sid, sdir in _subject_dirs(args.dataset, args.subject):
        sub = synth.load_subject(sdir)
        skin_path = Path(args.skin_fits) / sid / "skin_fit.ply"
        skin_mesh = load_ply(skin_path)
        fit = _fit_one_skeleton(bundle, sub, skin_mesh, cfg, args.max_iter)
        payload = {
            "subject": sid,
            "energies": fit.energies,
            "shape": fit.state.shape.tolist(),
            "t": fit.state.t.tolist(),
            "r": fit.state.r.tolist(),
        }
        _save_fit_outputs(Path(args.out) / sid, "skeleton_fit", fit.mesh, payload)
        print(f"fit-skeleton {sid}: sil={fit.energies['silhouette']:.3f}")
    _write_run_manifest(args.out, "fit-skeleton")
    return EXIT_OK


def _cmd_train(args) -> int:
    from . import bundleio, stats, synth
    from .geom import LbsForward, PoseVector

    bundle = synth.ToyBundle.load(args.bundle)
    if args.dry_run:
        print("train: config valid")
        return EXIT_OK
    canon = bundle.canonical_pose
    skins, skels, betas_s = [], [], []
    for sid, sdir in _subject_dirs(args.dataset, None, split="train"):
        sub = synth.load_subject(sdir)
        skins.append(LbsForward(bundle.body, sub.beta, canon).vertices)
        skels.append(synth.ground_truth_canonical(bundle, sub.beta).reshape(-1))
        betas_s.append(sub.beta)
    skins = np.asarray(skins)
    skels = np.asarray(skels)
    betas_s = np.asarray(betas_s)
    space = stats.pca_fit(skels)
    beta_b = np.asarray([stats.pca_project(space, s) for s in skels])
    shape_reg = stats.train_shape_regressor(betas_s, beta_b)
    lb_ids = bundle.puppet.landmarks_lb
    landmarks = skels.reshape(len(skels), -1, 3)[:, lb_ids, :]
    lm_reg = stats.train_landmark_regressor(skins, landmarks)
    out = Path(args.out)
    meta = {"dataset": str(args.dataset), "config_hash": _sha256_hex(args), "date": None}
    bundleio.save_shape_space(space, out / "shape_space", metadata=meta)
    bundleio.save_shape_regressor(shape_reg, out / "shape_regressor", metadata=meta)
    bundleio.save_landmark_regressor(lm_reg, out / "landmark_regressor", metadata=meta)
    _write_run_manifest(out, "train", {"n_train": len(skins)})
    print(f"train: fitted shape space ({space.n_components} comps) and regressors on {len(skins)} subjects")
    return EXIT_OK


def _sha256_hex(args) -> str:
    blob = json.dumps({k: str(v) for k, v in sorted(vars(args).items()) if k != "func"})
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _cmd_infer(args) -> int:
    from . import bundleio, fitters, synth
    from .geom import LbsForward

    bundle = synth.ToyBundle.load(args.bundle)
    if args.dry_run:
        print("infer: config valid")
        return EXIT_OK
    space = bundleio.load_shape_space(Path(args.models) / "shape_space")
    shape_reg = bundleio.load_shape_regressor(Path(args.models) / "shape_regressor")
    lm_reg = bundleio.load_landmark_regressor(Path(args.models) / "landmark_regressor")
    assets = fitters.SkeletonFitAssets(
        canonical_part_rotations=bundle.canonical_part_rotations,
        contacts=bundle.contacts,
        proximity=bundle.proximity,
        contact_offset_mm=bundle.contact_offset_mm,
    )
    cfg = _energy_config({})
    for sid, sdir in _subject_dirs(args.dataset, args.subject, split=args.split):
        sub = synth.load_subject(sdir)
        skin_lying = LbsForward(bundle.body, sub.beta, bundle.canonical_pose).mesh()
        inf = fitters.infer_skeleton(
            skin_lying, sub.beta, shape_reg, lm_reg, space, bundle.puppet, cfg, assets=assets
        )
        payload = {
            "subject": sid,
            "beta_skeleton": inf.beta_skeleton.tolist(),
            "t": inf.instance.state.t.tolist(),
            "r": inf.instance.state.r.tolist(),
        }
        _save_fit_outputs(Path(args.out) / sid, "inferred_skeleton", inf.mesh, payload)
        print(f"infer {sid}: done")
    _write_run_manifest(args.out, "infer")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .evalmetrics import compute_mask_metrics
    from .masks import BinaryMask

    pred = BinaryMask.load_pgm(args.pred)
    target = BinaryMask.load_pgm(args.target)
    m = compute_mask_metrics(pred, target)
    out = {"iou": m.iou, "ir": m.intersection_ratio, "hd": m.directed_hausdorff}
    print(json.dumps(out, sort_keys=True))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    from . import synth

    cfg = PipelineConfig.from_json(Path(args.config).read_text()) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out:
        cfg = replace(cfg, out=args.out)
    if args.jobs:
        cfg = replace(cfg, jobs=args.jobs)
    if not cfg.out:
        print("pipeline: an output directory is required", file=sys.stderr)
        return EXIT_USAGE
    if args.dry_run:
        print("pipeline: config valid")
        return EXIT_OK
    return run_pipeline(cfg, trace=args.trace)


def run_pipeline(cfg: PipelineConfig, trace: bool = False) -> int:
    """Synthesize, fit, train, infer, repose and evaluate one dataset."""
    from concurrent.futures import ProcessPoolExecutor

    from . import fitters, synth
    from .evalmetrics import compute_mask_metrics, write_metrics_table
    from .geom import LbsForward, rasterize_silhouette

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    energy_cfg = _energy_config(cfg.energy)
    bundle_dir = Path(cfg.bundle) if cfg.bundle else out / "bundle"
    if bundle_dir.exists():
        bundle = synth.ToyBundle.load(bundle_dir)
    else:
        bundle = synth.make_toy_bundle(seed=cfg.seed)
        bundle.save(bundle_dir)
    dataset = Path(cfg.dataset) if cfg.dataset else out / "dataset"
    if cfg.stages.get("synth", True) and not (dataset / "manifest.json").exists():
        synth.generate_dataset(bundle, cfg.n_subjects, cfg.seed, dataset)

    manifest = synth.load_dataset_manifest(dataset)
    test_ids = [s["id"] for s in manifest["subjects"] if s["split"] == "test"]

    results = {}
    if cfg.stages.get("fit", True):
        jobs = [(sid, dataset / "subjects" / sid) for sid in test_ids]
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                futs = {
                    sid: pool.submit(_pipeline_fit_subject, str(bundle_dir), str(sdir), cfg)
                    for sid, sdir in jobs
                }
                for sid in sorted(futs):
                    results[sid] = futs[sid].result()
        else:
            for sid, sdir in jobs:
                results[sid] = _pipeline_fit_subject(str(bundle_dir), str(sdir), cfg)
        for sid in sorted(results):
            rec = results[sid]
            sdir = out / "fits" / sid
            sdir.mkdir(parents=True, exist_ok=True)
            (sdir / "metrics.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")

    if cfg.stages.get("train", True):
        train_args = argparse.Namespace(
            bundle=str(bundle_dir), dataset=str(dataset), out=str(out / "models"), dry_run=False
        )
        _cmd_train(train_args)

    if cfg.stages.get("infer", True) or cfg.stages.get("repose", True):
        _pipeline_infer_repose(bundle, dataset, out, test_ids, energy_cfg, cfg)

    if cfg.stages.get("eval", True) and results:
        rows_sorted = sorted(results)
        groups = ("even", "odd")
        halves = {g: [] for g in groups}
        for k, sid in enumerate(rows_sorted):
            halves[groups[k % 2]].append(results[sid])
        def agg(vals, key):
            arr = np.asarray([v[key] for v in vals]) if vals else np.asarray([0.0])
            return arr
        row = {
            "method": "skeleton_fit",
            "ir": {g: float(agg(halves[g], "skeleton_ir").mean()) for g in groups},
            "hd": {
                g: (float(agg(halves[g], "skeleton_hd").mean()), float(agg(halves[g], "skeleton_hd").std()))
                for g in groups
            },
        }
        write_metrics_table(out / "metrics_table.csv", [row], groups=groups)
        summary = {
            "n_test": len(rows_sorted),
            "skin_iou_mean": float(np.mean([results[s]["skin_iou"] for s in rows_sorted])),
            "skeleton_ir_mean": float(np.mean([results[s]["skeleton_ir"] for s in rows_sorted])),
            "skeleton_hd_mean": float(np.mean([results[s]["skeleton_hd"] for s in rows_sorted])),
        }
        (out / "metrics_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    run_manifest = _write_run_manifest(out, "pipeline", {"seed": cfg.seed})
    digest = hashlib.sha256(
        json.dumps(run_manifest["files"], sort_keys=True).encode()
    ).hexdigest()
    print(f"pipeline: done, output digest {digest}")
    return EXIT_OK


def _pipeline_fit_subject(bundle_dir: str, subject_dir: str, cfg: PipelineConfig) -> dict:
    from . import synth
    from .evalmetrics import compute_mask_metrics
    from .geom import rasterize_silhouette

    bundle = synth.ToyBundle.load(bundle_dir)
    energy_cfg = _energy_config(cfg.energy)
    sub, skin_fit = _fit_one_skin(bundle, subject_dir, energy_cfg, cfg.reject_iou, cfg.fit_max_iter)
    skel_fit = _fit_one_skeleton(bundle, sub, skin_fit.mesh, energy_cfg, cfg.fit_max_iter)
    skel_mask = rasterize_silhouette(skel_fit.mesh, sub.camera)
    mm = compute_mask_metrics(skel_mask, sub.bones_mask)
    return {
        "skin_iou": skin_fit.iou,
        "skin_rejected": bool(skin_fit.rejected),
        "skeleton_ir": mm.intersection_ratio,
        "skeleton_hd": mm.directed_hausdorff,
        "skeleton_state": {
            "shape": skel_fit.state.shape.tolist(),
            "t": skel_fit.state.t.tolist(),
            "r": skel_fit.state.r.tolist(),
        },
    }


def _pipeline_infer_repose(bundle, dataset, out, test_ids, energy_cfg, cfg):
    from . import bundleio, fitters, synth
    from .geom import LbsForward, save_ply

    models = out / "models"
    if not (models / "shape_space" / "manifest.json").exists():
        return
    space = bundleio.load_shape_space(models / "shape_space")
    shape_reg = bundleio.load_shape_regressor(models / "shape_regressor")
    lm_reg = bundleio.load_landmark_regressor(models / "landmark_regressor")
    assets = fitters.SkeletonFitAssets(
        canonical_part_rotations=bundle.canonical_part_rotations,
        contacts=bundle.contacts,
        proximity=bundle.proximity,
        contact_offset_mm=bundle.contact_offset_mm,
    )
    max_iter = cfg.fit_max_iter or 300
    for sid in test_ids:
        sub = synth.load_subject(Path(dataset) / "subjects" / sid)
        skin_lying = LbsForward(bundle.body, sub.beta, bundle.canonical_pose).mesh()
        inf = fitters.infer_skeleton(
            skin_lying, sub.beta, shape_reg, lm_reg, space, bundle.puppet,
            energy_cfg, assets=assets, max_iter=max_iter,
        )
        sdir = out / "inferred" / sid
        sdir.mkdir(parents=True, exist_ok=True)
        save_ply(inf.mesh, sdir / "skeleton_lying.ply")
        if cfg.stages.get("repose", True):
            skin_posed = LbsForward(bundle.body, sub.beta, sub.pose).mesh()
            rep = fitters.repose_skeleton(
                inf.instance, skin_lying, skin_posed, bundle.puppet,
                bundle.offset_pairs, bundle.ball_joints, bundle.ligaments,
                energy_cfg, max_iter=max_iter,
            )
            save_ply(rep.mesh, sdir / "skeleton_posed.ply")


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    p = _Parser(prog="osso-kit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--dry-run", action="store_true")
        sp.add_argument("--trace", action="store_true", help="emit solver trace CSVs")

    sp = sub.add_parser("synth", help="generate the toy bundle and a synthetic dataset")
    common(sp)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--bundle", default="", help="bundle directory (created if missing)")
    sp.add_argument("--augment", action="store_true")
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("segment", help="threshold-based mask segmentation of 16-bit PGMs")
    common(sp)
    sp.add_argument("--skin-image", default="")
    sp.add_argument("--bones-image", default="")
    sp.add_argument("--skin-threshold", type=int, default=8000,
                    help="intensity cutoff for the soft-tissue image (no validated default)")
    sp.add_argument("--bones-percentile", type=float, default=0.20)
    sp.add_argument("--hole-max", type=int, default=200)
    sp.add_argument("--mm-per-pixel", type=float, default=1.0)
    sp.set_defaults(func=_cmd_segment)

    sp = sub.add_parser("fit-skin", help="fit the surface model to skin masks")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--subject", default="")
    sp.add_argument("--max-iter", type=int, default=0)
    sp.add_argument("--reject-iou", type=float, default=0.85)
    sp.set_defaults(func=_cmd_fit_skin)

    sp = sub.add_parser("fit-skeleton", help="fit the part-based skeleton to bone masks")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--skin-fits", required=True, help="directory holding fit-skin outputs")
    sp.add_argument("--subject", default="")
    sp.add_argument("--max-iter", type=int, default=0)
    sp.set_defaults(func=_cmd_fit_skeleton)

    sp = sub.add_parser("train", help="fit the shape space and both regressors")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--bundle", required=True)
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("infer", help="predict skeletons from surfaces")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--models", required=True)
    sp.add_argument("--subject", default="")
    sp.add_argument("--split", default="test")
    sp.set_defaults(func=_cmd_infer)

    sp = sub.add_parser("eval", help="mask overlap metrics between two PGM masks")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--out", default="")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dry-run", action="store_true")
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("pipeline", help="end-to-end run driven by a JSON config")
    sp.add_argument("--config", default="")
    sp.add_argument("--out", default="")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--jobs", type=int, default=0)
    sp.add_argument("--dry-run", action="store_true")
    sp.add_argument("--trace", action="store_true")
    sp.set_defaults(func=_cmd_pipeline)

    return p


def run(argv=None) -> int:
    """Entry point returning a process exit code (0 ok, 1 usage, 2 solver)."""
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return int(args.func(args))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
