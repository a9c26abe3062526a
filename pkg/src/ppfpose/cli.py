"""Command-line surface: train, detect, eval-vsd, synth, bench.

Machine-readable JSONL goes to stdout; human-readable summaries go to
stderr. Exit codes: 0 success, 1 no detection (detect only), 2 input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import PipelineConfig, resolved_config_dict
from .depth_io import load_depth, save_depth_png, save_intrinsics
from .evaluation import is_correct, vsd_error
from .geometry import RigidTransform
from .model_io import load_model_file
from .pipeline import detect_object
from .ppf import build_model_table, load_table, save_table
from .render import ObjectModel
from .synth import generate_scene, load_scene_spec
from . import report


def _load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return PipelineConfig.from_json(fh.read())


def _pose_dict(pose: RigidTransform) -> dict:
    return {"rotation": [float(v) for v in pose.rotation.reshape(-1)],
            "translation": [float(v) for v in pose.translation]}


def _pose_from_record(d: dict) -> RigidTransform:
    return RigidTransform(np.asarray(d["rotation"]).reshape(3, 3),
                          np.asarray(d["translation"]))


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.leaf_frac is not None:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "leaf_frac": args.leaf_frac})
    cloud, mesh = load_model_file(args.model, surface_samples=cfg.model_samples,
                                  seed=cfg.seed, normal_k=cfg.normal_k)
    diameter = mesh.diameter if mesh is not None else cloud.diameter
    leaf = cfg.leaf_frac * diameter
    t0 = time.perf_counter()
    table = build_model_table(cloud, cfg.subsample_params(leaf), cfg.quant)
    save_table(table, args.out)
    dt = (time.perf_counter() - t0) * 1000
    meta = {"type": "meta", "command": "train", "model": args.model,
            "out": args.out, "config": resolved_config_dict(cfg, leaf, table.model.diameter)}
    print(json.dumps(meta))
    print(f"trained {args.out}: {len(table.model)} points, "
          f"{table.n_entries} entries, leaf {leaf:.2f} mm, {dt:.0f} ms",
          file=sys.stderr)
    return 0


def _detect_one(table, mesh, depth_path, intrinsics_path, scene_id, obj_id,
                cfg, workers):
    depth, cam = load_depth(depth_path, cfg.depth_scale, intrinsics_path)
    result = detect_object(table, depth, cam, cfg, mesh=mesh, workers=workers)
    record = {"type": "detection", "scene_id": scene_id, "obj_id": obj_id,
              "found": result.found}
    if result.found:
        h = result.hypothesis
        record.update(pose=_pose_dict(h.pose), score=h.score, votes=h.votes,
                      filters={"consistency": True, "edge_overlap": True},
                      low_support=h.low_support)
    record.update(n_raw=result.n_raw, n_clusters=result.n_clusters)
    timing = {"type": "timing", "scene_id": scene_id,
              "timings_ms": {k: round(v, 1) for k, v in result.timings_ms.items()}}
    return record, timing, result


def cmd_detect(args) -> int:
    cfg = _load_config(args.config)
    table = load_table(args.model)
    mesh = None
    if args.mesh:
        _, mesh = load_model_file(args.mesh)
    stem = os.path.splitext(os.path.basename(args.depth))[0]
    if stem.endswith("_depth"):
        stem = stem[:-len("_depth")]
    scene_id = args.scene_id or stem
    obj_id = args.obj_id or os.path.splitext(os.path.basename(args.model))[0]
    meta = {"type": "meta", "command": "detect", "model": args.model,
            "config": resolved_config_dict(cfg, table.leaf, table.model.diameter)}
    record, timing, result = _detect_one(
        table, mesh, args.depth, args.intrinsics, scene_id, obj_id, cfg, args.workers)
    lines = [meta, record] + ([timing] if args.timings else [])
    out = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    try:
        report.write_jsonl(lines, out)
    finally:
        if out is not sys.stdout:
            out.close()
    if result.found:
        h = result.hypothesis
        print(f"{scene_id}: pose found (score {h.score:.3f}, votes {h.votes}, "
              f"{result.timings_ms['total']:.0f} ms)", file=sys.stderr)
        return 0
    print(f"{scene_id}: no detection ({result.n_clusters} hypotheses rejected)",
          file=sys.stderr)
    return 1


def cmd_eval_vsd(args) -> int:
    cfg = _load_config(args.config)
    table = load_table(args.model) if args.model.endswith(".ppfm") else None
    mesh = None
    if args.mesh:
        _, mesh = load_model_file(args.mesh)
    elif table is None:
        cloud, mesh = load_model_file(args.model)
    if table is not None:
        model = ObjectModel(cloud=table.model, leaf=table.leaf, mesh=mesh)
    else:
        if mesh is None:
            raise ValueError("PLY evaluation model must carry faces (or pass --model *.ppfm)")
        leaf = cfg.leaf_frac * mesh.diameter
        model = ObjectModel(cloud=None, leaf=leaf, mesh=mesh)

    results = {(r["scene_id"], r["obj_id"]): r
               for r in report.read_jsonl(args.results) if r.get("type") == "detection"}
    gt_records = [r for r in report.read_jsonl(args.gt) if r.get("type") == "gt"]
    if not gt_records:
        raise ValueError(f"{args.gt}: no ground-truth records")
    base = os.path.dirname(os.path.abspath(args.gt))

    out_records = []
    for gt in gt_records:
        key = (gt["scene_id"], gt["obj_id"])
        det = results.get(key)
        rec = {"type": "evaluation", "scene_id": gt["scene_id"], "obj_id": gt["obj_id"]}
        if det is not None and det.get("found"):
            depth, cam = load_depth(os.path.join(base, gt["depth"]), cfg.depth_scale,
                                    os.path.join(base, gt["intrinsics"]))
            pose_est = _pose_from_record(det["pose"])
            pose_gt = _pose_from_record(gt["pose"])
            e = vsd_error(pose_est, pose_gt, model, depth, cam, cfg.vsd)
            rec.update(pose=det["pose"], score=det.get("score"),
                       votes=det.get("votes"), vsd=e, correct=is_correct(e, cfg.vsd))
        else:
            rec.update(pose=None, score=None, votes=None, vsd=None, correct=False)
        out_records.append(rec)

    meta = {"type": "meta", "command": "eval-vsd", "model": args.model,
            "vsd": {"delta": cfg.vsd.delta, "tau": cfg.vsd.tau, "t": cfg.vsd.t}}
    out = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    try:
        report.write_jsonl([meta] + out_records, out)
    finally:
        if out is not sys.stdout:
            out.close()

    rows = report.summarize_by_object(out_records)
    print(report.format_summary_text(rows), file=sys.stderr)
    if args.report_dir:
        os.makedirs(args.report_dir, exist_ok=True)
        report.write_summary_csv(rows, os.path.join(args.report_dir, "summary.csv"))
        with open(os.path.join(args.report_dir, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.format_summary_text(rows) + "\n")
        report.recall_figure(rows, os.path.join(args.report_dir, "recall_by_object.png"))
        report.vsd_histogram_figure([r["vsd"] for r in out_records], cfg.vsd.t,
                                    os.path.join(args.report_dir, "vsd_histogram.png"))
        print(f"report written to {args.report_dir}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    spec, model_path = load_scene_spec(args.spec)
    cloud, mesh = load_model_file(model_path, surface_samples=cfg.model_samples,
                                  seed=cfg.seed, normal_k=cfg.normal_k)
    leaf = cfg.leaf_frac * (mesh.diameter if mesh is not None else cloud.diameter)
    model = ObjectModel(cloud=cloud, leaf=leaf, mesh=mesh)
    seed = spec.seed if args.seed is None else args.seed
    depth, gt_pose = generate_scene(spec, model, seed=seed)

    os.makedirs(args.out_dir, exist_ok=True)
    name = args.name or os.path.splitext(os.path.basename(args.spec))[0]
    depth_name = f"{name}_depth.png"
    intr_name = f"{name}_intrinsics.txt"
    save_depth_png(os.path.join(args.out_dir, depth_name), depth, cfg.depth_scale)
    save_intrinsics(os.path.join(args.out_dir, intr_name), spec.camera)
    gt_record = {"type": "gt", "scene_id": name, "obj_id": spec.model_id,
                 "pose": _pose_dict(gt_pose), "depth": depth_name,
                 "intrinsics": intr_name, "noise_sigma": spec.noise_sigma,
                 "dropout": spec.dropout, "seed": seed}
    gt_path = os.path.join(args.out_dir, f"{name}_gt.jsonl")
    with open(gt_path, "w", encoding="utf-8") as fh:
        report.write_jsonl([gt_record], fh)
    print(json.dumps({"type": "synth", "scene_id": name,
                      "depth": depth_name, "intrinsics": intr_name,
                      "gt": os.path.basename(gt_path), "seed": seed}))
    print(f"scene {name}: depth + intrinsics + gt written to {args.out_dir}",
          file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    table = load_table(args.model)
    mesh = None
    if args.mesh:
        _, mesh = load_model_file(args.mesh)
    obj_id = args.obj_id or os.path.splitext(os.path.basename(args.model))[0]

    names = sorted(f[:-len("_depth.png")] for f in os.listdir(args.scenes)
                   if f.endswith("_depth.png"))
    if not names:
        raise ValueError(f"{args.scenes}: no *_depth.png scenes found")
    meta = {"type": "meta", "command": "bench", "model": args.model,
            "config": resolved_config_dict(cfg, table.leaf, table.model.diameter)}
    records, timing_rows = [meta], []
    for name in names:
        depth_path = os.path.join(args.scenes, f"{name}_depth.png")
        intr_path = os.path.join(args.scenes, f"{name}_intrinsics.txt")
        if not os.path.exists(intr_path):
            raise ValueError(f"missing intrinsics for scene {name!r}")
        record, timing, _ = _detect_one(table, mesh, depth_path, intr_path,
                                        name, obj_id, cfg, args.workers)
        records.append(record)
        timing_rows.append(timing)
    report.write_jsonl(records + timing_rows, sys.stdout)

    totals = [row["timings_ms"]["total"] for row in timing_rows]
    print(f"{len(names)} scenes, total {sum(totals) / 1000:.1f} s, "
          f"mean {np.mean(totals):.0f} ms, median {np.median(totals):.0f} ms",
          file=sys.stderr)
    if args.report_dir:
        os.makedirs(args.report_dir, exist_ok=True)
        report.write_timings_csv(timing_rows, os.path.join(args.report_dir, "timings.csv"))
        report.timings_figure(timing_rows, os.path.join(args.report_dir, "timings.png"))
        print(f"report written to {args.report_dir}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ppfpose",
        description="depth-only 6D pose estimation with point pair features")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="build a pair-feature table from a PLY model")
    p.add_argument("--model", required=True, help="PLY mesh or point cloud")
    p.add_argument("--out", required=True, help="output .ppfm table")
    p.add_argument("--leaf-frac", type=float, default=None,
                   help="subsampling leaf as a fraction of the model diameter")
    p.add_argument("--config", help="JSON pipeline configuration")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="detect the object in one depth image")
    p.add_argument("--model", required=True, help=".ppfm table from train")
    p.add_argument("--depth", required=True, help="16-bit depth PNG")
    p.add_argument("--intrinsics", required=True, help="key-value intrinsics file")
    p.add_argument("--mesh", help="optional PLY mesh for rendering")
    p.add_argument("--scene-id")
    p.add_argument("--obj-id")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", help="JSON pipeline configuration")
    p.add_argument("--out", help="write JSONL here instead of stdout")
    p.add_argument("--timings", action="store_true",
                   help="also emit a timing record (not bit-reproducible)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval-vsd", help="score detections against ground truth")
    p.add_argument("--results", required=True, help="detection JSONL")
    p.add_argument("--gt", required=True, help="ground-truth JSONL")
    p.add_argument("--model", required=True, help=".ppfm table or PLY mesh")
    p.add_argument("--mesh", help="optional PLY mesh for rendering")
    p.add_argument("--out", help="write evaluated JSONL here instead of stdout")
    p.add_argument("--report-dir", help="write summary CSV/text and figures here")
    p.add_argument("--config", help="JSON pipeline configuration")
    p.set_defaults(func=cmd_eval_vsd)

    p = sub.add_parser("synth", help="render a synthetic scene from a YAML spec")
    p.add_argument("--spec", required=True, help="YAML scene description")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--name", help="scene id (default: spec file stem)")
    p.add_argument("--config", help="JSON pipeline configuration")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="timing harness over a directory of scenes")
    p.add_argument("--model", required=True, help=".ppfm table")
    p.add_argument("--scenes", required=True,
                   help="directory of <name>_depth.png / <name>_intrinsics.txt")
    p.add_argument("--mesh", help="optional PLY mesh for rendering")
    p.add_argument("--obj-id")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report-dir", help="write timings CSV and figure here")
    p.add_argument("--config", help="JSON pipeline configuration")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
