"""Command-line entry point: ``goreloc {reloc,eval,synth,graph}``.

Exit codes: 0 success, 2 parse or configuration error, 3 relocalization
failed on more than half of the frames (the report is still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .association import AssociationSet, Match
from .estimator import STAGES, ObjectRelocalizer
from .evaluation import association_metrics, ground_truth_associations, pose_metrics
from .exceptions import GorelocError, InvariantViolation, ParseError, UnknownCategory
from .geometry import CameraIntrinsics, PoseSE3
from .graph import kernel_vector
from .io import (
    REPORT_FORMAT,
    VERSION,
    load_detections,
    load_map,
    load_report,
    load_trajectory,
    save_report,
)
from .semantics import mode_label
from .synth import SynthConfig, generate_synthetic
from .validation import BASELINES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _pose_entry(T_cw: PoseSE3):
    """Camera-to-world pose as ``[tx, ty, tz, qx, qy, qz, qw]`` (TUM order)."""
    T = T_cw.inverse()
    q = T.quaternion
    return [float(v) for v in (*T.translation, q[1], q[2], q[3], q[0])]


def _pose_from_entry(v) -> PoseSE3:
    tx, ty, tz, qx, qy, qz, qw = v
    return PoseSE3.from_quaternion([qw, qx, qy, qz], [tx, ty, tz]).inverse()


# --------------------------------------------------------------------------
# reloc
# --------------------------------------------------------------------------


def cmd_reloc(args):
    K = CameraIntrinsics.from_string(args.intrinsics)
    object_map = load_map(args.map)
    frames = list(load_detections(args.detections, object_map.categories, (K.width, K.height)))
    est = ObjectRelocalizer(
        intrinsics=K,
        k=args.k,
        j=args.j,
        num=args.num,
        max_iter=args.max_iter,
        inlier_px=args.inlier_px,
        baseline=args.baseline,
        random_state=args.seed,
    ).fit(object_map)
    results = est.predict([f.detections for f in frames])

    records = []
    for fr, res in zip(frames, results):
        rec = {"frame_id": fr.frame_id, "timestamp": fr.timestamp, "status": res.status, "detections": len(fr.detections)}
        if res.ok:
            rec["pose"] = _pose_entry(res.pose)
            rec["num_inliers"] = int(res.num_inliers)
            rec["associations"] = [
                {"detection": int(m.frame_id), "object": int(m.map_id), "inlier": bool(m.inlier), "error_px": float(m.error)}
                for m in res.associations
            ]
        else:
            rec["error"] = res.error
        records.append(rec)
    failed = sum(not r.ok for r in results)
    params = {k: v for k, v in est.get_params().items() if k != "intrinsics"}
    doc = {
        "header": {
            "format": REPORT_FORMAT,
            "version": VERSION,
            "units": {"pose": "camera-to-world, m and unit quaternion (tx ty tz qx qy qz qw)", "error_px": "px"},
        },
        "inputs": {"map": str(args.map), "detections": str(args.detections), "intrinsics": K.to_string()},
        "config": params,
        "summary": {"frames": len(frames), "relocalized": len(frames) - failed, "failed": failed},
        "frames": records,
    }
    save_report(args.report, doc)

    # wall-clock numbers stay out of the report so that reruns are identical
    means = {s: 1000.0 * float(np.mean([r.timings.get(s, 0.0) for r in results])) if results else 0.0 for s in STAGES}
    means["total"] = sum(means.values())
    print("stage timings (mean ms/frame): " + ", ".join(f"{k}={v:.3f}" for k, v in means.items()), file=sys.stderr)
    if args.timings:
        Path(args.timings).write_text(json.dumps({"mean_ms": means, "frames": len(results)}, indent=1) + "\n")
    print(f"relocalized {len(frames) - failed}/{len(frames)} frames", file=sys.stderr)
    return EXIT_FAILED if frames and failed > len(frames) / 2 else EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------


def _pooled(per_frame):
    total = sum(m.total for m in per_frame)
    matched = sum(m.matched for m in per_frame)
    used = [m for m in per_frame if m.total]
    weight = sum(m.total for m in used)
    return {
        "accuracy": 100.0 * matched / total if total else 0.0,
        "center_distance": sum(m.center_distance * m.total for m in used) / weight if weight else None,
        "iou": sum(m.iou * m.total for m in used) / weight if weight else None,
        "matched": matched,
        "total": total,
        "frames": len(per_frame),
        "empty_frames": sum(m.empty_prediction for m in per_frame),
    }


def cmd_eval(args):
    report = load_report(args.report)
    gt = load_trajectory(args.gt_traj)
    estimates = [
        (float(r["timestamp"]), _pose_from_entry(r["pose"]) if r.get("status") == "ok" else None)
        for r in report["frames"]
    ]
    pm = pose_metrics(estimates, gt, thresholds=args.thresholds)
    out = {"pose": pm.as_dict()}
    if args.gt_assoc:
        inputs = report.get("inputs", {})
        base = Path(args.report).parent
        resolve = lambda p: p if Path(p).is_absolute() or Path(p).exists() else str(base / p)  # noqa: E731
        K = CameraIntrinsics.from_string(inputs["intrinsics"])
        object_map = load_map(resolve(inputs["map"]))
        frames = {
            f.frame_id: f
            for f in load_detections(resolve(inputs["detections"]), object_map.categories, (K.width, K.height))
        }
        objects = object_map.objects
        by_id = {o.id: o for o in objects}
        per_frame = []
        for r in report["frames"]:
            fr = frames[r["frame_id"]]
            T_gt = gt.lookup(fr.timestamp).inverse()
            if args.gt_assoc == "from-projection":
                truth = ground_truth_associations(fr.detections, objects, T_gt, K)
            else:
                truth = AssociationSet(
                    [Match(j, d.object_id, True, 0.0) for j, d in enumerate(fr.detections) if d.object_id in by_id]
                )
            pred = AssociationSet(
                [Match(a["detection"], a["object"], a["inlier"], a["error_px"]) for a in r.get("associations", [])]
            )
            per_frame.append(association_metrics(pred, truth, fr.detections, objects, T_gt, K))
        out["association"] = _pooled(per_frame)
        out["association"]["ground_truth"] = args.gt_assoc
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(out, indent=1) + "\n")
    print(format_table(out))
    return EXIT_OK


def format_table(metrics) -> str:
    """Aligned two-column text rendering of an ``eval`` result."""
    rows = []
    pose = metrics["pose"]
    for a, v in pose["success_rate"].items():
        rows.append((f"success @{a} m (%)", f"{v:.2f}"))
    for f, v in pose["te_percentile"].items():
        rows.append((f"TE best {float(f) * 100:g}% (m)", "n/a" if v is None else f"{v:.4f}"))
    rows.append(("frames / failures", f"{pose['frames']} / {pose['failures']}"))
    assoc = metrics.get("association")
    if assoc:
        fmt = lambda v, spec: "n/a" if v is None else format(v, spec)  # noqa: E731
        rows.append(("accuracy (%)", f"{assoc['accuracy']:.2f}"))
        rows.append(("center distance (px)", fmt(assoc["center_distance"], ".3f")))
        rows.append(("IoU", fmt(assoc["iou"], ".3f")))
        rows.append(("matched / predicted", f"{assoc['matched']} / {assoc['total']}"))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v:>12}" for k, v in rows)


def _floats_arg(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one number")
    return vals


# --------------------------------------------------------------------------
# synth / graph
# --------------------------------------------------------------------------


def cmd_synth(args):
    try:
        cfg = SynthConfig.from_json(args.config)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{args.config}:{exc.lineno}:{exc.colno}") from None
    except TypeError as exc:
        raise ParseError(str(exc), str(args.config)) from None
    out = generate_synthetic(cfg).write(args.out_dir)
    print(f"wrote {out}/map.json, detections.json, groundtruth.txt, camera.txt", file=sys.stderr)
    return EXIT_OK


def cmd_graph(args):
    object_map = load_map(args.map)
    est = ObjectRelocalizer(k=args.k).fit(object_map)
    g = est.map_graph_
    cats = object_map.categories
    nodes = []
    for n in g.nodes:
        v = kernel_vector(g, n.id)
        nodes.append(
            {
                "id": int(n.id),
                "label": mode_label(n.distribution, cats),
                "neighbors": [{"id": int(m), "weight": float(w)} for m, w in g.neighbors(n.id).items()],
                "kernel": [float(x) for x in v],
            }
        )
    doc = {"categories": list(cats.names), "k": args.k, "nodes": nodes}
    Path(args.dump_kernels).parent.mkdir(parents=True, exist_ok=True)
    Path(args.dump_kernels).write_text(json.dumps(doc, indent=1) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="goreloc", description="Object-level camera relocalization against dual-quadric maps.")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("reloc", help="relocalize every frame of a detection file")
    r.add_argument("--map", required=True)
    r.add_argument("--detections", required=True)
    r.add_argument("--intrinsics", required=True, help="fx,fy,cx,cy,w,h")
    r.add_argument("--k", type=int, default=5, help="graph neighbours per node")
    r.add_argument("--j", type=int, default=5, help="candidates per detection")
    r.add_argument("--num", type=int, default=3, help="detections sampled per iteration")
    r.add_argument("--max-iter", type=int, default=50)
    r.add_argument("--inlier-px", type=float, default=40.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--baseline", choices=[b for b in BASELINES if b != "graph"], default=None)
    r.add_argument("--report", required=True)
    r.add_argument("--timings", help="optional JSON file for mean per-stage timings")
    r.set_defaults(func=cmd_reloc)

    e = sub.add_parser("eval", help="score a report against a ground-truth trajectory")
    e.add_argument("--report", required=True)
    e.add_argument("--gt-traj", required=True)
    e.add_argument("--gt-assoc", choices=["from-projection", "from-detections"], default=None)
    e.add_argument("--thresholds", type=_floats_arg, default=[2.0, 5.0], help="success thresholds in metres")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic map, detections and ground truth")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("graph", help="dump map-graph neighbourhoods and kernel vectors")
    g.add_argument("--map", required=True)
    g.add_argument("--k", type=int, default=5)
    g.add_argument("--dump-kernels", required=True)
    g.set_defaults(func=cmd_graph)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    if getattr(args, "baseline", "graph") is None:
        args.baseline = "graph"
    try:
        return args.func(args)
    except (ParseError, InvariantViolation, UnknownCategory, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"goreloc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GorelocError as exc:
        print(f"goreloc: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
