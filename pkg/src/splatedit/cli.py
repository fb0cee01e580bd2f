"""Command-line surface for batch editing pipelines.

Verbs: trace, edit, remove, insert, render, serve, replay.
Exit codes: 0 success, 2 validation, 3 I/O, 4 guidance transport.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import EditConfig, edit_config_from_dict, load_edit_config
from .errors import (ConsistencyError, FormatError, GuidanceTransportError,
                     ValidationError)
from .raster import render
from .raster.io import load_mask_png, load_pfm, load_png, save_pfm, save_png
from .scene import Camera, load_scene, save_scene
from .tracing import load_mask_manifest, trace_scene

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_GUIDANCE = 4


def _camera_from_file(path: str) -> Camera:
    with open(path) as f:
        return Camera.from_json(json.load(f), os.path.basename(path))


def _load_cameras(path: str) -> dict[str, Camera]:
    with open(path) as f:
        doc = json.load(f)
    cams = doc.get("cameras", doc)
    return {cid: Camera.from_json(cj, cid) for cid, cj in cams.items()}


def _load_config(path: str | None) -> EditConfig:
    if not path:
        return EditConfig()
    return load_edit_config(path)


def cmd_trace(args) -> int:
    scene = load_scene(args.scene)
    cameras, entries, names = load_mask_manifest(args.manifest)
    trace_scene(scene, cameras, entries, names, threshold=args.threshold)
    save_scene(scene, args.output)
    counts = {lid: int(scene.label_column(lid).sum())
              for lid in scene.label_ids}
    print(json.dumps({"labels": counts}))
    return 0


def cmd_edit(args) -> int:
    from .guidance import (NoisyTargetGuidance, RemoteGuidance,
                           TargetImageGuidance)
    from .hgs import EditSession
    from .raster.io import quantize16

    scene = load_scene(args.scene)
    cameras = list(_load_cameras(args.cameras).values())
    cfg = _load_config(args.config)
    if args.steps is not None:
        cfg.steps = args.steps

    with open(args.guidance) as f:
        gspec = json.load(f)
    backend = gspec.get("backend", "target_image")
    if backend == "remote":
        guidance = RemoteGuidance(gspec["endpoint"],
                                  timeout=float(gspec.get("timeout", 30.0)),
                                  attempts=int(gspec.get("attempts", 3)),
                                  backoff=float(gspec.get("backoff", 0.25)))
    else:
        targets_spec = gspec.get("targets", "current_render")
        if targets_spec == "current_render":
            targets = {c.cam_id: quantize16(render(scene, c, cfg.render).color)
                       for c in cameras}
        else:
            base = os.path.dirname(os.path.abspath(args.guidance))
            targets = {cid: load_png(os.path.join(base, p))
                       for cid, p in targets_spec.items()}
        if backend == "target_image":
            guidance = TargetImageGuidance(targets)
        elif backend == "noisy_target":
            guidance = NoisyTargetGuidance(
                targets, sigma=float(gspec.get("sigma", 0.1)),
                seed=int(gspec.get("seed", 0)))
        else:
            raise ValidationError(f"unknown guidance backend {backend!r}")

    session = EditSession(scene, guidance, cameras, cfg, prompt=args.prompt)
    report_f = open(args.report, "w") if args.report else None
    try:
        for rep in session.run():
            if report_f:
                report_f.write(json.dumps(rep.to_json()) + "\n")
    finally:
        if report_f:
            report_f.close()
    save_scene(scene, args.output)
    print(json.dumps({"steps": session.step_count, "n": scene.n}))
    return 0


def cmd_remove(args) -> int:
    from .inpaint import removal_interface_mask, repair_removal
    from .tracing import remove_label

    scene = load_scene(args.scene)
    members = np.nonzero(scene.label_column(args.label))[0]
    before = scene.copy()
    remove_label(scene, args.label)
    if args.repair:
        with open(args.repair) as f:
            doc = json.load(f)
        base = os.path.dirname(os.path.abspath(args.repair))
        cameras = [Camera.from_json(cj, cid)
                   for cid, cj in doc["cameras"].items()]
        repaired = {rec["camera"]: load_png(os.path.join(base, rec["file"]))
                    for rec in doc["repaired"]}
        iface, masks = removal_interface_mask(
            before, members, cameras, knn_k=int(doc.get("knn_k", 16)),
            dilation_radius=int(doc.get("dilation_radius", 8)))
        cfg = edit_config_from_dict(doc.get("config", {}))
        repair_removal(scene, cameras, iface, masks, repaired, cfg,
                       steps=int(doc.get("steps", 200)))
    save_scene(scene, args.output)
    print(json.dumps({"removed": int(members.size), "n": scene.n}))
    return 0


def cmd_insert(args) -> int:
    from .inpaint import align_depth, incorporate_object, normalize_object

    scene = load_scene(args.scene)
    obj = normalize_object(load_scene(args.object))
    cam = _camera_from_file(args.camera)
    mask = load_mask_png(args.mask)
    est = load_pfm(args.depth)
    out = render(scene, cam)
    alignment = align_depth(out.depth, est, out.alpha > 0.5)
    combined, label, rows = incorporate_object(
        scene, obj, cam, mask, est, alignment, label_name=args.label_name)
    save_scene(combined, args.output)
    print(json.dumps({"label": label, "rows": list(rows),
                      "scale": alignment.scale, "shift": alignment.shift}))
    return 0


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    cam = _camera_from_file(args.camera)
    out = render(scene, cam, labels_only=args.labels_only)
    save_png(out.color, args.output)
    if args.depth_output:
        save_pfm(out.depth, args.depth_output)
    if args.alpha_output:
        save_png(out.alpha, args.alpha_output)
    print(json.dumps({"output": args.output,
                      "alpha_mean": float(out.alpha.mean())}))
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    serve(args.sessions_dir, host=args.host, port=args.port)
    return 0


def cmd_replay(args) -> int:
    from .service import replay_events
    scene = replay_events(args.initial, args.events)
    save_scene(scene, args.output)
    print(json.dumps({"n": scene.n, "output": args.output}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatedit",
                                description="Gaussian-splat scene editor")
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("trace", help="unproject 2D masks to per-splat labels")
    t.add_argument("scene")
    t.add_argument("manifest")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--threshold", type=float, default=0.7)
    t.set_defaults(fn=cmd_trace)

    e = sub.add_parser("edit", help="run a guided optimization session")
    e.add_argument("scene")
    e.add_argument("--cameras", required=True)
    e.add_argument("--guidance", required=True)
    e.add_argument("--config")
    e.add_argument("--prompt", default="")
    e.add_argument("--steps", type=int)
    e.add_argument("--report")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(fn=cmd_edit)

    r = sub.add_parser("remove", help="delete a labeled object")
    r.add_argument("scene")
    r.add_argument("--label", type=int, required=True)
    r.add_argument("--repair", help="repair manifest (views + repaired images)")
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(fn=cmd_remove)

    i = sub.add_parser("insert", help="place an object scene behind a 2D mask")
    i.add_argument("scene")
    i.add_argument("--object", required=True)
    i.add_argument("--camera", required=True)
    i.add_argument("--mask", required=True)
    i.add_argument("--depth", required=True, help="estimated depth (PFM)")
    i.add_argument("--label-name", default="inserted")
    i.add_argument("-o", "--output", required=True)
    i.set_defaults(fn=cmd_insert)

    d = sub.add_parser("render", help="render a view to PNG (+PFM depth)")
    d.add_argument("scene")
    d.add_argument("--camera", required=True)
    d.add_argument("--labels-only", type=int)
    d.add_argument("--depth-output")
    d.add_argument("--alpha-output")
    d.add_argument("-o", "--output", required=True)
    d.set_defaults(fn=cmd_render)

    s = sub.add_parser("serve", help="start the HTTP session service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--sessions-dir", default="sessions")
    s.set_defaults(fn=cmd_serve)

    rp = sub.add_parser("replay", help="re-apply a session event log")
    rp.add_argument("initial")
    rp.add_argument("events")
    rp.add_argument("-o", "--output", required=True)
    rp.set_defaults(fn=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GuidanceTransportError as exc:
        print(f"guidance transport error: {exc}", file=sys.stderr)
        return EXIT_GUIDANCE
    except (ValidationError, FormatError, ConsistencyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
