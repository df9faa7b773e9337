"""Command-line entry point: ``gomrecon <command> ...``.

Failures print one line ``gomrecon: error: <kind>: <message>`` to stderr and
exit nonzero (2 for argument errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .io import (ContainerError, SceneManifest, ViewEntry, load_camera, load_checkpoint, load_gom, load_manifest,
                 load_pose, save_gom, save_pose, write_container, write_png)
from .rig import Pose, load_rig, save_rig


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("argument", f"{self.prog}: {message}")


def _nonnegative_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed_range(text: str) -> range:
    """``A:B`` (half-open) or a single seed."""
    try:
        if ":" in text:
            a, b = text.split(":", 1)
            r = range(int(a), int(b))
        else:
            r = range(int(text), int(text) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a seed or a range A:B, got {text!r}") from None
    if len(r) == 0:
        raise argparse.ArgumentTypeError(f"seed range {text!r} is empty")
    return r


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> None:
    from .trainkit import cached_subject, random_pose, render_reference, view_camera

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        subject = cached_subject(seed)
        rng = np.random.default_rng([seed, 0xDA7A])
        poses = [random_pose(subject.rig, rng, args.pose_scale) for _ in range(args.poses)]
        az0 = rng.uniform(0, 2 * np.pi)
        d = out / f"subject_{seed:05d}"
        d.mkdir(exist_ok=True)
        save_rig(subject.rig, d / "rig.json")

        def write_view(stem, pose, az, el):
            cam = view_camera(az, el, args.resolution)
            image, mask = render_reference(subject, pose, cam)
            e = ViewEntry(d / f"{stem}.png", d / f"{stem}_mask.png", d / f"{stem}_camera.json",
                          d / f"{stem}_pose.json", d / f"{stem}_exact.lgom")
            write_png(e.image, image)
            write_png(e.mask, mask)
            cam.save(e.camera)
            save_pose(pose, e.pose)
            write_container(e.exact, {"image": image, "mask": mask})
            return e

        sources = [write_view(f"view_{i:02d}", poses[i % args.poses], az0 + 2 * np.pi * i / args.views,
                              rng.uniform(-0.1, 0.3)) for i in range(args.views)]
        targets = [write_view(f"target_{i:02d}", random_pose(subject.rig, rng, args.pose_scale),
                              rng.uniform(0, 2 * np.pi), rng.uniform(-0.1, 0.3)) for i in range(args.targets)]
        SceneManifest(seed, sources, targets, d / "rig.json").save(d / "manifest.json")


def cmd_train(args) -> None:
    from .trainkit import TrainConfig, train

    cfg = TrainConfig.load(args.config)
    out = Path(args.out) if args.out else Path(args.config).with_suffix("")
    train(cfg, out, progress=_progress if args.verbose else None)
    print(out / "checkpoint.lgom")


def _progress(row) -> None:
    print(f"iter {row[0]} loss {row[1]:.5f} psnr_t1 {row[4]:.2f} psnr_tT {row[5]:.2f} ms {row[6]:.0f}",
          file=sys.stderr, flush=True)


def _load_model(path):
    from .reconstruct import ModelConfig

    store, meta = load_checkpoint(path)
    if "model" not in meta:
        raise ContainerError(f"{path}: checkpoint metadata lacks field 'model'")
    return ModelConfig.from_json(meta["model"]), store, meta


def _scene_from_manifest(path):
    from .trainkit import Scene, View

    m = load_manifest(path)
    if m.rig is None:
        raise CliError("schema", f"{path}: manifest lacks field 'rig'")
    rig = _load_rig(m.rig)
    views = lambda entries: [View(*e.load()) for e in entries]  # noqa: E731
    return Scene(m.subject, rig, views(m.sources), views(m.targets))


def _load_rig(path):
    try:
        return load_rig(path)
    except OSError as exc:
        raise CliError("io", f"{path}: cannot read rig ({exc.strerror})") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("schema", f"{path}: invalid rig file ({exc})") from None


def cmd_reconstruct(args) -> None:
    from .reconstruct import reconstruct
    from .trainkit import psnr, render_gom

    mcfg, store, meta = _load_model(args.checkpoint)
    scene = _scene_from_manifest(args.manifest)
    if scene.rig.template.n_vertices != mcfg.n_vertices:
        raise CliError("shape", f"{args.manifest}: rig template has {scene.rig.template.n_vertices} vertices, "
                                f"checkpoint expects {mcfg.n_vertices}")
    if len(scene.sources) != mcfg.n_sources:
        raise CliError("shape", f"{args.manifest}: manifest lists {len(scene.sources)} sources, "
                                f"checkpoint expects {mcfg.n_sources}")
    k = args.k if args.k is not None else (meta.get("train") or {}).get("k", 2)
    sources = scene.source_set()
    res = reconstruct(sources, scene.rig, args.T, store, k, mcfg.vertex_bound, keep_states=True)
    save_gom(res.gom, args.out)
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "ms", "source_psnr"])
            for t in range(1, args.T + 1):
                gom = res.states[t].gom
                p = [psnr(np.clip(render_gom(gom, v.pose, v.camera)[0], 0, 1), v.image) for v in scene.sources]
                w.writerow([t, f"{res.step_ms[t - 1]:.3f}", f"{np.mean(p):.4f}"])


def cmd_template(args) -> None:
    from .gom import init_canonical

    save_gom(init_canonical(_load_rig(args.rig), args.k), args.out)


def _pose_or_identity(path, n_joints: int) -> Pose:
    if path is None:
        return Pose.identity(n_joints)
    pose = load_pose(path)
    if pose.n_joints < n_joints:
        raise CliError("shape", f"{path}: pose has {pose.n_joints} joints, GoM needs {n_joints}")
    return pose


def _n_joints(gom) -> int:
    return int(gom.weights_idx.max()) + 1


def cmd_render(args) -> None:
    from .trainkit import render_gom

    gom = load_gom(args.gom)
    cam = load_camera(args.camera)
    image, alpha = render_gom(gom, _pose_or_identity(args.pose, _n_joints(gom)), cam)
    write_png(args.out, image)
    if args.alpha:
        write_png(args.alpha, alpha)
    if args.exact:
        write_container(args.exact, {"image": image, "mask": alpha})


def _pose_sequence(path) -> list:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError("io", f"{path}: cannot read pose sequence ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise CliError("schema", f"{path}: pose sequence is not valid JSON ({exc})") from None
    if not isinstance(d, dict) or not isinstance(d.get("poses"), list) or not d["poses"]:
        raise CliError("schema", f"{path}: field 'poses' must be a nonempty list")
    try:
        return [Pose.from_json(p) for p in d["poses"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("schema", f"{path}: invalid pose in field 'poses' ({exc})") from None


def cmd_animate(args) -> None:
    from .trainkit import render_gom

    gom = load_gom(args.gom)
    cam = load_camera(args.camera)
    poses = _pose_sequence(args.poses)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, pose in enumerate(poses):
        if pose.n_joints < _n_joints(gom):
            raise CliError("shape", f"{args.poses}: poses[{i}] has {pose.n_joints} joints")
        write_png(out / f"frame_{i:04d}.png", render_gom(gom, pose, cam)[0])


def cmd_eval(args) -> None:
    from .trainkit import EvalConfig, evaluate, mean_metric, write_metrics

    _, store, _ = _load_model(args.checkpoint)
    cfg = EvalConfig(seed=args.seed, n_subjects=args.subjects, resolution=args.resolution, T=args.T, k=args.k,
                     sigma=args.sigma)
    scenes = None
    if args.dataset:
        manifests = sorted(Path(args.dataset).glob("*/manifest.json"))
        if not manifests:
            raise CliError("io", f"{args.dataset}: no */manifest.json found")
        scenes = [_scene_from_manifest(m) for m in manifests]
        for m, s in zip(manifests, scenes):
            if not s.targets:
                raise CliError("schema", f"{m}: evaluation needs at least one target entry")
    rows = evaluate(store, cfg, scenes)
    write_metrics(rows, args.out)
    for T in cfg.T:
        print(f"T={T} psnr={mean_metric(rows, 'psnr', T=T):.3f} ssim={mean_metric(rows, 'ssim', T=T):.4f}")


def cmd_bench(args) -> None:
    from .splat.bench import bench_camera, bench_gaussians, time_render

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gaussians", "resolution", "ms"])
        for res in args.resolutions:
            cam = bench_camera(res)
            for n in sorted(args.counts):
                ms = time_render(bench_gaussians(n, args.seed), cam, args.repeats)
                w.writerow([n, res, f"{ms:.3f}"])
                fh.flush()


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gomrecon", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render synthetic subjects and write scene manifests")
    g.add_argument("--seeds", type=_seed_range, required=True, help="seed or half-open range A:B")
    g.add_argument("--views", type=_positive_int, default=3)
    g.add_argument("--poses", type=_positive_int, default=3, help="distinct source poses (views cycle over them)")
    g.add_argument("--targets", type=_nonnegative_int, default=0)
    g.add_argument("--resolution", type=_positive_int, default=64)
    g.add_argument("--pose-scale", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("reconstruct", help="reconstruct a canonical GoM from a scene manifest")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--manifest", required=True)
    r.add_argument("--T", type=_positive_int, default=3)
    r.add_argument("--k", type=int, choices=(0, 1, 2, 3))
    r.add_argument("--out", required=True)
    r.add_argument("--report", help="CSV with per-step time and source PSNR")
    r.set_defaults(fn=cmd_reconstruct)

    tp = sub.add_parser("template", help="write the untrained template GoM of a rig")
    tp.add_argument("--rig", required=True)
    tp.add_argument("--k", type=int, choices=(0, 1, 2, 3), default=2)
    tp.add_argument("--out", required=True)
    tp.set_defaults(fn=cmd_template)

    d = sub.add_parser("render", help="render a GoM container")
    d.add_argument("--gom", required=True)
    d.add_argument("--pose", help="pose JSON (default: identity)")
    d.add_argument("--camera", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--alpha", help="also write the soft mask PNG")
    d.add_argument("--exact", help="also write a float container with image and mask")
    d.set_defaults(fn=cmd_render)

    a = sub.add_parser("animate", help="render a GoM along a pose sequence")
    a.add_argument("--gom", required=True)
    a.add_argument("--poses", required=True, help='JSON {"poses": [...]}')
    a.add_argument("--camera", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_animate)

    e = sub.add_parser("eval", help="held-out metrics grid")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", help="directory of */manifest.json with targets (default: synthetic held-out)")
    e.add_argument("--subjects", type=_positive_int, default=8)
    e.add_argument("--resolution", type=_positive_int, default=64)
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--T", type=_int_list, default=(1, 2, 3))
    e.add_argument("--k", type=_int_list, default=(0, 1, 2))
    e.add_argument("--sigma", type=_float_list, default=(0.0, 0.1, 0.3))
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="rasterizer timing CSV")
    b.add_argument("--counts", type=_int_list, default=(10_000, 50_000, 100_000))
    b.add_argument("--resolutions", type=_int_list, default=(256, 512))
    b.add_argument("--repeats", type=_positive_int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_bench)
    return p


def _fail(kind: str, message: str, code: int = 1) -> int:
    print(f"gomrecon: error: {kind}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        return _fail(exc.kind, str(exc), 2)
    try:
        args.fn(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc))
    except ContainerError as exc:
        return _fail("container", str(exc))
    except FileNotFoundError as exc:
        return _fail("io", f"{exc.filename}: {exc.strerror}")
    except OSError as exc:
        return _fail("io", f"{exc.filename or ''}: {exc.strerror}")
    except (ValueError, KeyError) as exc:
        return _fail("value", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
