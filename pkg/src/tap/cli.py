"""Command-line entry point: ``tap <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from tap import dataset, geometry, renderer
from tap.errors import TapError
from tap.trainer import config as config_mod


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for p in pairs or []:
        key, sep, value = p.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {p!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args) -> config_mod.TapConfig:
    return config_mod.load_config(getattr(args, "config", None), _overrides(args.set), getattr(args, "preset", None))


def cmd_gen_data(args) -> int:
    man = dataset.build_dataset(args.shapes, args.views, args.out, seed=args.seed, n_points=args.points,
                                image_size=args.size, elevation=args.elevation)
    n_img = sum(len(e.views) for e in man.entries)
    print(f"wrote {len(man.entries)} clouds and {n_img} images to {args.out}")
    return 0


def cmd_render(args) -> int:
    pts = dataset.load_cloud(args.cloud)
    R = geometry.sample_poses(args.views, args.elevation)[args.pose_index]
    renderer.save_image(args.out, renderer.render(pts, R, args.size, args.size, args.radius))
    print(f"wrote {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from tap.trainer.loop import pretrain

    cfg = _config(args)
    man = dataset.load_manifest(args.data)
    res = pretrain(man, cfg, args.out, resume=args.resume, split="" if args.all else "train")
    print(f"final loss {res.final_loss:.6f}; checkpoint {res.checkpoint}; metrics {res.metrics}")
    return 0


def cmd_finetune(args) -> int:
    from tap.trainer.loop import finetune

    cfg = _config(args)
    rep = finetune(args.init, dataset.load_manifest(args.data, check_paths=False), cfg, out_dir=args.out)
    print(rep.to_json())
    return 0


def cmd_probe(args) -> int:
    from tap.trainer.loop import linear_probe

    rep = linear_probe(args.init, dataset.load_manifest(args.data, check_paths=False), _config(args))
    print(f"train_acc={rep.train_acc:.4f} test_acc={rep.test_acc:.4f} encoder_unchanged={rep.encoder_unchanged}")
    return 0


def cmd_export(args) -> int:
    from tap.trainer.loop import export_embeddings

    n = export_embeddings(args.init, dataset.load_manifest(args.data, check_paths=False), _config(args), args.out)
    print(f"wrote {n} rows to {args.out}")
    return 0


# gradients below this magnitude are compared absolutely; central-difference
# roundoff on an O(1) loss is around 1e-11
GRADCHECK_FLOOR = 1e-4


def micro_gradcheck(seed: int = 0, samples: int = 16, mode: str = "cross_attention", n_points: int = 128):
    """Finite-difference check of the full desk-preset pipeline on a 2-cloud batch in 64-bit."""
    from tap import ndcompute as nd
    from tap.trainer import pipeline

    cfg = config_mod.desk_preset().replace(**{"train.precision": 64, "photo.mode": mode})
    rng = np.random.default_rng(seed)
    with nd.precision(64):
        kinds = ["cube", "torus"]
        clouds = np.stack([dataset.gen_shape(k, n_points, seed + i).points for i, k in enumerate(kinds)])
        poses = [geometry.sample_poses(12)[i] for i in (1, 7)]
        images = np.stack([renderer.render(c, R, 32, 32).pixels for c, R in zip(clouds, poses)])
        params = pipeline.init_params(cfg, seed)
        # zero-initialized biases put ReLU inputs exactly on the kink wherever the
        # incoming activations are all zero; check at a generic point instead
        for name in params:
            if name.endswith(".bias"):
                params[name].data += rng.normal(0.0, 0.05, params[name].shape)
        batch = pipeline.prepare(pipeline.Batch(clouds, poses, images), cfg)
        drop_seed = int(rng.integers(2**31))

        def f():
            # fixed drop-path draws so every evaluation sees the same masks
            return pipeline.pipeline_loss(params, batch, cfg, rng=np.random.default_rng(drop_seed))[0]

        return nd.grad_check(f, params, eps=1e-5, samples=samples, seed=seed, floor=GRADCHECK_FLOOR), params


def cmd_gradcheck(args) -> int:
    t = time.time()
    report, params = micro_gradcheck(args.seed, args.samples, args.mode)
    for name, err in report.per_param.items():
        print(f"{err:10.3e}  {name}")
    ok = report.max_rel_err < args.tol
    print(f"max relative error {report.max_rel_err:.3e} at {report.worst_param}{report.worst_index} "
          f"over {report.checked} elements in {time.time() - t:.1f}s: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    from tap import backbone, objective

    rng = np.random.default_rng(args.seed)
    results = []

    worst = 0.0
    for _ in range(200):
        R = geometry.random_rotation(rng)
        pp = geometry.fit_projection(geometry.rotate_points(rng.standard_normal((32, 3)), R), 7, 7)
        u, v = rng.integers(0, 7, size=2)
        line = geometry.optical_line(R, pp, int(u), int(v))
        for t in (-1.0, 0.3, 2.0):
            back = geometry.project_to_grid(geometry.rotate_points((line.origin + t * line.direction)[None], R), pp)[0]
            worst = max(worst, abs(back[0] - u), abs(back[1] - v))
    results.append(("optical line round trip", worst < 1e-9))

    pts = rng.standard_normal((100, 3))
    idx = backbone.farthest_point_sample(pts, 10)
    results.append(("farthest point sampling distinct", len(set(idx.tolist())) == 10))
    results.append(("chamfer identity", objective.chamfer(pts, pts) == 0.0))

    report, _ = micro_gradcheck(args.seed, samples=4)
    results.append(("pipeline gradient check", report.max_rel_err < 1e-5))
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if all(ok for _, ok in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tap", description="3D-to-2D generative pre-training at desk scale")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--preset", choices=sorted(config_mod.PRESETS), help="base preset (default: paper)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")

    g = sub.add_parser("gen-data", help="generate a synthetic multi-view dataset")
    g.add_argument("--shapes", default="4", help='clouds per kind ("4"), or "sphere:2,cube:3", or "all:4"')
    g.add_argument("--views", type=int, default=12)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--points", type=int, default=dataset.DEFAULT_POINTS)
    g.add_argument("--size", type=int, default=32, help="image resolution")
    g.add_argument("--elevation", type=float, default=geometry.DEFAULT_ELEVATION)
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("render", help="render one view of a point-cloud file")
    r.add_argument("--cloud", required=True)
    r.add_argument("--pose-index", type=int, default=0)
    r.add_argument("--views", type=int, default=12)
    r.add_argument("--elevation", type=float, default=geometry.DEFAULT_ELEVATION)
    r.add_argument("--size", type=int, default=224)
    r.add_argument("--radius", type=int, default=None)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    t = sub.add_parser("pretrain", help="generative pre-training")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--all", action="store_true", help="train on every entry, not only the train split")
    with_config(t)
    t.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="classification fine-tuning")
    f.add_argument("--data", required=True)
    f.add_argument("--init", help="pre-trained checkpoint (omit for scratch)")
    f.add_argument("--out", required=True)
    with_config(f)
    f.set_defaults(func=cmd_finetune)

    pr = sub.add_parser("probe", help="linear probe on a frozen encoder")
    pr.add_argument("--init", help="pre-trained checkpoint (omit for a random encoder)")
    pr.add_argument("--data", required=True)
    with_config(pr)
    pr.set_defaults(func=cmd_probe)

    e = sub.add_parser("export-emb", help="export pooled encoder features")
    e.add_argument("--init", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    with_config(e)
    e.set_defaults(func=cmd_export)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the whole pipeline")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--samples", type=int, default=16, help="elements checked per tensor")
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.add_argument("--mode", default="cross_attention")
    gc.set_defaults(func=cmd_gradcheck)

    st = sub.add_parser("selftest", help="quick correctness checks")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
