"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Training-based criteria (8, 9, 10) run full 2000-step desk-preset schedules
and take several minutes each on one core.
"""

from __future__ import annotations

import statistics
import time

import numpy as np
import pytest

from oracles import chamfer_oracle, fps_oracle, render_oracle, tconv_oracle
from tap import backbone, dataset, decoder2d, geometry, objective, photograph, renderer
from tap import ndcompute as nd
from tap.cli import micro_gradcheck
from tap.trainer import pipeline
from tap.trainer.config import desk_preset
from tap.trainer.loop import finetune, linear_probe, pretrain, read_metrics

STEPS = 2000
WINDOW = 10  # steps averaged for the "early" and "final" loss


# ---------------------------------------------------------------- 1, 2 geometry


def random_projection(rng, h, w):
    return geometry.ProjectionParams(h, w, g=float(rng.uniform(0.01, 0.5)), o_h=float(rng.uniform(-2, 2)),
                                     o_w=float(rng.uniform(-2, 2)), x0=float(rng.uniform(-1, 1)),
                                     y0=float(rng.uniform(-1, 1)))


def test_criterion_1_optical_line_round_trip(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        R = geometry.random_rotation(rng)
        h, w = (int(x) for x in rng.integers(2, 64, 2))
        pp = random_projection(rng, h, w)
        u, v = int(rng.integers(0, h)), int(rng.integers(0, w))
        t = float(rng.uniform(-10, 10))
        line = geometry.optical_line(R, pp, u, v)
        p = line.origin + t * line.direction
        back = geometry.project_to_grid(geometry.rotate_points(p[None], R), pp)[0]
        worst = max(worst, abs(back[0] - u), abs(back[1] - v))
    elapsed = time.perf_counter() - t0
    ok = report(1, worst < 1e-9 and elapsed < 5.0, f"max cell error {worst:.2e} (tol 1e-9), {elapsed:.2f} s (limit 5 s)")
    assert ok


def test_criterion_2_direction_is_unit(report):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(1000):
        A = geometry.random_rotation(rng).T
        worst = max(worst, abs(np.linalg.norm(A[:, 2]) - 1.0))
    ok = report(2, worst < 1e-12, f"max | ||A[:,2]|| - 1 | = {worst:.2e} (tol 1e-12)")
    assert ok


# ---------------------------------------------------------------- 3 attention


def random_batch(rng, cfg, kinds=("sphere", "cone", "pyramid", "torus"), n_points=256):
    clouds = np.stack([dataset.gen_shape(k, n_points, int(rng.integers(1 << 30))).points for k in kinds])
    poses = [geometry.random_rotation(rng) for _ in kinds]
    images = np.stack([renderer.render(c, R, cfg.image_size, cfg.image_size).pixels for c, R in zip(clouds, poses)])
    return pipeline.prepare(pipeline.Batch(clouds, poses, images), cfg)


def test_criterion_3_attention_invariants(report):
    rng = np.random.default_rng(303)
    row_err, perm_err = 0.0, 0.0
    for mode in ("cross_attention", "learnable_query"):
        cfg = desk_preset().replace(**{"photo.mode": mode})
        params = pipeline.init_params(cfg, 3)
        for _ in range(2):
            batch = random_batch(rng, cfg)
            trace = photograph.AttentionTrace()
            pipeline.generate(params, batch, cfg, trace=trace)
            assert len(trace.weights) == cfg.photo.layers
            for w in trace.weights:
                row_err = max(row_err, float(np.abs(w.astype(np.float64).sum(axis=-1) - 1.0).max()))

        with nd.precision(64):
            params64 = pipeline.init_params(cfg, 3)
            batch = random_batch(rng, cfg)
            enc = backbone.encode(batch.points, params64, cfg.encoder, grouping=batch.grouping)
            base = photograph.photograph_forward(enc, batch.poses, batch.pps, params64, cfg.photo).data
            perm = rng.permutation(enc.centers.shape[1])
            shuffled = backbone.EncodedCloud(enc.centers[:, perm], nd.tensor(enc.features.data[:, perm]))
            moved = photograph.photograph_forward(shuffled, batch.poses, batch.pps, params64, cfg.photo).data
            perm_err = max(perm_err, float(np.abs(moved - base).max()))
    ok = report(3, row_err < 1e-6 and perm_err < 1e-6,
                f"max row-sum error {row_err:.2e}, max permutation change {perm_err:.2e} (tol 1e-6)")
    assert ok


# ---------------------------------------------------------------- 4 gradient gate


def test_criterion_4_gradient_gate(report):
    t0 = time.perf_counter()
    rep, params = micro_gradcheck(seed=0)
    elapsed = time.perf_counter() - t0
    groups = ("encoder.", "photo.query.", "photo.memory.", "photo.block", "decoder.")
    covered = all(any(name.startswith(g) for name in rep.per_param) for g in groups)
    assert set(rep.per_param) == set(params)
    ok = report(4, rep.max_rel_err < 1e-5 and elapsed < 120 and covered,
                f"max rel err {rep.max_rel_err:.2e} at {rep.worst_param} (tol 1e-5) over {rep.checked} elements "
                f"in {len(rep.per_param)} tensors, {elapsed:.1f} s (limit 120 s)")
    assert ok


# ---------------------------------------------------------------- 5 shapes


def run_decoder(stages, size):
    cfg = decoder2d.DecoderConfig(stages)
    params = nd.ParamSet()
    decoder2d.init_decoder(params, cfg, np.random.default_rng(5))
    x = nd.tensor(np.random.default_rng(6).standard_normal((1, size, size, stages[0][0])))
    shapes = [x.shape[1:]]
    for i, (cin, cout, k, s, p, op) in enumerate(stages):
        x = nd.tconv2d(x, params[f"decoder.{i}.kernel"], s, p, op, params[f"decoder.{i}.bias"])
        shapes.append(x.shape[1:])
        if i < len(stages) - 1:
            x = nd.relu(x)
    final = decoder2d.decode(nd.tensor(np.zeros((1, size, size, stages[0][0]))), params, cfg).shape[1:]
    return shapes, final


def test_criterion_5_decoder_shapes(report):
    paper, paper_final = run_decoder(decoder2d.PAPER_STAGES, 7)
    desk, desk_final = run_decoder(decoder2d.DESK_STAGES, 4)
    ok = (paper == [(7, 7, 256), (28, 28, 128), (56, 56, 64), (112, 112, 32), (224, 224, 3)]
          and paper_final == (224, 224, 3) and desk[-1] == (32, 32, 3) and desk_final == (32, 32, 3))
    report(5, ok, f"full: {' -> '.join('x'.join(map(str, s)) for s in paper)}; "
                  f"desk: {' -> '.join('x'.join(map(str, s)) for s in desk)}")
    assert ok


# ---------------------------------------------------------------- 6 oracles


def test_criterion_6_oracle_equivalence(report):
    rng = np.random.default_rng(606)
    fps_ok = True
    for _ in range(20):
        N = int(rng.integers(2, 129))
        pts = rng.integers(-3, 4, size=(N, 3)).astype(float) if rng.random() < 0.5 else rng.standard_normal((N, 3))
        n = int(rng.integers(1, min(N, 16) + 1))
        fps_ok &= backbone.farthest_point_sample(pts, n).tolist() == fps_oracle(pts, n)

    ch_err = 0.0
    for _ in range(20):
        a = rng.standard_normal((int(rng.integers(1, 129)), 3))
        b = rng.standard_normal((int(rng.integers(1, 129)), 3))
        got, want = objective.chamfer_terms(a, b), chamfer_oracle(a, b)
        ch_err = max(ch_err, abs(got[0] - want[0]), abs(got[1] - want[1]))

    ras_err = 0.0
    for _ in range(10):
        pts = rng.standard_normal((int(rng.integers(1, 129)), 3))
        R, radius = geometry.random_rotation(rng), int(rng.integers(0, 3))
        got = renderer.render(pts, R, 16, 16, splat_radius=radius).pixels[:, :, 0]
        ras_err = max(ras_err, float(np.abs(got - render_oracle(pts, R, 16, 16, radius)).max()))

    tc_err = 0.0
    with nd.precision(64):
        for h, k, s, p, op in [(4, 5, 4, 1, 1), (8, 3, 2, 1, 1), (16, 3, 1, 1, 0), (3, 2, 3, 0, 2)]:
            x = rng.standard_normal((h, h, 3))
            kern = rng.standard_normal((k, k, 3, 2))
            got = nd.tconv2d(nd.tensor(x), nd.tensor(kern), s, p, op).data
            tc_err = max(tc_err, float(np.abs(got - tconv_oracle(x, kern, s, p, op)).max()))
    ok = fps_ok and ch_err < 1e-9 and ras_err < 1e-9 and tc_err < 1e-9
    report(6, ok, f"FPS exact={fps_ok}, Chamfer {ch_err:.1e}, rasterizer {ras_err:.1e}, "
                  f"transposed conv {tc_err:.1e} (tol 1e-9)")
    assert ok


# ---------------------------------------------------------------- 7 loss arithmetic


def test_criterion_7_uniform_delta_loss(report):
    w = objective.LossWeights()
    assert (w.w_fg, w.w_bg) == (20.0, 1.0)
    worst = 0.0
    with nd.precision(64):
        for delta in (0.1, 0.05, 0.3, -0.2):
            for H, fg_rows in ((8, 2), (16, 1), (16, 9), (10, 5)):
                gt = np.ones((H, H, 3))
                gt[:fg_rows] = 0.5
                gen = gt - delta if delta > 0 else np.where(gt == 1.0, 1.0 + delta, gt + delta)
                rho_fg = fg_rows / H
                expected = w.w_fg * rho_fg * delta**2 + w.w_bg * (1 - rho_fg) * delta**2
                worst = max(worst, abs(objective.tap_loss(nd.tensor(gen), gt, w).item() - expected))
    ok = report(7, worst < 1e-12, f"max deviation {worst:.1e} over 16 (delta, rho) cases (tol 1e-12)")
    assert ok


# ---------------------------------------------------------------- 8, 10 overfit protocol


@pytest.fixture(scope="session")
def overfit_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit_data")
    shapes = {"cube": 1, "torus": 1, "cone": 1, "cylinder": 1}
    return dataset.build_dataset(shapes, 12, root, seed=0, n_points=512, image_size=32)


class OverfitRuns:
    def __init__(self, manifest, root):
        self.manifest, self.root, self.cache = manifest, root, {}

    def config(self, mode, seed):
        return desk_preset().replace(**{"photo.mode": mode, "train.seed": seed, "train.batch": 8,
                                        "train.epochs": 100000, "train.max_steps": STEPS, "train.ckpt_every": 0})

    def run(self, mode, seed, tag=""):
        key = (mode, seed, tag)
        if key not in self.cache:
            t0 = time.perf_counter()
            res = pretrain(self.manifest, self.config(mode, seed), self.root / f"{mode}_{seed}{tag}", split="")
            losses = [row["loss_total"] for row in read_metrics(res.metrics)]
            self.cache[key] = (res, losses, time.perf_counter() - t0)
        return self.cache[key]


@pytest.fixture(scope="session")
def overfit_runs(overfit_data, tmp_path_factory):
    return OverfitRuns(overfit_data, tmp_path_factory.mktemp("overfit_runs"))


def test_criterion_8_overfit(report, overfit_runs):
    res, losses, elapsed = overfit_runs.run("cross_attention", 0)
    again, _, _ = overfit_runs.run("cross_attention", 0, tag="_again")
    early, final = np.mean(losses[:WINDOW]), np.mean(losses[-WINDOW:])
    same = (res.metrics.read_bytes() == again.metrics.read_bytes()
            and res.checkpoint.read_bytes() == again.checkpoint.read_bytes())
    ok = len(losses) == STEPS and final < 0.1 * early and same and elapsed < 600
    report(8, ok, f"early {early:.4f} -> final {final:.4f} (ratio {final / early:.3f}, need < 0.1), "
                  f"rerun identical={same}, {elapsed:.0f} s (limit 600 s)")
    assert ok


# ---------------------------------------------------------------- 9 transfer


def test_criterion_9_transfer_direction(report, tmp_path_factory):
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("transfer")
    manifest = dataset.build_dataset("all:30", 12, root / "data", seed=0, n_points=512, image_size=32)
    cfg = desk_preset().replace(**{"train.epochs": 100000, "train.max_steps": STEPS, "train.ckpt_every": 0,
                                   "finetune.per_class": 10})
    ckpt = pretrain(manifest, cfg, root / "pretrain").checkpoint
    scratch, tuned, rand_probe, pre_probe = [], [], [], []
    for seed in range(5):
        scratch.append(finetune(None, manifest, cfg, seed=seed).test_acc)
        tuned.append(finetune(ckpt, manifest, cfg, seed=seed).test_acc)
        rand_probe.append(linear_probe(None, manifest, cfg, seed=seed).test_acc)
        pre_probe.append(linear_probe(ckpt, manifest, cfg, seed=seed).test_acc)
    elapsed = time.perf_counter() - t0
    med = statistics.median
    ok = med(tuned) >= med(scratch) and med(pre_probe) > med(rand_probe) and elapsed < 1800
    report(9, ok, f"fine-tune median {med(tuned):.3f} vs scratch {med(scratch):.3f}; probe median "
                  f"{med(pre_probe):.3f} vs random encoder {med(rand_probe):.3f}; {elapsed:.0f} s (limit 1800 s)")
    assert ok


# ---------------------------------------------------------------- 10 ablation ordering


def test_criterion_10_formula_vs_learnable_queries(report, overfit_runs):
    finals = {}
    for mode in ("cross_attention", "learnable_query"):
        finals[mode] = [float(np.mean(overfit_runs.run(mode, seed)[1][-WINDOW:])) for seed in range(3)]
    formula, learned = statistics.median(finals["cross_attention"]), statistics.median(finals["learnable_query"])
    ok = formula <= learned
    report(10, ok, f"median final loss formula queries {formula:.4f} "
                   f"({', '.join(f'{x:.4f}' for x in finals['cross_attention'])}) vs learnable queries {learned:.4f} "
                   f"({', '.join(f'{x:.4f}' for x in finals['learnable_query'])}); need formula <= learnable")
    assert ok


# ---------------------------------------------------------------- 11 reproducibility


def test_criterion_11_reproducibility(report, tmp_path):
    manifest = dataset.build_dataset({"cube": 1, "torus": 1}, 4, tmp_path / "data", seed=1, n_points=128,
                                     image_size=32)
    cfg = desk_preset().replace(**{"train.epochs": 3, "train.ckpt_every": 1})
    a = pretrain(manifest, cfg, tmp_path / "a", split="")
    b = pretrain(manifest, cfg, tmp_path / "b", split="")
    names = ["epoch_0001.ckpt", "epoch_0002.ckpt", "epoch_0003.ckpt", "final.ckpt"]
    same_csv = a.metrics.read_bytes() == b.metrics.read_bytes()
    same_ckpt = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)

    # resume into a fresh directory from the first epoch checkpoint
    c = pretrain(manifest, cfg, tmp_path / "c", resume=tmp_path / "a" / "epoch_0001.ckpt", split="")
    full_rows = [r for r in read_metrics(a.metrics) if r["epoch"] >= 1]
    resumed = (read_metrics(c.metrics) == full_rows
               and c.checkpoint.read_bytes() == a.checkpoint.read_bytes()
               and (tmp_path / "c" / "epoch_0003.ckpt").read_bytes() == (tmp_path / "a" / "epoch_0003.ckpt").read_bytes())
    ok = same_csv and same_ckpt and resumed
    report(11, ok, f"identical metrics CSV={same_csv}, byte-identical checkpoints={same_ckpt}, "
                   f"resume reproduces uninterrupted run={resumed}")
    assert ok
