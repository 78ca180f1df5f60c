"""Pre-training, fine-tuning, linear probing and embedding export."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from tap import backbone, geometry, objective, renderer
from tap import ndcompute as nd
from tap.dataset import DatasetManifest, ManifestEntry, load_cloud
from tap.errors import ConfigError, DataError, NumericError
from tap.trainer import checkpoint as ckpt_io
from tap.trainer.config import TapConfig, config_from_text
from tap.trainer.optim import AdamState, adamw_step, cosine_lr, no_decay
from tap.trainer.pipeline import Batch, init_params, pipeline_loss

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "step", "loss_fg", "loss_bg", "loss_total", "lr")


# --------------------------------------------------------------------------
# data access


@dataclass
class CloudSet:
    ids: list[str]
    categories: list[str]
    points: np.ndarray  # [M, N, 3]
    grouping: tuple[np.ndarray, np.ndarray]
    images: np.ndarray | None = None  # [M, V, H, W, 3]

    def batch_grouping(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.grouping[0][idx], self.grouping[1][idx]


def load_clouds(manifest: DatasetManifest, entries: list[ManifestEntry], cfg: TapConfig,
                with_images: bool = False) -> CloudSet:
    if not entries:
        raise DataError("no dataset entries selected")
    pts = [load_cloud(manifest.cloud_path(e)) for e in entries]
    if len({p.shape[0] for p in pts}) != 1:
        raise DataError("all clouds in a run must have the same number of points")
    points = np.stack(pts)
    grouping = backbone.group(points, cfg.encoder)
    images = None
    if with_images:
        views = {len(e.views) for e in entries}
        if len(views) != 1 or 0 in views:
            raise DataError("pre-training needs the same nonzero number of views for every cloud")
        images = np.stack([[renderer.load_image(manifest.image_path(img)).pixels for _, img in e.views] for e in entries])
        if images.shape[2] != cfg.image_size or images.shape[3] != cfg.image_size:
            raise ConfigError(f"images are {images.shape[2]}x{images.shape[3]} but the decoder produces "
                              f"{cfg.image_size}x{cfg.image_size}")
    return CloudSet([e.id for e in entries], [e.category for e in entries], points, grouping, images)


def _cast_params(params: nd.ParamSet) -> nd.ParamSet:
    return params.copy(dtype=nd.default_dtype())


def _restore(params: nd.ParamSet, table: dict[str, np.ndarray], prefix: str = "") -> None:
    for name, arr in table.items():
        if name.startswith(prefix):
            params[name] = nd.tensor(arr)


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


# --------------------------------------------------------------------------
# pre-training


@dataclass
class PretrainResult:
    checkpoint: Path
    metrics: Path
    params: nd.ParamSet
    final_loss: float


def _sample_views(points: np.ndarray, elevation: float, size: int, rng: np.random.Generator):
    """Uniform random azimuth per cloud, rendered on the fly."""
    poses = [geometry.compose(geometry.rot_x(elevation), geometry.rot_y(a)) for a in rng.uniform(0.0, 360.0, len(points))]
    images = np.stack([renderer.render(p, R, size, size).pixels for p, R in zip(points, poses)])
    return poses, images


def _format_row(row) -> list[str]:
    return [str(row[0]), str(row[1])] + [repr(float(x)) for x in row[2:]]


def _worst_grad(params: nd.ParamSet) -> str:
    worst, name = -1.0, None
    for k in params:
        g = params[k].grad
        val = math.inf if g is None or not np.all(np.isfinite(g)) else float(np.abs(g).max())
        if val > worst:
            worst, name = val, k
    return f"{name} (max |grad| {worst})"


def pretrain(manifest: DatasetManifest, cfg: TapConfig, out_dir, resume=None, split: str = "train") -> PretrainResult:
    """Train encoder, photograph module and generator to predict view images.

    One epoch is a shuffled pass over every (cloud, view) pair of ``split``.
    Writes ``metrics.csv``, ``epoch_XXXX.ckpt`` every ``train.ckpt_every``
    epochs and ``final.ckpt``. ``resume`` is a checkpoint path written by an
    earlier run with the same config; the continued run is identical to an
    uninterrupted one.
    """
    cfg.validate()
    tc = cfg.train
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with nd.precision(tc.precision):
        entries = manifest.split(split) if split else manifest.entries
        data = load_clouds(manifest, entries, cfg, with_images=True)
        poses = geometry.sample_poses(data.images.shape[1], manifest.elevation)
        pairs = np.array([(c, v) for c in range(len(data.ids)) for v in range(data.images.shape[1])])
        steps_per_epoch = math.ceil(len(pairs) / tc.batch)
        total = tc.epochs * steps_per_epoch
        if tc.max_steps:
            total = min(total, tc.max_steps)
        warmup = tc.warmup_epochs * steps_per_epoch

        params = init_params(cfg, tc.seed)
        state = AdamState()
        rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 1]))
        step, start_epoch = 0, 0
        rows: list[list[str]] = []
        if resume is not None:
            ck = ckpt_io.load_checkpoint(resume)
            if ck.digest != cfg.digest():
                raise ConfigError(f"{resume}: checkpoint was written with a different config")
            _restore(params, ck.params)
            state = AdamState({k: v.astype(nd.default_dtype()) for k, v in ck.m.items()},
                              {k: v.astype(nd.default_dtype()) for k, v in ck.v.items()}, ck.step)
            rng = _rng_from_state(ck.rng_state)
            step, start_epoch = ck.step, ck.epoch
            metrics_prev = out / "metrics.csv"
            if metrics_prev.exists():
                with metrics_prev.open(newline="") as fh:
                    rows = [r for r in list(csv.reader(fh))[1:] if int(r[0]) < start_epoch]

        def save(path):
            ckpt_io.save_checkpoint(path, ckpt_io.Checkpoint(
                params.state(), dict(state.m), dict(state.v), step, epoch + 1, _rng_state(rng), cfg.to_text()))

        metrics_path = out / "metrics.csv"
        _write_metrics(metrics_path, rows)
        flushed = len(rows)
        last_loss = math.nan
        epoch = start_epoch - 1
        for epoch in range(start_epoch, tc.epochs):
            if step >= total:
                break
            perm = rng.permutation(len(pairs))
            for s in range(steps_per_epoch):
                if step >= total:
                    break
                sel = pairs[perm[s * tc.batch:(s + 1) * tc.batch]]
                ci, vi = sel[:, 0], sel[:, 1]
                if tc.pose_sampling == "continuous":
                    b_poses, b_images = _sample_views(data.points[ci], manifest.elevation, cfg.image_size, rng)
                else:
                    b_poses, b_images = [poses[v] for v in vi], data.images[ci, vi]
                batch = Batch(data.points[ci], b_poses, b_images, grouping=data.batch_grouping(ci))
                lr = cosine_lr(step, total, tc.lr0, tc.min_lr, warmup)
                params.zero_grad()
                loss, gen = pipeline_loss(params, batch, cfg, rng=rng)
                nd.backward(loss, params)
                last_loss = loss.item()
                if not math.isfinite(last_loss):
                    raise NumericError(f"non-finite loss at step {step} (lr={lr}); worst gradient {_worst_grad(params)}")
                adamw_step(params, state, lr, tc.weight_decay, (tc.beta1, tc.beta2), tc.eps,
                           decay=lambda n: not no_decay(n))
                d_fg, d_bg = objective.region_errors(gen.data, batch.images, cfg.loss)
                rows.append(_format_row((epoch, step, cfg.loss.w_fg * d_fg, cfg.loss.w_bg * d_bg, last_loss, lr)))
                step += 1
            _append_metrics(metrics_path, rows[flushed:])
            flushed = len(rows)
            if tc.ckpt_every and (epoch + 1) % tc.ckpt_every == 0:
                save(out / f"epoch_{epoch + 1:04d}.ckpt")
        final = out / "final.ckpt"
        save(final)
        log.info("pretrain finished: %d steps, final loss %.6f", step, last_loss)
        return PretrainResult(final, metrics_path, params, last_loss)


def _write_metrics(path: Path, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(rows)


def _append_metrics(path: Path, rows) -> None:
    with path.open("a", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def read_metrics(path) -> list[dict[str, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# encoder transfer


def load_encoder(init, cfg: TapConfig, seed: int) -> tuple[nd.ParamSet, TapConfig]:
    """Encoder parameters from a checkpoint, or a seeded random initialization."""
    if init is None:
        params = nd.ParamSet()
        backbone.init_encoder(params, cfg.encoder, np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[0]))
        return params, cfg
    ck = init if isinstance(init, ckpt_io.Checkpoint) else ckpt_io.load_checkpoint(init)
    ck_cfg = config_from_text(ck.config_text) if ck.config_text else cfg
    params = nd.ParamSet()
    _restore(params, ck.params, "encoder.")
    if not len(params):
        raise DataError("checkpoint holds no encoder parameters")
    return params, cfg.replace(**{f"encoder.{k}": v for k, v in asdict(ck_cfg.encoder).items()})


def label_map(manifest: DatasetManifest, train: list[ManifestEntry], test: list[ManifestEntry]) -> dict[str, int]:
    cats = sorted({e.category for e in train})
    unknown = sorted({e.category for e in test} - set(cats))
    if unknown:
        raise DataError(f"test categories {unknown} never appear in the training split")
    return {c: i for i, c in enumerate(cats)}


def select_labeled(entries: list[ManifestEntry], per_class: int) -> list[ManifestEntry]:
    if per_class <= 0:
        return list(entries)
    seen: dict[str, int] = {}
    out = []
    for e in sorted(entries, key=lambda e: e.id):
        if seen.get(e.category, 0) < per_class:
            seen[e.category] = seen.get(e.category, 0) + 1
            out.append(e)
    return out


def _encode_all(params: nd.ParamSet, cfg: TapConfig, data: CloudSet, idx=None) -> backbone.EncodedCloud:
    idx = np.arange(len(data.ids)) if idx is None else idx
    return backbone.encode(data.points[idx], params, cfg.encoder, grouping=data.batch_grouping(idx))


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels)) if len(labels) else float("nan")


@dataclass
class TransferReport:
    train_acc: float
    test_acc: float
    n_train: int
    n_test: int
    init: str
    seed: int
    initial_params: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "initial_params"}
        return json.dumps(d, sort_keys=True, indent=2)


def parameter_diff(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> list[str]:
    """Names whose values differ (or exist on one side only)."""
    names = sorted(set(a) | set(b))
    return [n for n in names if n not in a or n not in b or not np.array_equal(a[n], b[n])]


def finetune(init, manifest: DatasetManifest, cfg: TapConfig, seed: int | None = None, out_dir=None) -> TransferReport:
    """Train encoder + classification head on labeled clouds; ``init=None`` trains from scratch.

    The head (global max-pool and mean-pool of center features, then an MLP)
    draws from a stream independent of the encoder, so scratch and
    pre-trained runs with one seed differ only in encoder initialization.
    """
    fc = cfg.finetune
    seed = cfg.train.seed if seed is None else seed
    with nd.precision(cfg.train.precision):
        params, cfg = load_encoder(init, cfg, seed)
        params = _cast_params(params)
        train_e = select_labeled(manifest.split("train"), fc.per_class)
        test_e = manifest.split("test")
        labels_of = label_map(manifest, train_e, test_e)
        train = load_clouds(manifest, train_e, cfg)
        y_train = np.array([labels_of[c] for c in train.categories])
        test = load_clouds(manifest, test_e, cfg) if test_e else None
        y_test = np.array([labels_of[c] for c in test.categories]) if test else np.array([], dtype=int)
        head_dims = (2 * cfg.encoder.channels, fc.head_hidden, len(labels_of))
        nd.init_mlp(params, "head", head_dims, np.random.default_rng(np.random.SeedSequence([seed, 2])))
        initial = {k: v.copy() for k, v in params.state().items()}

        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        spe = math.ceil(len(y_train) / fc.batch)
        total, warmup = fc.epochs * spe, fc.warmup_epochs * spe
        state, step = AdamState(), 0
        for _ in range(fc.epochs):
            perm = rng.permutation(len(y_train))
            for s in range(spe):
                idx = perm[s * fc.batch:(s + 1) * fc.batch]
                params.zero_grad()
                logits = nd.mlp_forward(backbone.pooled_features(_encode_all(params, cfg, train, idx)), params, head_dims, "head")
                loss = nd.cross_entropy(logits, y_train[idx])
                nd.backward(loss, params)
                if not math.isfinite(loss.item()):
                    raise NumericError(f"non-finite fine-tune loss at step {step}; worst gradient {_worst_grad(params)}")
                adamw_step(params, state, cosine_lr(step, total, fc.lr0, fc.lr0 / 100, warmup), fc.weight_decay,
                           decay=lambda n: not no_decay(n))
                step += 1

        def predict(data):
            return nd.mlp_forward(backbone.pooled_features(_encode_all(params, cfg, data)), params, head_dims, "head").data

        report = TransferReport(
            _accuracy(predict(train), y_train),
            _accuracy(predict(test), y_test) if test else float("nan"),
            len(y_train), len(y_test), "scratch" if init is None else "pretrained", seed, initial,
        )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "finetune_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return report


@dataclass
class ProbeReport:
    train_acc: float
    test_acc: float
    encoder_unchanged: bool
    init: str


def linear_probe(init, manifest: DatasetManifest, cfg: TapConfig, seed: int | None = None) -> ProbeReport:
    """Affine classifier on standardized pooled features of a frozen encoder."""
    pc = cfg.probe
    seed = cfg.train.seed if seed is None else seed
    with nd.precision(cfg.train.precision):
        enc_params, cfg = load_encoder(init, cfg, seed)
        enc_params = _cast_params(enc_params)
        before = {k: v.copy() for k, v in enc_params.state().items()}
        train_e = select_labeled(manifest.split("train"), cfg.finetune.per_class)
        test_e = manifest.split("test")
        labels_of = label_map(manifest, train_e, test_e)
        train = load_clouds(manifest, train_e, cfg)
        test = load_clouds(manifest, test_e, cfg) if test_e else None

        def feats(data):
            return backbone.pooled_features(_encode_all(enc_params, cfg, data)).data.astype(np.float64)

        f_train = feats(train)
        mu, sd = f_train.mean(axis=0), f_train.std(axis=0) + 1e-6
        x_train = nd.tensor((f_train - mu) / sd)
        y_train = np.array([labels_of[c] for c in train.categories])
        head = nd.ParamSet()
        dims = (f_train.shape[1], len(labels_of))
        nd.init_mlp(head, "probe", dims, np.random.default_rng(np.random.SeedSequence([seed, 4])))
        state = AdamState()
        for step in range(pc.steps):
            head.zero_grad()
            loss = nd.cross_entropy(nd.mlp_forward(x_train, head, dims, "probe"), y_train)
            nd.backward(loss, head)
            adamw_step(head, state, cosine_lr(step, pc.steps, pc.lr0, pc.lr0 / 100), pc.weight_decay)

        def acc(data):
            y = np.array([labels_of[c] for c in data.categories])
            x = nd.tensor((feats(data) - mu) / sd)
            return _accuracy(nd.mlp_forward(x, head, dims, "probe").data, y)

        unchanged = all(np.array_equal(before[k], enc_params[k].data) for k in before)
        return ProbeReport(acc(train), acc(test) if test else float("nan"), unchanged,
                           "scratch" if init is None else "pretrained")


def export_embeddings(init, manifest: DatasetManifest, cfg: TapConfig, out_path, seed: int | None = None) -> int:
    """Write one TSV row per cloud: id, category, then the max-pooled C3d feature vector."""
    seed = cfg.train.seed if seed is None else seed
    with nd.precision(cfg.train.precision):
        params, cfg = load_encoder(init, cfg, seed)
        params = _cast_params(params)
        entries = sorted(manifest.entries, key=lambda e: e.id)
        data = load_clouds(manifest, entries, cfg)
        pooled = nd.max_axis(_encode_all(params, cfg, data).features, 1).data
    lines = ["\t".join(["id", "label"] + [f"f{i}" for i in range(pooled.shape[1])])]
    for cid, cat, row in zip(data.ids, data.categories, pooled):
        lines.append("\t".join([cid, cat] + [repr(float(x)) for x in row]))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(entries)
