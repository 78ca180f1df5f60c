"""Synthetic parametric shapes, point-cloud files, and dataset manifests."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tap import geometry, renderer
from tap.errors import ConfigError, DataError, FormatError

SHAPE_KINDS = ("sphere", "cube", "cylinder", "torus", "cone", "pyramid", "capsule", "ellipsoid")
GENERATOR_VERSION = "tap-shapes-1"
DEFAULT_POINTS = 1024

CLOUD_MAGIC = b"TAPC"
CLOUD_VERSION = 1
_CLOUD_HEADER = struct.Struct("<4sHI")

MANIFEST_MAGIC = "#tap-manifest"
MANIFEST_COLUMNS = ("id", "category", "split", "cloud", "pose_index", "image")


@dataclass
class PointCloud:
    points: np.ndarray
    label: int | None = None
    id: str = ""

    def __len__(self) -> int:
        return self.points.shape[0]


def normalize_cloud(points: np.ndarray) -> np.ndarray:
    """Center at the centroid and scale to unit max radius."""
    p = np.asarray(points, dtype=np.float64)
    p = p - p.mean(axis=0)
    r = np.sqrt((p * p).sum(axis=1)).max()
    return p / r if r > 0 else p


# --------------------------------------------------------------------------
# surface samplers; every shape is upright along +y


def _unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n):
    # antipodal pairs (plus a zero-sum triangle when n is odd) keep the centroid at the origin
    half = n // 2 if n % 2 == 0 else (n - 3) // 2
    v = _unit_vectors(rng, half)
    parts = [v, -v]
    if n % 2:
        a = _unit_vectors(rng, 1)[0]
        b = np.cross(a, _unit_vectors(rng, 1)[0])
        b /= np.linalg.norm(b)
        c = np.cross(a, b)
        t = np.radians([0.0, 120.0, 240.0])
        parts.append(np.outer(np.cos(t), b) + np.outer(np.sin(t), c))
    return np.concatenate(parts)


def _pick_parts(rng, n, areas):
    areas = np.asarray(areas, dtype=np.float64)
    return rng.choice(len(areas), size=n, p=areas / areas.sum())


def _cube(rng, n):
    s = rng.uniform(0.8, 1.2, size=3)
    face = _pick_parts(rng, n, [s[1] * s[2], s[1] * s[2], s[0] * s[2], s[0] * s[2], s[0] * s[1], s[0] * s[1]])
    p = rng.uniform(-0.5, 0.5, size=(n, 3))
    axis = face // 2
    p[np.arange(n), axis] = np.where(face % 2 == 0, -0.5, 0.5)
    return p * s


def _disk(rng, n, r):
    rad = r * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    return rad * np.cos(t), rad * np.sin(t)


def _cylinder(rng, n):
    r, h = rng.uniform(0.3, 0.6), rng.uniform(0.8, 1.6)
    part = _pick_parts(rng, n, [2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
    t = rng.uniform(0, 2 * np.pi, size=n)
    x, z = r * np.cos(t), r * np.sin(t)
    y = rng.uniform(-h / 2, h / 2, size=n)
    dx, dz = _disk(rng, n, r)
    cap = part > 0
    x[cap], z[cap] = dx[cap], dz[cap]
    y[part == 1], y[part == 2] = -h / 2, h / 2
    return np.stack([x, y, z], axis=1)


def _torus(rng, n):
    big, small = 1.0, rng.uniform(0.25, 0.45)
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * n
        th = rng.uniform(0, 2 * np.pi, size=m)
        ph = rng.uniform(0, 2 * np.pi, size=m)
        # area element is proportional to (big + small cos ph)
        keep = rng.uniform(size=m) < (big + small * np.cos(ph)) / (big + small)
        th, ph = th[keep], ph[keep]
        ring = big + small * np.cos(ph)
        out = np.concatenate([out, np.stack([ring * np.cos(th), small * np.sin(ph), ring * np.sin(th)], axis=1)])
    return out[:n]


def _cone(rng, n):
    r, h = rng.uniform(0.4, 0.8), rng.uniform(0.8, 1.6)
    slant = np.hypot(r, h)
    part = _pick_parts(rng, n, [np.pi * r * slant, np.pi * r * r])
    # lateral surface: radius grows linearly from apex, area density proportional to radius
    s = np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    x, z, y = s * r * np.cos(t), s * r * np.sin(t), h / 2 - s * h
    dx, dz = _disk(rng, n, r)
    base = part == 1
    x[base], z[base], y[base] = dx[base], dz[base], -h / 2
    return np.stack([x, y, z], axis=1)


def _triangle(rng, n, a, b, c):
    r1, r2 = rng.uniform(size=n), rng.uniform(size=n)
    flip = r1 + r2 > 1
    r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
    return a + np.outer(r1, b - a) + np.outer(r2, c - a)


def _pyramid(rng, n):
    b, h = rng.uniform(0.8, 1.4), rng.uniform(0.8, 1.5)
    c = b / 2
    base = [np.array(v, dtype=np.float64) for v in ([-c, -h / 2, -c], [c, -h / 2, -c], [c, -h / 2, c], [-c, -h / 2, c])]
    apex = np.array([0.0, h / 2, 0.0])
    tris = [(base[i], base[(i + 1) % 4], apex) for i in range(4)] + [(base[0], base[1], base[2]), (base[0], base[2], base[3])]
    areas = [0.5 * np.linalg.norm(np.cross(q - p, r - p)) for p, q, r in tris]
    part = _pick_parts(rng, n, areas)
    out = np.empty((n, 3))
    for i, (p, q, r) in enumerate(tris):
        sel = part == i
        out[sel] = _triangle(rng, int(sel.sum()), p, q, r)
    return out


def _capsule(rng, n):
    r, length = rng.uniform(0.25, 0.45), rng.uniform(0.6, 1.4)
    part = _pick_parts(rng, n, [2 * np.pi * r * length, 4 * np.pi * r * r])
    t = rng.uniform(0, 2 * np.pi, size=n)
    out = np.stack([r * np.cos(t), rng.uniform(-length / 2, length / 2, size=n), r * np.sin(t)], axis=1)
    caps = part == 1
    v = _unit_vectors(rng, int(caps.sum())) * r
    v[:, 1] += np.where(v[:, 1] >= 0, length / 2, -length / 2)
    out[caps] = v
    return out


def _ellipsoid(rng, n):
    axes = np.array([1.0, rng.uniform(0.45, 0.75), rng.uniform(0.45, 0.75)])
    return _unit_vectors(rng, n) * axes


_SAMPLERS = {
    "sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "torus": _torus,
    "cone": _cone, "pyramid": _pyramid, "capsule": _capsule, "ellipsoid": _ellipsoid,
}


def gen_shape(kind: str, n_points: int = DEFAULT_POINTS, seed: int = 0) -> PointCloud:
    """Sample ``n_points`` on the surface of a randomly proportioned ``kind``.

    The result is unit-normalized and rounded to float32-representable values
    so that a save/load round trip is exact.
    """
    if kind not in _SAMPLERS:
        raise ConfigError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    if n_points < 16:
        raise ConfigError(f"n_points must be >= 16, got {n_points}")
    rng = np.random.default_rng(seed)
    pts = normalize_cloud(_SAMPLERS[kind](rng, n_points))
    return PointCloud(pts.astype(np.float32).astype(np.float64), SHAPE_KINDS.index(kind), f"{kind}_{seed}")


# --------------------------------------------------------------------------
# point cloud files


def save_cloud(path, points: np.ndarray) -> None:
    p = np.ascontiguousarray(points, dtype="<f4")
    if p.ndim != 2 or p.shape[1] != 3:
        raise DataError(f"save_cloud: expected N x 3 points, got {p.shape}")
    Path(path).write_bytes(_CLOUD_HEADER.pack(CLOUD_MAGIC, CLOUD_VERSION, p.shape[0]) + p.tobytes())


def load_cloud(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _CLOUD_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)", len(raw))
    magic, version, n = _CLOUD_HEADER.unpack_from(raw)
    if magic != CLOUD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if version != CLOUD_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    payload = len(raw) - _CLOUD_HEADER.size
    if payload != n * 12:
        raise FormatError(f"{path}: header says {n} points but payload holds {payload} bytes", _CLOUD_HEADER.size)
    return np.frombuffer(raw, dtype="<f4", offset=_CLOUD_HEADER.size).reshape(n, 3).astype(np.float64)


# --------------------------------------------------------------------------
# manifests


def stable_split(cloud_id: str, test_every: int = 10) -> str:
    digest = hashlib.sha256(cloud_id.encode("utf-8")).digest()
    return "test" if int.from_bytes(digest[:8], "little") % test_every == 0 else "train"


@dataclass
class ManifestEntry:
    id: str
    category: str
    split: str
    cloud: str
    views: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    generator: str = GENERATOR_VERSION
    image_size: int = 0
    elevation: float = geometry.DEFAULT_ELEVATION
    root: Path = field(default_factory=Path)

    @property
    def num_views(self) -> int:
        return max((len(e.views) for e in self.entries), default=0)

    def categories(self) -> list[str]:
        return sorted({e.category for e in self.entries})

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def cloud_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.cloud

    def image_path(self, rel: str) -> Path:
        return self.root / rel

    def to_text(self) -> str:
        lines = [
            "\t".join([MANIFEST_MAGIC, "version=1", f"seed={self.seed}", f"generator={self.generator}",
                       f"image_size={self.image_size}", f"elevation={self.elevation!r}"]),
            "\t".join(MANIFEST_COLUMNS),
        ]
        for e in sorted(self.entries, key=lambda e: e.id):
            for pose_index, image in e.views or [(-1, "-")]:
                lines.append("\t".join([e.id, e.category, e.split, e.cloud, str(pose_index), image]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.tsv"
    if not path.is_file():
        raise DataError(f"no dataset manifest at {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or not lines[0].startswith(MANIFEST_MAGIC):
        raise FormatError(f"{path}: missing manifest header line", 0)
    meta = dict(f.split("=", 1) for f in lines[0].split("\t")[1:])
    if tuple(lines[1].split("\t")) != MANIFEST_COLUMNS:
        raise FormatError(f"{path}: unexpected column line {lines[1]!r}", len(lines[0]) + 1)
    entries: dict[str, ManifestEntry] = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(MANIFEST_COLUMNS):
            raise FormatError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(fields)}")
        cid, category, split, cloud, pose_index, image = fields
        e = entries.setdefault(cid, ManifestEntry(cid, category, split, cloud))
        if int(pose_index) >= 0:
            e.views.append((int(pose_index), image))
    man = DatasetManifest(
        list(entries.values()), int(meta.get("seed", 0)), meta.get("generator", ""),
        int(meta.get("image_size", 0)), float(meta.get("elevation", geometry.DEFAULT_ELEVATION)), path.parent,
    )
    for e in man.entries:
        if [p for p, _ in e.views] != list(range(len(e.views))):
            raise DataError(f"{path}: pose indices of {e.id} are not dense 0..V-1")
        if check_paths:
            missing = [p for p in [e.cloud] + [img for _, img in e.views] if not (man.root / p).exists()]
            if missing:
                raise DataError(f"{path}: missing files for {e.id}: {missing}")
    return man


def parse_shapes(shapes: str | int | dict) -> dict[str, int]:
    """``"4"`` (per kind), ``"sphere:2,cube:3"``, or ``"all:4"`` -> counts per kind."""
    if isinstance(shapes, dict):
        out = dict(shapes)
    elif isinstance(shapes, int) or str(shapes).strip().isdigit():
        out = {k: int(shapes) for k in SHAPE_KINDS}
    else:
        out = {}
        for part in str(shapes).split(","):
            kind, _, count = part.strip().partition(":")
            kinds = SHAPE_KINDS if kind == "all" else (kind,)
            for k in kinds:
                out[k] = int(count or 1)
    for k in out:
        if k not in SHAPE_KINDS:
            raise ConfigError(f"unknown shape kind {k!r}")
    return out


def cloud_seed(seed: int, kind: str, index: int) -> int:
    return int(np.random.SeedSequence([seed, SHAPE_KINDS.index(kind), index]).generate_state(1)[0])


def build_dataset(shapes, views: int, out_dir, seed: int = 0, n_points: int = DEFAULT_POINTS,
                  image_size: int = 32, elevation: float = geometry.DEFAULT_ELEVATION,
                  splat_radius: int | None = None) -> DatasetManifest:
    """Generate clouds, render ``views`` images each, and write ``manifest.tsv``."""
    counts = parse_shapes(shapes)
    out = Path(out_dir)
    try:
        (out / "clouds").mkdir(parents=True, exist_ok=True)
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    poses = geometry.sample_poses(views, elevation) if views > 0 else []
    entries = []
    for kind in SHAPE_KINDS:
        for i in range(counts.get(kind, 0)):
            cid = f"{kind}_{i:04d}"
            cloud = gen_shape(kind, n_points, cloud_seed(seed, kind, i))
            cloud_rel = f"clouds/{cid}.tapc"
            save_cloud(out / cloud_rel, cloud.points)
            entry = ManifestEntry(cid, kind, stable_split(cid), cloud_rel)
            for k, R in enumerate(poses):
                img_rel = f"images/{cid}_v{k:02d}.ppm"
                renderer.save_image(out / img_rel, renderer.render(cloud.points, R, image_size, image_size, splat_radius))
                entry.views.append((k, img_rel))
            entries.append(entry)
    entries.sort(key=lambda e: e.id)
    man = DatasetManifest(entries, seed, GENERATOR_VERSION, image_size, elevation, out)
    man.save(out / "manifest.tsv")
    return man
