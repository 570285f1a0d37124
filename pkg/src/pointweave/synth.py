"""Synthetic matching pairs: shape generators, rigid/deformed transforms, file I/O.

Every generator is a pure function of its seed and parameters, so a
recorded (seed, index) pair regenerates byte-identical samples. Pair
files use a fixed little-endian binary layout; the dataset manifest is a
line-oriented text index next to them.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .encoder import PointCloud, normalize_positions
from .errors import ConfigError, PairFormatError

SHAPE_KINDS = ("sphere", "cube-surface", "gaussian-clusters", "torus")

_MAGIC = b"PWPR"
_VERSION = 1
_FLAG_DEFORM = 1

MANIFEST_NAME = "manifest.txt"
_MANIFEST_HEADER = "pointweave-data v1"


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


@dataclass
class DeformField:
    """Sum of Gaussian radial kernels, each pushing along a fixed direction."""

    centers: np.ndarray     # (j, 3)
    directions: np.ndarray  # (j, 3), norm = kernel amplitude
    widths: np.ndarray      # (j,)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        out = np.zeros_like(points)
        for center, direction, width in zip(self.centers, self.directions, self.widths):
            sq = ((points - center) ** 2).sum(axis=1)
            out += np.exp(-sq / (2.0 * width * width))[:, None] * direction
        return out


@dataclass
class PairSample:
    """Two clouds plus the ground truth that generated them.

    ``gt_permutation[i]`` is the index in cloud B of the point generated
    from cloud A's point i.
    """

    cloud_a: PointCloud
    cloud_b: PointCloud
    gt_permutation: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    noise_sigma: float
    deform: DeformField | None = None

    def __post_init__(self):
        self.gt_permutation = np.asarray(self.gt_permutation, dtype=np.int64)
        n = len(self.cloud_a)
        perm_sorted = np.sort(self.gt_permutation)
        if self.gt_permutation.shape != (n,) or not np.array_equal(perm_sorted, np.arange(n)):
            raise ConfigError("gt_permutation must be a bijection on [0, n)")
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-9):
            raise ConfigError("rotation must be orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
            raise ConfigError("rotation must have determinant 1")


def gen_shape(kind: str, n: int, seed, clusters: int = 4) -> PointCloud:
    """Deterministic normalized point cloud of the requested kind."""
    if n < 8:
        raise ConfigError(f"shapes need n >= 8, got {n}")
    rng = _rng(seed)
    if kind == "sphere":
        positions = _sphere(rng, n)
    elif kind == "cube-surface":
        positions = _cube_surface(rng, n)
    elif kind == "gaussian-clusters":
        positions = _gaussian_clusters(rng, n, clusters)
    elif kind == "torus":
        positions = _torus(rng, n)
    else:
        raise ConfigError(f"unknown shape kind {kind!r} (choose from {SHAPE_KINDS})")
    return PointCloud(normalize_positions(positions))


def _sphere(rng, n):
    # antipodal pairs give an exact centroid at the center and a true
    # diameter, so the normalized radius is exactly 0.5 for even n
    half = n // 2
    dirs = rng.normal(size=(half, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    points = np.concatenate([dirs, -dirs], axis=0)
    if n % 2:
        extra = rng.normal(size=3)
        points = np.concatenate([points, (extra / np.linalg.norm(extra))[None]], axis=0)
    return points


def _cube_surface(rng, n):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    points = np.empty((n, 3))
    axis = face % 3
    sign = np.where(face < 3, 0.5, -0.5)
    for i in range(n):
        others = [d for d in range(3) if d != axis[i]]
        points[i, axis[i]] = sign[i]
        points[i, others[0]] = uv[i, 0]
        points[i, others[1]] = uv[i, 1]
    return points


def _gaussian_clusters(rng, n, clusters):
    if clusters < 1:
        raise ConfigError("need at least one cluster")
    centers = rng.uniform(-1.0, 1.0, size=(clusters, 3))
    sizes = np.full(clusters, n // clusters)
    sizes[: n % clusters] += 1
    blocks = [rng.normal(scale=0.15, size=(size, 3)) + centers[i]
              for i, size in enumerate(sizes)]
    return np.concatenate(blocks, axis=0)


def _torus(rng, n, major=1.0, minor=0.35):
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    ring = major + minor * np.cos(theta)
    return np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation via a normalized random quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def make_rigid_pair(cloud: PointCloud, seed, noise_sigma: float = 0.0,
                    rotation: np.ndarray | None = None,
                    translation: np.ndarray | None = None,
                    permutation: np.ndarray | None = None) -> PairSample:
    """B = permute(R A + t) + noise, with the generating transform recorded.

    The rotation/translation/permutation arguments override the random
    draws (test hook; pass identity values to get cloud_b == cloud_a).
    """
    if noise_sigma < 0.0:
        raise ConfigError("noise_sigma must be non-negative")
    rng = _rng(seed)
    n = len(cloud)
    if rotation is None:
        rotation = random_rotation(rng)
    if translation is None:
        translation = rng.uniform(-0.5, 0.5, size=3)
    if permutation is None:
        permutation = rng.permutation(n)
    permutation = np.asarray(permutation, dtype=np.int64)
    moved = cloud.positions @ np.asarray(rotation).T + np.asarray(translation)
    if noise_sigma > 0.0:
        moved = moved + rng.normal(scale=noise_sigma, size=moved.shape)
    positions_b = np.empty_like(moved)
    positions_b[permutation] = moved
    return PairSample(
        cloud_a=cloud,
        cloud_b=PointCloud(positions_b),
        gt_permutation=permutation,
        rotation=np.asarray(rotation, dtype=np.float64),
        translation=np.asarray(translation, dtype=np.float64),
        noise_sigma=float(noise_sigma),
    )


def make_deformed_pair(cloud: PointCloud, seed, num_kernels: int = 5,
                       magnitude: float = 0.05) -> PairSample:
    """Smooth non-rigid pair: a sum-of-Gaussian displacement, then a shuffle.

    Each kernel's amplitude is at most ``magnitude``, so no point moves
    farther than num_kernels * magnitude.
    """
    if magnitude < 0.0:
        raise ConfigError("magnitude must be non-negative")
    rng = _rng(seed)
    n = len(cloud)
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    centers = rng.uniform(lo, hi, size=(num_kernels, 3))
    dirs = rng.normal(size=(num_kernels, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    amplitudes = rng.uniform(0.0, magnitude, size=num_kernels)
    field = DeformField(centers, dirs * amplitudes[:, None],
                        rng.uniform(0.1, 0.3, size=num_kernels))
    permutation = rng.permutation(n).astype(np.int64)
    moved = cloud.positions + field(cloud.positions)
    positions_b = np.empty_like(moved)
    positions_b[permutation] = moved
    return PairSample(
        cloud_a=cloud,
        cloud_b=PointCloud(positions_b),
        gt_permutation=permutation,
        rotation=np.eye(3),
        translation=np.zeros(3),
        noise_sigma=0.0,
        deform=field,
    )


# ----------------------------------------------------------------------
# pair file format
# ----------------------------------------------------------------------


def write_pair(path: str, sample: PairSample) -> None:
    n = len(sample.cloud_a)
    m = len(sample.cloud_b)
    flags = _FLAG_DEFORM if sample.deform is not None else 0
    parts = [
        _MAGIC,
        struct.pack("<IIII", _VERSION, n, m, flags),
        struct.pack("<d", sample.noise_sigma),
        np.ascontiguousarray(sample.rotation, dtype="<f8").tobytes(),
        np.ascontiguousarray(sample.translation, dtype="<f8").tobytes(),
        np.ascontiguousarray(sample.cloud_a.positions, dtype="<f8").tobytes(),
        np.ascontiguousarray(sample.cloud_b.positions, dtype="<f8").tobytes(),
        np.ascontiguousarray(sample.gt_permutation, dtype="<i8").tobytes(),
    ]
    if sample.deform is not None:
        d = sample.deform
        parts.append(struct.pack("<I", d.centers.shape[0]))
        parts.append(np.ascontiguousarray(d.centers, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(d.directions, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(d.widths, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.blob):
            raise PairFormatError(f"truncated while reading {what}", self.offset)
        chunk = self.blob[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def array(self, dtype: str, count: int, shape, what: str) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize, what)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def read_pair(path: str) -> PairSample:
    with open(path, "rb") as fh:
        blob = fh.read()
    cur = _Cursor(blob)
    if cur.take(4, "magic") != _MAGIC:
        raise PairFormatError("bad magic", 0)
    version, n, m, flags = struct.unpack("<IIII", cur.take(16, "header"))
    if version != _VERSION:
        raise PairFormatError(f"unsupported version {version}", 4)
    (noise_sigma,) = struct.unpack("<d", cur.take(8, "noise sigma"))
    rotation = cur.array("<f8", 9, (3, 3), "rotation")
    translation = cur.array("<f8", 3, (3,), "translation")
    positions_a = cur.array("<f8", n * 3, (n, 3), "cloud A positions")
    positions_b = cur.array("<f8", m * 3, (m, 3), "cloud B positions")
    permutation = cur.array("<i8", n, (n,), "permutation")
    deform = None
    if flags & _FLAG_DEFORM:
        (kernels,) = struct.unpack("<I", cur.take(4, "kernel count"))
        centers = cur.array("<f8", kernels * 3, (kernels, 3), "kernel centers")
        directions = cur.array("<f8", kernels * 3, (kernels, 3), "kernel directions")
        widths = cur.array("<f8", kernels, (kernels,), "kernel widths")
        deform = DeformField(centers, directions, widths)
    if cur.offset != len(blob):
        raise PairFormatError("trailing bytes after pair payload", cur.offset)
    return PairSample(
        cloud_a=PointCloud(positions_a),
        cloud_b=PointCloud(positions_b),
        gt_permutation=permutation,
        rotation=rotation,
        translation=translation,
        noise_sigma=noise_sigma,
        deform=deform,
    )


# ----------------------------------------------------------------------
# dataset manifest
# ----------------------------------------------------------------------


@dataclass
class ManifestEntry:
    filename: str
    split: str
    master_seed: int
    index: int


@dataclass
class DatasetManifest:
    params: dict[str, str]
    entries: list[ManifestEntry]

    def files(self, split: str | None = None) -> list[str]:
        return [e.filename for e in self.entries if split is None or e.split == split]


def write_manifest(directory: str, manifest: DatasetManifest) -> None:
    lines = [_MANIFEST_HEADER]
    for key in sorted(manifest.params):
        lines.append(f"param {key} {manifest.params[key]}")
    for e in manifest.entries:
        lines.append(f"pair {e.filename} {e.split} {e.master_seed} {e.index}")
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(directory: str) -> DatasetManifest:
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MANIFEST_HEADER:
        raise ConfigError(f"{path} is not a dataset manifest")
    params: dict[str, str] = {}
    entries: list[ManifestEntry] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "param" and len(parts) >= 3:
            params[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "pair" and len(parts) == 5:
            entries.append(ManifestEntry(parts[1], parts[2], int(parts[3]), int(parts[4])))
        else:
            raise ConfigError(f"unrecognized manifest line: {line!r}")
    return DatasetManifest(params, entries)


def generate_dataset(directory: str, kinds: list[str], n: int, pairs: int,
                     test_pairs: int = 0, seed: int = 0, noise_sigma: float = 0.0,
                     deform_magnitude: float = 0.0, num_kernels: int = 5,
                     clusters: int = 4) -> DatasetManifest:
    """Generate pair files plus the manifest that reproduces them."""
    os.makedirs(directory, exist_ok=True)
    for kind in kinds:
        if kind not in SHAPE_KINDS:
            raise ConfigError(f"unknown shape kind {kind!r}")
    entries = []
    total = pairs + test_pairs
    for index in range(total):
        sample = _generate_sample(kinds, n, seed, index, noise_sigma,
                                  deform_magnitude, num_kernels, clusters)
        split = "train" if index < pairs else "test"
        filename = f"{split}_{index:05d}.pair"
        write_pair(os.path.join(directory, filename), sample)
        entries.append(ManifestEntry(filename, split, seed, index))
    manifest = DatasetManifest(
        params={
            "kind": ",".join(kinds),
            "n": str(n),
            "pairs": str(pairs),
            "test_pairs": str(test_pairs),
            "seed": str(seed),
            "noise": repr(noise_sigma),
            "deform": repr(deform_magnitude),
            "kernels": str(num_kernels),
            "clusters": str(clusters),
        },
        entries=entries,
    )
    write_manifest(directory, manifest)
    return manifest


def _generate_sample(kinds, n, seed, index, noise_sigma, deform_magnitude,
                     num_kernels, clusters) -> PairSample:
    kind = kinds[index % len(kinds)]
    cloud = gen_shape(kind, n, (seed, index, 0), clusters=clusters)
    if deform_magnitude > 0.0:
        return make_deformed_pair(cloud, (seed, index, 1), num_kernels, deform_magnitude)
    return make_rigid_pair(cloud, (seed, index, 1), noise_sigma)


def regenerate_sample(manifest: DatasetManifest, entry: ManifestEntry) -> PairSample:
    """Rebuild one sample from its manifest record (reproducibility check)."""
    p = manifest.params
    return _generate_sample(
        p["kind"].split(","), int(p["n"]), entry.master_seed, entry.index,
        float(p["noise"]), float(p["deform"]), int(p["kernels"]), int(p["clusters"]))


def load_pairs(directory: str, split: str | None = None) -> list[PairSample]:
    manifest = read_manifest(directory)
    return [read_pair(os.path.join(directory, name)) for name in manifest.files(split)]
