"""Synthetic multi-view datasets, per-view normalization, and the MVD container.

Views are stored as float32 so that the binary container round-trips
bit-exactly; training code upcasts to float64.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, DegenerateInputError, DimensionError, FormatError, GenerationError

MVD_MAGIC = b"MVD1"
MVD_VERSION = 1
MAX_REJECTION_TRIES = 1000


@dataclass
class MultiViewDataset:
    views: list[np.ndarray]
    labels: np.ndarray | None = None
    k: int = 1
    name: str = "dataset"

    def __post_init__(self):
        if not self.views:
            raise ContractViolation("a dataset needs at least one view")
        self.views = [np.ascontiguousarray(v, dtype=np.float32) for v in self.views]
        n = self.views[0].shape[0]
        for v in self.views:
            if v.ndim != 2 or v.shape[0] != n:
                raise DimensionError(f"views must be n x d with shared n, got {[x.shape for x in self.views]}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DimensionError(f"labels have shape {self.labels.shape}, expected ({n},)")
            if n and (self.labels.min() < 0 or self.labels.max() >= self.k):
                raise ContractViolation(f"labels must lie in [0, {self.k})")
        self.k = int(self.k)

    @property
    def n(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> list[int]:
        return [v.shape[1] for v in self.views]

    def is_normalized(self) -> bool:
        return all(v.min() >= 0.0 and v.max() <= 1.0 for v in self.views)

    def first_views(self, count: int) -> "MultiViewDataset":
        if not 1 <= count <= self.n_views:
            raise ContractViolation(f"cannot take {count} of {self.n_views} views")
        return MultiViewDataset(self.views[:count], self.labels, self.k, f"{self.name}[:{count}]")

    def float_views(self) -> list[np.ndarray]:
        return [v.astype(np.float64) for v in self.views]


@dataclass
class GeneratorSpec:
    kind: str
    n: int = 300
    V: int = 2
    k: int = 3
    dims: int = 8
    noise_sigma: float = 0.2
    seed: int = 0
    cluster_sigma: float = 0.05
    imbalance_ratio: float = 1.0
    view_clusters: list[int] | None = None
    n_uninformative: int = 0
    uninformative_dim: int | None = None
    image_shape: tuple[int, int] = (28, 28)
    grid: tuple[int, int] = (4, 4)
    drop_corners: bool = True
    name: str | None = None
    extra: dict = field(default_factory=dict)

    KINDS = ("blobs", "random_pairing", "patched", "uninformative_view")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ContractViolation(f"unknown generator kind {self.kind!r}")
        for attr in ("n", "V", "k", "dims"):
            if int(getattr(self, attr)) <= 0:
                raise ContractViolation(f"generator parameter {attr} must be positive")
        if self.cluster_sigma < 0 or self.noise_sigma < 0:
            raise ContractViolation("noise levels must be non-negative")
        self.image_shape = tuple(self.image_shape)
        self.grid = tuple(self.grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        d["grid"] = list(self.grid)
        return d


def _class_counts(n: int, k: int, imbalance_ratio: float) -> np.ndarray:
    if imbalance_ratio < 1:
        raise ContractViolation("imbalance ratio must be >= 1")
    if imbalance_ratio == 1:
        return np.array([n // k + (c < n % k) for c in range(k)])
    # geometric profile from largest to smallest, largest/smallest = ratio
    weights = imbalance_ratio ** (-np.arange(k) / max(k - 1, 1))
    counts = np.maximum(np.floor(n * weights / weights.sum()).astype(int), 1)
    counts[0] += n - counts.sum()
    return counts


def _separated_centers(rng: np.random.Generator, count: int, dim: int, min_sep: float) -> np.ndarray:
    for _ in range(MAX_REJECTION_TRIES):
        centers = rng.uniform(0.0, 1.0, size=(count, dim))
        if count < 2:
            return centers
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))[np.triu_indices(count, 1)]
        if dist.min() >= min_sep:
            return centers
    raise GenerationError(
        f"could not place {count} centers in [0,1]^{dim} with separation {min_sep} "
        f"after {MAX_REJECTION_TRIES} tries"
    )


def generate_blobs(
    n: int,
    V: int,
    k: int,
    dim: int,
    cluster_sigma: float,
    seed: int,
    imbalance_ratio: float = 1.0,
    view_clusters: Sequence[int] | None = None,
    name: str = "blobs",
) -> MultiViewDataset:
    """Gaussian blobs observed through ``V`` views.

    Each view places its centers uniformly in the unit cube, at least
    ``4 * cluster_sigma`` apart. ``view_clusters[v] = k_v < k`` makes view
    ``v`` show only ``k_v`` distinct centers (class ``c`` uses center
    ``c mod k_v``).
    """
    if n < k * V:
        raise ContractViolation(f"blobs need n >= k*V, got n={n}, k={k}, V={V}")
    view_clusters = list(view_clusters) if view_clusters is not None else [k] * V
    if len(view_clusters) != V or any(not 1 <= kv <= k for kv in view_clusters):
        raise ContractViolation(f"view_clusters must be V values in [1, k], got {view_clusters}")
    rng = np.random.default_rng(seed)
    counts = _class_counts(n, k, imbalance_ratio)
    labels = rng.permutation(np.repeat(np.arange(k), counts))
    views = []
    for kv in view_clusters:
        centers = _separated_centers(rng, kv, dim, 4.0 * cluster_sigma)
        x = centers[labels % kv] + rng.normal(0.0, cluster_sigma, size=(n, dim))
        views.append(np.clip(x, 0.0, 1.0))
    return MultiViewDataset(views, labels, k, name)


def generate_random_pairing(
    base: np.ndarray,
    labels: np.ndarray,
    noise_sigma: float = 0.2,
    seed: int = 0,
    k: int | None = None,
    clip: bool = True,
    name: str = "random_pairing",
) -> MultiViewDataset:
    """Two views: the original row, and a different same-class row plus Gaussian noise."""
    base = np.asarray(base, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if base.shape[0] != labels.shape[0]:
        raise DimensionError(f"{base.shape[0]} rows but {labels.shape[0]} labels")
    k = int(labels.max()) + 1 if k is None else k
    rng = np.random.default_rng(seed)
    partner = np.empty(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < 2:
            raise ContractViolation(f"class {c} has a single member; cannot pair within class")
        # offset in [1, m-1] guarantees a different member
        pos = np.arange(len(members))
        offsets = rng.integers(1, len(members), size=len(members))
        partner[members] = members[(pos + offsets) % len(members)]
    second = base[partner] + rng.normal(0.0, noise_sigma, size=base.shape)
    if clip:
        second = np.clip(second, 0.0, 1.0)
    ds = MultiViewDataset([base, second], labels, k, name)
    ds.partner = partner  # type: ignore[attr-defined]
    return ds


def _patch_slices(image_shape, grid):
    h, w = image_shape
    rows, cols = grid
    if rows <= 0 or cols <= 0 or h % rows or w % cols:
        raise DimensionError(f"image {h}x{w} is not divisible into a {rows}x{cols} grid")
    ph, pw = h // rows, w // cols
    return [(r, c, slice(r * ph, (r + 1) * ph), slice(c * pw, (c + 1) * pw)) for r in range(rows) for c in range(cols)]


def generate_patched(
    images: np.ndarray,
    image_shape: tuple[int, int],
    grid_rows: int,
    grid_cols: int,
    drop_corners: bool = True,
    labels: np.ndarray | None = None,
    k: int | None = None,
    name: str = "patched",
) -> MultiViewDataset:
    """One view per non-overlapping patch, grid in row-major order."""
    images = np.asarray(images)
    h, w = image_shape
    if images.ndim != 2 or images.shape[1] != h * w:
        raise DimensionError(f"images must be n x {h * w}, got {images.shape}")
    cubes = images.reshape(-1, h, w)
    corners = {(0, 0), (0, grid_cols - 1), (grid_rows - 1, 0), (grid_rows - 1, grid_cols - 1)}
    views = []
    for r, c, rs, cs in _patch_slices(image_shape, (grid_rows, grid_cols)):
        if drop_corners and (r, c) in corners:
            continue
        views.append(cubes[:, rs, cs].reshape(len(cubes), -1))
    if k is None:
        k = int(np.max(labels)) + 1 if labels is not None else 1
    return MultiViewDataset(views, labels, k, name)


def reassemble_patches(views: Sequence[np.ndarray], image_shape: tuple[int, int], grid_rows: int, grid_cols: int) -> np.ndarray:
    """Inverse of :func:`generate_patched` without corner dropping."""
    slices = _patch_slices(image_shape, (grid_rows, grid_cols))
    if len(views) != len(slices):
        raise DimensionError(f"expected {len(slices)} patch views, got {len(views)}")
    n = views[0].shape[0]
    out = np.zeros((n,) + tuple(image_shape), dtype=np.asarray(views[0]).dtype)
    for view, (_, _, rs, cs) in zip(views, slices):
        out[:, rs, cs] = np.asarray(view).reshape(n, rs.stop - rs.start, cs.stop - cs.start)
    return out.reshape(n, -1)


def generate_prototype_images(
    n: int, k: int, image_shape: tuple[int, int] = (28, 28), noise_sigma: float = 0.1, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Digit-like images: one smooth stroke prototype per class, jittered and noised.

    Prototypes keep their mass away from the border, so corner patches carry
    little class information.
    """
    rng = np.random.default_rng(seed)
    h, w = image_shape
    yy, xx = np.mgrid[0:h, 0:w]
    prototypes = np.zeros((k, h, w))
    for c in range(k):
        for _ in range(6):
            cy, cx = rng.uniform(0.25, 0.75) * h, rng.uniform(0.25, 0.75) * w
            s = rng.uniform(0.06, 0.12) * min(h, w)
            prototypes[c] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        prototypes[c] /= prototypes[c].max()
    labels = rng.permutation(np.arange(n) % k)
    images = np.empty((n, h, w))
    for i, c in enumerate(labels):
        dy, dx = rng.integers(-1, 2, size=2)
        images[i] = np.roll(prototypes[c], (dy, dx), axis=(0, 1))
    images += rng.normal(0.0, noise_sigma, size=images.shape)
    return np.clip(images, 0.0, 1.0).reshape(n, h * w), labels


def append_uninformative_view(ds: MultiViewDataset, dim: int, seed: int) -> MultiViewDataset:
    """Append a view of iid Uniform[0, 1] noise; existing views are untouched."""
    if dim <= 0:
        raise ContractViolation("uninformative view dimension must be positive")
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, 1.0, size=(ds.n, dim))
    return MultiViewDataset(list(ds.views) + [noise], ds.labels, ds.k, ds.name)


def normalize_view(x: np.ndarray) -> np.ndarray:
    """Min-max scale a whole view (global min/max) into [0, 1]."""
    arr = np.asarray(x)
    data = arr.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise ContractViolation("view contains non-finite values")
    lo, hi = data.min(), data.max()
    if not hi > lo:
        raise DegenerateInputError("cannot normalize a constant view")
    out = (data - lo) / (hi - lo)
    return out.astype(arr.dtype) if np.issubdtype(arr.dtype, np.floating) else out


def normalize_dataset(ds: MultiViewDataset) -> MultiViewDataset:
    return MultiViewDataset([normalize_view(v) for v in ds.views], ds.labels, ds.k, ds.name)


def generate(spec: GeneratorSpec) -> MultiViewDataset:
    """Build a dataset from a declarative :class:`GeneratorSpec`."""
    name = spec.name or spec.kind
    if spec.kind == "blobs":
        return generate_blobs(spec.n, spec.V, spec.k, spec.dims, spec.cluster_sigma, spec.seed,
                              spec.imbalance_ratio, spec.view_clusters, name)
    if spec.kind == "random_pairing":
        base = generate_blobs(spec.n, 1, spec.k, spec.dims, spec.cluster_sigma, spec.seed, spec.imbalance_ratio)
        return generate_random_pairing(base.views[0], base.labels, spec.noise_sigma, spec.seed + 1, spec.k, name=name)
    if spec.kind == "patched":
        images, labels = generate_prototype_images(spec.n, spec.k, spec.image_shape, spec.noise_sigma, spec.seed)
        return generate_patched(images, spec.image_shape, spec.grid[0], spec.grid[1], spec.drop_corners, labels, spec.k, name)
    ds = generate_blobs(spec.n, spec.V, spec.k, spec.dims, spec.cluster_sigma, spec.seed,
                        spec.imbalance_ratio, spec.view_clusters, name)
    extra_dim = spec.uninformative_dim or spec.dims
    for j in range(spec.n_uninformative):
        ds = append_uninformative_view(ds, extra_dim, spec.seed + 1000 + j)
    return ds


# -- MVD binary container -------------------------------------------------------


def mvd_size(ds: MultiViewDataset) -> int:
    size = 16 + sum(4 + 4 * ds.n * d for d in ds.dims) + 1
    if ds.labels is not None:
        size += 4 + 4 * ds.n
    return size


def encode_mvd(ds: MultiViewDataset) -> bytes:
    parts = [MVD_MAGIC, struct.pack("<III", MVD_VERSION, ds.n, ds.n_views)]
    for v in ds.views:
        parts.append(struct.pack("<I", v.shape[1]))
        parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    if ds.labels is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack("<I", ds.k))
        parts.append(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())
    return b"".join(parts)


def save_mvd(ds: MultiViewDataset, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_mvd(ds))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        chunk = self.buf[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_mvd(buf: bytes, name: str = "dataset") -> MultiViewDataset:
    r = _Reader(buf)
    if r.take(4, "magic") != MVD_MAGIC:
        raise FormatError("bad magic, not an MVD file", 0)
    version = r.u32("version")
    if version != MVD_VERSION:
        raise FormatError(f"unsupported MVD version {version}", 4)
    n = r.u32("instance count")
    n_views = r.u32("view count")
    if n_views == 0:
        raise FormatError("MVD file declares zero views", 12)
    views = []
    for v in range(n_views):
        offset = r.pos
        d = r.u32(f"dimension of view {v}")
        if d == 0:
            raise FormatError(f"view {v} has zero dimension", offset)
        raw = r.take(4 * n * d, f"data of view {v}")
        views.append(np.frombuffer(raw, dtype="<f4").reshape(n, d).astype(np.float32))
    flag_offset = r.pos
    flag = r.take(1, "label flag")[0]
    labels, k = None, 1
    if flag == 1:
        k = r.u32("cluster count")
        label_offset = r.pos
        labels = np.frombuffer(r.take(4 * n, "labels"), dtype="<u4").astype(np.int64)
        if n and (labels.max() >= k):
            raise FormatError(f"label {int(labels.max())} outside [0, {k})", label_offset)
    elif flag != 0:
        raise FormatError(f"label flag must be 0 or 1, got {flag}", flag_offset)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after dataset", r.pos)
    return MultiViewDataset(views, labels, k, name)


def load_mvd(path) -> MultiViewDataset:
    path = Path(path)
    return decode_mvd(path.read_bytes(), name=path.stem)


def load_csv_views(paths: Sequence, label_column: int | None = None, k: int | None = None, name: str = "csv") -> MultiViewDataset:
    """One numeric CSV per view (no header).

    When ``label_column`` is given, that column is read from every file as
    integer labels (which must agree across files) and dropped from the view.
    """
    views, labels = [], None
    for p in paths:
        with open(p, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        arr = np.array(rows, dtype=np.float64)
        if arr.ndim != 2:
            raise FormatError(f"{p}: ragged CSV rows", 0)
        if label_column is not None:
            col = label_column % arr.shape[1]
            lab = arr[:, col].astype(np.int64)
            if labels is not None and not np.array_equal(labels, lab):
                raise ContractViolation(f"{p}: label column disagrees with earlier files")
            labels = lab
            arr = np.delete(arr, col, axis=1)
        views.append(arr)
    if labels is not None and k is None:
        k = int(labels.max()) + 1
    return MultiViewDataset(views, labels, k or 1, name)
