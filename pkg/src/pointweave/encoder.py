"""Per-point trainable feature extraction.

The encoder is deliberately small: a shared two-layer perceptron per
point plus a max-pooled global summary folded back into each row. It is
permutation-equivariant by construction and differentiable end to end,
which is all the matching network requires of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import Linear, PReLU
from .tensor import Tensor, as_tensor, concat


@dataclass
class PointCloud:
    """Positions in arbitrary units; generators normalize to unit extent."""

    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ShapeError(f"positions must be (n, 3), got {self.positions.shape}")
        if self.positions.shape[0] < 1:
            raise ShapeError("a point cloud needs at least one point")
        if not np.isfinite(self.positions).all():
            raise ShapeError("positions contain non-finite values")

    def __len__(self):
        return self.positions.shape[0]


def max_extent(positions: np.ndarray) -> float:
    """Largest pairwise distance in the cloud."""
    diff = positions[:, None, :] - positions[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=2)).max())


def normalize_positions(positions: np.ndarray) -> np.ndarray:
    """Translate to the centroid and scale the max pairwise extent to 1."""
    centered = positions - positions.mean(axis=0)
    extent = max_extent(centered)
    if extent == 0.0:
        return centered
    return centered / extent


def _bbox_center(x: Tensor) -> Tensor:
    # (min + max) / 2 per axis; both reductions are exactly
    # permutation-invariant, unlike a mean
    n = x.data.shape[0]
    ids = np.zeros(n, dtype=np.intp)
    high = x.segment_max(ids, 1)
    low = -((-x).segment_max(ids, 1))
    return (high + low) * 0.5


def _unit_rows(x: Tensor) -> Tensor:
    norm = (x * x).sum(axis=1, keepdims=True).clamp_min(1e-24).sqrt()
    return x / norm


def point_descriptors(centered: Tensor, neighbor_count: int) -> Tensor:
    """Per-point inputs: centered coords, radial distance, sorted kNN distances.

    The neighbor distances are rotation- and translation-invariant, which
    is what lets candidate selection bootstrap on transformed pairs; the
    raw coords keep the map injective. Which point is the j-th neighbor
    is treated as constant structure per forward (like the pooling
    argmax), so gradients route through the selected distances.
    """
    n = centered.data.shape[0]
    if n <= neighbor_count:
        raise ShapeError(
            f"need more than {neighbor_count} points for {neighbor_count} neighbor features")
    radial = (centered * centered).sum(axis=1, keepdims=True).clamp_min(1e-30).sqrt()
    diff = centered.reshape(n, 1, 3) - centered.reshape(1, n, 3)
    dist = (diff * diff).sum(axis=2).clamp_min(1e-30).sqrt()
    keyed = dist.data + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
    order = np.argsort(keyed, axis=1, kind="stable")[:, :neighbor_count]
    flat = (np.arange(n)[:, None] * n + order).ravel()
    knn = dist.reshape(n * n).take_rows(flat).reshape(n, neighbor_count)
    return concat([centered, radial, knn], axis=1)


class PointEncoder:
    """positions (n, 3) -> unit-norm features (n, d_f).

    A shared per-point perceptron over geometric descriptors plus a
    max-pooled global summary folded back into each row. Rows are
    L2-normalized so the similarity scale does not depend on the weight
    magnitude; learning aligns matched features in angle.
    """

    def __init__(self, d_f: int, rng: np.random.Generator, hidden: int = 64,
                 name: str = "encoder", init_scale: float = 1.0,
                 neighbor_features: int = 8):
        self.d_f = d_f
        self.hidden = hidden
        self.neighbor_features = neighbor_features
        self.local1 = Linear(4 + neighbor_features, hidden, rng, f"{name}.local1",
                             scale=init_scale)
        self.act = PReLU(hidden, f"{name}.act")
        self.local2 = Linear(hidden, d_f, rng, f"{name}.local2", scale=init_scale)
        self.fuse = Linear(2 * d_f, d_f, rng, f"{name}.fuse", scale=init_scale)

    def __call__(self, positions) -> Tensor:
        x = as_tensor(positions)
        if x.data.ndim != 2 or x.data.shape[1] != 3:
            raise ShapeError(f"encoder expects (n, 3) positions, got {x.data.shape}")
        n = x.data.shape[0]
        centered = x - _bbox_center(x)
        local = self.local2(self.act(self.local1(
            point_descriptors(centered, self.neighbor_features))))
        pooled = local.segment_max(np.zeros(n, dtype=np.intp), 1)
        broadcast = pooled.take_rows(np.zeros(n, dtype=np.intp))
        return _unit_rows(local + self.fuse(concat([local, broadcast], axis=1)))

    def parameters(self):
        return (self.local1.parameters() + self.act.parameters()
                + self.local2.parameters() + self.fuse.parameters())
