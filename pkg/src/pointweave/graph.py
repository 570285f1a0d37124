"""Directional bipartite candidate graphs between two feature sets.

Each source node keeps its K most similar targets (inverse-distance
similarity), in similarity-descending order with ties broken toward the
lower target index. Edge arrays are stored source-major so that every
node owns a contiguous block of exactly K rows; all later layers rely on
that canonical ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, concat

SIMILARITY_EPS = 1e-8
_DIST_FLOOR = 1e-30


def pairwise_similarity(fa: Tensor, fb: Tensor, eps: float = SIMILARITY_EPS) -> Tensor:
    """Inverse-distance similarity matrix s[n, m] = 1 / (||fa_n - fb_m|| + eps).

    The epsilon keeps coincident features finite (s = 1/eps). Gradients
    flow back into both feature sets; exactly coincident rows get a zero
    distance gradient via the floor under the square root.
    """
    fa = as_tensor(fa)
    fb = as_tensor(fb)
    if fa.data.ndim != 2 or fb.data.ndim != 2:
        raise ShapeError("feature sets must be 2-D (points, channels)")
    if fa.data.shape[1] != fb.data.shape[1]:
        raise ShapeError(
            f"feature widths differ: {fa.data.shape} vs {fb.data.shape}")
    n, d = fa.data.shape
    m = fb.data.shape[0]
    diff = fa.reshape(n, 1, d) - fb.reshape(1, m, d)
    dist = (diff * diff).sum(axis=2).clamp_min(_DIST_FLOOR).sqrt()
    return 1.0 / (dist + eps)


@dataclass
class BipartiteEdgeSet:
    """Top-K candidate edges in both directions with reverse lookups.

    ``neighbors_ab[n]`` lists node n's K targets in B; ``reverse_ab[i]``
    gives the position of the opposite edge in the B-to-A edge array, or
    -1 when the opposite direction did not select it.
    """

    n: int
    m: int
    k: int
    neighbors_ab: np.ndarray   # (n, k) target indices, similarity-descending
    neighbors_ba: np.ndarray   # (m, k)
    reverse_ab: np.ndarray     # (n*k,) position in B->A edges or -1
    reverse_ba: np.ndarray     # (m*k,)

    @property
    def src_ab(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), self.k)

    @property
    def tgt_ab(self) -> np.ndarray:
        return self.neighbors_ab.ravel()

    @property
    def src_ba(self) -> np.ndarray:
        return np.repeat(np.arange(self.m), self.k)

    @property
    def tgt_ba(self) -> np.ndarray:
        return self.neighbors_ba.ravel()

    def flat_ab(self) -> np.ndarray:
        """Row-major cell index into the (n, m) score grid for A->B edges."""
        return self.src_ab * self.m + self.tgt_ab

    def flat_ba(self) -> np.ndarray:
        """Cell index into the same (n, m) grid for B->A edges (m, n) -> (n, m)."""
        return self.tgt_ba * self.m + self.src_ba

    def mask_ab(self) -> np.ndarray:
        mask = np.zeros((self.n, self.m), dtype=bool)
        mask[self.src_ab, self.tgt_ab] = True
        return mask

    def mask_ba(self) -> np.ndarray:
        mask = np.zeros((self.n, self.m), dtype=bool)
        mask[self.tgt_ba, self.src_ba] = True
        return mask


def _topk_desc(values: np.ndarray, k: int) -> np.ndarray:
    # stable sort on the negated values keeps ties in ascending-index order
    return np.argsort(-values, axis=1, kind="stable")[:, :k]


def select_topk(similarity, k: int) -> BipartiteEdgeSet:
    """Build both edge directions from a similarity matrix.

    The B-to-A direction reuses the transposed values, which are exactly
    the similarities computed from the swapped feature order.
    """
    s = similarity.data if isinstance(similarity, Tensor) else np.asarray(similarity)
    if s.ndim != 2:
        raise ShapeError("similarity must be a 2-D matrix")
    n, m = s.shape
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > m:
        raise ConfigError(f"k={k} exceeds the {m} available targets for the A->B direction")
    if k > n:
        raise ConfigError(f"k={k} exceeds the {n} available targets for the B->A direction")
    neighbors_ab = _topk_desc(s, k)
    neighbors_ba = _topk_desc(s.T, k)

    pos_ab = np.full((n, m), -1, dtype=np.intp)
    pos_ab[np.repeat(np.arange(n), k), neighbors_ab.ravel()] = np.arange(n * k)
    pos_ba = np.full((m, n), -1, dtype=np.intp)
    pos_ba[np.repeat(np.arange(m), k), neighbors_ba.ravel()] = np.arange(m * k)

    reverse_ab = pos_ba[neighbors_ab.ravel(), np.repeat(np.arange(n), k)]
    reverse_ba = pos_ab[neighbors_ba.ravel(), np.repeat(np.arange(m), k)]
    return BipartiteEdgeSet(n, m, k, neighbors_ab, neighbors_ba, reverse_ab, reverse_ba)


def init_edge_features(fa: Tensor, fb: Tensor, similarity: Tensor,
                       edges: BipartiteEdgeSet, similarity_grad: bool = True):
    """Initial per-edge features: cat(source feature, similarity, target feature).

    Row order is canonical (source-major, neighbor-rank-minor); width is
    2 * feature_dim + 1. With ``similarity_grad`` off, the similarity
    column is detached and edge features stop carrying gradients back
    through the distance computation.
    """
    fa = as_tensor(fa)
    fb = as_tensor(fb)
    similarity = as_tensor(similarity)
    s_flat = (similarity if similarity_grad else similarity.detach()).reshape(edges.n * edges.m)
    sa = s_flat.take_rows(edges.flat_ab()).reshape(-1, 1)
    sb = s_flat.take_rows(edges.flat_ba()).reshape(-1, 1)
    za = concat([fa.take_rows(edges.src_ab), sa, fb.take_rows(edges.tgt_ab)], axis=1)
    zb = concat([fb.take_rows(edges.src_ba), sb, fa.take_rows(edges.tgt_ba)], axis=1)
    return za, zb


@dataclass
class EdgeBatch:
    """Several pairs' edge sets concatenated into one block-diagonal graph.

    Node and edge indices are offset so each direction forms one flat
    edge array whose source ids still follow the uniform repeat pattern
    required by the weaving layers.
    """

    k: int
    seg_ab: np.ndarray
    seg_ba: np.ndarray
    reverse_ab: np.ndarray
    reverse_ba: np.ndarray
    size_a: int
    size_b: int
    pairs: list[BipartiteEdgeSet] = field(default_factory=list)
    edge_bounds_ab: np.ndarray = None
    edge_bounds_ba: np.ndarray = None

    @classmethod
    def from_edge_sets(cls, edge_sets: list[BipartiteEdgeSet]) -> "EdgeBatch":
        if not edge_sets:
            raise ConfigError("edge batch needs at least one pair")
        k = edge_sets[0].k
        if any(e.k != k for e in edge_sets):
            raise ConfigError("all pairs in a batch must share the same k")
        seg_ab, seg_ba, rev_ab, rev_ba = [], [], [], []
        node_a = node_b = 0
        bounds_ab = [0]
        bounds_ba = [0]
        edge_a = edge_b = 0
        for e in edge_sets:
            seg_ab.append(e.src_ab + node_a)
            seg_ba.append(e.src_ba + node_b)
            rev_ab.append(np.where(e.reverse_ab >= 0, e.reverse_ab + edge_b, -1))
            rev_ba.append(np.where(e.reverse_ba >= 0, e.reverse_ba + edge_a, -1))
            node_a += e.n
            node_b += e.m
            edge_a += e.n * e.k
            edge_b += e.m * e.k
            bounds_ab.append(edge_a)
            bounds_ba.append(edge_b)
        return cls(
            k=k,
            seg_ab=np.concatenate(seg_ab),
            seg_ba=np.concatenate(seg_ba),
            reverse_ab=np.concatenate(rev_ab),
            reverse_ba=np.concatenate(rev_ba),
            size_a=node_a,
            size_b=node_b,
            pairs=list(edge_sets),
            edge_bounds_ab=np.asarray(bounds_ab),
            edge_bounds_ba=np.asarray(bounds_ba),
        )
