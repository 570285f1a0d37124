"""The feature-weaving matching network.

A stack of weaving layers transforms per-edge features of the two
directed streams. Each layer runs a shared set-encoder (a linear map,
a per-node max-pool, and a second linear map over the concatenation,
then batch norm and pReLU) and crosses the streams by concatenating
every edge's feature with its reverse-direction counterpart. The output
layer repeats the set-encoder without activation, maps each edge to a
scalar, and the two directions are merged into a masked score matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import BipartiteEdgeSet, EdgeBatch
from .nn import BatchNorm, Linear, PReLU
from .tensor import Tensor, concat, scatter_rows

MERGE_PRESENCE_MEAN = "presence-mean"
MERGE_STRICT_MEAN = "strict-mean"
MERGE_MODES = (MERGE_PRESENCE_MEAN, MERGE_STRICT_MEAN)


@dataclass
class WeavingConfig:
    """Architecture hyperparameters shared by training and evaluation.

    ``layers`` counts the output layer, so there are ``layers - 1``
    weaving layers in front of it. Every weaving layer outputs width
    ``d_z = 2 * d_g``.
    """

    k: int
    layers: int
    d_g: int
    d_f: int
    merge: str = MERGE_PRESENCE_MEAN
    similarity_grad: bool = True
    init_scale: float = 1.0

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigError(f"need at least 2 layers (weaving + output), got {self.layers}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.d_g < 1 or self.d_f < 1:
            raise ConfigError("d_g and d_f must be positive")
        if self.merge not in MERGE_MODES:
            raise ConfigError(f"merge must be one of {MERGE_MODES}, got {self.merge!r}")
        if self.init_scale <= 0.0:
            raise ConfigError(f"init_scale must be positive, got {self.init_scale}")

    @property
    def d_z(self) -> int:
        return 2 * self.d_g


class WeavingLayer:
    """One shared set-encoder, used identically by both streams.

    The final-layer variant keeps batch norm but drops the activation
    and maps each edge to a single scalar score.
    """

    def __init__(self, in_width: int, d_g: int, rng: np.random.Generator,
                 name: str, final: bool = False, init_scale: float = 1.0):
        out_width = 1 if final else d_g
        self.in_width = in_width
        self.pool_map = Linear(in_width, d_g, rng, f"{name}.pool_map", scale=init_scale)
        self.combine = Linear(in_width + d_g, out_width, rng, f"{name}.combine",
                              scale=init_scale)
        self.norm = BatchNorm(out_width, f"{name}.norm")
        self.act = None if final else PReLU(out_width, f"{name}.act")

    def encode(self, z: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
        pooled = self.pool_map(z).segment_max(segment_ids, num_segments)
        context = pooled.take_rows(segment_ids)
        y = self.norm(self.combine(concat([z, context], axis=1)))
        return self.act(y) if self.act is not None else y

    def parameters(self):
        params = (self.pool_map.parameters() + self.combine.parameters()
                  + self.norm.parameters())
        if self.act is not None:
            params += self.act.parameters()
        return params

    def buffers(self):
        return self.norm.buffers()


def reverse_features(source: Tensor, reverse_index: np.ndarray, k: int) -> Tensor:
    """Fetch each edge's reverse-direction feature, with a mean fallback.

    When the opposite stream never selected the reversed edge, the row is
    replaced by the mean of the reverse features that do exist among the
    source node's K candidates; if none exists the row is zero, which is
    neutral for the following linear layer.
    """
    edges = reverse_index.shape[0]
    if edges % k != 0:
        raise ShapeError("edge count must be a multiple of k (canonical ordering)")
    nodes = edges // k
    has = reverse_index >= 0
    safe = np.where(has, reverse_index, 0)
    direct = source.take_rows(safe)
    present = direct * has[:, None].astype(np.float64)
    channels = source.data.shape[1]
    counts = has.reshape(nodes, k).sum(axis=1)
    sums = present.reshape(nodes, k, channels).sum(axis=1)
    mean = sums * (1.0 / np.maximum(counts, 1))[:, None]
    fallback = mean.take_rows(np.repeat(np.arange(nodes), k))
    missing = (~has)[:, None].astype(np.float64)
    return present + fallback * missing


def cross_concat(ga: Tensor, gb: Tensor, batch: EdgeBatch):
    """Concatenate each stream's features with the reverse stream's."""
    za = concat([ga, reverse_features(gb, batch.reverse_ab, batch.k)], axis=1)
    zb = concat([gb, reverse_features(ga, batch.reverse_ba, batch.k)], axis=1)
    return za, zb


class WeavingNet:
    """The stacked weaving layers plus the scalar output layer.

    Residual shortcuts add the output of every other weaving layer to the
    one two steps later (the first eligible source is the first layer's
    output, whose width already equals d_z).
    """

    def __init__(self, config: WeavingConfig, rng: np.random.Generator,
                 name: str = "weave"):
        self.config = config
        in_width = 2 * config.d_f + 1
        self.layers = []
        for idx in range(config.layers - 1):
            self.layers.append(WeavingLayer(in_width, config.d_g, rng, f"{name}.{idx}",
                                            init_scale=config.init_scale))
            in_width = config.d_z
        self.output = WeavingLayer(in_width, config.d_g, rng, f"{name}.out", final=True,
                                   init_scale=config.init_scale)

    def set_training(self, training: bool):
        for layer in self.layers:
            layer.norm.training = training
        self.output.norm.training = training

    def forward(self, za: Tensor, zb: Tensor, batch: EdgeBatch):
        """Run the full stack; returns per-edge scalar scores per direction."""
        saved = None
        for idx, layer in enumerate(self.layers):
            ga = layer.encode(za, batch.seg_ab, batch.size_a)
            gb = layer.encode(zb, batch.seg_ba, batch.size_b)
            za, zb = cross_concat(ga, gb, batch)
            depth = idx + 1
            if depth % 2 == 1:
                if depth >= 3:
                    za = za + saved[0]
                    zb = zb + saved[1]
                saved = (za, zb)
        pa = self.output.encode(za, batch.seg_ab, batch.size_a)
        pb = self.output.encode(zb, batch.seg_ba, batch.size_b)
        return pa, pb

    def parameters(self):
        params = []
        for layer in self.layers:
            params += layer.parameters()
        params += self.output.parameters()
        return params

    def buffers(self):
        out = []
        for layer in self.layers:
            out += layer.buffers()
        out += self.output.buffers()
        return out

    def norm_modules(self):
        return [layer.norm for layer in self.layers] + [self.output.norm]


@dataclass
class ScoreMatrix:
    """Merged correspondence scores with an explicit candidate mask.

    Values are finite everywhere; cells outside the candidate set are
    flagged by ``mask`` instead of holding infinities.
    """

    values: Tensor
    mask: np.ndarray
    n: int = field(default=0)
    m: int = field(default=0)

    def __post_init__(self):
        self.n, self.m = self.values.data.shape


def merge_scores(pa: Tensor, pb: Tensor, edges: BipartiteEdgeSet,
                 merge: str = MERGE_PRESENCE_MEAN) -> ScoreMatrix:
    """Scatter both directions into an (n, m) grid and combine them.

    ``presence-mean`` averages over the directions that actually propose
    the cell, so a candidate seen from only one side keeps that side's
    score. ``strict-mean`` is the stricter reading that only keeps cells
    proposed by both directions (averaging the two).
    """
    cells = edges.n * edges.m
    flat_a = scatter_rows(pa.reshape(pa.data.shape[0]), edges.flat_ab(), cells)
    flat_b = scatter_rows(pb.reshape(pb.data.shape[0]), edges.flat_ba(), cells)
    mask_a = edges.mask_ab()
    mask_b = edges.mask_ba()
    count = mask_a.astype(np.int64) + mask_b.astype(np.int64)
    if merge == MERGE_PRESENCE_MEAN:
        weight = 1.0 / np.maximum(count, 1)
        mask = count >= 1
    elif merge == MERGE_STRICT_MEAN:
        weight = np.full(count.shape, 0.5)
        mask = count == 2
    else:
        raise ConfigError(f"unknown merge mode {merge!r}")
    values = ((flat_a + flat_b) * weight.ravel()).reshape(edges.n, edges.m)
    return ScoreMatrix(values=values, mask=mask)


def predict_matches(score: ScoreMatrix) -> np.ndarray:
    """Row-wise argmax over valid cells; -1 marks a row with no candidate.

    Ties resolve to the lowest column index.
    """
    filled = np.where(score.mask, score.values.data, -np.inf)
    pred = filled.argmax(axis=1)
    pred[~score.mask.any(axis=1)] = -1
    return pred
