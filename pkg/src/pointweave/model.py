"""End-to-end matching model: point encoder, candidate graph, weaving net."""

from __future__ import annotations

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import PointCloud, PointEncoder
from .errors import CheckpointFormatError
from .graph import EdgeBatch, init_edge_features, pairwise_similarity, select_topk
from .tensor import Tensor, as_tensor, concat
from .weaving import ScoreMatrix, WeavingConfig, WeavingNet, merge_scores


class MatchingModel:
    """Jointly trainable feature extractor and correspondence network.

    Candidate-edge selection is discrete and treated as constant
    structure within a forward pass; the similarity values placed on the
    selected edges do carry gradients back into the encoder (unless the
    config disables it).
    """

    def __init__(self, config: WeavingConfig, seed: int = 0, encoder_hidden: int = 64,
                 encoder_neighbors: int = 8, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(seed)
        self.config = config
        self.encoder_hidden = encoder_hidden
        self.encoder_neighbors = encoder_neighbors
        self.encoder = PointEncoder(config.d_f, rng, hidden=encoder_hidden,
                                    init_scale=config.init_scale,
                                    neighbor_features=encoder_neighbors)
        self.net = WeavingNet(config, rng)
        self.training = True

    def train_mode(self):
        self.training = True
        self.net.set_training(True)
        return self

    def eval_mode(self):
        self.training = False
        self.net.set_training(False)
        return self

    def encode(self, positions) -> Tensor:
        return self.encoder(positions)

    def match_features(self, feature_pairs) -> list[ScoreMatrix]:
        """Score one or more (features_a, features_b) pairs in a single pass.

        All pairs share the batch-norm statistics of the joint forward,
        which is what training batches rely on.
        """
        edge_sets = []
        blocks_a, blocks_b = [], []
        for fa, fb in feature_pairs:
            fa = as_tensor(fa)
            fb = as_tensor(fb)
            similarity = pairwise_similarity(fa, fb)
            edges = select_topk(similarity.data, self.config.k)
            za, zb = init_edge_features(
                fa, fb, similarity, edges, similarity_grad=self.config.similarity_grad)
            edge_sets.append(edges)
            blocks_a.append(za)
            blocks_b.append(zb)
        batch = EdgeBatch.from_edge_sets(edge_sets)
        za = concat(blocks_a, axis=0) if len(blocks_a) > 1 else blocks_a[0]
        zb = concat(blocks_b, axis=0) if len(blocks_b) > 1 else blocks_b[0]
        pa, pb = self.net.forward(za, zb, batch)
        scores = []
        for i, edges in enumerate(edge_sets):
            lo_a, hi_a = batch.edge_bounds_ab[i], batch.edge_bounds_ab[i + 1]
            lo_b, hi_b = batch.edge_bounds_ba[i], batch.edge_bounds_ba[i + 1]
            scores.append(merge_scores(
                pa.slice_rows(lo_a, hi_a), pb.slice_rows(lo_b, hi_b),
                edges, self.config.merge))
        return scores

    def match_clouds(self, cloud_pairs: list[tuple[PointCloud, PointCloud]]) -> list[ScoreMatrix]:
        features = [(self.encode(a.positions), self.encode(b.positions))
                    for a, b in cloud_pairs]
        return self.match_features(features)

    def parameters(self):
        return self.encoder.parameters() + self.net.parameters()

    def state_entries(self) -> list[tuple[str, np.ndarray]]:
        entries = [(p.name, p.data) for p in self.parameters()]
        entries += [(name, arr) for name, arr in self.net.buffers()]
        return entries

    def hyper_dict(self) -> dict[str, str]:
        c = self.config
        return {
            "k": str(c.k),
            "layers": str(c.layers),
            "d_g": str(c.d_g),
            "d_f": str(c.d_f),
            "merge": c.merge,
            "similarity_grad": "1" if c.similarity_grad else "0",
            "init_scale": repr(c.init_scale),
            "encoder_hidden": str(self.encoder_hidden),
            "encoder_neighbors": str(self.encoder_neighbors),
        }

    def save(self, directory: str):
        save_checkpoint(directory, self.state_entries(), self.hyper_dict())

    @classmethod
    def load(cls, directory: str) -> "MatchingModel":
        arrays, hypers = load_checkpoint(directory)
        try:
            config = WeavingConfig(
                k=int(hypers["k"]),
                layers=int(hypers["layers"]),
                d_g=int(hypers["d_g"]),
                d_f=int(hypers["d_f"]),
                merge=hypers["merge"],
                similarity_grad=hypers["similarity_grad"] == "1",
                init_scale=float(hypers.get("init_scale", "1.0")),
            )
            encoder_hidden = int(hypers["encoder_hidden"])
            encoder_neighbors = int(hypers.get("encoder_neighbors", "8"))
        except KeyError as exc:
            raise CheckpointFormatError(f"checkpoint missing hyperparameter {exc}") from exc
        model = cls(config, encoder_hidden=encoder_hidden,
                    encoder_neighbors=encoder_neighbors)
        for param in model.parameters():
            if param.name not in arrays:
                raise CheckpointFormatError(f"checkpoint missing parameter {param.name}")
            stored = arrays[param.name]
            if stored.shape != param.data.shape:
                raise CheckpointFormatError(
                    f"shape mismatch for {param.name}: checkpoint {stored.shape}, "
                    f"model {param.data.shape}")
            param.data[...] = stored
        buffer_entries = {name for name, _ in model.net.buffers()}
        missing = buffer_entries - set(arrays)
        if missing:
            raise CheckpointFormatError(f"checkpoint missing buffers: {sorted(missing)}")
        for norm in model.net.norm_modules():
            norm.load_buffers(arrays)
        return model.eval_mode()
