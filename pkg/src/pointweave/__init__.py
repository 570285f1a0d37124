"""Trainable point-cloud correspondence matching with feature-weaving networks."""

from .baselines import SinkhornResult, nn_match, nndr_match, sinkhorn
from .encoder import PointCloud, PointEncoder, max_extent, normalize_positions
from .gradcheck import GradCheckResult, grad_check
from .graph import (BipartiteEdgeSet, EdgeBatch, init_edge_features,
                    pairwise_similarity, select_topk)
from .harness import (EvalCurve, TrainConfig, TrainResult, ablation_sweep,
                      corr_metric, evaluate, furthest_point_sample, gt_coverage,
                      matching_loss, pipeline_grad_check, subsample_pair, train)
from .model import MatchingModel
from .nn import Adam, BatchNorm, Linear, Parameter, PReLU
from .synth import (DatasetManifest, DeformField, PairSample, gen_shape,
                    generate_dataset, load_pairs, make_deformed_pair,
                    make_rigid_pair, read_manifest, read_pair, regenerate_sample,
                    write_manifest, write_pair)
from .tensor import (Tensor, as_tensor, batchnorm_train, concat, no_grad,
                     prelu, scatter_rows, segment_max_with_argmax)
from .weaving import (MERGE_MODES, MERGE_PRESENCE_MEAN, MERGE_STRICT_MEAN,
                      ScoreMatrix, WeavingConfig, WeavingLayer, WeavingNet,
                      cross_concat, merge_scores, predict_matches, reverse_features)

__version__ = "0.1.0"

__all__ = [
    "Adam", "BatchNorm", "BipartiteEdgeSet", "DatasetManifest", "DeformField",
    "EdgeBatch", "EvalCurve", "GradCheckResult", "Linear", "MatchingModel",
    "MERGE_MODES", "MERGE_PRESENCE_MEAN", "MERGE_STRICT_MEAN", "PairSample",
    "Parameter", "PointCloud", "PointEncoder", "PReLU", "ScoreMatrix",
    "SinkhornResult", "Tensor", "TrainConfig", "TrainResult", "WeavingConfig",
    "WeavingLayer", "WeavingNet", "ablation_sweep", "as_tensor",
    "batchnorm_train", "concat", "corr_metric", "cross_concat", "evaluate",
    "furthest_point_sample", "gen_shape", "generate_dataset", "grad_check",
    "gt_coverage", "init_edge_features", "load_pairs", "make_deformed_pair",
    "make_rigid_pair", "matching_loss", "max_extent", "merge_scores",
    "nn_match", "nndr_match", "no_grad", "normalize_positions",
    "pairwise_similarity", "pipeline_grad_check", "predict_matches", "prelu",
    "read_manifest", "read_pair", "regenerate_sample", "reverse_features",
    "scatter_rows", "segment_max_with_argmax", "select_topk", "sinkhorn",
    "subsample_pair", "train", "write_manifest", "write_pair",
]
