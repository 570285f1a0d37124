"""Training loop, matching loss, Corr metric, evaluation curves, ablations."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import nn_match, nndr_match, sinkhorn
from .encoder import PointCloud, max_extent, normalize_positions
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .gradcheck import GradCheckResult, grad_check
from .graph import EdgeBatch, init_edge_features, pairwise_similarity, select_topk
from .model import MatchingModel
from .nn import Adam
from .synth import PairSample, gen_shape, make_rigid_pair
from .tensor import Tensor, as_tensor, no_grad
from .weaving import ScoreMatrix, WeavingConfig, merge_scores, predict_matches

METHODS = ("esfw", "sinkhorn", "nn", "nndr")

_MASK_FILL = -1e30


@dataclass
class TrainConfig:
    weaving: WeavingConfig
    learning_rate: float = 1e-4
    batch_size: int = 10
    epochs: int = 100
    seed: int = 0
    symmetrize_loss: bool = True
    encoder_hidden: int = 64
    encoder_neighbors: int = 8
    eval_slice: int = 8

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


def _masked_row_nll(values: Tensor, mask: np.ndarray, targets: np.ndarray):
    """Cross entropy of the target cell under a row softmax over valid cells.

    Rows whose target cell is not a candidate are excluded from the
    differentiable part and instead contribute log(candidate count) as a
    constant penalty. Masked cells get probability exactly zero and no
    gradient. Returns (summed NLL tensor, penalty, covered row mask).
    """
    rows, cols = mask.shape
    filled = values + np.where(mask, 0.0, _MASK_FILL)
    rowmax = filled.data.max(axis=1, keepdims=True)
    weights = (filled - rowmax).exp() * mask.astype(np.float64)
    counts = mask.sum(axis=1)
    # empty rows (possible under the strict merge) would hit log(0);
    # give them a dummy denominator, they are dropped below anyway
    denom = weights.sum(axis=1) + (counts == 0).astype(np.float64)
    log_norm = denom.log() + rowmax[:, 0]
    picked = filled.reshape(rows * cols).take_rows(np.arange(rows) * cols + targets)
    nll = log_norm - picked
    covered = mask[np.arange(rows), targets]
    covered_idx = np.flatnonzero(covered)
    core = nll.take_rows(covered_idx).sum() if covered_idx.size else as_tensor(0.0)
    uncovered = ~covered
    penalty = 0.0
    if uncovered.any():
        per_row = np.log(np.where(counts > 0, counts, cols).astype(np.float64))
        penalty = float(per_row[uncovered].sum())
    return core, penalty, covered


def matching_loss(score: ScoreMatrix, gt_permutation, symmetrize: bool = True) -> Tensor:
    """Masked cross entropy against the ground-truth assignment.

    The row term asks each A-point to pick its true partner among its
    candidates; with ``symmetrize`` the column term asks the same of each
    B-point. Rows and columns whose true cell is not a candidate add a
    fixed log-candidate-count penalty instead.
    """
    gt = np.asarray(gt_permutation, dtype=np.intp)
    if gt.shape != (score.n,):
        raise ShapeError(f"gt permutation must have length {score.n}, got {gt.shape}")
    core, penalty, _ = _masked_row_nll(score.values, score.mask, gt)
    loss = (core + penalty) * (1.0 / score.n)
    if symmetrize:
        inverse = np.empty(score.m, dtype=np.intp)
        inverse[gt] = np.arange(score.n)
        core_c, penalty_c, _ = _masked_row_nll(
            score.values.transpose(), score.mask.T, inverse)
        loss = loss + (core_c + penalty_c) * (1.0 / score.m)
    return loss


def gt_coverage(score: ScoreMatrix, gt_permutation) -> float:
    """Fraction of rows whose true target is inside the candidate set."""
    gt = np.asarray(gt_permutation, dtype=np.intp)
    return float(score.mask[np.arange(score.n), gt].mean())


def corr_metric(pred, gt, cloud_a: PointCloud, cloud_b: PointCloud,
                radius_fraction: float) -> float:
    """Fraction of correct matches under a tolerant radius.

    At radius zero only exact index agreement counts. At a positive
    radius a prediction also counts when its B-point lies within
    radius_fraction times the maximum pairwise distance of cloud A from
    the true B-point. Unmatched predictions (-1) never count.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction/gt length mismatch: {pred.shape} vs {gt.shape}")
    if radius_fraction < 0.0:
        raise ConfigError("radius_fraction must be non-negative")
    if radius_fraction == 0.0:
        return float((pred == gt).mean())
    matched = pred >= 0
    dist = np.full(pred.shape, np.inf)
    if matched.any():
        delta = cloud_b.positions[pred[matched]] - cloud_b.positions[gt[matched]]
        dist[matched] = np.sqrt((delta * delta).sum(axis=1))
    limit = radius_fraction * max_extent(cloud_a.positions)
    return float((dist <= limit).mean())


@dataclass
class EvalCurve:
    method: str
    radii: list[float]
    corr: list[float]
    sample_count: int

    def __post_init__(self):
        if any(c < -1e-12 or c > 1.0 + 1e-12 for c in self.corr):
            raise ValueError(f"corr values outside [0, 1] for {self.method}")
        for lo, hi in zip(self.corr, self.corr[1:]):
            if hi < lo - 1e-12:
                raise ValueError(f"corr curve for {self.method} is not monotone")


@dataclass
class TrainResult:
    checkpoint_dir: str
    log_path: str
    log_lines: list[str] = field(default_factory=list)

    @property
    def final_corr(self) -> float:
        return float(self.log_lines[-1].split(",")[2])


def _corr_at_zero(model: MatchingModel, pairs: list[PairSample]) -> float:
    model.eval_mode()
    values = []
    with no_grad():
        for pair in pairs:
            score = model.match_clouds([(pair.cloud_a, pair.cloud_b)])[0]
            pred = predict_matches(score)
            values.append(corr_metric(pred, pair.gt_permutation,
                                      pair.cloud_a, pair.cloud_b, 0.0))
    return float(np.mean(values))


def train(config: TrainConfig, train_pairs: list[PairSample], out_dir: str,
          eval_pairs: list[PairSample] | None = None) -> TrainResult:
    """Jointly optimize the encoder and the weaving net.

    Deterministic for a fixed (config, dataset): initialization and
    shuffling derive from config.seed and the loop never reduces in a
    nondeterministic order. Writes a checkpoint and a text log with one
    ``epoch,loss,corr@0`` line per epoch.
    """
    if not train_pairs:
        raise ConfigError("training set is empty")
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = MatchingModel(config.weaving, encoder_hidden=config.encoder_hidden,
                          encoder_neighbors=config.encoder_neighbors,
                          rng=np.random.default_rng(init_seq))
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    slice_pairs = (eval_pairs if eval_pairs else train_pairs)[: config.eval_slice]

    log_lines = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_pairs))
        loss_sum = 0.0
        seen = 0
        for start in range(0, len(order), config.batch_size):
            model.train_mode()
            batch = [train_pairs[i] for i in order[start:start + config.batch_size]]
            scores = model.match_clouds([(p.cloud_a, p.cloud_b) for p in batch])
            total = None
            for score, pair in zip(scores, batch):
                term = matching_loss(score, pair.gt_permutation, config.symmetrize_loss)
                total = term if total is None else total + term
            loss = total * (1.0 / len(batch))
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, start // config.batch_size, value)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += value * len(batch)
            seen += len(batch)
        corr0 = _corr_at_zero(model, slice_pairs)
        log_lines.append(f"{epoch},{loss_sum / seen:.12g},{corr0:.12g}")

    os.makedirs(out_dir, exist_ok=True)
    checkpoint_dir = os.path.join(out_dir, "checkpoint")
    model.save(checkpoint_dir)
    log_path = os.path.join(out_dir, "train_log.txt")
    with open(log_path, "w", encoding="ascii") as fh:
        fh.write("\n".join(log_lines) + "\n")
    return TrainResult(checkpoint_dir, log_path, log_lines)


def evaluate(model: MatchingModel, pairs: list[PairSample], radii: list[float],
             nndr_threshold: float = 0.8) -> dict[str, EvalCurve]:
    """Corr curves for the trained matcher and the feature-space baselines.

    All methods consume the same encoder features. Sinkhorn decodes by
    row argmax of its doubly stochastic output.
    """
    if not pairs:
        raise ConfigError("evaluation set is empty")
    radii = list(radii)
    if any(b < a for a, b in zip(radii, radii[1:])):
        raise ConfigError("radii must be sorted ascending")
    model.eval_mode()
    sums = {method: np.zeros(len(radii)) for method in METHODS}
    for pair in pairs:
        with no_grad():
            fa = model.encode(pair.cloud_a.positions)
            fb = model.encode(pair.cloud_b.positions)
            score = model.match_features([(fa, fb)])[0]
            similarity = pairwise_similarity(fa, fb).data
        preds = {"esfw": predict_matches(score)}
        if similarity.shape[0] == similarity.shape[1]:
            preds["sinkhorn"] = sinkhorn(similarity).matrix.argmax(axis=1)
        else:
            raise ConfigError("sinkhorn baseline needs equal-sized clouds")
        preds["nn"] = nn_match(fa.data, fb.data)
        preds["nndr"] = nndr_match(fa.data, fb.data, nndr_threshold)
        for method in METHODS:
            for j, radius in enumerate(radii):
                sums[method][j] += corr_metric(
                    preds[method], pair.gt_permutation,
                    pair.cloud_a, pair.cloud_b, radius)
    return {
        method: EvalCurve(method, radii, list(sums[method] / len(pairs)), len(pairs))
        for method in METHODS
    }


def pipeline_grad_check(n: int = 8, k: int = 4, layers: int = 2, d_g: int = 4,
                        d_f: int = 8, seed: int = 0, eps: float = 1e-6,
                        symmetrize: bool = True) -> GradCheckResult:
    """Finite-difference check of the whole pipeline, loss included.

    The candidate-edge structure is frozen at the unperturbed point:
    edge selection is discrete and treated as constant within a forward
    pass, so the comparison targets exactly the gradient that training
    uses. Clouds enter as differentiable inputs alongside the parameters.
    """
    config = WeavingConfig(k=k, layers=layers, d_g=d_g, d_f=d_f)
    model = MatchingModel(config, seed=seed, encoder_neighbors=min(8, n - 1))
    model.train_mode()
    cloud = gen_shape("sphere", n, (seed, 0))
    pair = make_rigid_pair(cloud, (seed, 1))
    pos_a = Tensor(pair.cloud_a.positions.copy(), requires_grad=True)
    pos_b = Tensor(pair.cloud_b.positions.copy(), requires_grad=True)

    with no_grad():
        fa0 = model.encode(pos_a.data)
        fb0 = model.encode(pos_b.data)
        edges = select_topk(pairwise_similarity(fa0, fb0).data, k)
    batch = EdgeBatch.from_edge_sets([edges])

    def build_loss():
        fa = model.encode(pos_a)
        fb = model.encode(pos_b)
        similarity = pairwise_similarity(fa, fb)
        za, zb = init_edge_features(fa, fb, similarity, edges,
                                    similarity_grad=config.similarity_grad)
        pa, pb = model.net.forward(za, zb, batch)
        score = merge_scores(pa, pb, edges, config.merge)
        return matching_loss(score, pair.gt_permutation, symmetrize)

    tensors = {p.name: p for p in model.parameters()}
    tensors["input.cloud_a"] = pos_a
    tensors["input.cloud_b"] = pos_b
    return grad_check(build_loss, tensors, eps=eps)


# ----------------------------------------------------------------------
# furthest point sampling and the N-axis subsampler
# ----------------------------------------------------------------------


def furthest_point_sample(positions: np.ndarray, count: int) -> np.ndarray:
    """Greedy max-min subsample; starts at index 0, ties to the lowest index."""
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if not 1 <= count <= n:
        raise ConfigError(f"cannot sample {count} points from {n}")
    chosen = np.empty(count, dtype=np.intp)
    chosen[0] = 0
    dist = np.linalg.norm(positions - positions[0], axis=1)
    for i in range(1, count):
        nxt = int(dist.argmax())
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(positions - positions[nxt], axis=1))
    return chosen


def subsample_pair(pair: PairSample, count: int, seed: int = 0) -> PairSample:
    """Furthest-point subsample of a pair, renormalized to unit extent.

    Cloud A keeps its sampled points; cloud B keeps the matched points,
    shuffled so the new ground truth is not the identity.
    """
    idx_a = furthest_point_sample(pair.cloud_a.positions, count)
    matched_b = pair.gt_permutation[idx_a]
    new_a = normalize_positions(pair.cloud_a.positions[idx_a])
    moved = normalize_positions(pair.cloud_b.positions[matched_b])
    rng = np.random.default_rng(np.random.SeedSequence((seed, count)))
    tau = rng.permutation(count).astype(np.int64)
    new_b = np.empty_like(moved)
    new_b[tau] = moved
    return PairSample(
        cloud_a=PointCloud(new_a),
        cloud_b=PointCloud(new_b),
        gt_permutation=tau,
        rotation=pair.rotation,
        translation=np.zeros(3),
        noise_sigma=pair.noise_sigma,
        deform=pair.deform,
    )


# ----------------------------------------------------------------------
# ablation sweeps
# ----------------------------------------------------------------------

ABLATION_AXES = ("N", "K", "L", "D_g")


def ablation_sweep(base: TrainConfig, axis: str, values: list[int],
                   train_pairs: list[PairSample], eval_pairs: list[PairSample],
                   out_dir: str, nndr_threshold: float = 0.8) -> list[tuple[int, str, float]]:
    """Train and evaluate one configuration per axis value.

    Returns (axis_value, method, corr@0) rows for every method.
    """
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    rows = []
    for value in values:
        config = base
        t_pairs, e_pairs = train_pairs, eval_pairs
        if axis == "K":
            config = replace(base, weaving=replace(base.weaving, k=value))
        elif axis == "L":
            config = replace(base, weaving=replace(base.weaving, layers=value))
        elif axis == "D_g":
            config = replace(base, weaving=replace(base.weaving, d_g=value))
        elif axis == "N":
            if value < base.weaving.k:
                raise ConfigError(f"N={value} is smaller than k={base.weaving.k}")
            t_pairs = [subsample_pair(p, value, seed=i) for i, p in enumerate(train_pairs)]
            e_pairs = [subsample_pair(p, value, seed=10**6 + i)
                       for i, p in enumerate(eval_pairs)]
        run_dir = os.path.join(out_dir, f"{axis}_{value}")
        result = train(config, t_pairs, run_dir, eval_pairs=e_pairs)
        model = MatchingModel.load(result.checkpoint_dir)
        curves = evaluate(model, e_pairs, [0.0], nndr_threshold)
        for method in METHODS:
            rows.append((value, method, curves[method].corr[0]))
    return rows


# ----------------------------------------------------------------------
# CSV and SVG emitters
# ----------------------------------------------------------------------


def write_curves_csv(path: str, curves: dict[str, EvalCurve]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius", "method", "corr"])
        for method in METHODS:
            curve = curves[method]
            for radius, corr in zip(curve.radii, curve.corr):
                writer.writerow([f"{radius:g}", method, f"{corr:.6f}"])


def write_ablation_csv(path: str, rows: list[tuple[int, str, float]]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis_value", "method", "corr@0"])
        for value, method, corr in rows:
            writer.writerow([value, method, f"{corr:.6f}"])


def plot_series_svg(path: str, series: dict[str, tuple[list, list]],
                    x_label: str, y_label: str, title: str) -> None:
    """Line chart of named series, saved as a standalone SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.set_title(title)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_curves_svg(path: str, curves: dict[str, EvalCurve]) -> None:
    series = {m: (curves[m].radii, curves[m].corr) for m in METHODS if m in curves}
    plot_series_svg(path, series, "tolerant error", "corr", "matching performance")


def plot_ablation_svg(path: str, rows: list[tuple[int, str, float]], axis: str) -> None:
    series: dict[str, tuple[list, list]] = {}
    for value, method, corr in rows:
        xs, ys = series.setdefault(method, ([], []))
        xs.append(value)
        ys.append(corr)
    plot_series_svg(path, series, axis, "corr@0", f"ablation over {axis}")
