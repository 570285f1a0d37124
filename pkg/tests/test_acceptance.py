"""Acceptance suite: one test per criterion, printing a pass/fail line each.

The two training experiments (overfit and generalization) dominate the
runtime; everything is seeded and deterministic.
"""

import os
import time

import numpy as np

from pointweave import (MatchingModel, PointCloud, Tensor, TrainConfig,
                        WeavingConfig, corr_metric, evaluate, gen_shape,
                        generate_dataset, load_pairs, make_rigid_pair,
                        pipeline_grad_check, select_topk, sinkhorn, train)
from pointweave.cli import dispatch
from pointweave.tensor import no_grad

DESK = dict(k=16, layers=6, d_g=8, d_f=32, init_scale=0.1)


def _report(name, ok, detail):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{name}: {detail}"


def test_c01_gradient_integrity():
    start = time.time()
    result = pipeline_grad_check(n=8, k=4, layers=2, d_g=4, d_f=8, seed=0, eps=1e-6)
    elapsed = time.time() - start
    ok = result.max_error < 1e-4 and elapsed < 60.0
    _report("C1 gradient-integrity", ok,
            f"max rel err {result.max_error:.3e} at {result.location}, {elapsed:.1f}s")


def test_c02_stream_symmetry():
    cfg = WeavingConfig(k=3, layers=4, d_g=4, d_f=5)
    model = MatchingModel(cfg, seed=2).eval_mode()
    worst = 0.0
    rng = np.random.default_rng(22)
    for _ in range(100):
        n, m = rng.integers(6, 13, 2)
        fa = Tensor(rng.standard_normal((int(n), 5)))
        fb = Tensor(rng.standard_normal((int(m), 5)))
        with no_grad():
            fwd = model.match_features([(fa, fb)])[0]
            rev = model.match_features([(fb, fa)])[0]
        assert np.array_equal(fwd.mask, rev.mask.T)
        both = fwd.mask
        worst = max(worst, float(np.max(np.abs(
            fwd.values.data[both] - rev.values.data.T[both]))))
    _report("C2 stream-symmetry", worst < 1e-10,
            f"worst transposed-score deviation {worst:.3e} over 100 pairs")


def test_c03_permutation_equivariance():
    cfg = WeavingConfig(k=3, layers=3, d_g=4, d_f=8)
    model = MatchingModel(cfg, seed=3, encoder_neighbors=4).eval_mode()
    rng = np.random.default_rng(33)
    exact = 0
    for _ in range(50):
        n = int(rng.integers(8, 14))
        cloud_a = rng.standard_normal((n, 3))
        cloud_b = rng.standard_normal((n, 3))
        perm = rng.permutation(n)
        with no_grad():
            base = model.match_features(
                [(model.encode(cloud_a), model.encode(cloud_b))])[0]
            permuted = model.match_features(
                [(model.encode(cloud_a[perm]), model.encode(cloud_b))])[0]
        if (np.array_equal(permuted.values.data, base.values.data[perm])
                and np.array_equal(permuted.mask, base.mask[perm])):
            exact += 1
    _report("C3 permutation-equivariance", exact == 50,
            f"{exact}/50 instances bit-identical after row reordering")


def _topk_oracle(s, k):
    n, m = s.shape
    out = np.empty((n, k), dtype=int)
    for row in range(n):
        out[row] = sorted(range(m), key=lambda j: (-s[row, j], j))[:k]
    return out


def test_c04_knn_matches_brute_force():
    rng = np.random.default_rng(44)
    agree = 0
    for trial in range(1000):
        n, m = rng.integers(2, 65, 2)
        k = int(rng.integers(1, min(n, m) + 1))
        s = rng.uniform(0.01, 1.0, (int(n), int(m)))
        if trial % 3 == 0:  # inject exact ties
            s = np.round(s, 1) + 0.01
        edges = select_topk(s, k)
        if (np.array_equal(edges.neighbors_ab, _topk_oracle(s, k))
                and np.array_equal(edges.neighbors_ba, _topk_oracle(s.T, k))):
            agree += 1
    _report("C4 knn-oracle", agree == 1000, f"{agree}/1000 exact matches")


def _sinkhorn_oracle(s, temperature, max_iters, tol):
    p = np.exp(s / temperature)
    p = p / p.sum(axis=1, keepdims=True)

    def devs(mat):
        return (np.abs(mat.sum(axis=1) - 1).max(), np.abs(mat.sum(axis=0) - 1).max())

    row_dev, col_dev = devs(p)
    iters = 0
    while iters < max_iters and (row_dev >= tol or col_dev >= tol):
        p = p / p.sum(axis=0, keepdims=True)
        p = p / p.sum(axis=1, keepdims=True)
        iters += 1
        row_dev, col_dev = devs(p)
    return p


def test_c05_sinkhorn_convergence_and_oracle():
    rng = np.random.default_rng(55)
    worst_dev, worst_gap, worst_iters = 0.0, 0.0, 0
    for _ in range(100):
        s = rng.uniform(0.01, 1.0, (32, 32))
        result = sinkhorn(s, temperature=0.1, max_iters=100, tol=1e-6)
        worst_iters = max(worst_iters, result.iterations)
        worst_dev = max(worst_dev, result.row_deviation, result.col_deviation)
        oracle = _sinkhorn_oracle(s, 0.1, 100, 1e-6)
        worst_gap = max(worst_gap, float(np.max(np.abs(result.matrix - oracle))))
    ok = worst_dev < 1e-6 and worst_iters <= 100 and worst_gap < 1e-10
    _report("C5 sinkhorn", ok,
            f"worst marginal dev {worst_dev:.2e}, max iters {worst_iters}, "
            f"oracle gap {worst_gap:.2e}")


def test_c06_overfit_beats_sinkhorn(tmp_path):
    data_dir = str(tmp_path / "data")
    generate_dataset(data_dir, ["sphere", "gaussian-clusters"], 64,
                     pairs=20, seed=7, noise_sigma=0.0)
    pairs = load_pairs(data_dir, "train")
    config = TrainConfig(
        weaving=WeavingConfig(**DESK),
        learning_rate=1e-4, batch_size=10, epochs=300, seed=1, eval_slice=20)
    start = time.time()
    result = train(config, pairs, str(tmp_path / "run"))
    elapsed = time.time() - start
    model = MatchingModel.load(result.checkpoint_dir)
    curves = evaluate(model, pairs, [0.0])
    esfw = curves["esfw"].corr[0]
    sink = curves["sinkhorn"].corr[0]
    ok = esfw >= 0.95 and esfw > sink and elapsed < 1800.0
    _report("C6 overfit", ok,
            f"esfw corr@0 {esfw:.4f} vs sinkhorn {sink:.4f}, "
            f"{elapsed / 60:.1f} min for {config.epochs} epochs")


def test_c07_generalization_dominates_nn(tmp_path):
    data_dir = str(tmp_path / "data")
    generate_dataset(data_dir, ["sphere", "gaussian-clusters"], 64,
                     pairs=2000, test_pairs=100, seed=11, noise_sigma=0.0)
    train_pairs = load_pairs(data_dir, "train")
    test_pairs = load_pairs(data_dir, "test")
    config = TrainConfig(
        weaving=WeavingConfig(**DESK),
        learning_rate=1e-4, batch_size=10, epochs=6, seed=3, eval_slice=8)
    result = train(config, train_pairs, str(tmp_path / "run"), eval_pairs=test_pairs)
    model = MatchingModel.load(result.checkpoint_dir)
    radii = [0.0, 0.02, 0.04, 0.06]
    curves = evaluate(model, test_pairs, radii)  # EvalCurve enforces monotone
    esfw = curves["esfw"].corr
    nn = curves["nn"].corr
    dominates = all(e >= b - 1e-12 for e, b in zip(esfw, nn))
    detail = ", ".join(f"r={r:g}: {e:.4f} vs {b:.4f}"
                       for r, e, b in zip(radii, esfw, nn))
    _report("C7 generalization", dominates, f"esfw vs nn -> {detail}")


def test_c08_corr_metric_identities():
    cloud = gen_shape("sphere", 16, 0)
    pair = make_rigid_pair(cloud, 1, 0.0)
    gt = pair.gt_permutation
    identity_ok = all(
        corr_metric(gt, gt, pair.cloud_a, pair.cloud_b, r) == 1.0
        for r in (0.0, 0.02, 0.04, 0.06))

    square = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                                  [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]))
    wrong = corr_metric(np.array([1, 0, 3, 2]), np.arange(4), square, square, 0.0)

    positions_a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                            [0.0, 1.0, 0.0], [0.3, 0.3, 0.0]])
    positions_b = positions_a.copy()
    positions_b[3] = positions_b[2] + [0.05 * np.sqrt(2.0), 0.0, 0.0]
    cloud_a, cloud_b = PointCloud(positions_a), PointCloud(positions_b)
    near = (corr_metric([0, 1, 3, 3], np.arange(4), cloud_a, cloud_b, 0.0),
            corr_metric([0, 1, 3, 3], np.arange(4), cloud_a, cloud_b, 0.06))
    ok = identity_ok and wrong == 0.0 and near == (0.75, 1.0)
    _report("C8 corr-identities", ok,
            f"identity {identity_ok}, wrong {wrong}, near-miss {near}")


def test_c09_training_is_deterministic(tmp_path):
    data_dir = str(tmp_path / "data")
    assert dispatch(["gen-data", "--kind", "sphere", "--n", "16", "--pairs", "6",
                     "--seed", "13", "--out", data_dir]) == 0
    flags = ["--data", data_dir, "--k", "4", "--layers", "3", "--dg", "3",
             "--df", "6", "--batch", "2", "--epochs", "2", "--seed", "5",
             "--encoder-hidden", "16", "--encoder-neighbors", "4",
             "--init-scale", "0.1"]
    assert dispatch(["train", "--out", str(tmp_path / "a")] + flags) == 0
    assert dispatch(["train", "--out", str(tmp_path / "b")] + flags) == 0

    def read(run, name):
        return open(os.path.join(str(tmp_path / run), name), "rb").read()

    same_payload = read("a", "checkpoint/payload.bin") == read("b", "checkpoint/payload.bin")
    same_manifest = read("a", "checkpoint/manifest.txt") == read("b", "checkpoint/manifest.txt")
    same_log = read("a", "train_log.txt") == read("b", "train_log.txt")
    _report("C9 determinism", same_payload and same_manifest and same_log,
            f"payload {same_payload}, manifest {same_manifest}, log {same_log}")


def test_c10_ablation_machinery(tmp_path):
    data_dir = str(tmp_path / "data")
    assert dispatch(["gen-data", "--kind", "sphere,gaussian-clusters", "--n", "32",
                     "--pairs", "8", "--test-pairs", "2", "--seed", "17",
                     "--out", data_dir]) == 0
    out = str(tmp_path / "ablate")
    code = dispatch(["ablate", "--data", data_dir, "--axis", "L",
                     "--values", "4,6,8,10", "--out", out, "--k", "8",
                     "--layers", "6", "--dg", "4", "--df", "8", "--batch", "2",
                     "--epochs", "1", "--seed", "0", "--encoder-hidden", "16",
                     "--encoder-neighbors", "4", "--init-scale", "0.1"])
    lines = open(os.path.join(out, "ablation.csv")).read().splitlines()
    esfw_rows = [l for l in lines[1:] if l.split(",")[1] == "esfw"]
    values = [int(l.split(",")[0]) for l in esfw_rows]
    ok = code == 0 and values == [4, 6, 8, 10] and lines[0] == "axis_value,method,corr@0"
    _report("C10 ablation", ok, f"axis values {values}, exit {code}")
