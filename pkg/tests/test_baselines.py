import numpy as np
import pytest

from pointweave import nn_match, nndr_match, sinkhorn
from pointweave.errors import ConfigError


def _sinkhorn_oracle(s, temperature, max_iters, tol):
    """Straightforward linear-space reimplementation, same schedule."""
    p = np.exp(s / temperature)
    p = p / p.sum(axis=1, keepdims=True)

    def devs(m):
        return (np.abs(m.sum(axis=1) - 1.0).max(), np.abs(m.sum(axis=0) - 1.0).max())

    row_dev, col_dev = devs(p)
    iters = 0
    while iters < max_iters and (row_dev >= tol or col_dev >= tol):
        p = p / p.sum(axis=0, keepdims=True)
        p = p / p.sum(axis=1, keepdims=True)
        iters += 1
        row_dev, col_dev = devs(p)
    return p, iters


def test_dominant_entries_approach_permutation():
    rng = np.random.default_rng(0)
    n = 5
    perm = rng.permutation(n)
    s = rng.uniform(0.1, 0.3, (n, n))
    s[np.arange(n), perm] = 2.0
    result = sinkhorn(s, temperature=0.05, max_iters=200, tol=1e-9)
    expected = np.zeros((n, n))
    expected[np.arange(n), perm] = 1.0
    assert np.max(np.abs(result.matrix - expected)) < 1e-3


def test_uniform_similarity_is_a_fixed_point():
    result = sinkhorn(np.full((6, 6), 0.7), temperature=0.1)
    assert np.max(np.abs(result.matrix - 1.0 / 6.0)) < 1e-12
    assert result.iterations == 0


@pytest.mark.parametrize("seed", range(4))
def test_matches_independent_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.05, 1.0, (8, 8))
    result = sinkhorn(s, temperature=0.1, max_iters=100, tol=1e-6)
    oracle, oracle_iters = _sinkhorn_oracle(s, 0.1, 100, 1e-6)
    assert result.iterations == oracle_iters
    assert result.iterations <= 100
    assert np.max(np.abs(result.matrix - oracle)) < 1e-10
    assert result.row_deviation < 1e-6 and result.col_deviation < 1e-6


def test_log_space_survives_low_temperature():
    rng = np.random.default_rng(5)
    s = rng.uniform(0.1, 50.0, (6, 6))
    result = sinkhorn(s, temperature=1e-3, max_iters=300, tol=1e-6)
    assert np.isfinite(result.matrix).all()


def test_additive_shift_invariance():
    rng = np.random.default_rng(6)
    s = rng.uniform(0.1, 1.0, (7, 7))
    a = sinkhorn(s, temperature=0.1).matrix
    b = sinkhorn(s + 3.7, temperature=0.1).matrix
    assert np.max(np.abs(a - b)) < 1e-10


def test_non_square_rejected():
    with pytest.raises(ConfigError, match="square"):
        sinkhorn(np.ones((3, 4)))


def test_nonpositive_rejected():
    s = np.ones((3, 3))
    s[0, 0] = 0.0
    with pytest.raises(ConfigError):
        sinkhorn(s)


def test_nn_match_identity_on_identical_sets():
    rng = np.random.default_rng(7)
    f = rng.standard_normal((9, 4))
    assert np.array_equal(nn_match(f, f), np.arange(9))


def test_nn_match_single_target():
    rng = np.random.default_rng(8)
    fa = rng.standard_normal((5, 3))
    fb = rng.standard_normal((1, 3))
    assert np.array_equal(nn_match(fa, fb), np.zeros(5, dtype=int))


def test_nn_match_against_double_loop():
    rng = np.random.default_rng(9)
    fa = rng.standard_normal((8, 3))
    fb = rng.standard_normal((11, 3))
    got = nn_match(fa, fb)
    for i in range(8):
        dists = [np.linalg.norm(fa[i] - fb[j]) for j in range(11)]
        assert got[i] == int(np.argmin(dists))


def test_nndr_clear_winner_is_kept():
    fa = np.array([[0.0, 0.0]])
    fb = np.array([[1.0, 0.0], [10.0, 0.0]])
    assert nndr_match(fa, fb, 0.8)[0] == 0


def test_nndr_tie_is_rejected():
    fa = np.array([[0.0, 0.0]])
    fb = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert nndr_match(fa, fb, 0.8)[0] == -1


def test_nndr_against_brute_force():
    rng = np.random.default_rng(10)
    fa = rng.standard_normal((10, 3))
    fb = rng.standard_normal((12, 3))
    got = nndr_match(fa, fb, 0.9)
    for i in range(10):
        dists = np.sort([np.linalg.norm(fa[i] - fb[j]) for j in range(12)])
        nearest = int(np.argmin([np.linalg.norm(fa[i] - fb[j]) for j in range(12)]))
        expected = nearest if (dists[0] + 1e-8) / (dists[1] + 1e-8) < 0.9 else -1
        assert got[i] == expected


def test_nndr_needs_two_candidates():
    with pytest.raises(ConfigError):
        nndr_match(np.zeros((3, 2)), np.zeros((1, 2)), 0.8)


def test_marginal_deviation_never_increases():
    rng = np.random.default_rng(11)
    for _ in range(5):
        s = rng.uniform(0.05, 1.0, (10, 10))
        log_p = s / 0.1
        log_p = log_p - _lse(log_p, 1)
        worst = _worst_dev(log_p)
        for _ in range(40):
            log_p = log_p - _lse(log_p, 0)
            log_p = log_p - _lse(log_p, 1)
            now = _worst_dev(log_p)
            assert now <= worst * (1.0 + 1e-12)
            worst = now


def _lse(x, axis):
    peak = x.max(axis=axis, keepdims=True)
    return peak + np.log(np.exp(x - peak).sum(axis=axis, keepdims=True))


def _worst_dev(log_p):
    p = np.exp(log_p)
    return max(np.abs(p.sum(axis=1) - 1.0).max(), np.abs(p.sum(axis=0) - 1.0).max())
