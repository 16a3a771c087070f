import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decadam.topology import (
    KINDS,
    WEIGHT_RULES,
    TopologyError,
    build_topology,
    check_lemma3,
    from_matrix,
    gossip_contraction_factor,
    random_doubly_stochastic,
    ring_eigenvalues,
    spectral_gap,
    validate_mixing_matrix,
)


def circulant_ring_gap(K):
    # independent oracle: eigenvalues of the 1/3-weight ring circulant
    lam = [(1 + 2 * math.cos(2 * math.pi * j / K)) / 3 for j in range(K)]
    mods = sorted((abs(v) for v in lam), reverse=True)
    return 1 - mods[1]


def test_complete_k4_is_averaging_matrix():
    top = build_topology("complete", 4)
    assert np.allclose(top.weights, 0.25, rtol=0, atol=1e-15)
    assert top.second_eig_mod == pytest.approx(0.0, abs=1e-12)
    assert top.spectral_gap == pytest.approx(1.0, abs=1e-12)


def test_ring_k4_weights_and_spectrum():
    top = build_topology("ring", 4)
    third = 1 / 3
    assert np.allclose(top.weights[0], [third, third, 0, third], rtol=0, atol=1e-15)
    assert np.allclose(np.sort(top.eigenvalues), [-third, third, third, 1.0], atol=1e-12)
    assert top.spectral_gap == pytest.approx(2 / 3, abs=1e-12)


def test_ring_k8_gap():
    top = build_topology("ring", 8)
    expected = 1 - (1 + 2 * math.cos(math.pi / 4)) / 3
    assert top.spectral_gap == pytest.approx(expected, abs=1e-12)
    assert round(top.spectral_gap, 5) == 0.19526
    assert top.second_eig_mod == pytest.approx(0.80474, abs=1e-5)


@pytest.mark.parametrize("K", range(3, 33))
def test_ring_gap_matches_circulant_formula(K):
    _, rho = spectral_gap(build_topology("ring", K).weights)
    assert abs(rho - circulant_ring_gap(K)) <= 1e-10
    assert np.allclose(np.sort(ring_eigenvalues(K)), np.sort(build_topology("ring", K).eigenvalues), atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("rule", WEIGHT_RULES)
@pytest.mark.parametrize("K", [1, 2, 3, 5, 6, 9, 12, 16])
def test_generated_topologies_are_valid(kind, rule, K):
    top = build_topology(kind, K, rule)
    W = top.weights
    assert np.array_equal(W, W.T)
    assert np.all(np.abs(W.sum(axis=0) - 1) <= 1e-12)
    assert np.all(np.abs(W.sum(axis=1) - 1) <= 1e-12)
    assert 0 < top.spectral_gap <= 1
    assert 0 <= top.second_eig_mod < 1
    assert check_lemma3(W)
    for i in range(K):
        for j in range(K):
            assert (W[i, j] > 0) == (i == j or j in top.neighbor_lists[i])


def test_uniform_neighbor_on_regular_graph():
    top = build_topology("grid2d", 9)
    assert set(top.degrees) == {4}
    assert np.allclose(top.weights[top.weights > 0], 1 / 5)


def test_metropolis_weights():
    top = build_topology("star_regularized", 5, "uniform_neighbor")
    assert top.weight_rule == "metropolis"
    W = top.weights
    # hub degree 4, leaves degree 1: w = 1 / (1 + 4)
    assert W[0, 1] == pytest.approx(0.2)
    assert W[1, 1] == pytest.approx(0.8)
    assert W[0, 0] == pytest.approx(0.2)


def test_grid2d_most_square_factorization():
    top = build_topology("grid2d", 12)
    # 3 x 4 torus: every node has degree 4
    assert set(top.degrees) == {4}
    assert top.num_workers == 12


def test_identity_has_zero_gap_and_is_rejected():
    lam2, rho = spectral_gap(np.eye(3))
    assert lam2 == pytest.approx(1.0)
    assert rho == pytest.approx(0.0)
    with pytest.raises(TopologyError, match="zero spectral gap"):
        from_matrix(np.eye(3))


def test_averaging_matrix_k5():
    lam2, rho = spectral_gap(np.full((5, 5), 0.2))
    assert lam2 == pytest.approx(0.0, abs=1e-12)
    assert rho == pytest.approx(1.0, abs=1e-12)


def test_ring_k4_spectral_bound_is_tight():
    W = build_topology("ring", 4).weights
    assert gossip_contraction_factor(W) == pytest.approx(1 / 3, abs=1e-12)
    assert check_lemma3(W)


def test_validation_names_the_violation():
    W = np.full((3, 3), 1 / 3)
    W[0, 1] += 0.1
    with pytest.raises(TopologyError, match="symmetric|row|column|entry"):
        validate_mixing_matrix(W)
    W = np.full((3, 3), 0.3)
    with pytest.raises(TopologyError, match="row 0"):
        validate_mixing_matrix(W)


def test_bad_arguments():
    with pytest.raises(TopologyError):
        build_topology("hypercube", 4)
    with pytest.raises(TopologyError):
        build_topology("ring", 0)
    with pytest.raises(TopologyError):
        build_topology("ring", 4, "max_degree")


def test_random_doubly_stochastic_matrices(rng):
    for _ in range(1000):
        K = int(rng.integers(2, 12))
        W = random_doubly_stochastic(K, rng)
        assert np.array_equal(W, W.T)
        assert np.all(np.abs(W.sum(axis=1) - 1) <= 1e-10)
        assert np.all(np.abs(W.sum(axis=0) - 1) <= 1e-10)
        assert check_lemma3(W)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(KINDS),
    K=st.integers(1, 16),
    d=st.integers(1, 6),
    seed=st.integers(0, 2**32 - 1),
)
def test_gossip_contraction(kind, K, d, seed):
    top = build_topology(kind, K)
    W = top.weights
    X = np.random.default_rng(seed).standard_normal((d, K))
    avg = np.full((K, K), 1 / K)
    dev = np.linalg.norm(X - X @ avg)
    assert np.linalg.norm(X @ W - X @ avg) <= (1 - top.spectral_gap) * dev + 1e-9


@pytest.mark.parametrize("kind", KINDS)
def test_repeated_gossip_reaches_consensus(kind, rng):
    top = build_topology(kind, 10)
    X0 = rng.standard_normal((3, 10))
    avg = np.full((10, 10), 0.1)
    dev0 = np.linalg.norm(X0 - X0 @ avg)
    X = X0
    for n in range(1, 51):
        X = X @ top.weights
        assert np.linalg.norm(X - X @ avg) <= (1 - top.spectral_gap) ** n * dev0 + 1e-9


def test_neighbor_table_is_ascending_and_padded():
    top = build_topology("star_regularized", 4)
    idx, w, mask = top.neighbor_table(include_self=True)
    for k in range(4):
        ids = idx[k][mask[k]]
        assert list(ids) == sorted(ids)
        assert np.all(w[k][~mask[k]] == 0)
        assert np.allclose(w[k][mask[k]].sum(), 1)
