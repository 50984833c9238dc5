import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spca.data import Dataset
from spca.errors import InvalidArgumentError
from spca.geometry import (LocalBasis, Neighborhood, align_basis, eigen_clusters, knn, local_frame,
                           local_mean_ahead, local_pca, pca_basis, smooth_local_pca, taper_weights,
                           transport_basis, weighted_pca_basis)


def brute_knn(points, query, k):
    d2 = ((points - query) ** 2).sum(axis=1)
    return np.lexsort((np.arange(len(points)), d2))[:k]


def random_rotation(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


class TestKnn:
    def test_self_is_nearest(self):
        rng = np.random.default_rng(1)
        d = Dataset(rng.normal(size=(50, 3)))
        for j in (0, 17, 49):
            assert knn(d, d.points[j], 1).indices.tolist() == [j]

    def test_k_equals_n_returns_everything(self):
        rng = np.random.default_rng(2)
        d = Dataset(rng.normal(size=(30, 2)))
        assert sorted(knn(d, np.zeros(2), 30).indices.tolist()) == list(range(30))

    def test_k_out_of_range(self):
        d = Dataset(np.zeros((5, 2)) + np.arange(5)[:, None])
        with pytest.raises(InvalidArgumentError):
            knn(d, np.zeros(2), 6)
        with pytest.raises(InvalidArgumentError):
            knn(d, np.zeros(2), 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force_on_50_points(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(50, 3))
        d = Dataset(pts)
        for _ in range(20):
            q = rng.normal(size=3)
            assert knn(d, q, 5).indices.tolist() == brute_knn(pts, q, 5).tolist()

    def test_ties_go_to_smaller_index(self):
        # four samples on a unit circle around the query, all equidistant
        pts = np.array([[1, 0], [0, 1], [-1, 0], [0, -1], [5, 5]], dtype=float)
        d = Dataset(pts[[3, 1, 0, 2, 4]])
        assert knn(d, np.zeros(2), 2).indices.tolist() == [0, 1]

    def test_duplicate_points(self):
        pts = np.array([[0, 0], [1, 1], [1, 1], [1, 1], [2, 2]], dtype=float)
        assert knn(Dataset(pts), np.array([1.0, 1.0]), 2).indices.tolist() == [1, 2]

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (25, 2), elements=st.integers(-4, 4).map(float)),
           st.integers(0, 2 ** 31 - 1), st.integers(1, 25))
    def test_permutation_invariance(self, pts, seed, k):
        # integer grid coordinates make exact ties common
        perm = np.random.default_rng(seed).permutation(len(pts))
        q = np.array([0.5, -0.25])
        base = knn(Dataset(pts), q, k).indices
        moved = knn(Dataset(pts[perm]), q, k).indices
        # same multiset of distances, and the permuted result is the brute-force answer
        d_base = np.sort(((pts[base] - q) ** 2).sum(axis=1))
        d_moved = np.sort(((pts[perm][moved] - q) ** 2).sum(axis=1))
        np.testing.assert_array_equal(d_base, d_moved)
        assert moved.tolist() == brute_knn(pts[perm], q, k).tolist()


class TestLocalPca:
    def test_axis_aligned_line(self):
        pts = np.column_stack([np.linspace(-3, 3, 20), np.zeros(20)])
        d = Dataset(pts)
        b = local_pca(d, knn(d, np.zeros(2), 20))
        np.testing.assert_allclose(b.vectors[:, 0], [1, 0], atol=1e-12)
        assert b.eigenvalues[1] == pytest.approx(0.0, abs=1e-15)

    def test_isotropic_ball(self):
        rng = np.random.default_rng(3)
        d = Dataset(rng.normal(size=(500, 2)))
        b = local_pca(d, knn(d, np.zeros(2), 500))
        assert b.eigenvalues[1] / b.eigenvalues[0] == pytest.approx(1.0, rel=0.2)

    def test_identical_points_are_degenerate(self):
        d = Dataset(np.ones((2, 3)))
        b = local_pca(d, knn(d, np.ones(3), 2))
        assert b.degenerate
        np.testing.assert_array_equal(b.vectors, np.eye(3))
        np.testing.assert_array_equal(b.eigenvalues, 0.0)

    def test_single_neighbour_rejected(self):
        d = Dataset(np.arange(6.0).reshape(3, 2))
        with pytest.raises(InvalidArgumentError):
            local_pca(d, knn(d, np.zeros(2), 1))

    def test_sign_convention(self):
        rng = np.random.default_rng(4)
        b = pca_basis(rng.normal(size=(100, 4)) * [3, 2, 1, 0.5])
        for col in b.vectors.T:
            assert col[np.argmax(np.abs(col))] > 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 5), st.integers(3, 60))
    def test_orthonormal_and_reconstructs_covariance(self, seed, dim, n):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(n, dim)) * rng.uniform(0.1, 5, dim)
        b = pca_basis(pts)
        v = b.vectors
        np.testing.assert_allclose(v.T @ v, np.eye(dim), atol=1e-9)
        assert (np.diff(b.eigenvalues) <= 0).all()
        cov = np.cov(pts.T)
        recon = v @ np.diag(b.eigenvalues) @ v.T
        assert np.linalg.norm(recon - cov) <= 1e-8 * np.linalg.norm(cov)


def all_signed_permutations(d):
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1.0, -1.0), repeat=d):
            yield perm, np.array(signs)


class TestAlignBasis:
    def test_identity(self):
        ref = np.eye(3)
        out = align_basis(LocalBasis(np.eye(3), np.array([3.0, 2, 1])), ref)
        np.testing.assert_array_equal(out.vectors, ref)

    def test_sign_restored(self):
        ref = np.eye(3)
        cand = np.eye(3)
        cand[:, 1] *= -1
        out = align_basis(LocalBasis(cand, np.array([3.0, 2, 1])), ref)
        np.testing.assert_array_equal(np.einsum("ij,ij->j", out.vectors, ref), 1.0)

    def test_reorders_columns_and_eigenvalues(self):
        ref = np.eye(2)
        cand = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = align_basis(LocalBasis(cand, np.array([5.0, 1.0])), ref)
        np.testing.assert_array_equal(out.vectors, np.eye(2))
        np.testing.assert_array_equal(out.eigenvalues, [1.0, 5.0])

    @pytest.mark.parametrize("seed", range(20))
    def test_greedy_matches_exhaustive_on_close_rotations(self, seed):
        rng = np.random.default_rng(seed)
        ref = random_rotation(rng, 3)
        # a perturbed, shuffled and sign-flipped copy of the reference
        small = random_rotation(rng, 3)
        angle_mix = np.linalg.qr(np.eye(3) + 0.15 * (small - small.T))[0]
        cand = (ref @ angle_mix)[:, rng.permutation(3)] * rng.choice([-1.0, 1.0], 3)
        out = align_basis(LocalBasis(cand, np.array([3.0, 2.0, 1.0])), ref)
        best = max(all_signed_permutations(3),
                   key=lambda ps: float(np.einsum("ij,ij->", cand[:, list(ps[0])] * ps[1], ref)))
        expected = cand[:, list(best[0])] * best[1]
        np.testing.assert_allclose(out.vectors, expected, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 6))
    def test_output_orthonormal_same_span(self, seed, dim):
        rng = np.random.default_rng(seed)
        cand, ref = random_rotation(rng, dim), random_rotation(rng, dim)
        out = align_basis(LocalBasis(cand, np.sort(rng.uniform(0, 1, dim))[::-1]), ref).vectors
        np.testing.assert_allclose(out.T @ out, np.eye(dim), atol=1e-9)
        # each output column is +-1 times a candidate column
        match = np.abs(cand.T @ out)
        np.testing.assert_allclose(np.sort(match, axis=0)[-1], 1.0, atol=1e-12)
        assert (np.einsum("ij,ij->j", out, ref) >= 0).all()


class TestTransportBasis:
    def test_distinct_spectrum_equals_align(self):
        rng = np.random.default_rng(5)
        cand = LocalBasis(random_rotation(rng, 3), np.array([9.0, 3.0, 1.0]), n_samples=100)
        ref = random_rotation(rng, 3)
        np.testing.assert_allclose(transport_basis(cand, ref).vectors, align_basis(cand, ref).vectors)

    def test_tied_eigenspace_keeps_reference_directions(self):
        rng = np.random.default_rng(6)
        ref = np.eye(3)
        # eigenvalues 1 and 0.99 are tied at n=100; the eigenvectors inside that
        # plane are rotated by 40 degrees away from the reference
        c, s = np.cos(0.7), np.sin(0.7)
        cand = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        out = transport_basis(LocalBasis(cand, np.array([1.0, 0.99, 0.1]), n_samples=100), ref)
        np.testing.assert_allclose(out.vectors, ref, atol=1e-12)

    def test_eigen_clusters(self):
        assert eigen_clusters([1.0, 0.99, 0.1], 100) == [[0, 1], [2]]
        assert eigen_clusters([1.0, 0.5, 0.1], 100) == [[0], [1], [2]]
        assert eigen_clusters([1.0, 0.99], 1) == [[0], [1]]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 5))
    def test_output_orthonormal(self, seed, dim):
        rng = np.random.default_rng(seed)
        lam = np.sort(rng.choice([1.0, 1.001, 0.5, 0.2], dim))[::-1]
        cand = LocalBasis(random_rotation(rng, dim), lam, n_samples=50)
        out = transport_basis(cand, random_rotation(rng, dim)).vectors
        np.testing.assert_allclose(out.T @ out, np.eye(dim), atol=1e-9)


class TestLocalMeanAhead:
    def test_symmetric_points_give_parallel_mean(self):
        pts = np.array([[1, 1], [1, -1], [2, 0.5], [2, -0.5], [-1, 3], [-2, -3]], dtype=float)
        d = Dataset(pts)
        mu = local_mean_ahead(d, Neighborhood(np.arange(6), np.zeros(2)), np.array([1.0, 0.0]))
        assert mu[1] == pytest.approx(0.0, abs=1e-15)
        assert mu[0] > 0

    def test_nothing_ahead(self):
        d = Dataset(np.array([[-1.0, 0.0], [-2.0, 1.0]]))
        mu = local_mean_ahead(d, Neighborhood(np.arange(2), np.zeros(2)), np.array([1.0, 0.0]))
        np.testing.assert_array_equal(mu, 0.0)

    def test_half_disc_centroid(self):
        rng = np.random.default_rng(7)
        r = np.sqrt(rng.uniform(0, 1, 400))
        th = rng.uniform(-np.pi, np.pi, 400)
        pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
        d = Dataset(pts)
        direction = np.array([1.0, 0.0])
        ahead = pts @ direction > 0
        assert 150 <= ahead.sum() <= 250
        mu = local_mean_ahead(d, Neighborhood(np.arange(400), np.zeros(2)), direction)
        assert mu[0] == pytest.approx(4 / (3 * np.pi), rel=0.10)


class TestTaperedNeighbourhoods:
    def test_farthest_neighbour_has_zero_weight(self):
        w = taper_weights([0.0, 0.5, 1.0, 2.0])
        assert w[-1] == 0.0
        assert w[0] == 1.0
        assert (np.diff(w) < 0).all()

    def test_weighted_pca_with_equal_weights_matches_population_covariance(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(80, 3))
        b = weighted_pca_basis(pts, np.ones(80))
        cov = np.cov(pts.T, bias=True)
        recon = b.vectors @ np.diag(b.eigenvalues) @ b.vectors.T
        np.testing.assert_allclose(recon, cov, atol=1e-12)
        assert b.n_samples == 80

    def test_smooth_frame_follows_a_line(self):
        t = np.linspace(-5, 5, 101)
        d = Dataset(np.column_stack([t, 2 * t]))
        b = local_frame(d, np.zeros(2), 20, smooth=True)
        np.testing.assert_allclose(np.abs(b.vectors[:, 0]), np.array([1, 2]) / np.sqrt(5), atol=1e-12)
        assert smooth_local_pca(d, knn(d, np.zeros(2), 20)).eigenvalues[1] < 1e-20
