import json

import numpy as np
import pytest

from mmse_phase.model import (
    GaussianSource,
    GmmSource,
    MeasurementSystem,
    NotPSDError,
    OverlapCase,
    check_symmetric,
    eig_psd,
    gmm_from_dict,
    gmm_to_dict,
    in_image,
    load_kernel,
    load_model,
    matrix_sqrt_psd,
    numerical_rank,
    overlap_case,
    pair_rank,
    random_kernel,
    sample_gaussian,
    sample_gmm,
    sample_wishart,
    save_kernel,
    save_model,
    spawn_generators,
)


def rand_psd(n, r, rng):
    g = rng.standard_normal((n, r))
    return g @ g.T


# -- eigendecomposition -------------------------------------------------------


def test_eig_identity():
    d = eig_psd(np.eye(3))
    np.testing.assert_allclose(d.values, 1.0)
    np.testing.assert_allclose(d.vectors.T @ d.vectors, np.eye(3), atol=1e-12)


def test_eig_diagonal_sorted():
    d = eig_psd(np.diag([4.0, 0.0, 1.0]))
    np.testing.assert_allclose(d.values, [4, 1, 0])
    np.testing.assert_allclose(np.abs(d.vectors), np.eye(3)[:, [0, 2, 1]], atol=1e-12)


def test_eig_rank_matches_factor_qr():
    rng = np.random.default_rng(1)
    for _ in range(20):
        B = rng.standard_normal((4, 2))
        d = eig_psd(B @ B.T)
        qr_rank = int(np.sum(np.abs(np.diag(np.linalg.qr(B)[1])) > 1e-10))
        assert numerical_rank(d) == qr_rank == 2


def test_eig_reconstruction_and_orthogonality():
    rng = np.random.default_rng(2)
    A = rand_psd(6, 6, rng)
    d = eig_psd(A)
    np.testing.assert_allclose(d.vectors.T @ d.vectors, np.eye(6), atol=1e-10)
    assert np.max(np.abs(d.reconstruct() - A)) <= 1e-9 * d.lambda_max


def test_eig_rejects_non_psd_and_nonsymmetric():
    with pytest.raises(NotPSDError):
        eig_psd(np.diag([1.0, -0.1]))
    with pytest.raises(ValueError):
        eig_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        check_symmetric(np.ones((2, 3)))


def test_eig_clamps_tiny_negative():
    d = eig_psd(np.diag([1.0, -1e-13]))
    assert d.values[-1] == 0.0


def test_numerical_rank_cases():
    assert numerical_rank(eig_psd(np.diag([1.0, 1e-14, 0.0]))) == 1
    assert numerical_rank(eig_psd(np.zeros((3, 3)))) == 0
    rng = np.random.default_rng(3)
    assert numerical_rank(eig_psd(sample_wishart(4, 2, rng))) == 2


def test_matrix_sqrt():
    np.testing.assert_allclose(matrix_sqrt_psd(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    rng = np.random.default_rng(4)
    A = rand_psd(5, 3, rng)
    R = matrix_sqrt_psd(A)
    np.testing.assert_allclose(R, R.T, atol=1e-14)
    assert np.max(np.abs(R @ R - A)) < 1e-9 * np.linalg.eigvalsh(A).max()
    with pytest.raises(NotPSDError):
        matrix_sqrt_psd(np.diag([1.0, -1.0]))


# -- types ----------------------------------------------------------------------


def test_gaussian_source_properties():
    rng = np.random.default_rng(5)
    cov = rand_psd(5, 3, rng)
    src = GaussianSource(np.ones(5), cov)
    assert src.rank == 3 and src.dim == 5
    np.testing.assert_allclose(src.factor @ src.factor.T, cov, atol=1e-10 * np.abs(cov).max())
    assert src.power == pytest.approx(np.trace(cov))
    with pytest.raises(ValueError):
        GaussianSource(np.zeros(3), np.eye(2))


def test_gmm_source_validation():
    c = GaussianSource(np.zeros(2), np.eye(2))
    d = GaussianSource(np.zeros(2), np.diag([1.0, 0.0]))
    g = GmmSource([0.4, 0.6], [c, d])
    assert g.s_max == 2 and g.ranks == [2, 1] and g.n_components == 2
    with pytest.raises(ValueError):
        GmmSource([0.5, 0.6], [c, d])
    with pytest.raises(ValueError):
        GmmSource([-0.1, 1.1], [c, d])
    with pytest.raises(ValueError):
        GmmSource([0.5, 0.5], [c, GaussianSource(np.zeros(3), np.eye(3))])


def test_measurement_system_validation():
    with pytest.raises(ValueError):
        MeasurementSystem(np.eye(2), 0.0)
    with pytest.raises(ValueError):
        MeasurementSystem(np.zeros((0, 2)), 1.0)
    s = MeasurementSystem(np.eye(2), 1.0)
    with pytest.raises(ValueError):
        s.check_dim(3)


# -- random generators --------------------------------------------------------


def test_random_kernel_scalar_and_trace():
    phi = random_kernel(1, 1, np.random.default_rng(0))
    assert abs(abs(phi[0, 0]) - 1.0) < 1e-15
    rng = np.random.default_rng(1)
    for ell, n in [(1, 4), (3, 5), (7, 3)]:
        phi = random_kernel(ell, n, rng)
        assert abs(np.trace(phi @ phi.T) - ell) < 1e-12


def test_random_kernel_sigma_rank_min_s_ell():
    src = GaussianSource(np.zeros(5), rand_psd(5, 4, np.random.default_rng(9)))
    for seed in range(100):
        phi = random_kernel(3, 5, np.random.default_rng(seed))
        assert numerical_rank(eig_psd(phi @ src.covariance @ phi.T)) == 3


def test_sample_gaussian_degenerate_and_variance():
    rng = np.random.default_rng(0)
    src = GaussianSource(np.array([1.0, 2.0]), np.zeros((2, 2)))
    x = sample_gaussian(src, 10, rng)
    np.testing.assert_array_equal(x, np.array([[1.0], [2.0]]) * np.ones((1, 10)))
    x = sample_gaussian(GaussianSource(np.zeros(1), np.array([[4.0]])), 100_000, rng)
    # var of the sample variance is 2 sigma^4 / N
    assert abs(x.var() - 4.0) < 0.15


def test_sample_gaussian_in_affine_span():
    rng = np.random.default_rng(1)
    cov = rand_psd(6, 2, rng)
    mu = rng.standard_normal(6)
    src = GaussianSource(mu, cov)
    x = sample_gaussian(src, 500, rng)
    B = src.eig.vectors[:, :2]
    resid = (x - mu[:, None]) - B @ (B.T @ (x - mu[:, None]))
    assert np.max(np.abs(resid)) < 1e-9


def test_sample_gaussian_covariance_convergence():
    rng = np.random.default_rng(2)
    cov = rand_psd(4, 4, rng)
    src = GaussianSource(np.zeros(4), cov)
    x = sample_gaussian(src, 100_000, rng)
    err = np.linalg.norm(np.cov(x) - cov)
    assert err < 5 * np.sqrt(16 / 100_000) * np.linalg.eigvalsh(cov).max()


def test_sample_gmm_labels():
    rng = np.random.default_rng(3)
    c = GaussianSource(np.zeros(2), np.eye(2))
    labels, x = sample_gmm(GmmSource([1.0], [c]), 50, rng)
    assert np.all(labels == 0) and x.shape == (2, 50)
    labels, _ = sample_gmm(GmmSource([1.0, 0.0], [c, c]), 1000, rng)
    assert np.all(labels == 0)
    labels, _ = sample_gmm(GmmSource([0.5, 0.5], [c, c]), 100_000, rng)
    assert abs(np.mean(labels == 0) - 0.5) < 0.005


def test_sample_wishart_rank_and_mean():
    rng = np.random.default_rng(4)
    assert numerical_rank(eig_psd(sample_wishart(3, 5, rng))) == 3
    assert numerical_rank(eig_psd(sample_wishart(4, 2, rng))) == 2
    draws = np.array([sample_wishart(3, 2, rng) for _ in range(10_000)])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(mean - 2 * np.eye(3)) <= 3 * se + 1e-12)


def test_spawn_generators_independent_and_reproducible():
    a = [g.standard_normal(3) for g in spawn_generators(7, 3)]
    b = [g.standard_normal(3) for g in spawn_generators(7, 3)]
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    assert not np.allclose(a[0], a[1])


# -- subspace predicates --------------------------------------------------------


def test_pair_rank_and_overlap_examples():
    e1, e2 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    g = GmmSource([0.5, 0.5], [GaussianSource(np.zeros(2), e1), GaussianSource(np.zeros(2), e2)])
    assert pair_rank(g, 0, 1) == 2
    assert overlap_case(g, 0, 1) is OverlapCase.NON_OVERLAPPING
    same = GmmSource([0.5, 0.5], [GaussianSource(np.zeros(2), e1)] * 2)
    assert pair_rank(same, 0, 1) == 1
    assert overlap_case(same, 0, 1) is OverlapCase.OVERLAPPING
    with pytest.raises(IndexError):
        pair_rank(g, 0, 2)


def test_pair_rank_independent_wisharts():
    rng = np.random.default_rng(5)
    for _ in range(20):
        G1, G2 = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
        g = GmmSource([0.5, 0.5], [GaussianSource(np.zeros(4), G1 @ G1.T), GaussianSource(np.zeros(4), G2 @ G2.T)])
        assert pair_rank(g, 0, 1) == np.linalg.matrix_rank(np.hstack([G1, G2])) == 4


def test_overlap_scaled_covariance_and_subspace_angle():
    rng = np.random.default_rng(6)
    for _ in range(20):
        S = rand_psd(5, 3, rng)
        g = GmmSource([0.5, 0.5], [GaussianSource(np.zeros(5), S), GaussianSource(np.zeros(5), 2 * S)])
        assert overlap_case(g, 0, 1) is OverlapCase.OVERLAPPING
        B1 = g.components[0].eig.vectors[:, :3]
        B2 = g.components[1].eig.vectors[:, :3]
        cosines = np.linalg.svd(B1.T @ B2, compute_uv=False)
        np.testing.assert_allclose(cosines, 1.0, atol=1e-8)


def test_in_image_examples():
    assert in_image(np.zeros(2), np.diag([1.0, 0.0]))
    assert not in_image(np.array([0.0, 1.0]), np.diag([1.0, 0.0]))
    rng = np.random.default_rng(7)
    A = rand_psd(5, 2, rng)
    for _ in range(100):
        assert in_image(A @ rng.standard_normal(5), A)


# -- file I/O -----------------------------------------------------------------


def test_model_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    g = GmmSource(
        [0.25, 0.75],
        [GaussianSource(rng.standard_normal(3), rand_psd(3, 2, rng)) for _ in range(2)],
    )
    path = tmp_path / "m.json"
    save_model(g, path)
    h = load_model(path)
    np.testing.assert_array_equal(h.weights, g.weights)
    for a, b in zip(g.components, h.components):
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_allclose(a.covariance, b.covariance, rtol=0, atol=1e-14)
    data = json.loads(path.read_text())
    assert set(data) == {"n", "weights", "components"}


def test_model_load_symmetrizes_and_validates():
    d = {"n": 2, "weights": [1.0], "components": [{"mean": [0, 0], "covariance": [[1.0, 0.2], [0.2 + 1e-14, 1.0]]}]}
    g = gmm_from_dict(d)
    np.testing.assert_array_equal(g.components[0].covariance, g.components[0].covariance.T)
    with pytest.raises(ValueError):
        gmm_from_dict({"n": 3, "weights": [1.0], "components": d["components"]})
    with pytest.raises(ValueError):
        gmm_from_dict({"weights": [1.0]})
    assert gmm_to_dict(g)["n"] == 2


def test_kernel_roundtrip(tmp_path):
    phi = random_kernel(3, 4, np.random.default_rng(0))
    save_kernel(phi, tmp_path / "k.json")
    np.testing.assert_array_equal(load_kernel(tmp_path / "k.json"), phi)
    (tmp_path / "bad.json").write_text(json.dumps({"rows": 2, "cols": 4, "data": phi.tolist()}))
    with pytest.raises(ValueError):
        load_kernel(tmp_path / "bad.json")
