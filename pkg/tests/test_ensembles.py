import numpy as np
import pytest
from scipy.stats import ks_2samp

from neuriso import arrangements as arr
from neuriso import ensembles as ens
from neuriso.errors import DegeneratePlantError, InvalidInputError, InvalidShapeError


def test_gaussian_entry_variance():
    x = ens.gen_matrix("gaussian", 400, 10, seed=0).mat
    # var(x_ij) = 1/400; se of the mean of 4000 squares is (1/400)*sqrt(2/4000)
    assert abs(np.mean(x**2) - 1.0 / 400) < 3 * (1.0 / 400) * np.sqrt(2.0 / 4000)


def test_cubic_is_entrywise_cube_of_same_draw():
    g = ens.gen_matrix("gaussian", 50, 7, seed=3).mat
    c = ens.gen_matrix("cubic_gaussian", 50, 7, seed=3).mat
    assert np.array_equal(c, g**3)


@pytest.mark.parametrize("kind", ["haar", "whitened_cubic"])
def test_orthonormal_kinds(kind):
    x = ens.gen_matrix(kind, 20, 5, seed=11).mat
    assert np.max(np.abs(x.T @ x - np.eye(5))) < 1e-9


def test_matrix_determinism():
    a = ens.gen_matrix("haar", 12, 4, seed=9).mat
    b = ens.gen_matrix("haar", 12, 4, seed=9).mat
    c = ens.gen_matrix("haar", 12, 4, seed=10).mat
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@pytest.mark.parametrize("kind", ["haar", "whitened_cubic"])
def test_tall_factor_needs_enough_rows(kind):
    with pytest.raises(InvalidShapeError):
        ens.gen_matrix(kind, 3, 5, seed=0)


def test_unknown_kind():
    with pytest.raises(InvalidInputError):
        ens.gen_matrix("uniform", 4, 2, seed=0)


def test_haar_direction_invariance():
    # statistics of ||X^T D X w|| should not depend on the direction of w
    rot = np.linalg.qr(np.random.default_rng(7).standard_normal((3, 3)))[0]
    w1 = np.array([1.0, 0.0, 0.0])
    w2 = rot @ w1

    def stat(w, base):
        out = []
        for i in range(300):
            x = ens.gen_matrix("haar", 30, 3, seed=base + i).mat
            h = np.random.default_rng(90_000 + base + i).standard_normal(3)
            d = (x @ h >= 0).astype(float)
            out.append(np.linalg.norm(x.T @ (d[:, None] * (x @ w))))
        return np.array(out)

    assert ks_2samp(stat(w1, 1), stat(w2, 5000)).pvalue > 1e-3


def test_linear_observation_is_column():
    x = ens.gen_matrix("gaussian", 15, 4, seed=2)
    w = np.array([1.0, 0.0, 0.0, 0.0])
    y, z = ens.gen_observation(ens.linear_plant(w), x, seed=0)
    assert np.array_equal(y, x.mat[:, 0])
    assert not np.any(z)


def test_relu_observation_nonnegative():
    x = ens.gen_matrix("gaussian", 30, 5, seed=4)
    w = np.random.default_rng(1).standard_normal(5)
    y, _ = ens.gen_observation(ens.relu_plant(w), x, seed=0)
    assert np.all(y >= 0)
    assert np.allclose(y, np.maximum(x.mat @ w, 0.0))


def test_normalized_single_neuron_unit_norm():
    x = ens.gen_matrix("gaussian", 25, 6, seed=5)
    w = np.random.default_rng(2).standard_normal(6)
    y, _ = ens.gen_observation(ens.normalized_plant([(w, 1.0)]), x, seed=0)
    assert abs(np.linalg.norm(y) - 1.0) < 1e-12


def test_normalized_two_neurons_sum():
    x = ens.gen_matrix("gaussian", 25, 6, seed=6)
    w1 = np.random.default_rng(3).standard_normal(6)
    w2 = np.random.default_rng(4).standard_normal(6)
    y, _ = ens.gen_observation(ens.normalized_plant([(w1, 1.0), (w2, -1.0)]), x, seed=0)
    a1 = np.maximum(x.mat @ w1, 0.0)
    a2 = np.maximum(x.mat @ w2, 0.0)
    assert np.allclose(y, a1 / np.linalg.norm(a1) - a2 / np.linalg.norm(a2))


def test_noise_added_and_returned_separately():
    x = ens.gen_matrix("gaussian", 400, 4, seed=7)
    w = np.ones(4)
    y0, _ = ens.gen_observation(ens.linear_plant(w), x, seed=123)
    y, z = ens.gen_observation(ens.linear_plant(w, noise_sigma=2.0), x, seed=123)
    assert np.allclose(y - z, y0)
    # var(z_i) = 4/400 = 0.01
    assert abs(np.mean(z**2) - 0.01) < 3 * 0.01 * np.sqrt(2.0 / 400)
    y2, z2 = ens.gen_observation(ens.linear_plant(w, noise_sigma=2.0), x, seed=123)
    assert np.array_equal(z, z2)


def test_dead_neuron_raises():
    x = ens.DataMatrix(mat=-np.eye(3), kind="gaussian", seed=0)
    with pytest.raises(DegeneratePlantError):
        ens.gen_observation(ens.relu_plant(np.array([1.0, 1.0, 1.0])), x, seed=0)
    with pytest.raises(DegeneratePlantError):
        ens.gen_observation(
            ens.normalized_plant([(np.array([1.0, 1.0, 1.0]), 1.0)]), x, seed=0)


def test_duplicate_planted_masks_raise():
    x = ens.gen_matrix("gaussian", 20, 5, seed=8)
    w = np.random.default_rng(5).standard_normal(5)
    with pytest.raises(DegeneratePlantError):
        ens.gen_observation(ens.normalized_plant([(w, 1.0), (2 * w, -1.0)]), x, seed=0)


def test_zero_plant_rejected():
    with pytest.raises(InvalidInputError):
        ens.linear_plant(np.zeros(4))


def test_plant_direction_kinds():
    x = ens.gen_matrix("gaussian", 30, 6, seed=9)
    w = ens.plant_direction(x, seed=5)
    assert w.shape == (6,) and np.array_equal(w, ens.plant_direction(x, seed=5))
    v = ens.plant_direction(x, seed=5, how="min_singular")
    s = np.linalg.svd(x.mat, compute_uv=False)
    assert abs(np.linalg.norm(x.mat @ v) - s[-1]) < 1e-10
    with pytest.raises(InvalidInputError):
        ens.plant_direction(x, seed=5, how="qr")


def test_gmm_zero_noise_rows_and_labels():
    mu1 = np.array([1.0, 2.0, 0.0])
    mu2 = np.array([-1.0, 0.5, 1.0])
    x, q = ens.gen_gmm(3, 4, mu1, mu2, sigma=0.0, seed=0)
    assert np.array_equal(q, [1, 1, 1, 0, 0, 0, 0])
    assert np.allclose(x.mat[:3], mu1) and np.allclose(x.mat[3:], mu2)
    w = mu1 / np.linalg.norm(mu1) - mu2 / np.linalg.norm(mu2)
    assert mu1 @ mu2 < np.linalg.norm(mu1) * np.linalg.norm(mu2)
    assert np.array_equal(arr.pattern_of(x.mat, w).mask, q)


def test_gmm_zero_means_rejected():
    with pytest.raises(InvalidInputError):
        ens.gen_gmm(2, 2, np.zeros(3), np.ones(3), sigma=1.0, seed=0)


def test_gmm_success_bound_and_sweep():
    d = 20
    mu1, mu2 = np.ones(d), -np.ones(d)
    w = mu1 / np.linalg.norm(mu1) - mu2 / np.linalg.norm(mu2)
    rates = []
    for si, sigma in enumerate([0.8, 1.2, 2.0]):
        hits = 0
        for t in range(200):
            x, q = ens.gen_gmm(50, 50, mu1, mu2, sigma, seed=1000 * si + t)
            hits += int(np.array_equal(arr.pattern_of(x.mat, w).mask, q))
        rate = hits / 200
        rates.append(rate)
        assert rate >= ens.gmm_success_bound(50, 50, mu1, mu2, sigma)
    assert rates[0] >= rates[1] >= rates[2]
    assert ens.gmm_success_bound(50, 50, mu1, mu2, 0.0) == 1.0
    # b = -1, so each exponent is -2*20/(4*sigma^2) = -10/sigma^2
    assert abs(ens.gmm_success_bound(50, 50, mu1, mu2, 1.0)
               - (1 - 100 * np.exp(-10.0))) < 1e-12
