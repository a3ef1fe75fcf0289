import numpy as np
import pytest
from scipy import stats

from knotstrength import (
    CellGrid,
    DecayKernel,
    Knot,
    adjust_strength,
    ar1_logpdf,
    ar1_sample,
    cell_centroids,
    distance_matrix,
    knot_effect_vector,
    observed_strength,
    weight_matrix,
)


def dense_ar1_logpdf(x, mu, rho, sigma):
    """Oracle: the equivalent joint Gaussian with covariance
    sigma^2 * rho^|j-k| / (1 - rho^2), evaluated densely."""
    x = np.asarray(x, dtype=float)
    j = np.arange(x.shape[0])
    cov = sigma ** 2 / (1.0 - rho ** 2) * rho ** np.abs(j[:, None] - j[None, :])
    return stats.multivariate_normal(mean=np.full(x.shape[0], mu),
                                     cov=cov).logpdf(x)


# ----------------------------------------------------------------------
# decay kernels
# ----------------------------------------------------------------------

def test_unknown_kernel_kind():
    with pytest.raises(ValueError):
        DecayKernel("cubic")


def test_exponential_weight_values():
    kernel = DecayKernel("exponential")
    w = kernel.weights(np.array([0.0, 12.0, 97.0]), beta=0.40, cutoff=96.0)
    assert w[0] == 1.0
    # about 0.8% of the maximum at a one-foot distance
    np.testing.assert_allclose(w[1], 0.008229747049020023)
    assert w[2] == 0.0


def test_gaussian_weight_value():
    w = DecayKernel("gaussian").weights(np.array([3.0]), beta=0.1, cutoff=96.0)
    np.testing.assert_allclose(w[0], 0.4065696597405991)


def test_power_weight_value_and_singularity():
    kernel = DecayKernel("power")
    w = kernel.weights(np.array([2.0]), beta=1.5, cutoff=96.0)
    np.testing.assert_allclose(w[0], 0.3535533905932738)
    with pytest.raises(ValueError, match="singular"):
        kernel.weights(np.array([0.0, 2.0]), beta=1.5, cutoff=96.0)


def test_weights_require_positive_beta():
    with pytest.raises(ValueError):
        DecayKernel().weights(np.array([1.0]), beta=0.0, cutoff=96.0)


@pytest.mark.parametrize("kind", ["exponential", "power", "gaussian"])
def test_weights_monotone_in_distance(kind, rng):
    """h(d1) >= h(d2) whenever 0 < d1 <= d2 <= cutoff, for each kernel."""
    kernel = DecayKernel(kind)
    for _ in range(20):
        d = np.sort(rng.uniform(0.1, 96.0, size=30))
        beta = rng.uniform(0.05, 2.0)
        w = kernel.weights(d, beta, cutoff=96.0)
        assert np.all(np.diff(w) <= 1e-15)


@pytest.mark.parametrize("kind", ["exponential", "power", "gaussian"])
def test_weight_beta_derivative_matches_fd(kind, rng):
    kernel = DecayKernel(kind)
    d = rng.uniform(0.2, 50.0, size=40)
    beta, h = 0.7, 1e-6
    w = kernel.weights(d, beta, cutoff=96.0)
    fd = (kernel.weights(d, beta + h, 96.0) - kernel.weights(d, beta - h, 96.0)) / (2 * h)
    np.testing.assert_allclose(kernel.weight_beta_derivative(d, w), fd,
                               rtol=1e-6, atol=1e-12)


def test_exponential_unit_scaling():
    """Scaling distances and cutoff by s while scaling beta by 1/s leaves the
    exponential weight matrix unchanged."""
    rng = np.random.default_rng(3)
    d = rng.uniform(0.0, 120.0, size=(6, 4))
    w = weight_matrix(d, beta=0.4, cutoff=96.0)
    s = 2.54
    w_scaled = weight_matrix(d * s, beta=0.4 / s, cutoff=96.0 * s)
    np.testing.assert_allclose(w_scaled, w, rtol=1e-12)


# ----------------------------------------------------------------------
# knot effects and the observation map
# ----------------------------------------------------------------------

def test_knot_effect_values():
    knots = [Knot(x=0, y=0, volume=10.0, edge=False),
             Knot(x=0, y=0, volume=4.0, edge=True)]
    np.testing.assert_allclose(
        knot_effect_vector(knots, gamma0=0.25, gamma1=0.15), [2.5, 0.6])
    assert knot_effect_vector([], 0.25, 0.15).shape == (0,)
    zero = knot_effect_vector([Knot(x=0, y=0, volume=0.0, edge=True)], 0.25, 0.15)
    assert zero[0] == 0.0


def test_knot_effect_requires_positive_gammas():
    with pytest.raises(ValueError):
        knot_effect_vector([Knot(x=0, y=0, volume=1.0)], 0.0, 0.15)


def test_adjust_strength_oracle():
    y = adjust_strength(np.array([5.0, 5.0]),
                        np.array([[1.0], [0.0]]), np.array([2.5]))
    np.testing.assert_array_equal(y, [2.5, 5.0])


def test_adjust_strength_no_knots_copies():
    x = np.array([5.0, 6.0])
    y = adjust_strength(x, np.zeros((2, 0)), np.zeros(0))
    np.testing.assert_array_equal(y, x)
    assert y is not x


def test_adjust_strength_zero_weights_identity():
    x = np.array([5.0, 6.0, 7.0])
    y = adjust_strength(x, np.zeros((3, 2)), np.array([4.0, 1.0]))
    np.testing.assert_array_equal(y, x)


def test_adjust_strength_shape_mismatch():
    with pytest.raises(ValueError, match="conform"):
        adjust_strength(np.zeros(3), np.zeros((2, 1)), np.zeros(1))


def test_knot_removal_monotonicity(rng):
    """Deleting a knot never lowers any cell strength and strictly raises
    cells inside the cutoff."""
    grid = CellGrid(n_cells=8, span_length=32.0, width=5.5, cutoff=10.0)
    clear = rng.normal(6.0, 1.0, size=8)
    knots = [Knot(x=float(rng.uniform(0, 32)), y=float(rng.uniform(0, 5.5)),
                  volume=float(rng.gamma(2.0, 6.0)), edge=bool(rng.random() < 0.5))
             for _ in range(4)]
    dist = distance_matrix(grid, knots)
    effects = knot_effect_vector(knots, 0.25, 0.15)
    weights = weight_matrix(dist, 0.5, grid.cutoff)
    y_all = adjust_strength(clear, weights, effects)
    for k in range(len(knots)):
        keep = [i for i in range(len(knots)) if i != k]
        y_without = adjust_strength(clear, weights[:, keep], effects[keep])
        assert np.all(y_without >= y_all - 1e-12)
        inside = dist[:, k] <= grid.cutoff
        assert np.all(y_without[inside] > y_all[inside])


def test_gamma_swap_edge_flip_invariance(rng):
    """Swapping gamma0 and gamma1 while flipping every edge flag leaves the
    adjusted strengths unchanged."""
    grid = CellGrid()
    clear = rng.normal(6.0, 1.0, size=grid.n_cells)
    knots = [Knot(x=float(rng.uniform(0, 96)), y=float(rng.uniform(0, 5.5)),
                  volume=float(rng.gamma(2.0, 6.0)), edge=bool(rng.random() < 0.5))
             for _ in range(6)]
    flipped = [Knot(x=k.x, y=k.y, volume=k.volume, edge=not k.edge)
               for k in knots]
    dist = distance_matrix(grid, knots)
    weights = weight_matrix(dist, 0.5, grid.cutoff)
    y1 = adjust_strength(clear, weights, knot_effect_vector(knots, 0.25, 0.15))
    y2 = adjust_strength(clear, weights, knot_effect_vector(flipped, 0.15, 0.25))
    np.testing.assert_allclose(y1, y2, rtol=1e-14)


def test_observed_strength():
    assert observed_strength(np.array([3.0, 1.0, 2.0])) == (1.0, 2)
    # tie broken to the lowest index
    assert observed_strength(np.array([2.0, 2.0])) == (2.0, 1)
    with pytest.raises(ValueError):
        observed_strength(np.zeros((2, 2)))


def test_observed_strength_shift_invariance(rng):
    y = rng.normal(5.0, 1.0, size=24)
    uts, cell = observed_strength(y)
    uts_shifted, cell_shifted = observed_strength(y + 3.25)
    assert cell_shifted == cell
    np.testing.assert_allclose(uts_shifted, uts + 3.25)


# ----------------------------------------------------------------------
# AR(1) process
# ----------------------------------------------------------------------

def test_ar1_sample_shapes(rng):
    x = ar1_sample(rng, 5.85, 0.7, 0.8, 24)
    assert x.shape == (24,)
    x = ar1_sample(rng, np.full(10, 5.85), 0.7, 0.8, 24)
    assert x.shape == (10, 24)


def test_ar1_sample_validates():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        ar1_sample(rng, 0.0, 1.0, 0.8, 4)
    with pytest.raises(ValueError):
        ar1_sample(rng, 0.0, 0.5, 0.0, 4)


def test_ar1_stationary_moments(rng):
    """Marginal mean 5.85 and variance 0.8^2/(1-0.49)=1.2549, lag-1 and
    lag-2 autocorrelations 0.7 and 0.49, within 3 standard errors."""
    m = 1_000_000
    x = ar1_sample(rng, np.full(m, 5.85), 0.7, 0.8, 3)
    var = 1.2549019607843137
    assert abs(x[:, 0].mean() - 5.85) < 3 * np.sqrt(var / m)
    assert abs(x[:, 0].var(ddof=1) - var) < 3 * np.sqrt(2.0 / (m - 1)) * var
    # autocorrelation standard error is roughly 1/sqrt(m)
    r1 = np.corrcoef(x[:, 0], x[:, 1])[0, 1]
    r2 = np.corrcoef(x[:, 0], x[:, 2])[0, 1]
    assert abs(r1 - 0.7) < 3 / np.sqrt(m)
    assert abs(r2 - 0.49) < 3 / np.sqrt(m)


def test_ar1_independence_limit(rng):
    x = ar1_sample(rng, np.zeros(500_000), 1e-8, 1.0, 2)
    r1 = np.corrcoef(x[:, 0], x[:, 1])[0, 1]
    assert abs(r1) < 0.01


def test_ar1_logpdf_single_cell():
    got = ar1_logpdf(np.array([4.2]), mu=5.0, rho=0.7, sigma=0.8)
    sd = np.sqrt(0.64 / (1 - 0.49))
    np.testing.assert_allclose(got, stats.norm(5.0, sd).logpdf(4.2), rtol=1e-12)


def test_ar1_logpdf_documented_covariance():
    # J=3, mu=0, rho=0.5, sigma=1: covariance [[4/3,2/3,1/3],...]
    got = ar1_logpdf(np.zeros(3), mu=0.0, rho=0.5, sigma=1.0)
    cov = np.array([[4, 2, 1], [2, 4, 2], [1, 2, 4]]) / 3.0
    want = stats.multivariate_normal(mean=np.zeros(3), cov=cov).logpdf(np.zeros(3))
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_ar1_logpdf_matches_dense(rng):
    got = ar1_logpdf(np.array([2.0, 2.8, 3.1, 2.2]), mu=2.5, rho=0.6, sigma=0.9)
    np.testing.assert_allclose(got, -4.17622105360036, rtol=1e-12)
    for _ in range(20):
        j = int(rng.integers(1, 11))
        mu = float(rng.normal(0, 3))
        rho = float(rng.uniform(0.05, 0.95))
        sigma = float(rng.uniform(0.2, 3.0))
        x = rng.normal(mu, 2.0, size=j)
        seq = ar1_logpdf(x, mu, rho, sigma)
        dense = dense_ar1_logpdf(x, mu, rho, sigma)
        assert abs(seq - dense) <= 1e-10 * abs(dense)


def test_ar1_logpdf_scaling_identity(rng):
    """Scaling x, mu, sigma by c changes the log-density by -J*log(c)."""
    x = rng.normal(5.0, 1.0, size=6)
    base = ar1_logpdf(x, 5.0, 0.7, 0.8)
    c = 3.7
    scaled = ar1_logpdf(c * x, c * 5.0, 0.7, c * 0.8)
    np.testing.assert_allclose(scaled, base - 6 * np.log(c), rtol=1e-12)


def test_ar1_logpdf_validates():
    with pytest.raises(ValueError):
        ar1_logpdf(np.array([np.nan]), 0.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        ar1_logpdf(np.zeros(3), 0.0, 1.5, 1.0)
    with pytest.raises(ValueError):
        ar1_logpdf(np.zeros(3), 0.0, 0.5, -1.0)


def test_clear_specimen_observation_is_min_of_ar1(rng):
    """With no knots the composition uts = min(adjust(X)) is min(X)."""
    grid = CellGrid()
    x = ar1_sample(rng, 5.85, 0.7, 0.8, grid.n_cells)
    y = adjust_strength(x, np.zeros((grid.n_cells, 0)), np.zeros(0))
    uts, cell = observed_strength(y)
    assert uts == x.min()
    assert cell == int(np.argmin(x)) + 1


def test_distance_and_centroid_units_agree(small_grid):
    # a knot sitting on the third centroid has zero distance to it
    cent = cell_centroids(small_grid)
    knot = Knot(x=float(cent[2, 0]), y=float(cent[2, 1]), volume=1.0)
    dist = distance_matrix(small_grid, [knot])
    assert dist[2, 0] == 0.0
