import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from iflunch.stats import (
    filliben_positions,
    kde_density,
    kde_mode,
    normal_cdf,
    normal_quantile,
    probability_plot_points,
    shapiro_wilk,
    silverman_bandwidth,
)

FIXTURES = json.loads((Path(__file__).parent / "data" / "shapiro_fixtures.json").read_text())


def _bisect_quantile(p):
    # the upper tail is bisected on the survival function, where 1 - p is exact
    upper = p > 0.5
    q = 1.0 - p if upper else p
    lo, hi = -40.0, 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    return -x if upper else x


def test_normal_quantile_examples():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    assert normal_quantile(0.975) == pytest.approx(_bisect_quantile(0.975), abs=1e-12)
    for bad in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(ValueError):
            normal_quantile(bad)


def test_normal_quantile_inverts_cdf():
    for x in np.linspace(-5, 5, 101):
        assert normal_quantile(normal_cdf(x)) == pytest.approx(x, abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(p=st.floats(1e-12, 1 - 1e-12))
def test_normal_quantile_matches_bisection(p):
    assert abs(normal_quantile(p) - _bisect_quantile(p)) < 1e-9


@pytest.mark.parametrize("fx", FIXTURES["fixtures"], ids=lambda fx: fx["name"])
def test_shapiro_wilk_fixtures(fx):
    res = shapiro_wilk(fx["samples"])
    assert res.w_statistic == pytest.approx(fx["w"], abs=1e-3)
    assert res.p_value == pytest.approx(fx["p"], abs=1e-3)
    assert res.n == len(fx["samples"])


@pytest.mark.parametrize("n", [3, 4, 5, 7, 11, 12, 50, 400, 5000])
def test_shapiro_wilk_matches_scipy(n):
    scipy_stats = pytest.importorskip("scipy.stats")
    x = np.random.default_rng(n).gamma(2.0, size=n)
    ref = scipy_stats.shapiro(x)
    res = shapiro_wilk(x)
    assert res.w_statistic == pytest.approx(ref.statistic, abs=1e-6)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-5)


def test_shapiro_wilk_errors():
    with pytest.raises(ValueError, match="sample too small"):
        shapiro_wilk([1.0, 2.0])
    with pytest.raises(ValueError, match="zero variance"):
        shapiro_wilk([3.0] * 10)
    with pytest.raises(ValueError, match="sample too large"):
        shapiro_wilk(np.arange(5001.0))


def test_shapiro_wilk_separates_normal_from_skewed():
    rng = np.random.default_rng(0)
    assert shapiro_wilk(rng.normal(size=100)).p_value > 0.05
    assert shapiro_wilk(rng.exponential(size=100)).p_value < 1e-4


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 200), a=st.floats(-100, 100), b=st.floats(0.01, 100))
def test_shapiro_wilk_affine_invariant(seed, n, a, b):
    x = np.random.default_rng(seed).normal(size=n)
    r0, r1 = shapiro_wilk(x), shapiro_wilk(a + b * x)
    assert r1.w_statistic == pytest.approx(r0.w_statistic, abs=1e-10)
    assert r1.p_value == pytest.approx(r0.p_value, abs=1e-10)
    assert 0 < r0.w_statistic <= 1 and 0 <= r0.p_value <= 1


def test_filliben_positions():
    pos = filliben_positions(5)
    assert pos[-1] == pytest.approx(0.5 ** 0.2)
    assert pos[0] == pytest.approx(1 - 0.5 ** 0.2)
    assert pos[2] == pytest.approx(0.5)
    np.testing.assert_allclose(pos + pos[::-1], 1.0)
    with pytest.raises(ValueError):
        filliben_positions(0)


def test_probability_plot_examples():
    pts = probability_plot_points([2.0, -2.0, 0.0])
    assert pts[:, 1].tolist() == [-2.0, 0.0, 2.0]
    assert pts[0, 0] == pytest.approx(-pts[2, 0]) and pts[1, 0] == pytest.approx(0.0)
    theory = [normal_quantile(p) for p in filliben_positions(25)]
    on_line = probability_plot_points(np.random.default_rng(0).permutation(theory))
    assert np.max(np.abs(on_line[:, 0] - on_line[:, 1])) < 1e-6
    with pytest.raises(ValueError):
        probability_plot_points([1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(xs=st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=100))
def test_probability_plot_monotone(xs):
    pts = probability_plot_points(xs)
    assert pts.shape == (len(xs), 2)
    assert np.all(np.diff(pts[:, 0]) > 0)
    assert np.all(np.diff(pts[:, 1]) >= 0)


def test_kde_mode_examples():
    assert kde_mode([-1.0, 0.0, 1.0]) == pytest.approx(0.0, abs=1e-8)
    rng = np.random.default_rng(1)
    two = np.r_[rng.normal(5, 0.3, 300), rng.normal(-5, 0.3, 100)]
    assert abs(kde_mode(two) - 5) < 0.1
    jitter = 7.0 + rng.uniform(-1e-6, 1e-6, 50)
    assert abs(kde_mode(jitter) - 7.0) < 1e-6
    assert isinstance(kde_mode([0.0, 1.0, 1.0]), float)


def test_kde_mode_errors():
    with pytest.raises(ValueError):
        kde_mode([1.0])
    with pytest.raises(ValueError):
        kde_mode([1.0, 2.0], bandwidth="scott")
    with pytest.raises(ValueError):
        kde_mode([1.0, 2.0], bandwidth=0.0)


def test_kde_mode_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.gamma(3.0, size=int(rng.integers(10, 200)))
        h = silverman_bandwidth(x)
        grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, 100_001)
        brute = grid[np.argmax(kde_density(x, grid, h))]
        assert abs(kde_mode(x) - brute) < 2 * (grid[1] - grid[0]) + 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), shift=st.floats(-1e3, 1e3))
def test_kde_mode_shift_equivariant(seed, shift):
    x = np.random.default_rng(seed).normal(size=40)
    h = silverman_bandwidth(x)
    spacing = (np.ptp(x) + 6 * h) / 511
    assume(spacing > 0)
    assert abs(kde_mode(x + shift, h) - (kde_mode(x, h) + shift)) < spacing


def test_silverman_bandwidth_value():
    x = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    sd = math.sqrt(2.5)
    iqr = (3.0 - 1.0) / 1.349
    assert silverman_bandwidth(x) == pytest.approx(0.9 * min(sd, iqr) * 5 ** -0.2)
