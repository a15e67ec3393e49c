from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest

from fptlab.boundary import build_boundary, corpus_boundary
from fptlab.kernels import level_density
from fptlab.montecarlo import (
    McParams,
    bessel_bridge_mean,
    bridge_functional_estimate,
    configure_threads,
    direct_hitting_density,
    euler_bessel_bridge_marginal,
    girsanov_density_curve,
    hit_fraction,
    sample_bessel_bridge,
    sample_bessel_bridges,
    simulate_hitting_times,
)
from fptlab.rng import RngStream


def combined_z(x, se_x, y, se_y):
    return (x - y) / math.hypot(se_x, se_y)


def test_bridge_endpoints_and_positivity():
    paths = sample_bessel_bridges(1.3, 2.0, 64, seed=1, n=20_000)
    assert np.all(paths[:, 0] == 1.3)
    assert np.all(paths[:, -1] == 0.0)
    assert paths.min() >= 0.0


def test_single_bridge_matches_batch_row():
    batch = sample_bessel_bridges(1.0, 1.0, 32, seed=9, n=10, first_stream=100)
    one = sample_bessel_bridge(1.0, 1.0, 32, RngStream(9, 104))
    np.testing.assert_array_equal(one.values, batch[4])
    np.testing.assert_array_equal(one.grid, np.linspace(0, 1, 33))


def test_bridge_domain():
    with pytest.raises(ValueError):
        sample_bessel_bridge(0.0, 1.0, 8, RngStream(1))
    with pytest.raises(ValueError):
        sample_bessel_bridge(1.0, 1.0, 1, RngStream(1))


@pytest.mark.parametrize("a, s, u", [(1.0, 1.0, 0.5), (2.0, 3.0, 1.0), (0.5, 1.0, 0.9)])
def test_bessel_bridge_mean_formula(a, s, u):
    # E|N(mu, v I_3)| by direct integration in spherical coordinates
    mu, v = mp.mpf(a) * (1 - mp.mpf(u) / s), mp.mpf(u) * (s - u) / s
    dens = lambda r: r**2 / (2 * mp.pi * v) ** 1.5 * 2 * mp.pi * mp.quad(
        lambda c: mp.exp(-(r * r - 2 * r * mu * c + mu * mu) / (2 * v)), [-1, 1]
    )
    expected = mp.quad(lambda r: r * dens(r), [0, mu, mu + 20 * mp.sqrt(v)])
    assert bessel_bridge_mean(a, s, u) == pytest.approx(float(expected), rel=1e-10)


@pytest.mark.parametrize("k", [16, 64, 128, 200])
def test_bridge_marginal_mean_is_exact(k):
    paths = sample_bessel_bridges(1.0, 1.0, 256, seed=3, n=100_000)
    x = paths[:, k]
    z = (x.mean() - bessel_bridge_mean(1.0, 1.0, k / 256)) / (x.std(ddof=1) / math.sqrt(len(x)))
    assert abs(z) < 4


def test_euler_cross_check_small():
    euler = euler_bessel_bridge_marginal(1.0, 1.0, 1024, 50_000, seed=4, u=0.5)
    x = sample_bessel_bridges(1.0, 1.0, 256, seed=4, n=50_000)[:, 128]
    assert abs(combined_z(x.mean(), x.std(ddof=1) / math.sqrt(len(x)), euler.mean, euler.stderr)) < 3


def test_euler_needs_grid_point():
    with pytest.raises(ValueError):
        euler_bessel_bridge_marginal(1.0, 1.0, 10, 10, seed=1, u=0.55)


@pytest.mark.parametrize("text", ["1", "1 + t", "3 + 0.7*t"])
def test_functional_is_one_for_linear(text):
    est = bridge_functional_estimate(build_boundary(text), 1.0, 1000, 64, seed=1)
    assert est.mean == 1.0
    assert est.stderr == 0.0


def test_functional_monotone_in_curvature():
    f1 = bridge_functional_estimate(corpus_boundary("quad_half"), 1.0, 200_000, 512, seed=5)
    f2 = bridge_functional_estimate(build_boundary("1 + t^2"), 1.0, 200_000, 512, seed=5)
    assert 0 < f2.mean < f1.mean < 1
    assert (f1.mean - f2.mean) > 3 * math.hypot(f1.stderr, f2.stderr)


def test_functional_self_convergence():
    bd = corpus_boundary("quad_half")
    coarse = bridge_functional_estimate(bd, 1.0, 200_000, 512, seed=6)
    fine = bridge_functional_estimate(bd, 1.0, 200_000, 1024, seed=6)
    assert abs(fine.mean - coarse.mean) < 2 * fine.stderr


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_antithetic_reduces_stderr(seed):
    bd = corpus_boundary("quad_half")
    anti = bridge_functional_estimate(bd, 1.0, 100_000, 256, seed=seed)
    plain = bridge_functional_estimate(bd, 1.0, 100_000, 256, seed=seed, antithetic=False)
    assert anti.n_paths == plain.n_paths
    assert anti.stderr < plain.stderr


def test_functional_reproducible():
    bd = corpus_boundary("cosh")
    a = bridge_functional_estimate(bd, 0.7, 10_001, 100, seed=123)
    b = bridge_functional_estimate(bd, 0.7, 10_001, 100, seed=123)
    assert (a.mean, a.stderr, a.n_paths) == (b.mean, b.stderr, b.n_paths)
    assert a.n_paths == 10_000


def test_thread_count_does_not_change_results():
    bd = corpus_boundary("quad_half")
    runs = []
    for n in (1, None):
        configure_threads(n)
        runs.append(bridge_functional_estimate(bd, 1.0, 20_000, 64, seed=8).mean)
        runs.append(direct_hitting_density(bd, [0.5, 1.0], 20_000, 128, seed=8).value.tobytes())
    configure_threads()
    assert runs[0] == runs[2] and runs[1] == runs[3]


def test_girsanov_curve_linear():
    curve = girsanov_density_curve(corpus_boundary("linear"), [1.0], 1000, 64, seed=1)
    assert curve.value[0] == pytest.approx(0.05399097, abs=5e-9)
    assert curve.value[0] == pytest.approx(math.exp(-2) / math.sqrt(2 * math.pi), rel=1e-13)
    assert curve.stderr[0] == 0.0


def test_girsanov_curve_constant():
    s = np.array([0.3, 1.0, 2.5])
    curve = girsanov_density_curve(corpus_boundary("const"), s, 1000, 64, seed=1)
    np.testing.assert_array_equal(curve.value, level_density(1.0, s))
    assert np.all(curve.stderr == 0)


def test_girsanov_curve_columns_equal_single_horizon():
    bd = corpus_boundary("quad_half")
    curve = girsanov_density_curve(bd, [0.5, 1.0], 10_000, 128, seed=2)
    single = bridge_functional_estimate(bd, 1.0, 10_000, 128, seed=2)
    assert curve.extra["bridge_mean"][1] == single.mean


def test_girsanov_curve_is_subprobability():
    s = np.linspace(0.02, 10.0, 300)
    curve = girsanov_density_curve(corpus_boundary("quad_half"), s, 20_000, 256, seed=3)
    mass = np.trapezoid(curve.value, s) if hasattr(np, "trapezoid") else np.trapz(curve.value, s)
    assert 0 < mass < 1


def test_direct_constant_boundary_cdf():
    times = simulate_hitting_times(corpus_boundary("const"), 1.0, 1_000_000, 2048, seed=42)
    est = hit_fraction(times, 1.0)
    expected = math.erfc(1 / math.sqrt(2))
    assert abs(est.mean - expected) < 3 * est.stderr


def test_direct_linear_total_mass():
    times = simulate_hitting_times(corpus_boundary("linear"), 50.0, 200_000, 2048, seed=43)
    est = hit_fraction(times, 50.0)
    assert abs(est.mean - math.exp(-2)) < 3 * est.stderr


def test_direct_density_bins():
    s = np.linspace(0.1, 3.0, 30)
    curve = direct_hitting_density(corpus_boundary("quad_half"), s, 100_000, 512, seed=4, bins=30)
    assert np.all(curve.value >= 0)
    widths = curve.extra["snapped_widths"]
    assert float(np.sum(curve.value * widths)) <= 1.0
    assert np.all(np.abs(widths - curve.extra["bin_width"]) <= curve.extra["horizon"] / 512 + 1e-12)


def test_direct_density_matches_constant_level_density():
    s = np.array([0.5, 1.0, 2.0])
    curve = direct_hitting_density(corpus_boundary("const"), s, 400_000, 1024, seed=5)
    z = (curve.value - level_density(1.0, s)) / curve.stderr
    assert np.all(np.abs(z) < 4)


def test_mc_params_validation():
    with pytest.raises(ValueError):
        McParams(n_paths=0)
    with pytest.raises(ValueError):
        McParams(steps=1)
    with pytest.raises(ValueError):
        McParams(bins=0)


def test_estimate_interval():
    times = np.array([0.1, 0.5, np.inf, 2.0])
    est = hit_fraction(times, 1.0)
    assert est.mean == 0.5
    lo, hi = est.ci()
    assert lo < 0.5 < hi and est.contains(0.5)


def test_direct_density_bin_narrower_than_step():
    curve = direct_hitting_density(corpus_boundary("quad_half"), [0.5, 1.0], 4000, 64, seed=11)
    assert np.all(curve.extra["snapped_widths"] > 0)
    assert np.all(np.isfinite(curve.value))
