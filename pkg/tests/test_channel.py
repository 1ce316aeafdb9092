"""Channel-layer tests: sampling law, rate law, power cap, CSI conservatism."""
import math

import numpy as np
import pytest
from scipy import integrate, stats

from crsched.channel import (GainDistribution, apply_csi_error, capped_power,
                             sample_gain, transmission_rate)

RSEED = 20260816


def test_truncated_mean_closed_form():
    # mean 1 truncated at 10: 1 - 10 e^-10 / (1 - e^-10), a ~0.045% shift
    d = GainDistribution(mean=1.0, max_gain=10.0)
    expected = 1.0 - 10.0 * math.exp(-10.0) / (1.0 - math.exp(-10.0))
    assert math.isclose(d.truncated_mean, expected, rel_tol=1e-12)
    assert math.isclose(d.truncated_mean, 0.9995459800899031, rel_tol=1e-10)


def test_truncated_mean_matches_quadrature():
    for mean, cap in [(1.0, 10.0), (0.1, 1.0), (0.4, 4.0), (2.0, 3.0)]:
        d = GainDistribution(mean=mean, max_gain=cap)
        z = 1.0 - math.exp(-cap / mean)
        val, err = integrate.quad(lambda x: x * math.exp(-x / mean) / (mean * z), 0.0, cap)
        assert math.isclose(d.truncated_mean, val, rel_tol=1e-9)


def test_inverse_cdf_endpoints_and_monotonicity():
    d = GainDistribution(mean=0.1, max_gain=1.0)
    assert d.sample(0.0) == 0.0
    us = np.linspace(0.0, 1.0 - 1e-12, 1001)
    xs = d.sample(us)
    assert np.all(np.diff(xs) > 0)
    assert xs[-1] < d.max_gain  # no atom at the cap


def test_sample_distribution_ks():
    d = GainDistribution(mean=1.0, max_gain=10.0)
    rng = np.random.default_rng(RSEED)
    xs = sample_gain(d, rng, size=100_000)
    res = stats.kstest(xs, d.cdf)
    assert res.statistic < 0.01


def test_degenerate_distribution_is_point_mass():
    d = GainDistribution(mean=0.5, max_gain=0.5)
    rng = np.random.default_rng(RSEED)
    xs = sample_gain(d, rng, size=100)
    assert np.all(xs == 0.5)
    assert d.truncated_mean == 0.5


def test_distribution_validation():
    with pytest.raises(ValueError):
        GainDistribution(mean=0.0, max_gain=1.0)
    with pytest.raises(ValueError):
        GainDistribution(mean=2.0, max_gain=1.0)


def test_transmission_rate_values():
    assert transmission_rate(0.0, 5.0) == 0.0
    assert transmission_rate(5.0, 0.0) == 0.0
    assert math.isclose(transmission_rate(100.0, 10.0), math.log(1001.0), rel_tol=1e-12)
    assert math.isclose(transmission_rate(100.0, 10.0), 6.908754779315221, rel_tol=1e-12)
    # monotone in both arguments
    assert transmission_rate(2.0, 1.0) > transmission_rate(1.0, 1.0)
    assert transmission_rate(1.0, 2.0) > transmission_rate(1.0, 1.0)


def test_capped_power_cases():
    assert capped_power(100.0, 2.0, 20.0) == 10.0     # cap binds
    assert capped_power(100.0, 0.1, 20.0) == 100.0    # parameter binds
    assert capped_power(100.0, 0.0, 20.0) == 100.0    # zero gain passes through
    assert capped_power(100.0, 0.2, 20.0) == 100.0    # boundary: i_inst/g == P


def test_capped_power_respects_instantaneous_limit():
    rng = np.random.default_rng(RSEED)
    for _ in range(1000):
        p = rng.uniform(0.1, 200.0)
        g = rng.uniform(0.0, 5.0)
        i_inst = rng.uniform(1.0, 50.0)
        pt = capped_power(p, g, i_inst)
        assert 0.0 <= pt <= p
        assert pt * g <= i_inst + 1e-9


def test_csi_identity_at_zero_alpha():
    assert apply_csi_error(1.3, 0.2, 0.0, 0.5, -0.5) == (1.3, 0.2)


def test_csi_worked_example():
    # alpha=0.1, u at +1/2: estimate 1.05 deflates back to exactly 1.0
    gamma_used, g_used = apply_csi_error(1.0, 0.1, 0.1, 0.5, -0.5)
    assert math.isclose(gamma_used, 1.0, rel_tol=1e-12)
    assert math.isclose(g_used, 0.1, rel_tol=1e-12)


def test_csi_conservatism_grid():
    # no-outage and interference-safety hold for every error draw
    rng = np.random.default_rng(RSEED)
    for _ in range(2000):
        gamma = rng.uniform(1e-4, 10.0)
        g = rng.uniform(1e-4, 4.0)
        alpha = rng.choice([0.05, 0.1, 0.5, 1.0])
        ug, uh = rng.uniform(-0.5, 0.5, size=2)
        gamma_used, g_used = apply_csi_error(gamma, g, alpha, ug, uh)
        assert gamma_used <= gamma * (1.0 + 1e-12)
        assert g_used >= g * (1.0 - 1e-12)
        # chosen rate never exceeds what the channel supports
        pt = capped_power(100.0, g_used, 20.0)
        assert transmission_rate(pt, gamma_used) <= transmission_rate(pt, gamma) + 1e-12
        # true interference never exceeds the instantaneous limit
        assert pt * g <= 20.0 * (1.0 + 1e-9)
