import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pecs.dynamics import build_model, generate_photon_stream, two_level
from pecs.errors import DomainError, ExtentError, GridError
from pecs.waiting_time import (WaitingCurve, alpha, consecutive_delays, g2_from_waiting, shape_distance,
                               two_level_g2, uniform_grid, waiting_three_level, waiting_two_level)

MHZ = 1e6
TABLE = {"gamma_ge": 50 * MHZ, "gamma_eg": 50 * MHZ, "gamma_em": 5 * MHZ, "gamma_mg": 2.5 * MHZ}


def bin_average(f, edges, sub=40):
    pts = edges[:-1, None] + (np.arange(sub)[None, :] + 0.5) / sub * np.diff(edges)[:, None]
    return f(pts).mean(axis=1)


# -- alpha --------------------------------------------------------------------------------------

def test_alpha_examples():
    assert alpha(1.0, 1.0) == 0.0
    assert alpha(1.0, 3.0) == pytest.approx(0.5)
    assert alpha(1e9, 1.0) == pytest.approx(1.0, abs=1e-8) and alpha(1e9, 1.0) < 1
    with pytest.raises(DomainError):
        alpha(0.0, 1.0)


# -- two-level ----------------------------------------------------------------------------------

def test_two_level_closed_form_pointwise():
    ge, eg = 25 * MHZ, 50 * MHZ
    tau = uniform_grid(400e-9, n=4001)
    W = waiting_two_level(ge, eg, 1.0, tau)
    expect = ge * eg / (ge - eg) * (np.exp(-eg * tau) - np.exp(-ge * tau))
    np.testing.assert_allclose(W.W, expect, rtol=1e-12, atol=1e-9 * expect.max())
    assert W.meta["branch"] == "closed"


def test_equal_rates_limit():
    g = 50 * MHZ
    tau = uniform_grid(400e-9, n=2001)
    W = waiting_two_level(g, g, 1.0, tau)
    assert W.meta["branch"] == "series"
    np.testing.assert_allclose(W.W, g * g * tau * np.exp(-g * tau), rtol=1e-13, atol=0)
    # either side of the branch switch (|Δ| = 1e-6 S² near ε = 2e-3) agrees with the direct difference
    for eps, branch in ((1.9e-3, "series"), (2.1e-3, "closed")):
        near = waiting_two_level(g, g * (1 + eps), 1.0, tau)
        assert near.meta["branch"] == branch
        eg = g * (1 + eps)
        direct = g * eg / (g - eg) * (np.exp(-eg * tau) - np.exp(-g * tau))
        np.testing.assert_allclose(near.W[1:], direct[1:], rtol=1e-9)


@given(st.floats(1e5, 1e9), st.floats(1e5, 1e9), st.floats(1e-3, 1.0))
def test_density_is_non_negative_and_starts_at_zero(ge, eg, C):
    tau = uniform_grid(20.0 / (ge + eg), n=500)
    W = waiting_two_level(ge, eg, C, tau).W
    assert W[0] == 0.0 and np.all(W >= 0) and np.all(np.isfinite(W))


@pytest.mark.parametrize("C", [1.0, 0.5, 0.1])
def test_two_level_normalisation(C):
    ge, eg = 25 * MHZ, 50 * MHZ
    rate = C * ge * eg / (ge + eg)
    tau = uniform_grid(40.0 / rate, dt=0.1e-9)
    curve = waiting_two_level(ge, eg, C, tau)
    assert abs(curve.integral() - 1) < 1e-3
    assert curve.mean() == pytest.approx(1 / rate, rel=1e-3)


def test_validation():
    tau = uniform_grid(1e-6, n=10)
    with pytest.raises(DomainError):
        waiting_two_level(1e6, 1e6, 0.0, tau)
    with pytest.raises(DomainError):
        waiting_two_level(-1e6, 1e6, 1.0, tau)
    with pytest.raises(GridError):
        waiting_two_level(1e6, 1e6, 1.0, [0.0, 1e-9, 3e-9])
    with pytest.raises(GridError):
        waiting_two_level(1e6, 1e6, 1.0, [1e-9, 2e-9, 3e-9])
    with pytest.raises(DomainError):
        uniform_grid(1e-6, n=10, dt=1e-9)


# -- three-level --------------------------------------------------------------------------------

def test_three_level_normalises():
    curve = waiting_three_level(TABLE, uniform_grid(20e-6, dt=0.1e-9))
    assert abs(curve.integral() - 1) < 1e-3
    assert curve.W[0] == 0.0 and np.all(curve.W >= -1e-12 * curve.W.max())
    assert curve.meta["grid_error"] < 1e-4


def test_vanishing_dark_path_recovers_two_level():
    tau = uniform_grid(1e-6, dt=0.1e-9)
    rates = dict(TABLE, gamma_em=0.0)
    three = waiting_three_level(rates, tau)
    two = waiting_two_level(50 * MHZ, 50 * MHZ, 1.0, tau)
    assert np.max(np.abs(three.W - two.W)) / two.W.max() < 1e-6
    tiny = waiting_three_level(dict(TABLE, gamma_em=1e-3), tau)
    assert np.max(np.abs(tiny.W - two.W)) / two.W.max() < 1e-6


def test_three_level_rate_validation():
    tau = uniform_grid(1e-6, n=100)
    with pytest.raises(DomainError):
        waiting_three_level({"gamma_ge": 1e6}, tau)
    with pytest.raises(DomainError):
        waiting_three_level(dict(TABLE, bogus=1.0), tau)


def test_coarse_grid_is_rejected():
    # the loop densities are exact samples, so only the convolution error is estimated
    with pytest.raises(GridError):
        waiting_three_level(TABLE, uniform_grid(20e-6, dt=10e-9))


# -- reconstruction of g2 ------------------------------------------------------------------------

@pytest.mark.parametrize("C", [1.0, 0.5])
def test_g2_from_two_level_waiting(C):
    ge = eg = 50 * MHZ
    tau = uniform_grid(30.0 / (C * 25 * MHZ), dt=0.02e-9)
    rec = g2_from_waiting(waiting_two_level(ge, eg, C, tau))
    window = tau <= tau[-1] / 2
    err = np.max(np.abs(rec.g2[window] - two_level_g2(ge, eg, tau[window])))
    assert err < 1e-4
    assert rec.detected_rate == pytest.approx(C * 25 * MHZ, rel=1e-3)


def test_reconstruction_independent_of_collection():
    ge = eg = 50 * MHZ
    tau = uniform_grid(30.0 / (0.5 * 25 * MHZ), dt=0.02e-9)
    a = g2_from_waiting(waiting_two_level(ge, eg, 1.0, tau))
    b = g2_from_waiting(waiting_two_level(ge, eg, 0.5, tau))
    window = tau <= 400e-9
    assert np.max(np.abs(a.g2[window] - b.g2[window])) < 1e-4


def test_zero_or_truncated_waiting_curve():
    tau = uniform_grid(1e-6, n=100)
    with pytest.raises(ExtentError):
        g2_from_waiting(WaitingCurve(tau, np.zeros_like(tau)))
    with pytest.raises(ExtentError):
        g2_from_waiting(waiting_two_level(50 * MHZ, 50 * MHZ, 0.01, tau))


def test_shape_converges_to_g2_as_collection_drops():
    ge = eg = 50 * MHZ
    tau = uniform_grid(100e-9, dt=0.01e-9)
    d = [shape_distance(waiting_two_level(ge, eg, C, tau)) for C in (1.0, 0.5, 0.1, 0.01)]
    assert all(x > y for x, y in zip(d, d[1:]))
    assert d[-1] < 0.01


# -- Monte Carlo oracle --------------------------------------------------------------------------

def histogram_check(curve, delays, edges):
    counts, _ = np.histogram(delays, edges)
    # W at the curve's collection efficiency is the density of the next detected delay
    model = bin_average(lambda t: np.interp(t, curve.tau, curve.W), edges) * np.diff(edges) * delays.size
    keep = model > 20
    z = (counts[keep] - model[keep]) / np.sqrt(model[keep])
    return float(np.mean(z**2)), int(keep.sum())


def test_consecutive_delays_match_two_level_density():
    ge, eg, C = 50 * MHZ, 50 * MHZ, 0.3
    rec = generate_photon_stream(two_level(50, 50, collection=C), 0.02, seed=8)
    delays = consecutive_delays(rec)
    tau = uniform_grid(2e-6, dt=0.05e-9)
    red, n = histogram_check(waiting_two_level(ge, eg, C, tau), delays, np.linspace(0, 600e-9, 121))
    assert n > 50 and 0.7 < red < 1.3


def test_consecutive_delays_match_three_level_density():
    rec = generate_photon_stream(build_model("three-level-spontaneous", 50.0), 0.01, seed=9)
    delays = consecutive_delays(rec)
    curve = waiting_three_level(TABLE, uniform_grid(20e-6, dt=0.1e-9))
    edges = np.concatenate([np.linspace(0, 200e-9, 101), np.geomspace(210e-9, 5e-6, 30)])
    red, n = histogram_check(curve, delays, edges)
    assert n > 80 and 0.7 < red < 1.3


def test_consecutive_delays_simple():
    from pecs.timetag import AcquisitionRecord

    rec = AcquisitionRecord.from_ticks([0, 10], [4], 1e-9, 1e-7)
    np.testing.assert_allclose(consecutive_delays(rec), [4e-9, 6e-9])


def test_csv_output(tmp_path):
    curve = waiting_two_level(25 * MHZ, 50 * MHZ, 1.0, uniform_grid(1e-7, n=11))
    path = curve.to_csv(tmp_path / "w.csv")
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert path.read_text().startswith("tau_s,W_per_s")
    np.testing.assert_array_equal(data[:, 1], curve.W)
