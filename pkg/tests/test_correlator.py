import warnings

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import poisson_ticks
from pecs.correlator import (LINEAR, LOGARITHMIC, CorrelationResult, PartitionSpec, brute_force_correlate,
                             build_tau_axis, count_pairs, cross_correlate, intensity_trace,
                             partition_by_threshold, poisson_errors, symmetric_poisson_error, tick_edges)
from pecs.errors import (ClippedAxisWarning, DomainError, NormalizationError, PartitionSpecError, PecsWarning,
                         QuantizationError)
from pecs.timetag import AcquisitionRecord

NS = 1e-9


# -- axis ---------------------------------------------------------------------------------------

def test_linear_axis_examples():
    ax = build_tau_axis((0, 10 * NS), NS)
    assert len(ax) == 10 and ax.scale == LINEAR
    np.testing.assert_allclose(ax.widths, NS, rtol=1e-12)
    sym = build_tau_axis((-50 * NS, 50 * NS), NS)
    assert len(sym) == 100
    np.testing.assert_allclose(sym.edges, -sym.edges[::-1], atol=1e-24)


def test_log_axis_grows_geometrically():
    ax = build_tau_axis((NS, 1e-3), NS, "log")
    assert ax.scale == LOGARITHMIC
    assert ax.widths[0] == pytest.approx(NS)
    assert np.all(np.diff(ax.edges) > 0)
    assert ax.edges[0] == NS and ax.edges[-1] == 1e-3
    np.testing.assert_allclose(ax.widths[1:-1] / ax.widths[:-2], 1.1, rtol=1e-9)


def test_log_axis_straddling_zero_joins_with_central_bin():
    ax = build_tau_axis((-1e-6, 1e-6), NS, "log")
    centre = np.flatnonzero((ax.edges[:-1] < 0) & (ax.edges[1:] > 0))
    assert centre.size == 1
    k = centre[0]
    assert ax.edges[k] == pytest.approx(-NS) and ax.edges[k + 1] == pytest.approx(NS)
    np.testing.assert_allclose(ax.edges, -ax.edges[::-1], rtol=1e-12)


def test_axis_errors():
    with pytest.raises(DomainError):
        build_tau_axis((1, 1), 0.1)
    with pytest.raises(DomainError):
        build_tau_axis((0, 1), 2)
    with pytest.raises(QuantizationError):
        build_tau_axis((0, 1e-6), 1e-13, tick=1e-12)


def test_tick_edges_half_open():
    E = tick_edges(np.array([0.0, 1e-9, 2.5e-9]), 1e-9)
    assert E.tolist() == [0, 1, 3]
    E = tick_edges(np.array([-3e-9, 0.1e-9]), 1e-9)
    assert E.tolist() == [-3, 1]


# -- counting -----------------------------------------------------------------------------------

def test_single_pair():
    rec = AcquisitionRecord.from_ticks([0], [5], NS, 1.0)
    ax = build_tau_axis((0, 10 * NS), NS)
    M = cross_correlate(rec, ax).raw_counts
    assert M.tolist() == [0, 0, 0, 0, 0, 1, 0, 0, 0, 0]


def test_brute_force_hand_example():
    rec = AcquisitionRecord.from_ticks([0, 1], [1], NS, 1.0)
    ax = build_tau_axis((0, 2 * NS), NS)
    assert brute_force_correlate(rec, ax).tolist() == [1, 1]


def test_brute_force_empty_channel():
    rec = AcquisitionRecord.from_ticks([0, 1], [], NS, 1.0)
    ax = build_tau_axis((0, 2 * NS), NS)
    assert brute_force_correlate(rec, ax).tolist() == [0, 0]


def test_random_500_event_record_matches_oracle(rng):
    a = np.sort(rng.integers(0, 20_000, 500))
    b = np.sort(rng.integers(0, 20_000, 480))
    rec = AcquisitionRecord.from_ticks(a, b, NS, 20_000 * NS)
    ax = build_tau_axis((-300 * NS, 300 * NS), 7 * NS)
    np.testing.assert_array_equal(cross_correlate(rec, ax).raw_counts, brute_force_correlate(rec, ax))


@pytest.mark.parametrize("method", ["edges", "pairs"])
@pytest.mark.parametrize("threads", [1, 3])
def test_methods_and_threads_agree(rng, method, threads):
    a = np.sort(rng.integers(0, 10**7, 40_000))
    b = np.sort(rng.integers(0, 10**7, 35_000))
    E = tick_edges(build_tau_axis((-2e-6, 2e-6), 3e-9, "log").edges, NS)
    ref = count_pairs(a, b, E, method="edges", threads=1)
    np.testing.assert_array_equal(count_pairs(a, b, E, method=method, threads=threads), ref)


def test_threads_env_variable_is_honoured(monkeypatch, rng):
    monkeypatch.setenv("PECS_THREADS", "2")
    a = np.sort(rng.integers(0, 10**7, 30_000))
    b = np.sort(rng.integers(0, 10**7, 30_000))
    E = np.arange(-100, 101, 10)
    np.testing.assert_array_equal(count_pairs(a, b, E), count_pairs(a, b, E, threads=1))


def test_unknown_method():
    with pytest.raises(DomainError):
        count_pairs([1], [2], np.array([0, 5]), method="magic")


ticks = st.lists(st.integers(0, 3000), min_size=1, max_size=120).map(sorted)


@given(ticks, ticks, st.integers(-400, 0), st.integers(1, 400), st.integers(1, 37),
       st.sampled_from(["lin", "log"]), st.sampled_from(["auto", "edges", "pairs"]))
def test_oracle_equivalence_property(a, b, lo, hi, res, scale, method):
    rec = AcquisitionRecord.from_ticks(a, b, NS, 4000 * NS)
    assume(res < hi - lo)
    try:
        ax = build_tau_axis((lo * NS, hi * NS), res * NS, scale, tick=NS)
    except QuantizationError:
        assume(False)
    out = cross_correlate(rec, ax, method=method)
    np.testing.assert_array_equal(out.raw_counts, brute_force_correlate(rec, ax))


@given(ticks)
def test_autocorrelation_symmetry(a):
    # identical channels: M(-tau) = M(+tau) once the zero-delay self pairs are removed
    rec = AcquisitionRecord.from_ticks(a, a, NS, 4000 * NS)
    # half-open bins [k, k+1) at one-tick resolution are single delays, so mirroring is exact
    ax = build_tau_axis((-50 * NS, 51 * NS), NS)
    M = cross_correlate(rec, ax).raw_counts
    k0 = 50
    np.testing.assert_array_equal(M[k0 + 1:k0 + 51], M[k0 - 1::-1][:50])


# -- normalisation and errors ------------------------------------------------------------------

def test_normalisation_reproduces_counts(small_record):
    ax = build_tau_axis((-2e-6, 2e-6), 20e-9)
    res = cross_correlate(small_record, ax)
    np.testing.assert_allclose(res.g2 * res.normalization, res.raw_counts, rtol=1e-12, atol=1e-9)
    assert np.all(res.g2 >= 0)
    assert np.all(res.err_plus >= res.err_minus) and np.all(res.err_minus >= 0)


def test_poisson_error_examples():
    p, m = poisson_errors(0, 1e5, 1e5, 1e-9, 100.0)
    assert p == pytest.approx(1 / 1000) and m == 0.0
    assert symmetric_poisson_error(100, 1e5, 1e5, 1e-9, 100.0) == pytest.approx(0.01)
    p, m = poisson_errors(1, 1e5, 1e5, 1e-9, 100.0)
    assert p * 1000 == pytest.approx(np.sqrt(1.25) + 0.5)
    assert m * 1000 == pytest.approx(np.sqrt(1.25) - 0.5)
    with pytest.raises(DomainError):
        poisson_errors(1, 0.0, 1e5, 1e-9, 1.0)


def test_uncorrelated_streams_average_to_one(rng):
    tick = 1e-12
    a = poisson_ticks(rng, 1e5, 2.0, tick)
    b = poisson_ticks(rng, 1e5, 2.0, tick)
    rec = AcquisitionRecord.from_ticks(a, b, tick, 2.0)
    res = cross_correlate(rec, build_tau_axis((-5e-6, 5e-6), 50e-9))
    assert abs(res.g2.mean() - 1) < 0.01
    z = (res.g2 - 1) / np.where(res.g2 > 1, res.err_minus, res.err_plus)
    assert np.mean(np.abs(z) < 3) > 0.99


def test_empty_channel_raises():
    rec = AcquisitionRecord.from_ticks([1, 2], [], NS, 1.0)
    with pytest.raises(NormalizationError):
        cross_correlate(rec, build_tau_axis((0, 10 * NS), NS))


def test_axis_beyond_T_is_clipped():
    rec = AcquisitionRecord.from_ticks([1, 2], [3], NS, 20 * NS)
    with pytest.warns(ClippedAxisWarning):
        res = cross_correlate(rec, build_tau_axis((-100 * NS, 100 * NS), NS))
    assert res.tau_edges[0] == pytest.approx(-20 * NS) and res.tau_edges[-1] == pytest.approx(20 * NS)


def test_csv_round_trip(tmp_path, small_record):
    res = cross_correlate(small_record, build_tau_axis((-1e-6, 1e-6), 10e-9, "log"))
    res.to_csv(tmp_path / "g2.csv")
    assert (tmp_path / "g2.csv").read_text().splitlines()[0] == "tau_s,g2,err_plus,err_minus,raw_counts"
    back = CorrelationResult.from_csv(tmp_path / "g2.csv")
    np.testing.assert_array_equal(back.g2, res.g2)
    np.testing.assert_array_equal(back.tau_edges, res.tau_edges)
    np.testing.assert_array_equal(back.raw_counts, res.raw_counts)
    assert (back.rate_a, back.rate_b, back.acquisition_time) == (res.rate_a, res.rate_b, res.acquisition_time)


# -- traces and partitions ---------------------------------------------------------------------

def blinking_record(rng, tick=1e-9):
    bright_a = poisson_ticks(rng, 20e3, 5.0, tick)
    bright_b = poisson_ticks(rng, 20e3, 5.0, tick)
    dim_a = poisson_ticks(rng, 1.5e3, 5.0, tick) + int(5.0 / tick)
    dim_b = poisson_ticks(rng, 1.5e3, 5.0, tick) + int(5.0 / tick)
    return AcquisitionRecord.from_ticks(np.concatenate([bright_a, dim_a]), np.concatenate([bright_b, dim_b]),
                                        tick, 10.0)


def test_trace_uniform_events():
    ticks = np.linspace(0, 0.99e9, 100).astype(np.int64)
    rec = AcquisitionRecord.from_ticks(ticks, ticks, NS, 1.0)
    tr = intensity_trace(rec, 0.1)
    assert len(tr.counts_a) == 10
    np.testing.assert_allclose(tr.rates_a, 100.0)
    assert tr.counts_a.sum() == 100 and tr.counts_b.sum() == 100


def test_trace_empty_record_and_long_bin():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        empty = AcquisitionRecord.from_ticks([], [], NS, 1.0)
    tr = intensity_trace(empty, 0.1)
    assert np.all(tr.total_rates == 0)
    rec = AcquisitionRecord.from_ticks([1], [2], NS, 1.0)
    with pytest.warns(PecsWarning):
        tr = intensity_trace(rec, 5.0)
    assert tr.counts_a.size == 1


def test_blinking_trace_is_bimodal(rng):
    rec = blinking_record(rng)
    tr = intensity_trace(rec, 0.01)
    rates = tr.total_rates
    near_bright = np.abs(rates - 40e3) < 8e3
    near_dim = np.abs(rates - 3e3) < 2.5e3
    assert near_bright.mean() > 0.45 and near_dim.mean() > 0.45
    assert np.median(rates[rates > 20e3]) == pytest.approx(40e3, rel=0.02)
    assert np.median(rates[rates < 20e3]) == pytest.approx(3e3, rel=0.1)
    bright, dim = partition_by_threshold(tr, [(32e3, np.inf), (0, 32e3)])
    assert bright.duration == pytest.approx(5.0, abs=0.1)
    assert dim.duration == pytest.approx(5.0, abs=0.1)


def test_partition_additivity(rng):
    rec = blinking_record(rng)
    tr = intensity_trace(rec, 0.01)
    parts = partition_by_threshold(tr, [(32e3, np.inf), (0, 32e3)])
    ax = build_tau_axis((-3e-6, 3e-6), 100e-9)
    full = cross_correlate(rec, ax).raw_counts
    split = sum(cross_correlate(rec, ax, partition=p).raw_counts for p in parts)
    np.testing.assert_array_equal(full, split)
    bright = cross_correlate(rec, ax, partition=parts[0])
    assert bright.acquisition_time == pytest.approx(parts[0].duration)
    assert bright.rate_a == pytest.approx(20e3, rel=0.05)


def test_partition_all_bright_and_empty(rng):
    tick = 1e-9
    a = poisson_ticks(rng, 40e3, 1.0, tick)
    rec = AcquisitionRecord.from_ticks(a, a, tick, 1.0)
    tr = intensity_trace(rec, 0.01)
    (all_bright,) = partition_by_threshold(tr, [(32e3, np.inf)])
    assert all_bright.duration == pytest.approx(1.0)
    (nothing,) = partition_by_threshold(tr, [(1e9, 2e9)])
    assert nothing.duration == 0
    with pytest.raises(NormalizationError):
        cross_correlate(rec, build_tau_axis((0, 1e-7), 1e-8), partition=nothing)


def test_partition_spec_errors():
    tr_rates = [(0, 10), (5, 20)]
    with pytest.raises(PartitionSpecError):
        partition_by_threshold(None, tr_rates)
    with pytest.raises(PartitionSpecError):
        PartitionSpec([[0, 2], [1, 3]])
    with pytest.raises(PartitionSpecError):
        PartitionSpec([[2, 1]])


def test_partition_by_t0_membership_only():
    # pair (A at 9 ns, B at 11 ns) straddles the boundary at 10 ns; kept because t0 is inside
    rec = AcquisitionRecord.from_ticks([9], [11, 16], NS, 20 * NS)
    part = PartitionSpec([[0, 10 * NS], [15 * NS, 20 * NS]])
    res = cross_correlate(rec, build_tau_axis((0, 5 * NS), NS), partition=part)
    assert res.raw_counts.tolist() == [0, 0, 1, 0, 0]
    assert res.acquisition_time == pytest.approx(15 * NS)
