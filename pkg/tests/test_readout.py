import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sccsim import readout
from sccsim.physics import DefectParameters, DomainError
from sccsim.readout import EmptyHistogramError, Histogram

P = DefectParameters.load()
hist_st = st.lists(st.integers(0, 40), min_size=1, max_size=200).map(Histogram.from_counts)


def test_fidelity_algebra():
    assert readout.fidelity_from_errors(0.0117, 0.0126) == pytest.approx(0.98785)
    assert readout.fidelity_from_errors(0.27, 0.11) == pytest.approx(0.81)


def test_classify_convention():
    assert readout.classify(4, 4) == readout.BRIGHT
    assert readout.classify(3, 4) == readout.DARK


def test_histogram_roundtrips():
    h = Histogram.from_counts([0, 0, 3, 5, 5, 5])
    assert h.bin_counts == {0: 2, 3: 1, 5: 3}
    assert Histogram.from_csv(h.to_csv()) == h
    assert Histogram.from_dict(h.bin_counts) == h
    assert h.mean() == pytest.approx(18 / 6) and h.at_least(4) == 3
    assert h.scaled(3).total_shots == 18


def test_empty_histogram():
    h = Histogram.from_counts([])
    assert h.total_shots == 0
    with pytest.raises(EmptyHistogramError):
        h.mean()
    with pytest.raises(EmptyHistogramError):
        readout.fidelity(h, Histogram.from_counts([1]), 1)


def test_perfect_separation():
    b = Histogram.from_counts([10] * 50)
    d = Histogram.from_counts([0] * 50)
    cut, rep = readout.optimal_cutoff(b, d)
    assert rep.fidelity == 1.0 and cut == 1  # smallest maximizer wins the tie


@settings(max_examples=50, deadline=None)
@given(hist_st, hist_st, st.integers(0, 45))
def test_fidelity_bounds_and_interval(b, d, cut):
    rep = readout.fidelity(b, d, cut, seed=1)
    assert 0.0 <= rep.fidelity <= 1.0
    assert rep.ci_low <= rep.fidelity <= rep.ci_high


@settings(max_examples=50, deadline=None)
@given(hist_st, hist_st)
def test_optimum_dominates_scan(b, d):
    cuts, f = readout.fidelity_scan(b, d)
    cut, rep = readout.optimal_cutoff(b, d)
    assert rep.fidelity == pytest.approx(f.max())
    assert rep.fidelity >= 0.5  # cutoff 0 already gives one half


@settings(max_examples=30, deadline=None)
@given(hist_st, hist_st, st.integers(1, 5))
def test_scaling_invariance(b, d, k):
    assert readout.optimal_cutoff(b.scaled(k), d.scaled(k))[1].fidelity == pytest.approx(
        readout.optimal_cutoff(b, d)[1].fidelity)


def test_bootstrap_width_shrinks_with_shots():
    w = [np.subtract(*readout.bootstrap_interval(0.1, 0.2, n, n, seed=0)[::-1]) for n in (100, 10000)]
    assert w[1] < w[0] / 5


def test_photons_per_shot_peak_matches_numeric():
    p_star, n_star = readout.photons_per_shot_peak(P)
    p_num, n_num = readout.photons_per_shot_peak_numeric(P)
    assert n_num == pytest.approx(n_star, rel=1e-6)
    assert p_num == pytest.approx(p_star, rel=1e-3)
    assert abs(n_star - 1529) <= 117


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-9, 1e-3))
def test_quadrature_matches_closed_form(p):
    assert readout.photons_per_shot_quadrature(P, p) == pytest.approx(readout.photons_per_shot(P, p), rel=1e-8)


def test_photons_per_shot_domain():
    with pytest.raises(DomainError):
        readout.photons_per_shot(P, 0.0)
    no_ion = P.replace(resonant_ion_slope=0.0)
    assert readout.photons_per_shot_peak(no_ion)[0] == np.inf
