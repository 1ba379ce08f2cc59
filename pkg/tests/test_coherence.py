import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sccsim import coherence as coh

WHITE = coh.NoiseSpectrum.white(3.0)
SLOW = coh.NoiseSpectrum.lorentzian(2.2e8, 10.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 64), st.floats(0.01, 500.0))
def test_cpmg_closed_form_matches_generic(n, z):
    fr = (np.arange(n) + 0.5) / n if n else np.zeros(0)
    assert coh.cpmg_filter(np.array([z]), n)[0] == pytest.approx(coh.generic_filter(z, fr)[0], rel=1e-7, abs=1e-9)


def test_filter_poles_are_finite():
    n = 4
    z = np.array([2 * np.pi * n])  # cos(z / 2n) = -1 is fine; the pole is at z = pi n
    z = np.append(z, np.pi * n)
    f = coh.cpmg_filter(z, n)
    assert np.all(np.isfinite(f))


@pytest.mark.parametrize("n", [0, 1, 8, 64])
def test_white_noise_chi_is_linear(n):
    assert coh.chi(WHITE, 0.2, n) == pytest.approx(3.0 * 0.2, rel=2e-3)


def test_chi_zero_spectrum():
    assert coh.chi(coh.NoiseSpectrum.white(0.0), 1.0, 4) == 0.0


def test_lorentzian_slow_bath_two_thirds():
    t2 = [coh.t2_from_spectrum(SLOW, n, 0.1) for n in (16, 64, 256)]
    psi = coh.fit_power_law([16, 64, 256], t2).psi
    assert psi == pytest.approx(2 / 3, abs=0.01)


def test_sequences():
    s = coh.generate_sequence("XY8", 16, 1e-3)
    assert s.n_pulses == 16 and s.phases[:8] == coh.XY8_PHASES
    assert np.allclose(s.fractions, (np.arange(16) + 0.5) / 16)
    q = coh.larmor_spacing_quantum(18.0)
    s2 = coh.generate_sequence("CPMG", 4, 1e-3, spacing_quantum=q)
    assert (s2.spacing / q) == pytest.approx(round(s2.spacing / q))
    assert coh.generate_sequence("CPMG", 0, 1.0).n_pulses == 0
    with pytest.raises(ValueError):
        coh.generate_sequence("UDD", 4, 1.0)
    with pytest.raises(ValueError):
        coh.generate_sequence("CPMG", 4, 1e-9, spacing_quantum=1.0)
    with pytest.warns(UserWarning):
        coh.generate_sequence("CPMG", coh.MAX_PULSES + 1, 1.0)


def test_envelope_monotone_under_slow_bath():
    seq = coh.generate_sequence("CPMG", 16, 0.1)
    c = coh.coherence_envelope(seq, SLOW, np.geomspace(0.01, 1.0, 8))
    assert np.all(np.diff(c.values) <= 1e-12) and c.values[0] <= 1


def test_spectrum_validation():
    with pytest.raises(ValueError):
        coh.NoiseSpectrum.lorentzian(1.0, 0.0)
    with pytest.raises(ValueError):
        coh.NoiseSpectrum("pink")
    both = coh.NoiseSpectrum.sum(WHITE, SLOW)
    assert both(np.array([1.0]))[0] == pytest.approx(WHITE(1.0) + SLOW(1.0))
    pl = coh.NoiseSpectrum.power_law(1.0, 2.0, 1e-2, 1e3)
    assert pl.tail_integral(10.0) > 0


def test_stretched_fit_recovers_truth():
    t = np.linspace(0.2, 12, 40)
    y = coh.stretched_exp(t, 1.0, 5.3, 1.5) + 0.01 * np.random.default_rng(0).standard_normal(40)
    fit = coh.fit_stretched(t, y, np.full(40, 0.01))
    assert abs(fit.t2 - 5.3) < 3 * fit.t2_se and abs(fit.stretch - 1.5) < 3 * fit.stretch_se


def test_degenerate_fit():
    with pytest.raises(coh.DegenerateDataError):
        coh.fit_stretched(np.linspace(1, 2, 10), np.ones(10))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 1.2), st.floats(0.3, 0.9))
def test_power_law_exact(psi_low, psi_high):
    n = 2.0 ** np.arange(12)
    rng = np.random.default_rng(0)
    _, t2, _ = coh.synthetic_scaling_data(rng, n, (psi_low, psi_high), 64, (2048, 1.0), noise=0.0)
    fit = coh.fit_scaling(n, t2)
    assert fit.psi_low == pytest.approx(psi_low, abs=1e-6)
    assert fit.psi_high == pytest.approx(psi_high, abs=1e-6)
    # the knee point lies on both lines, so either side may claim it
    assert fit.breakpoint in (64, 128) or abs(psi_low - psi_high) < 1e-3


def test_single_regime_flag():
    n = 2.0 ** np.arange(12)
    t2 = 0.01 * n ** 0.8
    assert coh.fit_scaling(n, t2).single_regime
    with pytest.raises(ValueError):
        coh.fit_scaling(n[:5], t2[:5])


@settings(max_examples=25, deadline=None)
@given(st.floats(50.0, 1e4), st.floats(0.005, 0.05))
def test_t1_bound_monotone_in_errors(t1, err):
    t = np.array(coh.PAPER_LIKE_DELAYS)
    y = np.exp(-t / t1)  # mean data, so the true T1 is never rejected
    e = np.full(len(t), err)
    assert coh.t1_lower_bound(t, y, 0.5 * e).bound >= coh.t1_lower_bound(t, y, e).bound


def test_t1_bound_rejects_bad_model():
    t = np.array(coh.PAPER_LIKE_DELAYS)
    y = np.where(t < 3, 1.0, 3.0)
    with pytest.raises(coh.BoundRejectedError) as exc:
        coh.t1_lower_bound(t, y, np.full(len(t), 0.01))
    assert exc.value.trace is not None and len(exc.value.trace.chi2) == 400


def test_free_offset_weakens_bound():
    t = np.array(coh.PAPER_LIKE_DELAYS)
    y, e = np.ones_like(t), np.full(len(t), 0.025)
    assert coh.t1_lower_bound(t, y, e, offset=None).bound <= coh.t1_lower_bound(t, y, e).bound


def test_reference_normalization():
    s, r = np.array([0.6, 0.5]), np.array([0.2, 0.5])
    assert np.allclose(coh.normalize_by_reference(s, r), [0.5, 0.0])
    assert np.array_equal(coh.normalize_by_reference(s, r, enabled=False), s)


def test_csv_roundtrips():
    t, y, s = np.array([0.1, 0.2]), np.array([0.9, 0.5]), np.array([0.01, 0.02])
    assert all(np.array_equal(a, b) for a, b in zip(coh.read_coherence_csv(coh.write_coherence_csv(t, y, s)), (t, y, s)))
    n = np.array([1, 2, 4])
    back = coh.read_scaling_csv(coh.write_scaling_csv(n, y[[0, 1, 1]], s[[0, 1, 1]]))
    assert np.array_equal(back[0], n)
