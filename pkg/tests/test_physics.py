import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sccsim.physics import (CORE_STATES, DefectParameters, DomainError, LaserConfig, LevelSystem,
                            ModelError, RateMatrix, build_rate_matrix, leak_rate,
                            nir_ionization_rate, repump_rate, resonant_ionization_rate,
                            saturation, stimulated_emission_rate)

P = DefectParameters.load()
powers = st.floats(0.0, 0.5, allow_nan=False)
small = st.floats(0.0, 1e-3, allow_nan=False)


def test_shipped_file_matches_dataclass_defaults():
    assert DefectParameters.load() == DefectParameters()


def test_every_shipped_value_has_an_origin():
    from importlib import resources
    data = json.loads(resources.files("sccsim").joinpath("data/divacancy_defaults.json").read_text())
    for k, v in data.items():
        if not k.startswith("_"):
            assert v["origin"], k


def test_rate_law_slopes():
    assert repump_rate(P, 2e-6) == pytest.approx(2 * 993)
    assert nir_ionization_rate(P, 0.071) == pytest.approx(0.071 * 95.7e3)
    assert stimulated_emission_rate(P, 0.071) == pytest.approx(0.071 * 13.3e6)
    assert resonant_ionization_rate(P, 1e-12) == pytest.approx(10.6e6 * 1e-24 / 1.6e-6, rel=1e-5)


def test_cross_section_ratio_and_energetics():
    assert P.cross_section_ratio == pytest.approx(100e6 / 13.3e6)
    assert P.replace(stim_emission_slope=0).cross_section_ratio == np.inf
    assert P.energetics_allowed()
    assert not P.replace(charge_transition_energy=3.0).energetics_allowed()


@pytest.mark.parametrize("field", ["tau_charge", "resonant_sat_power", "spin_flip_lifetime_sat"])
def test_positive_fields(field):
    with pytest.raises(DomainError):
        P.replace(**{field: 0.0})


def test_negative_power_rejected():
    with pytest.raises(DomainError):
        saturation(P, -1e-6)
    with pytest.raises(DomainError):
        LaserConfig(p_ionization_1151=-0.1)


def test_unknown_parameter():
    with pytest.raises(ModelError):
        DefectParameters.from_dict({"warp_factor": 9})


def test_level_system_validation():
    with pytest.raises(ModelError):
        LevelSystem(("G0", "G0", "E0"))
    with pytest.raises(ModelError):
        LevelSystem(("G0", "E0"), emitter="X")
    with pytest.raises(ModelError):
        build_rate_matrix(LevelSystem(("G0", "E0")), P, LaserConfig())


def test_leak_gating():
    assert leak_rate(P, 15e-6, 0.0) == 0.0
    assert leak_rate(P, 15e-6, 0.071) > nir_ionization_rate(P, 0.071)


@settings(max_examples=60, deadline=None)
@given(small, small, powers, small, st.booleans())
def test_generator_columns_sum_to_zero(ex, e12, ir, rp, mw):
    m = build_rate_matrix(LevelSystem(), P, LaserConfig(ex, e12, ir, rp, mw))
    a = m.entries
    assert np.allclose(a.sum(axis=0), 0.0, atol=1e-9 * max(1.0, np.abs(a).max()))
    assert np.all(a - np.diag(np.diag(a)) >= 0)
    assert np.all(m.emission >= 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-9, 1e-3), st.floats(1.01, 10.0))
def test_rates_monotone_in_power(p, k):
    for f in (saturation, resonant_ionization_rate, repump_rate, nir_ionization_rate):
        assert f(P, p * k) >= f(P, p)


def test_dark_generator_only_charge_relaxation():
    m = build_rate_matrix(LevelSystem(), P, LaserConfig())
    assert LaserConfig().dark
    assert m.rate("G0", "ION") == pytest.approx(1 / 6.9)
    assert m.rate("G0", "E0") == 0 and np.all(m.emission == 0)


def test_rate_matrix_validation():
    with pytest.raises(ModelError):
        RateMatrix(np.array([[0, -1], [1, 0]]), ("a", "b"))
    with pytest.raises(ModelError):
        RateMatrix(np.zeros((2, 3)), ("a", "b"))
    m = RateMatrix.from_rates(("a", "b"), {("a", "b"): 2.0, ("b", "a"): 1.0})
    assert m.rate("a", "b") == 2.0 and list(m.exit_rates()) == [2.0, 1.0]


def test_extra_states_allowed():
    sys = LevelSystem(CORE_STATES + ("E1",))
    m = build_rate_matrix(sys, P, LaserConfig(15e-6))
    assert m.dim == 5 and m.rate("E1", "G0") == 0
