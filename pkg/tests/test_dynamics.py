import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sccsim.dynamics import (Segment, Transfer, as_population, basis_population, branching_limit,
                             charge_survival, expected_counts, integrated_occupancy, propagate,
                             propagate_schedule, slowest_rate, steady_state)
from sccsim.physics import (DefectParameters, DomainError, LaserConfig, LevelSystem, ModelError,
                            RateMatrix, build_rate_matrix)

P = DefectParameters.load()
SYS = LevelSystem()
P0 = basis_population(SYS.states, "G0")


def scc_matrix(p_ir=0.071):
    return build_rate_matrix(SYS, P, LaserConfig(p_resonant_ex=15e-6, p_ionization_1151=p_ir))


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 5e-6), st.floats(0, 5e-6))
def test_semigroup(t1, t2):
    m = scc_matrix()
    a = propagate(m, propagate(m, P0, t1), t2)
    b = propagate(m, P0, t1 + t2)
    assert np.allclose(a, b, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1e-3), st.floats(0, 0.2), st.floats(0, 1e-3))
def test_probability_conserved(t, ir, ex):
    m = build_rate_matrix(SYS, P, LaserConfig(p_resonant_ex=ex, p_ionization_1151=ir))
    p = propagate(m, P0, t)
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)


def test_dark_decay_is_charge_survival():
    m = build_rate_matrix(SYS, P, LaserConfig())
    for t in (0.5, 3.0, 10.0):
        assert propagate(m, P0, t)[0] == pytest.approx(charge_survival(P, t), rel=1e-10)


def test_two_state_analytic():
    m = RateMatrix.from_rates(("a", "b"), {("a", "b"): 3.0, ("b", "a"): 1.0})
    t = 0.7
    pa = 0.25 + 0.75 * np.exp(-4 * t)
    assert propagate(m, [1.0, 0.0], t)[0] == pytest.approx(pa, rel=1e-12)
    occ = integrated_occupancy(m, np.array([1.0, 0.0]), t)
    assert occ[0] == pytest.approx(0.25 * t + 0.75 * (1 - np.exp(-4 * t)) / 4, rel=1e-12)


def test_radau_path_for_large_systems():
    n = 20
    rates = {(f"s{i}", f"s{(i + 1) % n}"): 1.0 + i for i in range(n)}
    m = RateMatrix.from_rates([f"s{i}" for i in range(n)], rates)
    p0 = np.eye(n)[0]
    from scipy.linalg import expm
    assert np.allclose(propagate(m, p0, 0.3), expm(m.entries * 0.3) @ p0, atol=1e-8)


def test_steady_state_and_degenerate():
    m = build_rate_matrix(SYS, P, LaserConfig(p_repump_705=1e-4))
    ss = steady_state(m)
    assert not ss.degenerate
    assert np.allclose(m.entries @ ss.populations, 0, atol=1e-8)
    two = RateMatrix.from_rates(("a", "b", "c"), {("a", "b"): 1.0})
    with pytest.raises(ModelError):
        steady_state(two)
    with pytest.warns(UserWarning):
        res = steady_state(two, np.array([0.5, 0.0, 0.5]))
    assert res.degenerate and res.populations[2] == pytest.approx(0.5)


def test_branching_limit():
    assert branching_limit(3.0, 1.0) == 0.75
    with pytest.raises(DomainError):
        branching_limit(0.0, 0.0)


def test_expected_counts_background_only():
    m = build_rate_matrix(SYS, P, LaserConfig())
    assert expected_counts([Segment(m, 0.02)], P0, 65.0) == pytest.approx(1.3)
    assert expected_counts([Segment(m, 0.02, detect=False)], P0, 65.0) == 0.0


def test_transfer_validation_and_schedule():
    with pytest.raises(ModelError):
        Transfer(np.array([[0.5, 0], [0.4, 1]]))
    m = build_rate_matrix(SYS, P, LaserConfig())
    swap = np.eye(4)[:, [2, 1, 0, 3]]
    p = propagate_schedule([Transfer(swap), Segment(m, 0.0)], P0)
    assert p[2] == 1.0


def test_bad_inputs():
    m = scc_matrix()
    with pytest.raises(DomainError):
        propagate(m, P0, -1.0)
    with pytest.raises(ModelError):
        as_population([0.5, 0.6, 0, 0])
    with pytest.raises(DomainError):
        Segment(m, -1e-6)


def test_slowest_rate_dark():
    m = build_rate_matrix(SYS, P, LaserConfig())
    assert slowest_rate(m) == pytest.approx(1 / 6.9)
