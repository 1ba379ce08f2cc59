import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sccsim import protocol
from sccsim.dynamics import Segment, Transfer
from sccsim.physics import DefectParameters, DomainError, LevelSystem, ModelError
from sccsim.protocol import CompileError, Pulse, PulseGroup, PulseSequence

P = DefectParameters.load()


def small_spec(**kw):
    spec = protocol.experiment_from_preset("fig4a")
    d = {**vars(spec), "grid": (1e-6, 2e-6), "shots": 300, **kw}
    return protocol.ExperimentSpec(**d)


def test_presets_cover_all_figures():
    names = protocol.preset_names()
    for fid in ("fig2a", "fig2b", "fig2c", "fig3a", "fig3b", "fig3c", "fig3d",
                "fig4a", "fig4b", "fig4c", "fig4d", "fig5a", "fig5b", "fig5c"):
        assert fid in names
    with pytest.raises(KeyError, match="valid presets"):
        protocol.load_preset("fig9z")


def test_sequence_roundtrip_and_paths():
    seq = protocol.experiment_from_preset("fig4a").sequence
    assert PulseSequence.from_list(seq.to_list()) == seq
    assert seq.get_value("scc.ionize1151.power") == 0.071
    s2 = seq.with_value("scc.duration", 2e-6)
    assert s2.group("scc").duration == 2e-6 and seq.group("scc").duration == 1.39e-6
    with pytest.raises(KeyError):
        seq.with_value("scc.nonsense", 1.0)
    with pytest.raises(KeyError):
        seq.group("missing")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1e-3), min_size=1, max_size=6))
def test_duration_adds_up(durs):
    seq = PulseSequence(tuple(PulseGroup(f"g{i}", (Pulse("wait"),), d) for i, d in enumerate(durs)))
    assert seq.duration == pytest.approx(sum(durs))
    assert len(protocol.compile(seq, P)) == len(durs)


def test_pulse_validation():
    with pytest.raises(ModelError):
        Pulse("laser_sword", 1.0)
    with pytest.raises(DomainError):
        Pulse("resonant_ex")
    with pytest.raises(ModelError):
        Pulse("mw_pi", power=1.0)
    with pytest.raises(ModelError):
        PulseSequence((PulseGroup("a"), PulseGroup("a")))
    with pytest.raises(ModelError):
        PulseSequence((PulseGroup("a", readout=True), PulseGroup("b", readout=True)))


def test_compile_rules():
    mixed = PulseSequence((PulseGroup("x", (Pulse("mw_pi"), Pulse("resonant_ex", 1e-6)), 1e-6),))
    with pytest.raises(CompileError):
        protocol.compile(mixed, P)
    twice = PulseSequence((PulseGroup("x", (Pulse("resonant_ex", 1e-6), Pulse("resonant_ex", 2e-6)), 1e-6),))
    with pytest.raises(CompileError):
        protocol.compile(twice, P)
    sched = protocol.compile(protocol.experiment_from_preset("fig4a").sequence_at(1e-6, 1), P)
    kinds = [type(s).__name__ for s in sched]
    assert kinds == ["Segment", "Transfer", "Transfer", "Segment", "Segment"]
    assert [s.detect for s in sched if isinstance(s, Segment)] == [False, False, True]


def test_spin_init_fidelity_transfer():
    t = protocol.spin_init_transfer(LevelSystem(), 0.9).matrix
    assert t[0, 2] == pytest.approx(0.9) and t[2, 0] == pytest.approx(0.1) and t[3, 3] == 1
    with pytest.raises(DomainError):
        protocol.spin_init_transfer(LevelSystem(), 1.5)


def test_spec_validation():
    with pytest.raises(ModelError):
        small_spec(grid=(2e-6, 1e-6))
    with pytest.raises(KeyError):
        small_spec(sweep="nowhere.duration")
    with pytest.raises(ModelError):
        small_spec(contrast_mode="vibes")
    spec = small_spec()
    assert protocol.ExperimentSpec.from_dict(spec.to_dict()) == spec


def test_run_is_deterministic_and_worker_free():
    spec = small_spec()
    a = protocol.run(spec, P)
    b = protocol.run(spec, P, workers=3)
    assert all(x == y for x, y in zip(a.hist_ms0 + a.hist_ms1, b.hist_ms0 + b.hist_ms1))
    assert a.reference == b.reference


def test_mc_contrast_tracks_ode():
    spec = small_spec(shots=3000)
    mc = protocol.contrast(protocol.run(spec, P)).contrast
    ode = protocol.expected_contrast(spec, P).contrast
    assert np.all(np.abs(mc - ode) < 5 * np.sqrt(0.5 / spec.shots))


def test_fraction_mode_contrast():
    res = protocol.run(small_spec(), P)
    c = protocol.contrast(res, mode="fraction", cutoff=2)
    assert np.all((c.contrast >= -1) & (c.contrast <= 1))


def test_zero_scc_gives_no_contrast():
    spec = small_spec(grid=(0.0, 1e-6))
    # only the spin-dependent ionization during the readout itself remains
    assert protocol.expected_contrast(spec, P).contrast[0] == pytest.approx(0.0, abs=1e-5)


def test_asymptotic_limit_is_reached():
    spec = protocol.experiment_from_preset("fig4d")
    scc = spec.sequence.group("scc")
    limit = protocol.asymptotic_ion_contrast(P, protocol.lasers_for(scc), scc.duration)
    fast = P.replace(excited_ion_slope=P.excited_ion_slope * 1e4,
                     stim_emission_slope=P.stim_emission_slope * 1e4)
    spec71 = protocol.ExperimentSpec(**{**vars(spec), "grid": (0.071,)})
    assert protocol.ionized_fraction_difference(spec71, fast)[0] == pytest.approx(limit, abs=2e-3)
    with pytest.raises(DomainError):
        protocol.asymptotic_ion_contrast(P.replace(excited_ion_slope=0, stim_emission_slope=0),
                                         protocol.lasers_for(scc), scc.duration)


def test_predicted_fidelity_tracks_mc():
    spec = small_spec(grid=(1.39e-6,), shots=4000)
    res = protocol.run(spec, P)
    cut, f_pred = protocol.predicted_fidelity(spec, 1.39e-6, P)
    rep = protocol.scc_fidelity_curve(spec, P, result=res)[1][0]
    assert abs(rep.fidelity - f_pred) < 0.02 and cut == rep.cutoff


def test_spin_agnostic_rate_fit_matches_eigenvalue():
    pts = protocol.spin_agnostic_ionization_rate_curve([0.005, 0.02, 0.071], P, method="ode")
    for q in pts:
        assert q.rate == pytest.approx(q.oracle, rel=0.01)
    mc = protocol.spin_agnostic_ionization_rate_curve([0.071], P, method="mc", shots=3000, seed=1)[0]
    assert abs(mc.rate - mc.oracle) < 4 * mc.stderr + 0.02 * mc.oracle
    with pytest.raises(ModelError):
        protocol.spin_agnostic_ionization_rate_curve([0.01], P, method="psychic")


def test_spin_agnostic_rate_without_1151():
    from sccsim.physics import resonant_ionization_rate
    q = protocol.spin_agnostic_ionization_rate_curve([0.0], P)[0]
    # spin flips out of E0 shave about 8% off the bare two-photon law at 15 uW
    assert q.rate == pytest.approx(resonant_ionization_rate(P, 15e-6), rel=0.1)


def test_spin_agnostic_curve_saturates():
    r = [q.rate for q in protocol.spin_agnostic_ionization_rate_curve([0.01, 0.03, 0.05, 0.07, 0.09], P)]
    inc = np.diff(r)
    assert np.all(inc > 0) and inc[-1] < inc[0] / 2


def test_double_pi_is_identity():
    spec = small_spec()
    seq = spec.sequence_at(1e-6, 1).insert_after("pi", PulseGroup("pi2", (Pulse("mw_pi"),)))
    p0 = np.eye(4)[0]
    from sccsim.dynamics import propagate_schedule
    a = propagate_schedule(protocol.compile(seq, P), p0)
    b = propagate_schedule(protocol.compile(spec.sequence_at(1e-6, 0), P), p0)
    assert np.allclose(a, b, atol=1e-12)


def test_ion_population_monotone_in_duration():
    spec = small_spec(grid=tuple(np.linspace(0.1e-6, 5e-6, 12)))
    for prep in (0, 1):
        ion = [protocol.populations_after(spec, v, prep, params=P)[3] for v in spec.grid]
        assert np.all(np.diff(ion) >= -1e-12)


def test_contrast_vs_power_requires_power_sweep():
    with pytest.raises(ModelError):
        protocol.contrast_vs_ionization_power(small_spec(), P)
