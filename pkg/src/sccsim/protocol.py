"""Pulse sequences, their compilation to rate schedules, and SCC sweep experiments."""
from dataclasses import dataclass, replace
from importlib import resources
import json
import warnings

import numpy as np
from scipy.optimize import curve_fit
from scipy.stats import poisson

from . import readout
from .dynamics import (Segment, Transfer, basis_population, expected_counts, propagate,
                       propagate_schedule)
from .montecarlo import occupancy, simulate_counts
from .physics import (DefectParameters, DomainError, LaserConfig, LevelSystem, ModelError,
                      build_rate_matrix)
from .units import parse_quantity

LASER_FIELDS = {
    "repump705": "p_repump_705",
    "resonant_ex": "p_resonant_ex",
    "resonant_e12": "p_resonant_e12",
    "ionize1151": "p_ionization_1151",
}
MW_KINDS = ("mw_pi", "mw_pi_half")
PULSE_KINDS = tuple(LASER_FIELDS) + MW_KINDS + ("wait",)


class CompileError(ModelError):
    pass


@dataclass(frozen=True)
class Pulse:
    """One control element. ``duration`` is only used for MW dead-time bookkeeping;
    laser pulses inherit the duration of their group."""

    kind: str
    power: float = None
    phase: float = None
    duration: float = 0.0

    def __post_init__(self):
        if self.kind not in PULSE_KINDS:
            raise ModelError(f"unknown pulse kind {self.kind!r}; expected one of {PULSE_KINDS}")
        if not self.duration >= 0:
            raise DomainError(f"pulse duration must be >= 0, got {self.duration}")
        if self.kind in LASER_FIELDS:
            if self.phase is not None:
                raise ModelError(f"laser pulse {self.kind} cannot carry a phase")
            if self.power is None or not self.power >= 0:
                raise DomainError(f"laser pulse {self.kind} needs a power >= 0, got {self.power}")
        else:
            if self.power is not None:
                raise ModelError(f"{self.kind} pulse cannot carry a power")
            if self.kind == "wait" and self.phase is not None:
                raise ModelError("wait pulse cannot carry a phase")


@dataclass(frozen=True)
class PulseGroup:
    """Pulses that are on simultaneously for ``duration``.

    ``readout`` marks the only detecting window; ``spin_init`` marks an
    optical-pumping group compiled as a fixed-fidelity preparation.
    """

    label: str
    pulses: tuple = ()
    duration: float = 0.0
    readout: bool = False
    spin_init: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if not self.duration >= 0:
            raise DomainError(f"group {self.label!r}: duration must be >= 0, got {self.duration}")

    @property
    def is_mw(self):
        return any(p.kind in MW_KINDS for p in self.pulses)

    def pulse(self, kind):
        for p in self.pulses:
            if p.kind == kind:
                return p
        raise KeyError(f"group {self.label!r} has no {kind} pulse")

    def elapsed(self):
        if self.is_mw:
            return max(p.duration for p in self.pulses)
        return self.duration


@dataclass(frozen=True)
class PulseSequence:
    groups: tuple = ()

    def __post_init__(self):
        groups = tuple(self.groups)
        object.__setattr__(self, "groups", groups)
        labels = [g.label for g in groups]
        if len(set(labels)) != len(labels):
            raise ModelError(f"duplicate group labels in {labels}")
        if sum(g.readout for g in groups) > 1:
            raise ModelError("at most one readout group per sequence")

    @property
    def duration(self):
        """Wall-clock length including MW dead time."""
        return sum(g.elapsed() for g in self.groups)

    def group(self, label):
        for g in self.groups:
            if g.label == label:
                return g
        raise KeyError(f"no group {label!r}; have {[g.label for g in self.groups]}")

    def _swap(self, label, new):
        return PulseSequence(tuple(new if g.label == label else g for g in self.groups))

    def get_value(self, path):
        label, *rest = path.split(".")
        g = self.group(label)
        if rest == ["duration"]:
            return g.duration
        if len(rest) == 2:
            return getattr(g.pulse(rest[0]), rest[1])
        raise KeyError(f"bad sweep path {path!r}")

    def with_value(self, path, value):
        """Copy with one field replaced; ``path`` is ``group.duration`` or ``group.kind.field``."""
        label, *rest = path.split(".")
        g = self.group(label)
        if rest == ["duration"]:
            return self._swap(label, replace(g, duration=float(value)))
        if len(rest) == 2 and rest[1] in ("power", "phase", "duration"):
            p = g.pulse(rest[0])
            pulses = tuple(replace(q, **{rest[1]: float(value)}) if q is p else q for q in g.pulses)
            return self._swap(label, replace(g, pulses=pulses))
        raise KeyError(f"bad sweep path {path!r}")

    def insert_after(self, label, group):
        out = []
        for g in self.groups:
            out.append(g)
            if g.label == label:
                out.append(group)
        if len(out) == len(self.groups):
            raise KeyError(f"no group {label!r}")
        return PulseSequence(tuple(out))

    def to_list(self):
        out = []
        for g in self.groups:
            d = {"label": g.label, "duration": g.duration,
                 "pulses": [{k: v for k, v in vars(p).items() if v is not None and not
                             (k == "duration" and v == 0.0)} for p in g.pulses]}
            if g.readout:
                d["readout"] = True
            if g.spin_init:
                d["spin_init"] = True
            out.append(d)
        return out

    @classmethod
    def from_list(cls, items, parse=parse_quantity):
        groups = []
        for i, d in enumerate(items):
            extra = set(d) - {"label", "duration", "pulses", "readout", "spin_init"}
            if extra:
                raise ModelError(f"sequence[{i}]: unknown keys {sorted(extra)}")
            pulses = []
            for j, p in enumerate(d.get("pulses", [])):
                extra = set(p) - {"kind", "power", "phase", "duration"}
                if extra:
                    raise ModelError(f"sequence[{i}].pulses[{j}]: unknown keys {sorted(extra)}")
                pulses.append(Pulse(
                    p["kind"],
                    power=None if p.get("power") is None else parse(p["power"], "power"),
                    phase=p.get("phase"),
                    duration=parse(p.get("duration", 0.0), "time")))
            groups.append(PulseGroup(d.get("label", f"g{i}"), tuple(pulses),
                                     parse(d.get("duration", 0.0), "time"),
                                     bool(d.get("readout", False)), bool(d.get("spin_init", False))))
        return cls(tuple(groups))


# ---------------------------------------------------------------- compilation


def pi_transfer(system):
    """Perfect G0 <-> G1 population swap."""
    t = np.eye(system.dim)
    i, j = system.index("G0"), system.index("G1")
    t[[i, j], :] = t[[j, i], :]
    return Transfer(t, "mw_pi")


def half_pi_transfer(system):
    """Population effect of a pi/2 pulse: the two spin levels are mixed evenly."""
    t = np.eye(system.dim)
    i, j = system.index("G0"), system.index("G1")
    t[np.ix_([i, j], [i, j])] = 0.5
    return Transfer(t, "mw_pi_half")


def spin_init_transfer(system, fidelity=1.0):
    """Every neutral state ends in G0 with probability ``fidelity``, otherwise G1."""
    if not 0.0 <= fidelity <= 1.0:
        raise DomainError(f"spin initialization fidelity must be in [0, 1], got {fidelity}")
    t = np.zeros((system.dim, system.dim))
    ion = system.index("ION")
    for k in range(system.dim):
        if k == ion:
            t[ion, k] = 1.0
        else:
            t[system.index("G0"), k] += fidelity
            t[system.index("G1"), k] += 1.0 - fidelity
    return Transfer(t, "spin_init")


def lasers_for(group):
    powers = {}
    for p in group.pulses:
        if p.kind == "wait":
            continue
        name = LASER_FIELDS[p.kind]
        if name in powers:
            raise CompileError(f"group {group.label!r} defines {p.kind} twice")
        powers[name] = p.power
    return LaserConfig(**powers)


def compile(seq, params, system=None, spin_init_fidelity=1.0):  # noqa: A001 - public name
    """Lower a pulse sequence to a schedule of ``Segment`` and ``Transfer`` items."""
    system = system or LevelSystem()
    schedule = []
    for g in seq.groups:
        if g.is_mw:
            if len(g.pulses) != 1:
                raise CompileError(f"group {g.label!r}: MW pulses cannot overlap other pulses")
            kind = g.pulses[0].kind
            schedule.append(pi_transfer(system) if kind == "mw_pi" else half_pi_transfer(system))
            continue
        if g.spin_init:
            schedule.append(spin_init_transfer(system, spin_init_fidelity))
            continue
        m = build_rate_matrix(system, params, lasers_for(g))
        schedule.append(Segment(m, g.duration, detect=g.readout, label=g.label))
    return schedule


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentSpec:
    """A sweep of one sequence field, simulated for both spin preparations.

    The m_s=-1 preparation inserts an ideal pi pulse after ``pi_after``.
    ``sweep`` is a path understood by ``PulseSequence.with_value``.
    """

    sequence: PulseSequence
    sweep: str
    grid: tuple
    shots: int = 1000
    seed: int = 0
    scc_group: str = "scc"
    pi_after: str = "spin_init"
    spin_init_fidelity: float = 1.0
    contrast_mode: str = "reference"
    cutoff: int = None
    start: str = "G0"
    params: str = None
    name: str = ""

    def __post_init__(self):
        grid = tuple(float(x) for x in np.atleast_1d(self.grid))
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise ModelError("sweep grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ModelError("sweep grid must be strictly increasing")
        if int(self.shots) < 1:
            raise DomainError(f"shots must be >= 1, got {self.shots}")
        if self.contrast_mode not in ("reference", "fraction"):
            raise ModelError(f"contrast_mode must be 'reference' or 'fraction', got {self.contrast_mode!r}")
        self.sequence.get_value(self.sweep)  # validates the path

    def sequence_at(self, value, prep):
        seq = self.sequence.with_value(self.sweep, value)
        if prep == 1:
            seq = seq.insert_after(self.pi_after, PulseGroup("pi", (Pulse("mw_pi"),)))
        return seq

    def reference_sequence(self):
        """m_s=-1 preparation with a zero-length SCC pulse."""
        seq = self.sequence.with_value(f"{self.scc_group}.duration", 0.0)
        return seq.insert_after(self.pi_after, PulseGroup("pi", (Pulse("mw_pi"),)))

    def load_params(self):
        return DefectParameters.load(self.params) if self.params else DefectParameters.load()

    def to_dict(self):
        d = {"name": self.name, "sequence": self.sequence.to_list(), "sweep": self.sweep,
             "grid": list(self.grid), "shots": int(self.shots), "seed": int(self.seed),
             "scc_group": self.scc_group, "pi_after": self.pi_after,
             "spin_init_fidelity": self.spin_init_fidelity,
             "contrast_mode": self.contrast_mode, "start": self.start}
        if self.cutoff is not None:
            d["cutoff"] = int(self.cutoff)
        if self.params is not None:
            d["params"] = self.params
        return d

    @classmethod
    def from_dict(cls, d, parse=parse_quantity):
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ModelError(f"unknown experiment keys {sorted(extra)}")
        seq = PulseSequence.from_list(d.pop("sequence"), parse)
        kind = "time" if d["sweep"].endswith("duration") else "power"
        d["grid"] = tuple(parse(x, kind) for x in d["grid"])
        return cls(sequence=seq, **d)


@dataclass(frozen=True)
class ContrastCurve:
    values: np.ndarray
    signal_ms0: np.ndarray
    signal_ms1: np.ndarray
    contrast: np.ndarray


@dataclass(frozen=True, eq=False)
class SweepResult:
    spec: ExperimentSpec
    values: np.ndarray
    hist_ms0: list
    hist_ms1: list
    reference: object  # Histogram of the m_s=-1 preparation without SCC

    def means(self):
        return (np.array([h.mean() for h in self.hist_ms0]),
                np.array([h.mean() for h in self.hist_ms1]))


def _schedule(seq, spec, params, system):
    return compile(seq, params, system, spec.spin_init_fidelity)


def run(spec, params=None, workers=1, system=None):
    """Monte Carlo histograms for both preparations at every sweep point.

    Shot streams are keyed by (point, preparation), so results do not depend
    on ``workers``.
    """
    params = params or spec.load_params()
    system = system or LevelSystem()
    h0, h1 = [], []
    for i, v in enumerate(spec.grid):
        for prep, out in ((0, h0), (1, h1)):
            sched = _schedule(spec.sequence_at(v, prep), spec, params, system)
            counts, _ = simulate_counts(sched, spec.start, spec.shots, params, spec.seed,
                                        workers, stream=(i, prep))
            out.append(readout.Histogram.from_counts(counts))
    sched = _schedule(spec.reference_sequence(), spec, params, system)
    counts, _ = simulate_counts(sched, spec.start, spec.shots, params, spec.seed, workers,
                                stream=(len(spec.grid), 1))
    return SweepResult(spec, np.array(spec.grid), h0, h1, readout.Histogram.from_counts(counts))


def _bright_fraction(h, cutoff):
    return h.at_least(cutoff) / h.total_shots


def contrast(result, mode=None, cutoff=None):
    """Contrast per sweep point.

    ``reference``: (mean1 - mean0) / mean of the m_s=-1 reference shot set.
    ``fraction``: difference of bright-classified fractions at ``cutoff``
    (the per-point optimal cutoff when not given).
    """
    mode = mode or result.spec.contrast_mode
    cutoff = result.spec.cutoff if cutoff is None else cutoff
    if mode == "reference":
        s0, s1 = result.means()
        ref = result.reference.mean()
        if ref <= 0:
            raise ModelError("reference signal is zero; cannot normalize")
        c = (s1 - s0) / ref
        return ContrastCurve(result.values, s0 / ref, s1 / ref, np.clip(c, -1.0, 1.0))
    s0, s1 = [], []
    for a, b in zip(result.hist_ms0, result.hist_ms1):
        k = cutoff if cutoff is not None else readout.optimal_cutoff(b, a)[0]
        s0.append(_bright_fraction(a, k))
        s1.append(_bright_fraction(b, k))
    s0, s1 = np.array(s0), np.array(s1)
    return ContrastCurve(result.values, s0, s1, s1 - s0)


def expected_contrast(spec, params=None, system=None):
    """Deterministic (ODE) counterpart of ``contrast`` in reference mode."""
    params = params or spec.load_params()
    system = system or LevelSystem()
    p0 = basis_population(system.states, spec.start)
    bg = params.background_rate

    def mean(seq):
        return expected_counts(_schedule(seq, spec, params, system), p0, bg)

    ref = mean(spec.reference_sequence())
    s0 = np.array([mean(spec.sequence_at(v, 0)) for v in spec.grid])
    s1 = np.array([mean(spec.sequence_at(v, 1)) for v in spec.grid])
    return ContrastCurve(np.array(spec.grid), s0 / ref, s1 / ref, np.clip((s1 - s0) / ref, -1, 1))


def populations_after(spec, value, prep, group=None, params=None, system=None):
    """ODE populations right after ``group`` (default: the SCC group)."""
    params = params or spec.load_params()
    system = system or LevelSystem()
    group = group or spec.scc_group
    seq = spec.sequence_at(value, prep)
    upto = []
    for g in seq.groups:
        upto.append(g)
        if g.label == group:
            break
    sched = _schedule(PulseSequence(tuple(upto)), spec, params, system)
    return propagate_schedule(sched, basis_population(system.states, spec.start))


def ionized_fraction_difference(spec, params=None, system=None):
    """ION(m_s=0 prep) - ION(m_s=-1 prep) after the SCC group, per sweep point."""
    system = system or LevelSystem()
    k = system.index("ION")
    return np.array([populations_after(spec, v, 0, params=params, system=system)[k]
                     - populations_after(spec, v, 1, params=params, system=system)[k]
                     for v in spec.grid])


def scc_fidelity_curve(spec, params=None, workers=1, result=None):
    """Optimal-cutoff fidelity between the two preparations at each point."""
    result = result or run(spec, params, workers)
    reports = [readout.optimal_cutoff(b, a, seed=spec.seed + i)[1]
               for i, (a, b) in enumerate(zip(result.hist_ms0, result.hist_ms1))]
    return result.values, reports


def contrast_vs_ionization_power(spec, params=None, workers=1, result=None):
    if not spec.sweep.endswith("ionize1151.power"):
        raise ModelError(f"expected a sweep over the 1151 nm power, got {spec.sweep!r}")
    return contrast(result or run(spec, params, workers))


def asymptotic_ion_contrast(params, lasers, duration):
    """Ionized-fraction contrast when excited-state ionization and stimulated
    emission both become infinitely fast at their fixed ratio.

    E0 is then eliminated: every excitation from G0 ends in ION with probability
    ``r = a / (a + sigma_s)`` (slopes ``a`` and ``sigma_s``) and returns to G0
    otherwise. What remains is G0 -> {ION, G1} and G1 -> ION with constant
    rates, which integrate in closed form.
    """
    a, st = params.excited_ion_slope, params.stim_emission_slope
    if a + st == 0:
        raise DomainError("limit undefined when both slopes vanish")
    r = a / (a + st)
    system = LevelSystem()
    m = build_rate_matrix(system, params, lasers)
    pump = m.rate("G0", "E0")
    g0_out = pump * r + m.rate("G0", "ION")
    flip = m.rate("G0", "G1")
    g1_out = m.rate("G1", "ION")
    back = m.rate("G1", "G0")
    if back > 0:
        raise DomainError("closed form assumes no G1 -> G0 return during the SCC pulse")
    t = duration
    lam = g0_out + flip
    p0 = np.exp(-lam * t)
    if abs(lam - g1_out) > 1e-12 * max(lam, 1.0):
        p1 = flip / (lam - g1_out) * (np.exp(-g1_out * t) - np.exp(-lam * t))
    else:
        p1 = flip * t * np.exp(-lam * t)
    ion_ms0 = 1.0 - p0 - p1
    ion_ms1 = 1.0 - np.exp(-g1_out * t)
    return ion_ms0 - ion_ms1


def predicted_fidelity(spec, value, params=None, system=None, max_cutoff=50):
    """Fidelity expected from the ODE charge populations after SCC combined with
    Poisson readout statistics for a neutral and an ionized defect.

    Returns ``(cutoff, F)`` maximized over cutoffs. Ionization during the
    readout window is folded into the bright mean only, so this is an
    approximation good to about a percent.
    """
    params = params or spec.load_params()
    system = system or LevelSystem()
    ion = system.index("ION")
    seq = spec.sequence_at(value, 0)
    ro = next((g for g in seq.groups if g.readout), None)
    if ro is None:
        raise ModelError("sequence has no readout group")
    m = build_rate_matrix(system, params, lasers_for(ro))
    bg = params.background_rate
    n = [1.0 - populations_after(spec, value, prep, params=params, system=system)[ion]
         for prep in (0, 1)]
    after1 = populations_after(spec, value, 1, params=params, system=system)
    neutral = after1.copy()
    neutral[ion] = 0.0
    neutral /= neutral.sum()
    mu_b = expected_counts([Segment(m, ro.duration)], neutral, bg)
    mu_d = expected_counts([Segment(m, ro.duration)], basis_population(system.states, "ION"), bg)
    cuts = np.arange(max_cutoff + 1)
    at_least_b = poisson.sf(cuts - 1, mu_b)
    at_least_d = poisson.sf(cuts - 1, mu_d)
    p01 = n[0] * at_least_b + (1 - n[0]) * at_least_d
    p10 = n[1] * (1 - at_least_b) + (1 - n[1]) * (1 - at_least_d)
    f = 1.0 - (p01 + p10) / 2.0
    k = int(np.argmax(f))
    return k, float(f[k])


# ---------------------------------------------------------------- spin-agnostic ionization


def _neutral_rates(m):
    keep = [i for i, s in enumerate(m.states) if s != "ION"]
    sub = m.entries[np.ix_(keep, keep)]
    return np.sort(np.abs(np.linalg.eigvals(sub).real))


def neutral_sector_rate(m, system=None):
    """Slowest decay rate of the generator restricted to the neutral states."""
    return float(_neutral_rates(m)[0])


def _exp_decay(t, amp, rate):
    return amp * np.exp(-rate * t)


def fit_decay_rate(times, signal, sigma=None):
    """Single-exponential rate fit; returns ``(rate, stderr)``."""
    times = np.asarray(times, float)
    signal = np.asarray(signal, float)
    if signal.max() <= 0 or np.ptp(signal) == 0:
        raise ModelError("signal has no decay to fit")
    # log-linear start value
    pos = signal > 0.05 * signal.max()
    slope = -np.polyfit(times[pos], np.log(signal[pos]), 1)[0] if pos.sum() > 1 else 1.0 / times[-1]
    popt, pcov = curve_fit(_exp_decay, times, signal, p0=(signal[0], max(slope, 1e-12)),
                           sigma=sigma, absolute_sigma=sigma is not None, maxfev=20000)
    return float(popt[1]), float(np.sqrt(pcov[1, 1]))


@dataclass(frozen=True)
class RatePoint:
    power: float
    rate: float
    stderr: float
    oracle: float
    error: str = ""


def spin_agnostic_ionization_rate_curve(powers, params=None, p_res=15e-6, method="ode",
                                        shots=2000, seed=0, n_times=25, system=None):
    """Fitted decay rate of the neutral population under Ex + E12 + 1151 nm drive.

    Starting from G0 the optical cycle first has to fill E0, which delays the
    decay. The fit window therefore opens after five time constants of the
    faster neutral mode and then spans four slow decay times.

    Each point also carries the eigenvalue oracle. Points whose fit fails are
    reported with ``error`` set instead of raising.
    """
    params = params or DefectParameters.load()
    system = system or LevelSystem()
    ion = system.index("ION")
    p0 = basis_population(system.states, "G0")
    out = []
    for i, pw in enumerate(powers):
        m = build_rate_matrix(system, params, LaserConfig(p_resonant_ex=p_res,
                                                          p_resonant_e12=p_res,
                                                          p_ionization_1151=pw))
        rates = _neutral_rates(m)
        oracle = float(rates[0])
        if oracle <= 0:
            out.append(RatePoint(pw, np.nan, np.nan, oracle, "no decay"))
            continue
        # the window is a sampling choice only; the fit itself never sees the oracle
        settle = 5.0 / rates[1] if len(rates) > 1 and rates[1] > 0 else 0.0
        times = settle + np.linspace(0.0, 4.0 / oracle, n_times)
        if method == "ode":
            bright = np.array([1.0 - propagate(m, p0, t)[ion] for t in times])
            sigma = None
        elif method == "mc":
            occ = occupancy(m, "G0", times, shots, seed, stream=(i,))
            bright = 1.0 - occ[:, ion]
            sigma = np.sqrt(np.clip(bright * (1 - bright), 1.0 / shots, None) / shots)
        else:
            raise ModelError(f"unknown method {method!r}")
        try:
            rate, se = fit_decay_rate(times, bright, sigma)
        except (RuntimeError, ModelError) as exc:
            warnings.warn(f"rate fit failed at {pw} W: {exc}", stacklevel=2)
            out.append(RatePoint(pw, np.nan, np.nan, oracle, str(exc)))
            continue
        out.append(RatePoint(pw, rate, se, oracle))
    return out


# ---------------------------------------------------------------- presets


def preset_names():
    root = resources.files("sccsim") / "data" / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    root = resources.files("sccsim") / "data" / "presets"
    path = root / f"{name}.json"
    if not path.is_file():
        raise KeyError(f"unknown preset {name!r}; valid presets: {', '.join(preset_names())}")
    return json.loads(path.read_text(encoding="utf-8"))


def experiment_from_preset(name, **overrides):
    data = load_preset(name)
    if "experiment" not in data:
        raise ModelError(f"preset {name!r} is not a sequence sweep")
    d = dict(data["experiment"])
    d.setdefault("name", name)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec.from_dict(d)
