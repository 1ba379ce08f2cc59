"""Defect parameters, power-to-rate laws and the level-system generator.

Conventions: rates in Hz, powers in W, times in s. A generator ``M`` acts on
column population vectors, ``dp/dt = M @ p``; ``M[i, j]`` is the rate of the
``j -> i`` jump and every column sums to zero.

The four core levels are

* ``G0``  -- neutral ground state, m_s = 0
* ``E0``  -- neutral optically excited state reached from ``G0`` by the Ex line
* ``G1``  -- neutral ground state, m_s = -1 (dark to the Ex line)
* ``ION`` -- ionized (negative, dark) charge state
"""
from dataclasses import dataclass, field, fields, asdict, replace
from importlib import resources
import json

import numpy as np

from .units import parse_quantity

CORE_STATES = ("G0", "E0", "G1", "ION")


class DomainError(ValueError):
    """A physical argument outside its allowed range (e.g. negative power)."""


class ModelError(ValueError):
    """Inconsistent model construction (missing states, bad generator...)."""


# field name -> unit kind used when parsing suffixed strings
_PARAM_KINDS = {
    "tau_charge": "time",
    "spin_flip_lifetime_sat": "time",
    "repump_slope": "slope",
    "resonant_ion_slope": "slope",
    "resonant_sat_power": "power",
    "nir_ion_slope": "slope",
    "excited_ion_slope": "slope",
    "stim_emission_slope": "slope",
    "spontaneous_rate": "rate",
    "detected_rate_sat": "rate",
    "background_rate": "rate",
    "zpl_energy": "energy",
    "ion_photon_energy": "energy",
    "charge_transition_energy": "energy",
    "leak_beta": None,
    "spin_repump_rate_sat": "rate",
    "mw_exchange_rate": "rate",
    "dark_bright_fraction": None,
}


@dataclass(frozen=True)
class DefectParameters:
    """Physical rates of the defect and its optical setup.

    ``spontaneous_rate`` and ``resonant_sat_power`` are effective parameters of
    the rate-level optical cycle; ``excited_ion_slope`` and ``leak_beta`` are
    fit parameters. See ``data/divacancy_defaults.json`` for the shipped values
    and where each comes from.
    """

    tau_charge: float = 6.9
    spin_flip_lifetime_sat: float = 3.3e-6
    repump_slope: float = 993e6
    resonant_ion_slope: float = 10.6e6
    resonant_sat_power: float = 1.6e-6
    nir_ion_slope: float = 95.7e3
    excited_ion_slope: float = 100e6
    stim_emission_slope: float = 13.3e6
    spontaneous_rate: float = 3.0e5
    detected_rate_sat: float = 5.0e3
    background_rate: float = 65.0
    zpl_energy: float = 1.096
    ion_photon_energy: float = 1.077
    charge_transition_energy: float = 2.09
    leak_beta: float = 900.0
    spin_repump_rate_sat: float = 1e7
    mw_exchange_rate: float = 1e6
    dark_bright_fraction: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value):
                raise DomainError(f"{f.name} must be finite, got {value}")
            if value < 0:
                raise DomainError(f"{f.name} must be >= 0, got {value}")
        for name in ("tau_charge", "spin_flip_lifetime_sat", "resonant_sat_power"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be > 0")
        if not 0.0 <= self.dark_bright_fraction <= 1.0:
            raise DomainError("dark_bright_fraction must lie in [0, 1]")

    @property
    def spin_flip_rate(self):
        """Spin-flip rate of the m_s=0 optical cycle at full saturation."""
        return 1.0 / self.spin_flip_lifetime_sat

    @property
    def cross_section_ratio(self):
        """Ratio of excited-state ionization to stimulated emission slopes."""
        if self.stim_emission_slope == 0:
            return np.inf
        return self.excited_ion_slope / self.stim_emission_slope

    @property
    def two_photon_energy(self):
        return self.zpl_energy + self.ion_photon_energy

    def energetics_allowed(self):
        return self.two_photon_energy >= self.charge_transition_energy

    def replace(self, **changes):
        return replace(self, **{k: float(v) for k, v in changes.items()})

    def ratio_is_finite(self):
        """True when the ionization / stimulated-emission ratio is finite and > 0."""
        return self.excited_ion_slope > 0 and self.stim_emission_slope > 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """Build from a mapping of plain numbers, suffixed strings, or
        ``{"value": ..., "origin": ...}`` records."""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ModelError(f"unknown parameter(s): {sorted(unknown)}")
        values = {}
        for name, raw in data.items():
            if isinstance(raw, dict):
                raw = raw["value"]
            values[name] = parse_quantity(raw, _PARAM_KINDS[name])
        base = cls()
        return base.replace(**values) if values else base

    @classmethod
    def load(cls, path=None):
        """Load a parameter file; ``None`` loads the shipped defaults."""
        if path is None:
            text = resources.files("sccsim").joinpath("data/divacancy_defaults.json").read_text()
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        data = json.loads(text)
        data = {k: v for k, v in data.items() if not k.startswith("_")}
        return cls.from_dict(data)


@dataclass(frozen=True)
class LevelSystem:
    states: tuple = CORE_STATES
    emitter: str = "E0"

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if len(set(states)) != len(states):
            raise ModelError(f"duplicate state labels in {states}")
        if self.emitter not in states:
            raise ModelError(f"emitter {self.emitter!r} is not a state")

    def index(self, label):
        try:
            return self.states.index(label)
        except ValueError:
            raise ModelError(f"no state {label!r} in {self.states}") from None

    def require_core(self):
        missing = [s for s in CORE_STATES if s not in self.states]
        if missing:
            raise ModelError(f"level system lacks core state(s) {missing}")

    @property
    def dim(self):
        return len(self.states)


@dataclass(frozen=True)
class LaserConfig:
    p_resonant_ex: float = 0.0
    p_resonant_e12: float = 0.0
    p_ionization_1151: float = 0.0
    p_repump_705: float = 0.0
    mw_on: bool = False

    def __post_init__(self):
        for name in ("p_resonant_ex", "p_resonant_e12", "p_ionization_1151", "p_repump_705"):
            value = getattr(self, name)
            if not value >= 0:
                raise DomainError(f"{name} must be >= 0, got {value}")

    @property
    def dark(self):
        return not (self.p_resonant_ex or self.p_resonant_e12
                    or self.p_ionization_1151 or self.p_repump_705 or self.mw_on)


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Generator of the level system plus the detected photon rate per state.

    ``emission[i]`` is the detected photon rate (Hz, background excluded)
    while the system sits in state ``i``.
    """

    entries: np.ndarray
    states: tuple = CORE_STATES
    emission: np.ndarray = field(default=None)

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ModelError(f"rate matrix must be square, got shape {m.shape}")
        if m.shape[0] != len(self.states):
            raise ModelError("rate matrix size does not match the state labels")
        off = m - np.diag(np.diag(m))
        if np.any(off < 0):
            raise ModelError("off-diagonal rates must be >= 0")
        m = off - np.diag(off.sum(axis=0))
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "states", tuple(self.states))
        em = np.zeros(m.shape[0]) if self.emission is None else np.array(self.emission, dtype=float)
        if em.shape != (m.shape[0],) or np.any(em < 0):
            raise ModelError("emission must be a nonnegative vector, one entry per state")
        em.setflags(write=False)
        object.__setattr__(self, "emission", em)

    @property
    def dim(self):
        return self.entries.shape[0]

    def rate(self, src, dst):
        return self.entries[self.states.index(dst), self.states.index(src)]

    def exit_rates(self):
        return -np.diag(self.entries)

    def with_emission(self, emission):
        return RateMatrix(self.entries, self.states, emission)

    def without_emission(self):
        return RateMatrix(self.entries, self.states, None)

    @classmethod
    def from_rates(cls, states, rates, emission=None):
        """Build from ``{(src, dst): rate}``; repeated pairs add up."""
        states = tuple(states)
        m = np.zeros((len(states), len(states)))
        for (src, dst), r in rates.items():
            if src == dst:
                continue
            m[states.index(dst), states.index(src)] += r
        return cls(m, states, emission)


def _check_power(p):
    if not p >= 0:
        raise DomainError(f"laser power must be >= 0, got {p}")


def saturation(params, p_res):
    """Excited-state occupation factor P / (P + P_sat)."""
    _check_power(p_res)
    return p_res / (p_res + params.resonant_sat_power)


def repump_rate(params, p705):
    """Charge reset rate (ionized -> neutral) under 705 nm light."""
    _check_power(p705)
    return params.repump_slope * p705


def resonant_ionization_rate(params, p_res):
    """Two-photon ionization by the resonant light alone.

    Quadratic below saturation, linear with slope ``resonant_ion_slope`` above.
    """
    return params.resonant_ion_slope * p_res * saturation(params, p_res)


def nir_ionization_rate(params, p1151):
    """Ionization leak from the 1151 nm beam alone."""
    _check_power(p1151)
    return params.nir_ion_slope * p1151


def stimulated_emission_rate(params, p1151):
    """Excited -> ground stimulated emission driven by the 1151 nm beam."""
    _check_power(p1151)
    return params.stim_emission_slope * p1151


def excited_ionization_rate(params, p1151):
    """Ionization rate out of the optically excited state."""
    _check_power(p1151)
    return params.excited_ion_slope * p1151


def leak_rate(params, p_res, p1151):
    """Non-spin-selective ionization of m_s=-1 while the SCC lasers are on."""
    extra = params.leak_beta * resonant_ionization_rate(params, p_res) if p1151 > 0 else 0.0
    return nir_ionization_rate(params, p1151) + extra


def build_rate_matrix(system, params, lasers):
    """Assemble the generator for one laser/microwave configuration.

    Channels (``W = Gamma_sp * P_ex / P_sat`` so the stationary ``E0``
    occupancy of the bare cycle is ``s(P_ex)``):

    * G0 -> E0 optical pumping ``W``
    * E0 -> G0 spontaneous plus stimulated emission
    * E0 -> ION resonant second-photon ionization ``k * P_ex`` and excited-state
      ionization by 1151 nm light
    * {G0, E0} -> G1 spin flips of the m_s=0 cycle, ``Gamma_flip * s(P_ex)``
    * G0, G1 -> ION 1151 nm leak; G1 -> ION extra non-spin-selective leak
      while Ex and 1151 nm are both on
    * G1 -> G0 repolarization and G1 -> ION two-photon ionization under E12
    * ION -> G0/G1 repump, split evenly (reset does not polarize the spin)
    * dark charge relaxation at total rate ``1 / tau_charge``
    * G0 <-> G1 microwave exchange when ``mw_on``
    """
    system.require_core()
    p_ex = lasers.p_resonant_ex
    p_e12 = lasers.p_resonant_e12
    p_ir = lasers.p_ionization_1151

    s_ex = saturation(params, p_ex)
    s_e12 = saturation(params, p_e12)
    pump = params.spontaneous_rate * p_ex / params.resonant_sat_power
    flip = params.spin_flip_rate * s_ex
    nir = nir_ionization_rate(params, p_ir)
    repump = repump_rate(params, lasers.p_repump_705)
    f_eq = params.dark_bright_fraction
    to_dark = (1.0 - f_eq) / params.tau_charge
    to_bright = f_eq / params.tau_charge

    rates = {
        ("G0", "E0"): pump,
        ("E0", "G0"): params.spontaneous_rate + stimulated_emission_rate(params, p_ir),
        ("E0", "ION"): params.resonant_ion_slope * p_ex + excited_ionization_rate(params, p_ir),
        ("G0", "G1"): flip,
        ("E0", "G1"): flip,
        ("G0", "ION"): nir + to_dark,
        ("G1", "ION"): leak_rate(params, p_ex, p_ir) + to_dark
        + resonant_ionization_rate(params, p_e12),
        ("G1", "G0"): params.spin_repump_rate_sat * s_e12,
        ("ION", "G0"): 0.5 * repump + 0.5 * to_bright,
        ("ION", "G1"): 0.5 * repump + 0.5 * to_bright,
    }
    # the excited state also relaxes to ION in the dark at the same slow rate
    rates[("E0", "ION")] += to_dark
    if lasers.mw_on:
        rates[("G0", "G1")] += params.mw_exchange_rate
        rates[("G1", "G0")] += params.mw_exchange_rate

    emission = np.zeros(system.dim)
    emission[system.index("G0")] = params.detected_rate_sat * s_ex
    emission[system.index(system.emitter)] = params.detected_rate_sat * s_ex
    if p_e12 > 0:
        emission[system.index("G1")] = params.detected_rate_sat * s_e12

    return RateMatrix.from_rates(system.states, rates, emission)
