"""Deterministic population dynamics under a piecewise-constant generator."""
from dataclasses import dataclass
import warnings

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm, null_space

from .physics import DomainError, ModelError, RateMatrix

# scaled-and-squared matrix exponential up to this size, stiff ODE beyond
EXPM_MAX_DIM = 16


@dataclass(frozen=True, eq=False)
class Segment:
    """A stretch of constant rates. Photons are counted only if ``detect``."""

    matrix: RateMatrix
    duration: float
    detect: bool = True
    label: str = ""

    def __post_init__(self):
        if not self.duration >= 0:
            raise DomainError(f"segment duration must be >= 0, got {self.duration}")


@dataclass(frozen=True, eq=False)
class Transfer:
    """Instantaneous population map (column-stochastic), e.g. an ideal pi pulse."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.array(self.matrix, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ModelError("transfer matrix must be square")
        if np.any(t < 0) or not np.allclose(t.sum(axis=0), 1.0, atol=1e-12):
            raise ModelError("transfer matrix must be column-stochastic")
        t.setflags(write=False)
        object.__setattr__(self, "matrix", t)


def as_segment(item):
    if isinstance(item, (Segment, Transfer)):
        return item
    return Segment(*item)


def as_population(p, dim=None):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ModelError("population vector must be 1-D")
    if dim is not None and p.shape[0] != dim:
        raise ModelError(f"population vector has length {p.shape[0]}, expected {dim}")
    if np.any(p < -1e-12) or np.any(p > 1 + 1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ModelError("populations must lie in [0, 1] and sum to 1")
    return p


def basis_population(states, label):
    p = np.zeros(len(states))
    p[list(states).index(label)] = 1.0
    return p


def _renormalize(p):
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def propagate(m, p0, t):
    """Populations after evolving ``p0`` for time ``t`` under ``m``."""
    if not t >= 0:
        raise DomainError(f"propagation time must be >= 0, got {t}")
    p0 = as_population(p0, m.dim)
    if t == 0:
        return p0.copy()
    if m.dim <= EXPM_MAX_DIM:
        p = expm(m.entries * t) @ p0
    else:
        sol = solve_ivp(lambda _, y: m.entries @ y, (0.0, t), p0, method="Radau",
                        jac=m.entries, rtol=1e-10, atol=1e-13)
        if not sol.success:
            raise RuntimeError(f"stiff integration failed: {sol.message}")
        p = sol.y[:, -1]
    return _renormalize(p)


def propagate_many(m, p0, times):
    """Populations at each of ``times`` (rows of the returned array)."""
    return np.array([propagate(m, p0, t) for t in times])


def propagate_schedule(schedule, p0):
    """Chain ``propagate`` and transfers through a schedule."""
    p = np.asarray(p0, dtype=float)
    for item in map(as_segment, schedule):
        if isinstance(item, Transfer):
            p = _renormalize(item.matrix @ p)
        else:
            p = propagate(item.matrix, p, item.duration)
    return p


def integrated_occupancy(m, p0, t):
    """``int_0^t exp(M s) p0 ds`` via the augmented-matrix exponential."""
    n = m.dim
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = m.entries
    aug[:n, n] = p0
    return expm(aug * t)[:n, n]


def expected_counts(schedule, p0, background_rate):
    """Mean detected photon number accumulated by the detecting segments."""
    p = np.asarray(p0, dtype=float)
    total = 0.0
    for item in map(as_segment, schedule):
        if isinstance(item, Transfer):
            p = _renormalize(item.matrix @ p)
            continue
        if item.detect:
            occ = integrated_occupancy(item.matrix, p, item.duration)
            total += item.matrix.emission @ occ + background_rate * item.duration
        p = propagate(item.matrix, p, item.duration)
    return total


@dataclass(frozen=True)
class SteadyState:
    populations: np.ndarray
    null_dim: int

    @property
    def degenerate(self):
        return self.null_dim > 1


def _check_generator(m):
    a = m.entries
    off = a - np.diag(np.diag(a))
    scale = max(np.abs(a).max(), 1.0)
    if np.any(off < 0) or np.any(np.abs(a.sum(axis=0)) > 1e-9 * scale):
        raise ModelError("not a valid generator")


def slowest_rate(m):
    """Smallest nonzero relaxation rate |Re lambda| of the generator."""
    ev = np.linalg.eigvals(m.entries)
    rates = np.abs(ev.real)
    scale = max(np.abs(m.entries).max(), 1.0)
    nonzero = rates[rates > 1e-12 * scale]
    return nonzero.min() if nonzero.size else 0.0


def steady_state(m, p0=None):
    """Stationary populations of ``m``.

    With a one-dimensional null space the normalized null vector is returned.
    Disconnected sectors (e.g. repump off with a dark equilibrium fraction)
    give several stationary states; then ``p0`` is required and the long-time
    limit of ``propagate`` from it is returned.
    """
    _check_generator(m)
    scale = max(np.abs(m.entries).max(), 1.0)
    ns = null_space(m.entries, rcond=1e-12)
    k = ns.shape[1]
    if k == 1:
        v = ns[:, 0]
        v = v / v.sum()
        return SteadyState(_renormalize(v), 1)
    if k == 0:
        # numerically full rank; fall back to the smallest singular vector
        _, _, vt = np.linalg.svd(m.entries)
        v = vt[-1]
        return SteadyState(_renormalize(v / v.sum()), 1)
    if p0 is None:
        raise ModelError(f"stationary state is {k}-fold degenerate; pass an initial condition")
    warnings.warn(f"degenerate stationary state (null space dimension {k}); "
                  "returning the long-time limit from p0", stacklevel=2)
    rate = slowest_rate(m)
    t = 1e3 / rate if rate > 0 else 1.0 / scale
    return SteadyState(propagate(m, p0, t), k)


def branching_limit(gamma_i, gamma_flip):
    """Ultimate ionization probability when ionization competes with spin flips."""
    if gamma_i < 0 or gamma_flip < 0:
        raise DomainError("rates must be >= 0")
    if gamma_i == 0 and gamma_flip == 0:
        raise DomainError("branching is undefined when both rates vanish")
    return gamma_i / (gamma_i + gamma_flip)


def charge_survival(params, t):
    """Probability that the prepared neutral charge survives a dark delay ``t``."""
    if not t >= 0:
        raise DomainError(f"delay must be >= 0, got {t}")
    return float(np.exp(-t / params.tau_charge))
