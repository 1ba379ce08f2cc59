"""Exact stochastic sampling of the level-system jump process.

Each shot owns an independent ``numpy.random.Generator`` seeded with
``SeedSequence(master_seed, spawn_key=(shot_index,))``. The per-shot stream
therefore depends only on the master seed and the shot index, never on how
shots are distributed over workers.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dynamics import Segment, Transfer, as_segment
from .physics import DomainError, ModelError


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Jump record: ``times[k]`` is when ``from_states[k] -> to_states[k]`` happened."""

    times: np.ndarray
    from_states: np.ndarray
    to_states: np.ndarray
    initial_state: int
    t_end: float
    states: tuple = ()

    @property
    def final_state(self):
        return int(self.to_states[-1]) if len(self.to_states) else self.initial_state

    def state_at(self, t):
        k = np.searchsorted(self.times, t, side="right")
        return self.initial_state if k == 0 else int(self.to_states[k - 1])

    def dwell_times(self, window=None):
        """Time spent in each state during ``[0, window]``."""
        end = self.t_end if window is None else window
        edges = np.concatenate([[0.0], self.times[self.times < end], [end]])
        seq = np.concatenate([[self.initial_state], self.to_states[self.times < end]])
        out = np.zeros(max(len(self.states), int(seq.max()) + 1))
        np.add.at(out, seq, np.diff(edges))
        return out


@dataclass(frozen=True)
class ShotResult:
    photon_count: int
    final_state: str
    rng_seed: tuple


def shot_rng(master_seed, shot_index, stream=()):
    """Generator for one shot; stable across numpy versions that keep PCG64.

    ``stream`` namespaces independent experiments (sweep point, preparation)
    that share one master seed.
    """
    key = tuple(int(k) for k in stream) + (int(shot_index),)
    ss = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _jump_tables(m):
    """Cumulative outgoing rates per source state (rows) and their totals."""
    rates = m.entries.T.copy()
    np.fill_diagonal(rates, 0.0)
    cum = np.cumsum(rates, axis=1)
    return cum, cum[:, -1].copy()


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _pick(row, u):
    j = 0
    n = row.shape[0]
    while j < n - 1 and u >= row[j]:
        j += 1
    return j


@njit(cache=True, nogil=True)
def _run_shot(kind, cum, totals, emission, durations, detect, start, background, gen):
    state = start
    mean = 0.0
    for k in range(kind.shape[0]):
        if kind[k] == 1:
            state = _pick(cum[k, state], gen.random())
            continue
        t_len = durations[k]
        t = 0.0
        lit = 0.0
        while True:
            tot = totals[k, state]
            if tot <= 0.0:
                lit += emission[k, state] * (t_len - t)
                break
            dt = gen.exponential(1.0 / tot)
            if t + dt >= t_len:
                lit += emission[k, state] * (t_len - t)
                break
            lit += emission[k, state] * dt
            t += dt
            state = _pick(cum[k, state], gen.random() * tot)
        if detect[k]:
            mean += lit + background * t_len
    count = gen.poisson(mean) if mean > 0.0 else 0
    return count, state


@njit(cache=True, nogil=True)
def _sample_path(cum, totals, start, t_max, gen):
    cap = 64
    times = np.empty(cap)
    src = np.empty(cap, dtype=np.int64)
    dst = np.empty(cap, dtype=np.int64)
    n = 0
    state = start
    t = 0.0
    while True:
        tot = totals[state]
        if tot <= 0.0:
            break
        t += gen.exponential(1.0 / tot)
        if t > t_max:
            break
        new = _pick(cum[state], gen.random() * tot)
        if n == cap:
            cap *= 2
            times2 = np.empty(cap)
            src2 = np.empty(cap, dtype=np.int64)
            dst2 = np.empty(cap, dtype=np.int64)
            times2[:n] = times[:n]
            src2[:n] = src[:n]
            dst2[:n] = dst[:n]
            times, src, dst = times2, src2, dst2
        times[n] = t
        src[n] = state
        dst[n] = new
        n += 1
        state = new
    return times[:n], src[:n], dst[:n]


@njit(cache=True, nogil=True)
def _states_at(cum, totals, start, probes, gen):
    out = np.empty(probes.shape[0], dtype=np.int64)
    state = start
    t = 0.0
    k = 0
    while k < probes.shape[0]:
        tot = totals[state]
        if tot <= 0.0:
            while k < probes.shape[0]:
                out[k] = state
                k += 1
            break
        t_next = t + gen.exponential(1.0 / tot)
        while k < probes.shape[0] and probes[k] < t_next:
            out[k] = state
            k += 1
        t = t_next
        state = _pick(cum[state], gen.random() * tot)
    return out


# ---------------------------------------------------------------- public API


def _state_index(states, start):
    if isinstance(start, (int, np.integer)):
        if not 0 <= start < len(states):
            raise ModelError(f"start index {start} out of range")
        return int(start)
    try:
        return states.index(start)
    except ValueError:
        raise ModelError(f"unknown start state {start!r}") from None


def sample_trajectory(m, start, t_max, seed):
    """One exact jump-process path of ``m`` over ``[0, t_max]``."""
    if not t_max >= 0:
        raise DomainError(f"t_max must be >= 0, got {t_max}")
    cum, totals = _jump_tables(m)
    s0 = _state_index(m.states, start)
    times, src, dst = _sample_path(cum, totals, s0, float(t_max), _as_rng(seed))
    return Trajectory(times, src, dst, s0, float(t_max), m.states)


def count_photons(traj, m, window, seed, background_rate=0.0):
    """Poisson photon count for a trajectory observed during ``[0, window]``.

    The mean is the emission rate of ``m`` integrated over the dwell times,
    plus ``background_rate * window``.
    """
    if window > traj.t_end * (1 + 1e-12):
        raise DomainError(f"window {window} exceeds the trajectory span {traj.t_end}")
    mean = float(m.emission @ traj.dwell_times(window)[: m.dim]) + background_rate * window
    rng = _as_rng(seed)
    count = int(rng.poisson(mean)) if mean > 0 else 0
    final = traj.state_at(window)
    label = traj.states[final] if traj.states else final
    return ShotResult(count, label, None if isinstance(seed, np.random.Generator) else seed)


class _Packed:
    """Schedule flattened into arrays for the shot kernel."""

    def __init__(self, schedule):
        items = [as_segment(it) for it in schedule]
        if not items:
            raise ModelError("empty schedule")
        segs = [it for it in items if isinstance(it, Segment)]
        if not segs:
            raise ModelError("schedule has no rate segments")
        self.states = segs[0].matrix.states
        d = len(self.states)
        n = len(items)
        self.kind = np.zeros(n, dtype=np.int64)
        self.cum = np.zeros((n, d, d))
        self.totals = np.zeros((n, d))
        self.emission = np.zeros((n, d))
        self.durations = np.zeros(n)
        self.detect = np.zeros(n, dtype=np.bool_)
        for k, it in enumerate(items):
            if isinstance(it, Transfer):
                if it.matrix.shape != (d, d):
                    raise ModelError("transfer size does not match the schedule")
                self.kind[k] = 1
                self.cum[k] = np.cumsum(it.matrix.T, axis=1)
                self.cum[k][:, -1] = 1.0
                continue
            if it.matrix.states != self.states:
                raise ModelError("all segments must share the same level system")
            self.cum[k], self.totals[k] = _jump_tables(it.matrix)
            self.emission[k] = it.matrix.emission
            self.durations[k] = it.duration
            self.detect[k] = it.detect


def simulate_counts(schedule, start, shots, params, seed, workers=1, first_shot=0, stream=()):
    """Photon counts and final state indices for ``shots`` independent shots.

    Returns two integer arrays ordered by shot index.
    """
    if shots < 1:
        raise DomainError(f"shots must be >= 1, got {shots}")
    packed = _Packed(schedule)
    s0 = _state_index(packed.states, start)
    counts = np.empty(shots, dtype=np.int64)
    finals = np.empty(shots, dtype=np.int64)
    bg = float(params.background_rate)

    def work(lo, hi):
        for i in range(lo, hi):
            gen = shot_rng(seed, first_shot + i, stream)
            c, f = _run_shot(packed.kind, packed.cum, packed.totals, packed.emission,
                             packed.durations, packed.detect, s0, bg, gen)
            counts[i] = c
            finals[i] = f

    workers = max(1, int(workers))
    if workers == 1:
        work(0, shots)
    else:
        bounds = np.linspace(0, shots, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, bounds[:-1], bounds[1:]))
    return counts, finals


def simulate_shots(schedule, start, shots, params, seed, workers=1):
    """Independent shots through a piecewise-constant schedule."""
    counts, finals = simulate_counts(schedule, start, shots, params, seed, workers)
    states = _Packed(schedule).states
    return [ShotResult(int(c), states[f], (int(seed), i))
            for i, (c, f) in enumerate(zip(counts, finals))]


def occupancy_samples(m, start, times, shots, seed, stream=()):
    """State index of each of ``shots`` trajectories at each probe time.

    Returns an array of shape ``(shots, len(times))``.
    """
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    probes = times[order]
    cum, totals = _jump_tables(m)
    s0 = _state_index(m.states, start)
    out = np.empty((shots, len(times)), dtype=np.int64)
    for i in range(shots):
        out[i, order] = _states_at(cum, totals, s0, probes, shot_rng(seed, i, stream))
    return out


def occupancy(m, start, times, shots, seed, stream=()):
    """Empirical occupation probabilities, shape ``(len(times), dim)``."""
    samples = occupancy_samples(m, start, times, shots, seed, stream)
    return np.stack([np.bincount(col, minlength=m.dim) / shots for col in samples.T])
