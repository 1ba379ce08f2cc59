"""Dynamical decoupling: sequences, filter-function decay, and the coherence fits.

Decay convention (instantaneous pi pulses, sign-toggling modulation ``y``)::

    C(t) = exp(-chi(t)),   chi(t) = (2/pi) * int_0^inf S(w) F(w t) / w^2 dw

with ``F = |y(w)|^2 / 2``. With this normalization white noise ``S = S0``
gives ``chi = S0 * t`` for every pulse number; other conventions differ by a
constant factor absorbed in the spectrum amplitude.
"""
from dataclasses import dataclass
import csv
import io
import warnings

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, curve_fit
from scipy.stats import chi2

MAX_PULSES = 16384
XY8_PHASES = (0.0, np.pi / 2, 0.0, np.pi / 2, np.pi / 2, 0.0, np.pi / 2, 0.0)

# gyromagnetic ratios (Hz per gauss) for the ESEEM spacing helper
GAMMA_29SI = 845.8
GAMMA_13C = 1070.8


class ConvergenceError(RuntimeError):
    pass


class DegenerateDataError(ValueError):
    pass


class BoundRejectedError(ValueError):
    """Every candidate T1 on the grid is rejected; ``trace`` holds the scan."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------- sequences


@dataclass(frozen=True, eq=False)
class DDSequence:
    n_pulses: int
    pulse_times: np.ndarray
    t_total: float
    phases: tuple = ()
    style: str = "CPMG"
    uniform: bool = True  # CPMG timing (tau/2, tau, ..., tau/2)

    @property
    def fractions(self):
        return np.asarray(self.pulse_times) / self.t_total

    @property
    def spacing(self):
        return self.t_total / self.n_pulses if self.n_pulses else self.t_total


def larmor_spacing_quantum(field_gauss, gamma_hz_per_gauss=GAMMA_29SI):
    """Half the bare nuclear Larmor period, a common ESEEM-safe spacing unit."""
    return 0.5 / (gamma_hz_per_gauss * field_gauss)


def generate_sequence(style, n, t_total, spacing_quantum=None):
    """CPMG-timed pulse train; ``style`` only sets the phase pattern.

    With ``spacing_quantum`` the spacing is rounded to the nearest nonzero
    multiple of it and ``t_total`` becomes ``n * spacing``. ``n = 0`` is free
    evolution.
    """
    style = style.upper()
    if style not in ("CPMG", "XY8"):
        raise ValueError(f"unknown style {style!r}; use CPMG or XY8")
    if n < 0 or int(n) != n:
        raise ValueError(f"pulse number must be a nonnegative integer, got {n}")
    n = int(n)
    if not t_total > 0:
        raise ValueError(f"total time must be > 0, got {t_total}")
    if n > MAX_PULSES:
        warnings.warn(f"{n} pulses exceeds the usual {MAX_PULSES}-pulse limit", stacklevel=2)
    if n == 0:
        return DDSequence(0, np.zeros(0), float(t_total), (), style)
    tau = t_total / n
    if spacing_quantum is not None:
        k = round(tau / spacing_quantum)
        if k < 1:
            raise ValueError(f"t_total={t_total} s is too short for {n} pulses spaced in "
                             f"multiples of {spacing_quantum} s")
        tau = k * spacing_quantum
        t_total = n * tau
    times = (np.arange(n) + 0.5) * tau
    if style == "CPMG":
        phases = (0.0,) * n
    else:
        phases = tuple(XY8_PHASES[k % 8] for k in range(n))
    return DDSequence(n, times, float(t_total), phases, style)


# ---------------------------------------------------------------- spectra


@dataclass(frozen=True)
class NoiseSpectrum:
    """One-sided dephasing spectrum ``S(w)`` (w in rad/s).

    * white:      ``amplitude``
    * lorentzian: ``amplitude * tau_c / (1 + ((w - center) * tau_c)^2)``
    * power_law:  ``amplitude / (low_cutoff^exponent + w^exponent)``, rolled off
      above ``high_cutoff`` by ``1 / (1 + (w / high_cutoff)^2)``
    * sum:        sum of ``components``
    """

    model: str
    amplitude: float = 0.0
    tau_c: float = None
    center: float = 0.0
    exponent: float = None
    low_cutoff: float = None
    high_cutoff: float = None
    components: tuple = ()

    def __post_init__(self):
        if self.model not in ("white", "lorentzian", "power_law", "sum"):
            raise ValueError(f"unknown spectrum model {self.model!r}")
        if self.model != "sum" and self.amplitude < 0:
            raise ValueError("spectrum amplitude must be >= 0")
        if self.model == "lorentzian" and not (self.tau_c and self.tau_c > 0):
            raise ValueError("lorentzian spectrum needs tau_c > 0")
        if self.model == "power_law":
            if self.exponent is None or self.exponent <= 0:
                raise ValueError("power_law spectrum needs exponent > 0")
            if not (self.low_cutoff and self.low_cutoff > 0):
                raise ValueError("power_law spectrum needs low_cutoff > 0")
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def white(cls, s0):
        return cls("white", s0)

    @classmethod
    def lorentzian(cls, amplitude, tau_c, center=0.0):
        return cls("lorentzian", amplitude, tau_c=tau_c, center=center)

    @classmethod
    def power_law(cls, amplitude, exponent, low_cutoff, high_cutoff=None):
        return cls("power_law", amplitude, exponent=exponent, low_cutoff=low_cutoff,
                   high_cutoff=high_cutoff)

    @classmethod
    def sum(cls, *components):
        return cls("sum", components=components)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if self.model == "white":
            return np.full_like(w, self.amplitude)
        if self.model == "lorentzian":
            return self.amplitude * self.tau_c / (1.0 + ((w - self.center) * self.tau_c) ** 2)
        if self.model == "power_law":
            s = self.amplitude / (self.low_cutoff ** self.exponent + w ** self.exponent)
            if self.high_cutoff:
                s = s / (1.0 + (w / self.high_cutoff) ** 2)
            return s
        out = np.zeros_like(w)
        for c in self.components:
            out = out + c(w)
        return out

    def features(self):
        """``(frequency, width)`` pairs where the spectrum has structure."""
        if self.model == "lorentzian":
            return [(self.center, 1.0 / self.tau_c)]
        if self.model == "power_law":
            f = [(0.0, self.low_cutoff)]
            if self.high_cutoff:
                f.append((0.0, self.high_cutoff))
            return f
        if self.model == "sum":
            return [x for c in self.components for x in c.features()]
        return []

    def is_zero(self):
        if self.model == "sum":
            return all(c.is_zero() for c in self.components)
        return self.amplitude == 0

    def tail_integral(self, w0):
        """``int_w0^inf S(w) / w^2 dw``."""
        if self.model == "white":
            return self.amplitude / w0
        if self.model == "sum":
            return sum(c.tail_integral(w0) for c in self.components)
        # substitute w = w0 / u to map onto a finite interval
        val, _ = quad(lambda u: float(self(w0 / u)) / w0 if u > 0 else 0.0, 0.0, 1.0,
                      epsabs=0.0, epsrel=1e-10, limit=200)
        return val


# ---------------------------------------------------------------- filter functions


def cpmg_filter(z, n):
    """``F(z)`` for CPMG timing at ``z = w t`` (n = 0 is free evolution)."""
    z = np.asarray(z, dtype=float)
    if n == 0:
        return 2.0 * np.sin(z / 2.0) ** 2
    c = np.cos(z / (2.0 * n))
    num = np.sin(z / 2.0) ** 2 if n % 2 == 0 else np.cos(z / 2.0) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        f = 8.0 * np.sin(z / (4.0 * n)) ** 4 * num / c ** 2
    bad = np.abs(c) < 1e-7
    if np.any(bad):
        f[bad] = generic_filter(z[bad], (np.arange(n) + 0.5) / n)
    return f


def generic_filter(z, fractions):
    """``F(z)`` for arbitrary pulse positions given as fractions of ``t``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    fr = np.asarray(fractions, dtype=float)
    n = len(fr)
    signs = (-1.0) ** np.arange(1, n + 1)
    y = 1.0 + (-1.0) ** (n + 1) * np.exp(1j * z)
    for lo in range(0, n, 2048):
        y = y + 2.0 * np.exp(1j * np.outer(z, fr[lo:lo + 2048])) @ signs[lo:lo + 2048]
    return np.abs(y) ** 2 / 2.0


LOW_ORDER, HIGH_ORDER = 8, 16
_GL = {k: np.polynomial.legendre.leggauss(k) for k in (LOW_ORDER, HIGH_ORDER)}


def _panel_edges(n, t, spectrum, periods):
    """Geometric panels up to 2 pi, then 2 pi panels to the cutoff."""
    big = 2.0 * np.pi * max(n, 1)
    z_max = big * periods
    edges = [np.geomspace(1e-9, 2.0 * np.pi, 48), np.arange(2.0 * np.pi, z_max + 1e-9, 2.0 * np.pi)]
    for w0, width in spectrum.features():
        z0, dz = w0 * t, width * t
        offs = dz * np.geomspace(1e-3, 1e3, 31)
        pts = np.concatenate([z0 - offs, z0 + offs, [z0]])
        edges.append(pts[(pts > 1e-9) & (pts < z_max)])
    e = np.unique(np.concatenate(edges))
    return e, z_max


def _gauss(f, edges, order, chunk=40000):
    x, w = _GL[order]
    total = 0.0
    per_panel = []
    for lo in range(0, len(edges) - 1, chunk):
        a = edges[lo:lo + chunk + 1][:-1]
        b = edges[lo + 1:lo + chunk + 1]
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        z = mid[:, None] + half[:, None] * x[None, :]
        vals = f(z.ravel()).reshape(z.shape) @ w * half
        per_panel.append(vals)
        total += vals.sum()
    return total, np.concatenate(per_panel)


def chi(spectrum, t, n_pulses=0, fractions=None, rtol=1e-6, periods=6):
    """Decay exponent ``chi(t)`` for ``n_pulses`` CPMG pulses (or custom ``fractions``).

    Composite Gauss-Legendre on panels resolved down to the 2 pi filter
    oscillation; past ``periods`` full filter periods the filter is replaced
    by its mean ``2 N + 1`` and the tail integrated analytically or by
    ``quad``; that truncation error falls as ``periods**-3`` and is below
    1e-3 relative at the default. The 8- and 16-node rules must agree to
    ``rtol`` or a ``ConvergenceError`` is raised.
    """
    if not t > 0:
        raise ValueError(f"time must be > 0, got {t}")
    if spectrum.is_zero():
        return 0.0
    n = int(n_pulses) if fractions is None else len(fractions)
    if fractions is None:
        filt = lambda z: cpmg_filter(z, n)  # noqa: E731
    else:
        filt = lambda z: generic_filter(z, fractions)  # noqa: E731

    def g(z):
        return spectrum(z / t) * filt(z) / z ** 2

    edges, z_max = _panel_edges(n, t, spectrum, periods)
    coarse, _ = _gauss(g, edges, LOW_ORDER)
    fine, panels = _gauss(g, edges, HIGH_ORDER)
    scale = max(abs(fine), 1e-300)
    if abs(fine - coarse) > rtol * scale:
        worst = int(np.argmax(np.abs(panels)))
        raise ConvergenceError(
            f"filter integral not converged for N={n}, t={t:g} s: {LOW_ORDER}-node "
            f"{coarse:.10g}, {HIGH_ORDER}-node {fine:.10g} (relative gap "
            f"{abs(fine - coarse) / scale:.2e} > {rtol:g}); "
            f"largest panel [{edges[worst]:.4g}, {edges[worst + 1]:.4g}]")
    tail = (2 * n + 1) * spectrum.tail_integral(z_max / t) / t
    return 2.0 * t / np.pi * (fine + tail)


# ---------------------------------------------------------------- envelopes


@dataclass(frozen=True, eq=False)
class StretchedFit:
    amplitude: float
    t2: float
    stretch: float
    amplitude_se: float
    t2_se: float
    stretch_se: float
    residual_norm: float = 0.0

    def __call__(self, t):
        return stretched_exp(np.asarray(t, float), self.amplitude, self.t2, self.stretch)


@dataclass(frozen=True, eq=False)
class CoherenceCurve:
    times: np.ndarray
    values: np.ndarray
    n_pulses: int
    sigma: np.ndarray = None
    fit: StretchedFit = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("coherence values must lie in [0, 1]")

    def to_csv(self):
        return write_coherence_csv(self.times, self.values, self.sigma)


def coherence_envelope(seq, spectrum, times=None, rtol=1e-6):
    """``C(t) = exp(-chi(t))`` with the pulse pattern of ``seq`` stretched to each ``t``."""
    times = np.atleast_1d(np.asarray(seq.t_total if times is None else times, dtype=float))
    fractions = None if seq.uniform else seq.fractions
    vals = np.array([np.exp(-chi(spectrum, t, seq.n_pulses, fractions, rtol)) for t in times])
    return CoherenceCurve(times, np.clip(vals, 0.0, 1.0), seq.n_pulses)


def t2_from_spectrum(spectrum, n_pulses, t_guess=1.0, rtol=1e-6):
    """Time at which ``chi = 1`` (the 1/e coherence time)."""
    f = lambda lt: chi(spectrum, np.exp(lt), n_pulses, rtol=rtol) - 1.0  # noqa: E731
    lo = hi = np.log(t_guess)
    for _ in range(200):
        if f(lo) < 0:
            break
        lo -= 1.0
    else:
        raise ConvergenceError("could not bracket T2 from below")
    for _ in range(200):
        if f(hi) > 0:
            break
        hi += 1.0
    else:
        raise ConvergenceError("could not bracket T2 from above")
    return float(np.exp(brentq(f, lo, hi, xtol=1e-10, rtol=1e-10)))


def normalize_by_reference(signal, inverted, enabled=True):
    """Differential coherence from a readout and its phase-inverted partner.

    ``(s - r) / (s + r)`` removes the readout offset and any multiplicative
    loss common to both (contrast reduction, charge decay). Returns the raw
    signal when disabled.
    """
    s = np.asarray(signal, dtype=float)
    if not enabled:
        return s
    r = np.asarray(inverted, dtype=float)
    denom = s + r
    if np.any(denom <= 0):
        raise ValueError("reference normalization needs positive signal + reference")
    return (s - r) / denom


# ---------------------------------------------------------------- fits


def stretched_exp(t, amplitude, t2, n):
    return amplitude * np.exp(-(t / t2) ** n)


def fit_stretched(times, values, sigma=None):
    """Least-squares ``A exp(-(t/T2)^n)`` with 1 SE errors from the covariance."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(t) < 4:
        raise ValueError("need at least 4 points")
    if not np.all(t > 0):
        raise ValueError("times must be > 0")
    top = np.max(np.abs(y))
    if top == 0 or np.ptp(y) < 0.05 * top:
        raise DegenerateDataError("no decay in the data")
    amp0 = max(y.max(), 1e-3)
    below = np.flatnonzero(y < amp0 / np.e)
    t2_0 = t[below[0]] if below.size else t[-1]
    p0 = (amp0, t2_0, 1.0)
    try:
        popt, pcov = curve_fit(stretched_exp, t, y, p0=p0, sigma=sigma,
                               absolute_sigma=sigma is not None,
                               bounds=([0.0, 1e-12, 0.1], [10.0, np.inf, 10.0]), maxfev=20000)
    except RuntimeError as exc:
        raise ConvergenceError(f"stretched-exponential fit did not converge: {exc}") from None
    se = np.sqrt(np.diag(pcov))
    if not np.all(np.isfinite(se)):
        raise DegenerateDataError("fit covariance is singular")
    resid = float(np.linalg.norm(stretched_exp(t, *popt) - y))
    return StretchedFit(*map(float, popt), *map(float, se), resid)


@dataclass(frozen=True)
class PowerLawFit:
    psi: float
    psi_se: float
    prefactor: float
    ssr: float


def fit_power_law(n, t2, sigma=None):
    """``log T2 = log c + psi log N`` by (weighted) linear least squares."""
    x = np.log(np.asarray(n, dtype=float))
    y = np.log(np.asarray(t2, dtype=float))
    if len(x) < 3:
        raise ValueError("need at least 3 points for a power-law fit")
    w = np.ones_like(x) if sigma is None else (np.asarray(t2, float) / np.asarray(sigma, float))
    a = np.column_stack([np.ones_like(x), x]) * w[:, None]
    coef, *_ = np.linalg.lstsq(a, y * w, rcond=None)
    resid = (y - coef[0] - coef[1] * x) * w
    ssr = float(resid @ resid)
    cov = np.linalg.inv(a.T @ a)
    if sigma is None:
        cov = cov * ssr / (len(x) - 2) if len(x) > 2 else cov * np.nan
    return PowerLawFit(float(coef[1]), float(np.sqrt(cov[1, 1])), float(np.exp(coef[0])), ssr)


@dataclass(frozen=True)
class ScalingFit:
    breakpoint: float  # first N of the high regime
    psi_low: float
    psi_low_se: float
    psi_high: float
    psi_high_se: float
    prefactor_low: float
    prefactor_high: float
    single_regime: bool


def fit_scaling(n, t2, sigma=None, min_points=3):
    """Two power laws on either side of the best breakpoint (exhaustive search).

    The split minimizing the total squared log-residual wins. When the two
    exponents agree within 3 combined SE the data are flagged single-regime.
    """
    n = np.asarray(n, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    if len(n) != len(t2):
        raise ValueError("N and T2 lists differ in length")
    if len(n) < 2 * min_points:
        raise ValueError(f"need at least {2 * min_points} points for two regimes, got {len(n)}")
    order = np.argsort(n)
    n, t2 = n[order], t2[order]
    sig = None if sigma is None else np.asarray(sigma, dtype=float)[order]
    best = None
    for k in range(min_points, len(n) - min_points + 1):
        lo = fit_power_law(n[:k], t2[:k], None if sig is None else sig[:k])
        hi = fit_power_law(n[k:], t2[k:], None if sig is None else sig[k:])
        if best is None or lo.ssr + hi.ssr < best[0] - 1e-12 * max(best[0], 1e-300):
            best = (lo.ssr + hi.ssr, k, lo, hi)
    _, k, lo, hi = best
    combined = np.hypot(lo.psi_se, hi.psi_se)
    single = bool(abs(lo.psi - hi.psi) <= max(3.0 * combined, 1e-9))
    return ScalingFit(float(n[k]), lo.psi, lo.psi_se, hi.psi, hi.psi_se,
                      lo.prefactor, hi.prefactor, single)


# ---------------------------------------------------------------- T1 bound


@dataclass(frozen=True, eq=False)
class T1Bound:
    bound: float
    confidence: float
    grid: np.ndarray
    chi2: np.ndarray
    critical: float
    dof: int


def default_t1_grid():
    return np.geomspace(0.1, 1e5, 400)


def t1_lower_bound(delays, signal, errors, confidence=0.95, grid=None, offset=0.0):
    """Smallest T1 on ``grid`` not rejected by a chi-square test of
    ``A exp(-t/T1) + B``.

    ``A`` is refit at every candidate. ``B`` is fixed to ``offset`` (the
    fully-relaxed level of a normalized signal); pass ``offset=None`` to fit
    it too, which weakens the bound because a free offset lets any short T1
    match data that only show the early-time point.
    """
    t = np.asarray(delays, dtype=float)
    y = np.asarray(signal, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(t) < 3:
        raise ValueError("need at least 3 points")
    if np.any(e <= 0):
        raise ValueError("errors must be > 0")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    grid = default_t1_grid() if grid is None else np.sort(np.asarray(grid, dtype=float))
    w = 1.0 / e ** 2
    stats = np.empty(len(grid))
    for i, t1 in enumerate(grid):
        x = np.exp(-t / t1)
        if offset is None:
            a = np.column_stack([x, np.ones_like(x)]) / e[:, None]
            coef, *_ = np.linalg.lstsq(a, y / e, rcond=None)
            model = coef[0] * x + coef[1]
        else:
            amp = np.sum(w * x * (y - offset)) / np.sum(w * x * x)
            model = amp * x + offset
        stats[i] = np.sum(w * (y - model) ** 2)
    dof = len(t) - (2 if offset is None else 1)
    crit = float(chi2.ppf(confidence, dof))
    ok = np.flatnonzero(stats <= crit)
    if not ok.size:
        raise BoundRejectedError("every candidate T1 is rejected; the decay model does not fit",
                                 T1Bound(np.nan, confidence, grid, stats, crit, dof))
    return T1Bound(float(grid[ok[0]]), confidence, grid, stats, crit, dof)


PAPER_LIKE_DELAYS = (0.001, 0.1, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0)
PAPER_LIKE_ERROR = 0.025


def synthetic_t1_data(t1, rng, delays=PAPER_LIKE_DELAYS, error=PAPER_LIKE_ERROR, amplitude=1.0):
    """Normalized relaxation data ``A exp(-t/T1)`` with Gaussian noise."""
    t = np.asarray(delays, dtype=float)
    clean = amplitude * (np.exp(-t / t1) if np.isfinite(t1) else np.ones_like(t))
    return t, clean + rng.normal(0.0, error, len(t)), np.full(len(t), error)


def synthetic_scaling_data(rng, n=None, psi=(0.92, 0.75), breakpoint=128, t2_at=(16384, 5.3),
                           noise=0.02):
    """Two-regime ``T2 = c N^psi`` data, continuous at ``breakpoint``, with relative noise."""
    n = 2.0 ** np.arange(15) if n is None else np.asarray(n, dtype=float)
    n_ref, t2_ref = t2_at
    c_high = t2_ref / n_ref ** psi[1]
    c_low = c_high * breakpoint ** (psi[1] - psi[0])
    clean = np.where(n < breakpoint, c_low * n ** psi[0], c_high * n ** psi[1])
    noisy = clean * (1.0 + noise * rng.standard_normal(len(n)))
    return n, noisy, noise * clean


# ---------------------------------------------------------------- CSV


def write_coherence_csv(times, values, sigma=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_seconds", "coherence", "sigma"])
    sig = np.zeros(len(times)) if sigma is None else sigma
    for row in zip(times, values, sig):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def read_coherence_csv(text):
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows and rows[0][0].strip() == "t_seconds":
        rows = rows[1:]
    a = np.array(rows, dtype=float).reshape(-1, 3)
    return a[:, 0], a[:, 1], a[:, 2]


def write_scaling_csv(n, t2, sigma=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "T2_seconds", "sigma"])
    sig = np.zeros(len(n)) if sigma is None else sigma
    for a, b, c in zip(n, t2, sig):
        w.writerow([int(a), repr(float(b)), repr(float(c))])
    return buf.getvalue()


def read_scaling_csv(text):
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows and rows[0][0].strip() == "N":
        rows = rows[1:]
    a = np.array(rows, dtype=float).reshape(-1, 3)
    return a[:, 0].astype(int), a[:, 1], a[:, 2]
