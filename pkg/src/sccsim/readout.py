"""Photon-count histograms, threshold classification and readout fidelity."""
from dataclasses import dataclass
import csv
import io

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .physics import DomainError, resonant_ionization_rate, saturation

BRIGHT = "bright"
DARK = "dark"

BOOTSTRAP_RESAMPLES = 1000
CI_LEVEL = 0.68


class EmptyHistogramError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Histogram:
    """Shot counts per photon number, stored densely: ``shots[n]`` shots saw ``n`` photons."""

    shots: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.shots, dtype=np.int64).ravel()
        if np.any(a < 0):
            raise ValueError("shot counts must be >= 0")
        # trailing empty bins carry no information; trimming keeps equality simple
        nz = np.flatnonzero(a)
        a = a[: nz[-1] + 1] if nz.size else a[:0]
        a.setflags(write=False)
        object.__setattr__(self, "shots", a)

    @classmethod
    def from_counts(cls, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.size and counts.min() < 0:
            raise ValueError("photon counts must be >= 0")
        return cls(np.bincount(counts) if counts.size else np.zeros(0, np.int64))

    @classmethod
    def from_dict(cls, bins):
        if not bins:
            return cls(np.zeros(0, np.int64))
        if min(bins) < 0:
            raise ValueError("photon numbers must be >= 0")
        a = np.zeros(max(bins) + 1, dtype=np.int64)
        for k, v in bins.items():
            a[int(k)] += int(v)
        return cls(a)

    @property
    def bin_counts(self):
        return {int(k): int(self.shots[k]) for k in np.flatnonzero(self.shots)}

    @property
    def total_shots(self):
        return int(self.shots.sum())

    @property
    def max_count(self):
        return len(self.shots) - 1

    def mean(self):
        self._require()
        return float(np.arange(len(self.shots)) @ self.shots / self.total_shots)

    def at_least(self, cutoff):
        """Number of shots with ``count >= cutoff``."""
        return int(self.shots[max(int(cutoff), 0):].sum())

    def scaled(self, factor):
        return Histogram(self.shots * int(factor))

    def _require(self):
        if self.total_shots == 0:
            raise EmptyHistogramError("histogram has no shots")

    def __eq__(self, other):
        return isinstance(other, Histogram) and np.array_equal(self.shots, other.shots)

    def __repr__(self):
        return f"Histogram({self.bin_counts})"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["photon_count", "shots"])
        for n, s in enumerate(self.shots):
            w.writerow([n, int(s)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if rows and rows[0] and rows[0][0].strip() == "photon_count":
            rows = rows[1:]
        return cls.from_dict({int(r[0]): int(r[1]) for r in rows if r})


@dataclass(frozen=True)
class FidelityReport:
    cutoff: int
    fidelity: float
    p01: float
    p10: float
    ci_low: float
    ci_high: float


def classify(count, cutoff):
    """Bright iff ``count >= cutoff``."""
    return BRIGHT if count >= cutoff else DARK


def fidelity_from_errors(p01, p10):
    return 1.0 - (p01 + p10) / 2.0


def _error_rates(bright, dark, cutoff):
    p01 = dark.at_least(cutoff) / dark.total_shots
    p10 = 1.0 - bright.at_least(cutoff) / bright.total_shots
    return p01, p10


def bootstrap_interval(p01, p10, n_dark, n_bright, seed=0, resamples=BOOTSTRAP_RESAMPLES,
                       level=CI_LEVEL):
    """Percentile interval on F from resampling shots.

    Resampling shots with replacement and reclassifying them only changes how
    many land on each side of the cutoff, so each resample draws the two error
    counts binomially.
    """
    rng = np.random.default_rng(seed)
    f = fidelity_from_errors(rng.binomial(n_dark, p01, resamples) / n_dark,
                             rng.binomial(n_bright, p10, resamples) / n_bright)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(f, [tail, 1.0 - tail])
    point = fidelity_from_errors(p01, p10)
    # percentile intervals from a skewed or discrete bootstrap can miss the estimate
    return float(min(lo, point)), float(max(hi, point))


def fidelity(bright_hist, dark_hist, cutoff, seed=0):
    bright_hist._require()
    dark_hist._require()
    p01, p10 = _error_rates(bright_hist, dark_hist, cutoff)
    lo, hi = bootstrap_interval(p01, p10, dark_hist.total_shots, bright_hist.total_shots, seed)
    return FidelityReport(int(cutoff), fidelity_from_errors(p01, p10), p01, p10, lo, hi)


def fidelity_scan(bright_hist, dark_hist):
    """F for every cutoff in ``0 .. max observed + 1`` (no bootstrap)."""
    bright_hist._require()
    dark_hist._require()
    top = max(bright_hist.max_count, dark_hist.max_count) + 1
    cuts = np.arange(top + 1)
    f = np.array([fidelity_from_errors(*_error_rates(bright_hist, dark_hist, c)) for c in cuts])
    return cuts, f


def optimal_cutoff(bright_hist, dark_hist, seed=0):
    cuts, f = fidelity_scan(bright_hist, dark_hist)
    best = int(cuts[np.argmax(f)])  # argmax returns the first, i.e. smallest, maximizer
    return best, fidelity(bright_hist, dark_hist, best, seed)


# ---------------------------------------------------------------- photons per shot


def _total_loss_rate(params, p_res):
    return resonant_ionization_rate(params, p_res) + 1.0 / params.tau_charge


def photons_per_shot(params, p_res):
    """Mean photons collected before the bright charge state is lost."""
    if not p_res > 0:
        raise DomainError(f"resonant power must be > 0, got {p_res}")
    rate = params.detected_rate_sat * saturation(params, p_res)
    return rate / _total_loss_rate(params, p_res)


def photons_per_shot_quadrature(params, p_res):
    """Same quantity as the time integral of the surviving emission rate."""
    if not p_res > 0:
        raise DomainError(f"resonant power must be > 0, got {p_res}")
    rate = params.detected_rate_sat * saturation(params, p_res)
    g = _total_loss_rate(params, p_res)
    val, _ = quad(lambda t: rate * np.exp(-g * t), 0.0, np.inf, epsabs=0, epsrel=1e-10)
    return val


def photons_per_shot_peak(params):
    """``(P*, N*)``: power maximizing photons per shot and the maximum.

    With ``s = P/(P+Psat)`` and ionization ``k P s`` the ratio reduces to
    ``R P / (k P^2 + g (P + Psat))`` whose stationary point is
    ``P* = sqrt(g Psat / k)``.
    """
    g = 1.0 / params.tau_charge
    k = params.resonant_ion_slope
    psat = params.resonant_sat_power
    if k == 0:
        return np.inf, params.detected_rate_sat * params.tau_charge
    p_star = np.sqrt(g * psat / k)
    return p_star, params.detected_rate_sat / (g + 2.0 * np.sqrt(g * k * psat))


def photons_per_shot_peak_numeric(params, bounds=(1e-12, 1e-1)):
    """Peak located by bounded search in log-power (oracle for the closed form)."""
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    res = minimize_scalar(lambda x: -photons_per_shot_quadrature(params, np.exp(x)),
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    return float(np.exp(res.x)), float(-res.fun)
