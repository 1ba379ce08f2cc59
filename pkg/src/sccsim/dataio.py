"""Run configuration, time-tag import/export and result tables."""
from dataclasses import dataclass, field
import csv
import io
import json

import numpy as np

from .readout import Histogram
from .units import UnitError, parse_quantity


class ConfigError(ValueError):
    pass


FORMATS = ("csv", "svg")
# short names accepted at the top level of a config, mapped to sequence paths
ALIASES = {
    "p1151": "scc.ionize1151.power",
    "p_scc": "scc.resonant_ex.power",
    "t_ion": "scc.duration",
    "t_readout": "readout.duration",
}
_KEYS = {"preset", "experiment", "params", "seed", "shots", "out", "formats", "workers",
         "overrides"} | set(ALIASES)


@dataclass(frozen=True)
class RunConfig:
    preset: str = None
    experiment: dict = None
    params: str = None
    seed: int = None  # None: the preset's own seed, else 0
    shots: int = None
    out: str = "out"
    formats: tuple = FORMATS
    workers: int = 1
    overrides: dict = field(default_factory=dict)  # sequence path -> SI value

    def __post_init__(self):
        object.__setattr__(self, "formats", tuple(self.formats))
        object.__setattr__(self, "overrides", dict(sorted(self.overrides.items())))


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _int(d, key, minimum):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(f"config.{key}", f"expected an integer, got {v!r}")
    if v < minimum:
        _fail(f"config.{key}", f"must be >= {minimum}, got {v}")
    return v


def _quantity(path, value, kind=None):
    try:
        return parse_quantity(value, kind)
    except UnitError as exc:
        _fail(path, str(exc))


def _override_kind(path):
    return "time" if path.endswith("duration") else "power" if path.endswith("power") else None


def config_from_dict(d):
    if not isinstance(d, dict):
        _fail("config", "top level must be a JSON object")
    unknown = sorted(set(d) - _KEYS)
    if unknown:
        _fail(f"config.{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(_KEYS))})")
    if ("preset" in d) == ("experiment" in d):
        _fail("config", "give exactly one of 'preset' or 'experiment'")
    kw = {}
    if "preset" in d:
        if not isinstance(d["preset"], str):
            _fail("config.preset", f"expected a string, got {d['preset']!r}")
        kw["preset"] = d["preset"]
    if "experiment" in d:
        if not isinstance(d["experiment"], dict):
            _fail("config.experiment", "expected an object")
        kw["experiment"] = d["experiment"]
    if d.get("params") is not None:
        if not isinstance(d["params"], str):
            _fail("config.params", "expected a file path")
        kw["params"] = d["params"]
    if "seed" in d:
        kw["seed"] = _int(d, "seed", 0)
    if d.get("shots") is not None:
        kw["shots"] = _int(d, "shots", 1)
    if "workers" in d:
        kw["workers"] = _int(d, "workers", 1)
    if "out" in d:
        if not isinstance(d["out"], str) or not d["out"]:
            _fail("config.out", "expected a directory path")
        kw["out"] = d["out"]
    if "formats" in d:
        f = d["formats"]
        if not isinstance(f, list) or not f or any(x not in FORMATS for x in f):
            _fail("config.formats", f"expected a nonempty subset of {list(FORMATS)}, got {f!r}")
        kw["formats"] = tuple(x for x in FORMATS if x in f)
    overrides = {}
    raw = d.get("overrides", {})
    if not isinstance(raw, dict):
        _fail("config.overrides", "expected an object of sequence paths")
    for path, v in raw.items():
        if len(path.split(".")) not in (2, 3):
            _fail(f"config.overrides.{path}", "expected 'group.duration' or 'group.kind.field'")
        overrides[path] = _quantity(f"config.overrides.{path}", v, _override_kind(path))
    for alias, path in ALIASES.items():
        if alias in d:
            overrides[path] = _quantity(f"config.{alias}", d[alias], _override_kind(path))
    kw["overrides"] = overrides
    return RunConfig(**kw)


def parse_config(text):
    """Validate a JSON run configuration; quantities are normalized to SI."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return config_from_dict(d)


def serialize_config(cfg):
    d = {}
    if cfg.preset is not None:
        d["preset"] = cfg.preset
    if cfg.experiment is not None:
        d["experiment"] = cfg.experiment
    if cfg.params is not None:
        d["params"] = cfg.params
    if cfg.seed is not None:
        d["seed"] = cfg.seed
    if cfg.shots is not None:
        d["shots"] = cfg.shots
    d["out"] = cfg.out
    d["formats"] = list(cfg.formats)
    d["workers"] = cfg.workers
    if cfg.overrides:
        d["overrides"] = dict(cfg.overrides)
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- time tags


@dataclass(frozen=True, order=True)
class TimeTagRecord:
    shot_id: int
    arrival_time: float  # ns since shot start
    channel: int = 0


@dataclass(frozen=True, eq=False)
class TimeTagData:
    counts: np.ndarray  # photons per shot within the window
    records: int
    malformed: int
    problems: tuple = ()

    @property
    def histogram(self):
        return Histogram.from_counts(self.counts)

    @property
    def shots(self):
        return len(self.counts)


class TimeTagError(ValueError):
    pass


def _parse_record(row):
    if len(row) != 3:
        raise ValueError(f"expected 3 fields, got {len(row)}")
    shot = int(row[0])
    t = float(row[1])
    ch = int(row[2])
    if shot < 0 or not t >= 0 or ch < 0:
        raise ValueError("shot_id, time and channel must be >= 0")
    return TimeTagRecord(shot, t, ch)


def ingest_timetags(stream, window_ns=None, shots=None, strict=False, channels=None):
    """Count photons per shot from ``shot_id,time_ns,channel`` lines.

    A ``# shots: N`` comment fixes the number of shots (so photonless shots
    count too); otherwise ``shots`` or the largest shot id decides. Records
    outside ``[0, window_ns)`` or on other ``channels`` are ignored. In strict
    mode the first malformed or out-of-order line raises ``TimeTagError``;
    otherwise such lines are counted and skipped.
    """
    text = stream if isinstance(stream, str) else stream.read()
    declared = None
    recs = []
    malformed = 0
    problems = []
    last = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, _, val = s[1:].partition(":")
            if key.strip() == "shots":
                try:
                    declared = int(val)
                except ValueError:
                    raise TimeTagError(f"line {lineno}: bad shots header {s!r}") from None
            continue
        row = next(csv.reader([s]))
        if row[0].strip() == "shot_id":
            continue
        try:
            rec = _parse_record([x.strip() for x in row])
        except ValueError as exc:
            if strict:
                raise TimeTagError(f"line {lineno}: {exc}") from None
            malformed += 1
            problems.append(f"line {lineno}: {exc}")
            continue
        key = (rec.shot_id, rec.arrival_time)
        if strict and last is not None and key < last:
            raise TimeTagError(f"line {lineno}: records not sorted by (shot_id, time)")
        last = key
        recs.append(rec)
    n = declared if declared is not None else shots
    if n is None:
        n = max((r.shot_id for r in recs), default=-1) + 1
    counts = np.zeros(n, dtype=np.int64)
    for r in recs:
        if r.shot_id >= n:
            if strict:
                raise TimeTagError(f"shot {r.shot_id} beyond declared {n} shots")
            malformed += 1
            continue
        if window_ns is not None and not r.arrival_time < window_ns:
            continue
        if channels is not None and r.channel not in channels:
            continue
        counts[r.shot_id] += 1
    return TimeTagData(counts, len(recs), malformed, tuple(problems))


def export_timetags(counts, window_ns, seed=0, channel=0):
    """Time-tag CSV whose per-shot counts are ``counts``; arrival times are
    uniform in the window (seeded), integer nanoseconds, sorted."""
    counts = np.asarray(counts, dtype=np.int64)
    rng = np.random.default_rng(seed)
    buf = io.StringIO()
    buf.write(f"# shots: {len(counts)}\n")
    buf.write("shot_id,time_ns,channel\n")
    for i, c in enumerate(counts):
        if c:
            ts = np.sort(rng.integers(0, int(window_ns), int(c)))
            buf.writelines(f"{i},{t},{channel}\n" for t in ts)
    return buf.getvalue()


# ---------------------------------------------------------------- result tables


RESULT_COLUMNS = ("sweep_value", "mean0", "mean1", "contrast", "fidelity", "ci_low", "ci_high")


def fmt(x):
    """Shortest round-tripping text for a number (stable across runs)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if np.isnan(x) else repr(x)


def table_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) if isinstance(x, (int, float, np.integer, np.floating)) else x
                    for x in r])
    return buf.getvalue()


def results_csv(values, mean0, mean1, contrast, fidelity, ci_low, ci_high):
    return table_csv(RESULT_COLUMNS, zip(values, mean0, mean1, contrast, fidelity, ci_low, ci_high))


def read_table(text):
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
