import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sccsim.dataio import (ConfigError, RunConfig, TimeTagError, export_timetags, fmt,
                           ingest_timetags, parse_config, read_table, results_csv, serialize_config)
from sccsim.readout import Histogram


def test_minimal_config_gets_defaults():
    cfg = parse_config('{"preset": "fig2a"}')
    assert cfg == RunConfig(preset="fig2a")
    assert cfg.formats == ("csv", "svg") and cfg.workers == 1 and cfg.seed is None


def test_alias_units():
    cfg = parse_config('{"preset": "fig4d", "p1151": "71 mW", "t_ion": "1.39 us"}')
    assert cfg.overrides == {"scc.ionize1151.power": 0.071, "scc.duration": 1.39e-6}


@pytest.mark.parametrize("text, where", [
    ('{"preset": "fig2a", "shots": -5}', "config.shots"),
    ('{"preset": "fig2a", "colour": 1}', "config.colour"),
    ('{"preset": "fig2a", "p1151": "71 mV"}', "config.p1151"),
    ('{"preset": "fig2a", "overrides": {"scc": 1}}', "config.overrides.scc"),
    ('{"preset": "fig2a", "formats": ["png"]}', "config.formats"),
    ('{"preset": "fig2a", "experiment": {}}', "config"),
    ('{"seed": 1}', "config"),
    ('[1, 2]', "config"),
    ('{not json', "config"),
])
def test_config_errors_name_the_field(text, where):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert str(exc.value).startswith(where)


configs = st.builds(
    lambda preset, seed, shots, workers, fmts, ov: {
        "preset": preset, "seed": seed, "shots": shots, "workers": workers,
        "formats": fmts, "overrides": ov},
    st.sampled_from(["fig2a", "fig4a", "fig5c"]),
    st.integers(0, 2**31), st.integers(1, 10**6), st.integers(1, 8),
    st.sampled_from([["csv"], ["svg"], ["csv", "svg"]]),
    st.dictionaries(st.sampled_from(["scc.duration", "readout.duration", "scc.ionize1151.power"]),
                    st.floats(0, 1, allow_nan=False), max_size=3))


@settings(max_examples=60, deadline=None)
@given(configs)
def test_parse_serialize_fixed_point(d):
    cfg = parse_config(json.dumps(d))
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text


def test_timetag_examples():
    empty = ingest_timetags("")
    assert empty.shots == 0 and empty.histogram.total_shots == 0
    three = ingest_timetags("shot_id,time_ns,channel\n0,10,0\n0,20,0\n0,30,0\n", window_ns=100)
    assert three.histogram.bin_counts == {3: 1}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=300), st.integers(0, 1000))
def test_timetag_roundtrip(counts, seed):
    counts = np.array(counts)
    back = ingest_timetags(export_timetags(counts, 5000, seed=seed), window_ns=5000, strict=True)
    assert np.array_equal(back.counts, counts)
    assert back.histogram == Histogram.from_counts(counts)


def test_window_and_channels():
    text = "0,10,0\n0,200,0\n1,5,1\n"
    assert list(ingest_timetags(text, window_ns=100).counts) == [1, 1]
    assert list(ingest_timetags(text, channels={0}).counts) == [2, 0]


def test_malformed_lenient_and_strict():
    text = "0,10,0\nzero,5,0\n0,1.5,x\n1,3,0\n"
    d = ingest_timetags(text)
    assert d.malformed == 2 and list(d.counts) == [1, 1] and len(d.problems) == 2
    with pytest.raises(TimeTagError, match="line 2"):
        ingest_timetags(text, strict=True)
    with pytest.raises(TimeTagError, match="sorted"):
        ingest_timetags("1,3,0\n0,5,0\n", strict=True)
    with pytest.raises(TimeTagError):
        ingest_timetags("# shots: 1\n3,5,0\n", strict=True)


def test_result_table_roundtrip():
    text = results_csv([1e-6, 2e-6], [1.5, 2.5], [3.0, 4.0], [0.1, 0.2], [0.8, 0.81], [0.79, 0.8], [0.81, 0.82])
    t = read_table(text)
    assert list(t["sweep_value"]) == [1e-6, 2e-6] and list(t["ci_high"]) == [0.81, 0.82]
    assert fmt(0.1) == "0.1" and fmt(np.int64(3)) == "3" and fmt(float("nan")) == "nan"
