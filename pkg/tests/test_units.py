import math

import pytest
from hypothesis import given, strategies as st

from sccsim.units import UnitError, parse_quantity


@pytest.mark.parametrize("text, value", [
    ("71 mW", 0.071), ("1.39 us", 1.39e-6), ("1.39 μs", 1.39e-6), ("1.39 µs", 1.39e-6),
    ("3.3 us", 3.3e-6), ("6.9 s", 6.9), ("993 Hz/uW", 993e6), ("10.6 MHz/W", 10.6e6),
    ("95.7 kHz/W", 95.7e3), ("5 kHz", 5e3), ("1.096 eV", 1.096), ("10 nW", 1e-8), ("2e-3", 2e-3),
])
def test_parse(text, value):
    assert parse_quantity(text) == value


def test_plain_numbers_pass_through():
    assert parse_quantity(5) == 5.0 and parse_quantity(0.25) == 0.25


@pytest.mark.parametrize("bad", ["71 furlongs", "mW", "", "1..2 s", True, None, [1]])
def test_rejects_garbage(bad):
    with pytest.raises(UnitError):
        parse_quantity(bad)


def test_kind_mismatch():
    with pytest.raises(UnitError, match="expected a time"):
        parse_quantity("71 mW", "time")


@given(st.integers(-10**6, 10**6), st.sampled_from([("m", 1e-3), ("u", 1e-6), ("n", 1e-9), ("k", 1e3), ("", 1.0)]))
def test_prefix_scaling_matches_float_literal(mantissa, prefix):
    p, scale = prefix
    got = parse_quantity(f"{mantissa} {p}W")
    assert math.isclose(got, mantissa * scale, rel_tol=1e-15, abs_tol=0)
