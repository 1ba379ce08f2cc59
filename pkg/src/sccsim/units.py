"""Unit-suffixed quantity parsing.

Everything is stored in SI (W, s, Hz). Config files may write
``"71 mW"`` or ``"1.39 us"``; plain numbers are taken as SI already.
"""
import re
from decimal import Decimal

# decimal exponents, so "3.3 us" is exactly the float 3.3e-6
_PREFIX = {"": 0, "k": 3, "M": 6, "G": 9, "m": -3, "u": -6,
           "µ": -6,  # micro sign
           "μ": -6,  # greek mu
           "n": -9, "p": -12}

_BASE = {"W": "power", "s": "time", "Hz": "rate", "eV": "energy"}

# Compound units used by the rate-law slopes (rate per power).
_COMPOUND = re.compile(r"^(?P<num>[kMG]?)Hz/(?P<den>[muµμn]?)W$")

_QUANTITY = re.compile(r"^\s*(?P<value>[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)\s*(?P<unit>\S*)\s*$")


class UnitError(ValueError):
    pass


def _unit_scale(unit):
    m = _COMPOUND.match(unit)
    if m:
        return _PREFIX[m["num"]] - _PREFIX[m["den"]], "slope"
    for base, kind in sorted(_BASE.items(), key=lambda kv: -len(kv[0])):
        if unit.endswith(base):
            prefix = unit[: -len(base)]
            if prefix in _PREFIX:
                return _PREFIX[prefix], kind
    raise UnitError(f"unknown unit suffix {unit!r}")


def parse_quantity(value, kind=None):
    """Return ``value`` as an SI float.

    ``kind`` (``"power"``, ``"time"``, ``"rate"``, ``"energy"``, ``"slope"``)
    restricts which suffixes are accepted.
    """
    if isinstance(value, bool):
        raise UnitError(f"expected a number or quantity string, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"expected a number or quantity string, got {value!r}")
    m = _QUANTITY.match(value)
    if m is None:
        raise UnitError(f"cannot parse quantity {value!r}")
    unit = m["unit"]
    if not unit:
        return float(m["value"])
    exp, unit_kind = _unit_scale(unit)
    if kind is not None and unit_kind != kind:
        raise UnitError(f"{value!r} is a {unit_kind}, expected a {kind}")
    return float(Decimal(m["value"]).scaleb(exp))
