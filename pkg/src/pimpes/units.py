"""Field-unit to SI conversion.

Quantities are written as ``"<number> <unit>"`` strings, e.g. ``"100 bar"`` or
``"60 bar*md^0.5"``. Bare numbers are taken to be SI already.
"""

from __future__ import annotations

import math
from typing import Any, Mapping

MILLIDARCY = 9.869233e-16  # m^2
BAR = 1.0e5  # Pa
CENTIPOISE = 1.0e-3  # Pa s
DAY = 86400.0  # s

_FACTORS = {
    "": 1.0,
    "1": 1.0,
    "m": 1.0,
    "md": MILLIDARCY,
    "m2": 1.0,
    "m^2": 1.0,
    "m²": 1.0,
    "bar": BAR,
    "pa": 1.0,
    "cp": CENTIPOISE,
    "pa*s": 1.0,
    "pa·s": 1.0,
    "pa.s": 1.0,
    "day": DAY,
    "days": DAY,
    "s": 1.0,
    "kg/m3": 1.0,
    "kg/m^3": 1.0,
    "kg/m³": 1.0,
    "m3/day": 1.0 / DAY,
    "m^3/day": 1.0 / DAY,
    "m³/day": 1.0 / DAY,
    "m3/s": 1.0,
    "m/s2": 1.0,
    "m/s^2": 1.0,
    "bar*md^0.5": BAR * math.sqrt(MILLIDARCY),
    "bar·md^{1/2}": BAR * math.sqrt(MILLIDARCY),
    "bar*md^(1/2)": BAR * math.sqrt(MILLIDARCY),
    "pa*m": 1.0,
    "pa·m": 1.0,
}


class UnitError(ValueError):
    pass


def unit_factor(unit: str) -> float:
    key = unit.strip().lower().replace(" ", "")
    try:
        return _FACTORS[key]
    except KeyError:
        raise UnitError(f"unknown unit {unit!r}") from None


def parse_quantity(value: Any) -> float:
    """Convert ``"0.1 day"`` to ``8640.0``; numbers pass through unchanged."""
    if isinstance(value, bool):
        raise UnitError(f"expected a quantity, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"expected a quantity, got {value!r}")
    text = value.strip()
    number, _, unit = text.partition(" ")
    try:
        x = float(number)
    except ValueError:
        raise UnitError(f"cannot parse quantity {value!r}") from None
    return x * unit_factor(unit)


def normalize_units(raw: Any) -> Any:
    """Recursively convert every quantity string in a nested config to SI.

    Strings that do not start with a number (names, paths, predicates) are
    left alone.
    """
    if isinstance(raw, Mapping):
        return {k: normalize_units(v) for k, v in raw.items()}
    if isinstance(raw, (list, tuple)):
        return [normalize_units(v) for v in raw]
    if isinstance(raw, str):
        head = raw.strip().split(" ", 1)[0]
        try:
            float(head)
        except ValueError:
            return raw
        return parse_quantity(raw)
    return raw
