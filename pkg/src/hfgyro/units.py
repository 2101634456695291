"""Unit grammar for configuration values.

A quantity is written ``[2pi*]<number> <unit>``. The optional ``2pi*`` prefix
multiplies by 2*pi, so ``"2pi*100 Hz"`` is an angular frequency of
628.3 rad/s. Without the prefix the number is taken as-is in s^-1, which
means ``"100 Hz"`` and ``"100 rad/s"`` are the same value.

Internal units: rad/s for frequencies, Gauss for fields, seconds for times,
rad/s/G for gyromagnetic ratios.
"""

from __future__ import annotations

import math
import re

TWO_PI = 2.0 * math.pi

# (rad/s)/sqrt(Hz) -> (mdeg/s)/sqrt(Hz)
RADPS_TO_MDEGPS = 180.0 / math.pi * 1000.0

_UNITS: dict[str, tuple[str, float]] = {
    "Hz": ("frequency", 1.0),
    "kHz": ("frequency", 1e3),
    "MHz": ("frequency", 1e6),
    "GHz": ("frequency", 1e9),
    "rad/s": ("frequency", 1.0),
    "G": ("field", 1.0),
    "s": ("time", 1.0),
    "ms": ("time", 1e-3),
    "us": ("time", 1e-6),
    "ns": ("time", 1e-9),
    "Hz/G": ("gyromagnetic", 1.0),
    "kHz/G": ("gyromagnetic", 1e3),
    "MHz/G": ("gyromagnetic", 1e6),
}

_PATTERN = re.compile(
    r"^\s*(?P<twopi>2pi\s*\*\s*)?(?P<num>[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?)\s*(?P<unit>[A-Za-z/]+)\s*$"
)


class UnitError(ValueError):
    """A configuration value failed to parse or has the wrong kind of unit."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


def parse_quantity(text, kind: str, key: str | None = None) -> float:
    """Parse ``text`` into the internal unit for ``kind``.

    ``kind`` is one of ``frequency``, ``field``, ``time``, ``gyromagnetic``.
    Bare numbers are rejected: every physical value carries a unit.
    """
    if not isinstance(text, str):
        raise UnitError(f"expected a quantity string with unit, got {text!r}", key)
    m = _PATTERN.match(text)
    if m is None:
        raise UnitError(f"cannot parse quantity {text!r}", key)
    unit = m.group("unit")
    if unit not in _UNITS:
        raise UnitError(f"unknown unit {unit!r} in {text!r}", key)
    unit_kind, scale = _UNITS[unit]
    if unit_kind != kind:
        raise UnitError(f"expected a {kind} but {text!r} is a {unit_kind}", key)
    value = float(m.group("num")) * scale
    if m.group("twopi"):
        value *= TWO_PI
    return value


def format_angular(value: float, unit: str = "Hz") -> str:
    """Render an angular frequency in the ``2pi*<x> <unit>`` notation."""
    _, scale = _UNITS[unit]
    return f"2pi*{value / TWO_PI / scale:g} {unit}"
