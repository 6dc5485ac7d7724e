"""Named populations of the Monte Carlo experiments, exactly standardized.

Every population is normalized to mean zero and unit variance using analytic
moments of its components, never empirical ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument

_E = math.e
_SQRT_E = math.sqrt(math.e)


@dataclass(frozen=True)
class Population:
    """Raw sampler plus the exact location/scale standardization."""

    name: str
    raw: Callable[[np.random.Generator, int], np.ndarray]
    shift: float
    scale: float

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return (self.raw(rng, size) - self.shift) / self.scale


def _lognormal(rng, size):
    return rng.lognormal(0.0, 1.0, size)


def _pareto25(rng, size):
    # classical Pareto with exponent 2.5 and minimum 1 (tail index 0.4)
    return rng.pareto(2.5, size) + 1.0


def _mix(rng, size, p_second, first, second):
    pick = rng.random(size) < p_second
    out = first(rng, size)
    out[pick] = second(rng, size)[pick]
    return out


def _make_catalog() -> dict[str, Population]:
    # lognormal(0,1): mean e^{1/2}, variance e^2 - e
    logn = Population("LogN", _lognormal, _SQRT_E, math.sqrt(_E * _E - _E))
    # F(4,5): mean d2/(d2-2), var 2 d2^2 (d1+d2-2) / (d1 (d2-2)^2 (d2-4))
    f_mean = 5.0 / 3.0
    f_var = 2.0 * 25.0 * 7.0 / (4.0 * 9.0 * 1.0)
    # Pareto exponent a=2.5, min 1: mean a/(a-1), var a/((a-1)^2 (a-2))
    p_mean = 2.5 / 1.5
    p_var = 2.5 / (1.5 ** 2 * 0.5)
    # equal-probability normal/lognormal mixture
    m1_mean = 0.5 * _SQRT_E
    m1_var = 0.5 * 1.0 + 0.5 * _E * _E - m1_mean ** 2
    # 95/5 mixture of N(0, 1/25) and lognormal
    m2_mean = 0.05 * _SQRT_E
    m2_var = 0.95 * 0.04 + 0.05 * _E * _E - m2_mean ** 2
    return {
        "N(0,1)": Population("N(0,1)", lambda r, m: r.standard_normal(m), 0.0, 1.0),
        "LogN": logn,
        "F(4,5)": Population("F(4,5)", lambda r, m: r.f(4, 5, m), f_mean, math.sqrt(f_var)),
        "t(3)": Population("t(3)", lambda r, m: r.standard_t(3, m), 0.0, math.sqrt(3.0)),
        "P(0.4)": Population("P(0.4)", _pareto25, p_mean, math.sqrt(p_var)),
        "Mix1": Population(
            "Mix1",
            lambda r, m: _mix(r, m, 0.5, lambda rr, mm: rr.standard_normal(mm), _lognormal),
            m1_mean,
            math.sqrt(m1_var),
        ),
        "Mix2": Population(
            "Mix2",
            lambda r, m: _mix(
                r, m, 0.05, lambda rr, mm: 0.2 * rr.standard_normal(mm), _lognormal
            ),
            m2_mean,
            math.sqrt(m2_var),
        ),
    }


_CATALOG = _make_catalog()

_ALIASES = {
    "n(0,1)": "N(0,1)",
    "n01": "N(0,1)",
    "normal": "N(0,1)",
    "logn": "LogN",
    "lognormal": "LogN",
    "f(4,5)": "F(4,5)",
    "f45": "F(4,5)",
    "t(3)": "t(3)",
    "t3": "t(3)",
    "p(0.4)": "P(0.4)",
    "p04": "P(0.4)",
    "pareto": "P(0.4)",
    "mix1": "Mix1",
    "mix2": "Mix2",
}


def population_names() -> list[str]:
    return list(_CATALOG)


def make_population(name: str) -> Population:
    """Look up a population by its table name (case-insensitive aliases ok)."""
    if name in _CATALOG:
        return _CATALOG[name]
    key = name.strip().lower()
    if key in _ALIASES:
        return _CATALOG[_ALIASES[key]]
    raise InvalidArgument(f"unknown population {name!r}; known: {', '.join(_CATALOG)}")
