"""Reference self-similar sets used by tests and example configs."""
from __future__ import annotations

import math

import numpy as np

from .symbolic import AffineIfs, SymbolicSet, validate_ifs


def cantor() -> tuple[AffineIfs, np.ndarray]:
    """Middle-thirds Cantor set: ``x/3`` and ``x/3 + 2/3``."""
    return validate_ifs([[[1 / 3]], [[1 / 3]]]), np.array([[0.0], [2 / 3]])


def product_cantor() -> tuple[AffineIfs, np.ndarray]:
    """Cantor set squared: four maps ``diag(1/3, 1/3)`` at the corners."""
    t = np.diag([1 / 3, 1 / 3])
    a = np.array([[0, 0], [2 / 3, 0], [0, 2 / 3], [2 / 3, 2 / 3]], float)
    return validate_ifs([t] * 4), a


def cantor_dust() -> tuple[AffineIfs, np.ndarray]:
    """Four corner maps of ratio 1/9 in the plane."""
    t = np.diag([1 / 9, 1 / 9])
    a = np.array([[0, 0], [8 / 9, 0], [0, 8 / 9], [8 / 9, 8 / 9]], float)
    return validate_ifs([t] * 4), a


FIXTURES = {
    "cantor": (cantor, math.log(2) / math.log(3)),
    "product_cantor": (product_cantor, math.log(4) / math.log(3)),
    "cantor_dust": (cantor_dust, math.log(2) / math.log(3)),
}


def fixture(name: str) -> tuple[AffineIfs, np.ndarray, SymbolicSet, float]:
    """``(ifs, translations, full shift, box dimension)`` for a named fixture."""
    try:
        build, dim = FIXTURES[name]
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    ifs, a = build()
    return ifs, a, SymbolicSet.full_shift(), dim
