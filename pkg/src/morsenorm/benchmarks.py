"""Reference fields used by the demos, the CLI self-check and the tests."""

from __future__ import annotations

import math

from .jets import Jet, PolyVectorField
from .flows import TruncatedField

GOLDEN = (1 + math.sqrt(5)) / 2


def golden_saddle(coupling: float = 1.0, order: int = 4) -> PolyVectorField:
    """``x1 d1 - phi x2 d2 + coupling x1 x2 d1`` with ``phi`` the golden ratio.

    The eigenvalues ``(1, -phi)`` admit no resonance, and the single mixed
    term vanishes on both axes, so the axes stay invariant.
    """
    lams = (1.0, -GOLDEN)
    x1 = Jet(2, order, {(1, 0): 1.0, (1, 1): float(coupling)})
    x2 = Jet(2, order, {(0, 1): -GOLDEN})
    return PolyVectorField([x1, x2], lams)


def golden_saddle_field(coupling: float = 1.0, r_in: float = 0.5, r_out: float = 1.0) -> TruncatedField:
    V = golden_saddle(coupling)
    return TruncatedField(V, r_in, r_out, V.eigen_linear_part)


def example_resonant_field(order: int = 6) -> PolyVectorField:
    """``2(x1 + x2^2) d1 + x2 d2``: eigenvalues ``(2, 1)`` with the resonance ``2 = 2 * 1``."""
    return PolyVectorField([Jet(2, order, {(1, 0): 2, (0, 2): 2}), Jet(2, order, {(0, 1): 1})], (2, 1))
