"""Poincare-Dulac normalization, order by order, in exact rational arithmetic."""

from morsenorm.benchmarks import example_resonant_field
from morsenorm.normal_form import normalize_to_order, obstruction_ledger
from morsenorm.parser import format_jet, parse_expression
from morsenorm.jets import PolyVectorField

# rates (3, -2) have no resonance through order 5, so every nonlinear term goes away
V = PolyVectorField([parse_expression("3*x1 + x2^2 + x1*x2", 2, 5),
                     parse_expression("-2*x2 + x1^3", 2, 5)], (3, -2))
Psi, W, steps = normalize_to_order(V, (3, -2), 5)
print("normalized field:")
for c in W.components:
    print("   ", format_jet(c))
print("change of coordinates (new -> old):")
for c in Psi.components:
    print("   ", format_jet(c))

# the resonant example: 2 = 2 * 1, so x2^2 d1 cannot be removed
Psi, W, steps = normalize_to_order(example_resonant_field(6), (2, 1), 6)
for a, i, c in obstruction_ledger(steps):
    print(f"obstruction x^{a} d{i + 1} with coefficient {c}")
