"""JSON forms of jets, coordinate changes and vector fields.

A coefficient is stored as ``{"exponent": [...], "component": i, "num": p, "den": q}``
with a 1-based component index.  Float coefficients are written through
their exact binary value (``float.as_integer_ratio``) plus a ``"value"`` field
for readability, so both modes round-trip exactly.
"""

from __future__ import annotations

from fractions import Fraction

from gmpy2 import mpq

from .jets import CoordinateChange, Jet, PolyVectorField, grlex_key, is_exact

__all__ = ["coeff_to_json", "jets_to_json", "jets_from_json", "change_to_json", "change_from_json",
           "field_to_json", "field_from_json", "rational_str"]


def rational_str(c) -> str:
    if is_exact(c):
        return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
    return repr(float(c))


def coeff_to_json(a, i, c) -> dict:
    if is_exact(c):
        num, den = int(c.numerator), int(c.denominator)
        return {"exponent": list(a), "component": i + 1, "num": num, "den": den}
    num, den = float(c).as_integer_ratio()
    return {"exponent": list(a), "component": i + 1, "num": num, "den": den, "value": float(c)}


def jets_to_json(jets) -> list:
    out = []
    for i, j in enumerate(jets):
        for a in sorted(j.terms, key=grlex_key):
            c = j.terms[a]
            out.append(coeff_to_json(a, i, c))
    return out


def jets_from_json(entries, n: int, order: int, exact: bool = True) -> list:
    comps = [dict() for _ in range(n)]
    for e in entries:
        c = mpq(e["num"], e["den"])
        comps[e["component"] - 1][tuple(e["exponent"])] = c if exact else float(Fraction(e["num"], e["den"]))
    return [Jet(n, order, t) for t in comps]


def change_to_json(change: CoordinateChange) -> dict:
    return {"dimension": change.n, "order": change.order, "exact": change.exact,
            "terms": jets_to_json(change.components)}


def change_from_json(data: dict) -> CoordinateChange:
    return CoordinateChange(jets_from_json(data["terms"], data["dimension"], data["order"], data["exact"]))


def field_to_json(V: PolyVectorField) -> dict:
    return {"dimension": V.n, "order": V.order, "exact": V.exact, "terms": jets_to_json(V.components)}


def field_from_json(data: dict) -> PolyVectorField:
    return PolyVectorField(jets_from_json(data["terms"], data["dimension"], data["order"], data["exact"]))
