"""From a problem spec to a diagonalized field at a critical point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flows import TruncatedField
from .jets import CoordinateChange, PolyVectorField, pullback_field
from .normal_form import (
    NormalFormError,
    invariant_manifold_jet,
    normalize_to_order,
    remove_block_dynamics,
    straighten_manifolds,
)
from .spectrum import (
    DegenerateCriticalPointError,
    ResonanceReport,
    Spectrum,
    check_N_linearity,
    diagonalized_field,
    find_critical_points,
)

__all__ = ["Prepared", "base_point", "prepare", "resonance_for", "unstable_block_linear", "block_linear_field"]


@dataclass(frozen=True)
class Prepared:
    """Diagonalized field ``W = A^* V`` at ``point`` with its spectrum."""

    spec: object
    point: tuple
    spectrum: Spectrum
    field: PolyVectorField
    diagonalizer: CoordinateChange
    lams: tuple
    exact: bool
    resonance: ResonanceReport

    def truncated_field(self, field=None) -> TruncatedField:
        W = (self.field if field is None else field).to_float()
        return TruncatedField(W, self.spec.bump_inner, self.spec.bump_outer, [float(l) for l in self.lams])

    @property
    def float_lams(self):
        return np.array([float(l) for l in self.lams])


def base_point(spec):
    """The origin if it is critical, else the nearest critical point found by Newton."""
    n = spec.n
    if spec.mode == "field":
        return (0,) * n
    if all(spec.function.coefficient(tuple(int(i == j) for j in range(n))) == 0 for i in range(n)):
        return (0,) * n
    report = find_critical_points(spec, return_report=True)
    if not report.points:
        if report.degenerate:
            raise DegenerateCriticalPointError("only degenerate critical points were found")
        raise ValueError("no critical point found in the domain")
    return min(report.points, key=lambda p: float(np.linalg.norm(p)))


def resonance_for(spectrum: Spectrum, max_order: int, float_zero: float) -> ResonanceReport:
    if spectrum.exact_eigenvalues is not None:
        return check_N_linearity(spectrum.exact_eigenvalues, max_order, "exact")
    return check_N_linearity(spectrum.eigenvalues, max_order, "float", float_zero)


def prepare(spec, order: int | None = None, exact: bool | None = None) -> Prepared:
    point = base_point(spec)
    W, sp, A = diagonalized_field(spec, point, exact=exact, order=order)
    ex = W.exact
    lams = sp.exact_eigenvalues if ex else sp.eigenvalues
    res = resonance_for(sp, spec.resonance_order, spec.float_zero)
    return Prepared(spec, tuple(point), sp, W, A, tuple(lams), ex, res)


def unstable_block_linear(field: PolyVectorField, k: int) -> bool:
    """True when ``field`` equals ``V0`` on the span of the first ``k`` coordinates.

    The exit-time map is the identity there, so it is a conjugacy only in
    that case.
    """
    return not any(all(e == 0 for e in a[k:]) for a, i, c in field.residual_terms(2))


def block_linear_field(prep: Prepared):
    """A field conjugate to ``prep.field`` (through the jet order) that is linear on the unstable block.

    Returns ``(field, change, how)`` with ``change`` mapping new to old
    coordinates, or ``None`` when a resonance blocks the construction.
    Saddles are handled by straightening both invariant manifolds and then
    removing the monomials that depend on one block only (the dynamics
    inside each manifold); sources need the full normal form.
    """
    W, lams, zero = prep.field, prep.lams, prep.spec.float_zero
    n, k = W.n, prep.spectrum.unstable_dim
    if unstable_block_linear(W, k):
        return W, CoordinateChange.identity(n, W.order, W.exact), "as given"
    try:
        if k == n:
            Psi, V, steps = normalize_to_order(W, lams, W.order, zero)
            if V.residual_terms(2):
                return None
            return V, Psi, "normalized"
        Y = invariant_manifold_jet(W, lams, k, "unstable")
        Z = invariant_manifold_jet(W, lams, k, "stable")
        psi = straighten_manifolds(Y, Z)
        flat = remove_block_dynamics(pullback_field(W, psi), lams, k, zero)
        if flat.obstructions:
            return None
        V, psi = flat.field, psi.compose(flat.change)
    except NormalFormError:
        return None
    if not unstable_block_linear(V, k):
        return None
    return PolyVectorField(V.components, lams), psi, "block-flattened"
