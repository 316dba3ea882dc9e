"""Jet-level normal forms.

* :func:`morse_lemma_jet` completes squares in the style of the classical
  Morse lemma proof.
* :func:`homological_solve` / :func:`normalize_to_order` remove
  non-resonant monomials of a diagonal gradient field order by order.
* :func:`cross_flatten` removes mixed monomials of low block degree.
* :func:`invariant_manifold_jet` / :func:`straighten_manifolds` compute and
  flatten the stable and unstable manifold graphs.

Coordinate changes returned by the normalizers map *new* coordinates to
*old* ones, so ``pullback_field(V, change)`` is the normalized field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import gmpy2
from gmpy2 import mpq

from .jets import (
    CoordinateChange,
    Jet,
    PolyVectorField,
    invert_to_order,
    is_exact,
    jet_compose,
    pullback_field,
    to_coeff,
    unit,
)
from .spectrum import is_resonant, resonance_denominator

__all__ = [
    "NormalFormError",
    "MorseChart",
    "HomologicalStep",
    "ManifoldJet",
    "FlattenResult",
    "morse_lemma_jet",
    "homological_solve",
    "normalize_to_order",
    "cross_flatten",
    "invariant_manifold_jet",
    "straighten_manifolds",
]


class NormalFormError(ValueError):
    """A precondition of a normal-form routine does not hold."""


def _lams(lams, exact):
    out = [to_coeff(l) for l in lams]
    if not exact or not all(is_exact(l) for l in out):
        return [float(l) for l in out], False
    return out, True


# -- Morse lemma ---------------------------------------------------------------

@dataclass(frozen=True)
class MorseChart:
    """Result of the completing-the-square construction.

    ``chart`` (old -> new, rational when ``f`` is) satisfies
    ``f o chart^{-1} = sum_i signs[i] * weights[i] * w_i^2`` through ``order``.
    ``phi = diag(sqrt(weights)) o chart`` gives the unit form
    ``f o phi^{-1} = sum_i signs[i] * y_i^2``; it is exact only when every
    weight is a rational square.
    """

    chart: CoordinateChange
    chart_inverse: CoordinateChange
    weights: tuple
    signs: tuple
    phi: CoordinateChange
    phi_inverse: CoordinateChange
    order: int

    @property
    def phi_exact(self) -> bool:
        return self.phi.exact

    @property
    def index(self) -> int:
        return sum(1 for s in self.signs if s < 0)

    def weighted_form(self) -> Jet:
        n = len(self.weights)
        return sum((Jet.monomial(n, tuple(2 * e for e in unit(n, i)), self.order, self.signs[i] * self.weights[i])
                    for i in range(n)), Jet.zero(n, self.order, self.chart.exact))

    def unit_form(self) -> Jet:
        n = len(self.weights)
        return sum((Jet.monomial(n, tuple(2 * e for e in unit(n, i)), self.order, self.signs[i])
                    for i in range(n)), Jet.zero(n, self.order))


def _split_quadratic(g: Jet, r: int):
    """Coefficient jets ``H_rr`` and ``H_ir`` (``i > r``) of ``g`` seen as a quadratic
    form in ``u_r, ..., u_n`` with function coefficients."""
    n, order = g.n, g.order
    Hrr, Hir = {}, {i: {} for i in range(r + 1, n)}
    rest = {}
    for a, c in g.terms.items():
        if a[r] >= 2:
            b = a[:r] + (a[r] - 2,) + a[r + 1:]
            Hrr[b] = c
        elif a[r] == 1:
            i = next((j for j in range(r + 1, n) if a[j] >= 1), None)
            if i is None:
                raise NormalFormError("jet is not quadratic in the remaining block")
            b = list(a)
            b[r] -= 1
            b[i] -= 1
            Hir[i][tuple(b)] = c / 2 if g.exact else c * 0.5
        else:
            rest[a] = c
    mk = lambda t: Jet._raw(n, order, t, g.exact)
    return mk(Hrr), {i: mk(t) for i, t in Hir.items()}


def _pivot(g: Jet, r: int):
    """Linear new -> old map making the ``u_r^2`` coefficient nonzero, or ``None``."""
    n = g.n
    sq = lambda i: g.coefficient(tuple(2 * e for e in unit(n, i)))
    if sq(r) != 0:
        return None
    one = 1 if g.exact else 1.0
    for i in range(r + 1, n):
        if sq(i) != 0:
            # swap u_r and u_i
            perm = list(range(n))
            perm[r], perm[i] = i, r
            return [Jet.variable(n, perm[j], g.order, one) for j in range(n)]
    for i in range(r + 1, n):
        mixed = tuple(1 if j in (r, i) else 0 for j in range(n))
        if g.coefficient(mixed) != 0:
            # old u_i = new u_i + new u_r, so u_r^2 picks up twice the mixed coefficient
            comps = [Jet.variable(n, j, g.order, one) for j in range(n)]
            comps[i] = comps[i] + Jet.variable(n, r, g.order, one)
            return comps
    raise NormalFormError("degenerate Hessian: no pivot available")


def _sqrt_rational(q):
    if is_exact(q) and gmpy2.is_square(q.numerator) and gmpy2.is_square(q.denominator):
        return mpq(gmpy2.isqrt(q.numerator), gmpy2.isqrt(q.denominator))
    return math.sqrt(float(q))


def morse_lemma_jet(f: Jet, signs=None) -> MorseChart:
    """Complete squares on ``f`` through its truncation order.

    Parameters
    ----------
    f : Jet
        Vanishing constant and linear part, nondegenerate quadratic part.
    signs : sequence of {+1, -1}, optional
        Target sign pattern.  Its counts must match the index of ``f``;
        coordinates are permuted to realize it.  Default: the order in which
        the squares are completed (so a diagonal quadratic form keeps its
        coordinates).

    Returns
    -------
    MorseChart
    """
    n, L = f.n, f.order
    if f.constant_term() != 0 or any(f.coefficient(unit(n, i)) != 0 for i in range(n)):
        raise NormalFormError("f must vanish to second order at the origin")
    exact = f.exact
    one = 1 if exact else 1.0
    ident = [Jet.variable(n, i, L, one) for i in range(n)]
    M = CoordinateChange(ident)  # new -> old, f o M is the current form
    g = f
    weights, sgn = [], []
    for r in range(n):
        P = _pivot(g, r)
        if P is not None:
            P = CoordinateChange(P)
            g = jet_compose(g, P)
            M = M.compose(P)
        Hrr, Hir = _split_quadratic(g, r)
        h0 = Hrr.constant_term()
        if h0 == 0:
            raise NormalFormError("degenerate Hessian: zero pivot after exchange")
        inv = Hrr.reciprocal()
        w = ident[r] + sum((ident[i] * Hir[i] * inv for i in Hir), Jet.zero(n, L, exact))
        z = Hrr.scale(1 / h0 if exact else 1.0 / float(h0))
        w = w * z.power_series(mpq(1, 2) if exact else 0.5)
        step = CoordinateChange([w if j == r else ident[j] for j in range(n)])  # old -> new
        step_inv = invert_to_order(step)
        g = jet_compose(g, step_inv)
        M = M.compose(step_inv)
        sgn.append(1 if h0 > 0 else -1)
        weights.append(abs(h0))
    # target ordering
    if signs is None:
        perm = list(range(n))
    else:
        signs = [int(s) for s in signs]
        if len(signs) != n or sorted(signs) != sorted(sgn):
            raise NormalFormError(f"sign pattern {signs} does not match the index of f")
        pool = {1: [i for i in range(n) if sgn[i] > 0], -1: [i for i in range(n) if sgn[i] < 0]}
        perm = [pool[s].pop(0) for s in signs]
    weights = tuple(weights[i] for i in perm)
    sgn = tuple(sgn[i] for i in perm)
    # new coordinate j is old intermediate coordinate perm[j]
    Minv_perm = CoordinateChange([ident[perm.index(i)] for i in range(n)])  # permuted -> intermediate
    chart_inverse = M.compose(Minv_perm)
    chart = invert_to_order(chart_inverse)
    roots = [_sqrt_rational(d) for d in weights]
    phi = CoordinateChange([c.scale(s) for c, s in zip(chart.components, roots)])
    unscale = CoordinateChange([ident[i].scale(1 / s if is_exact(s) else 1.0 / float(s)) for i, s in enumerate(roots)])
    phi_inverse = chart_inverse.compose(unscale)
    return MorseChart(chart, chart_inverse, weights, sgn, phi, phi_inverse, L)


# -- homological normalization -------------------------------------------------

@dataclass(frozen=True)
class HomologicalStep:
    """One order of the normalization.

    ``correction`` is the new coordinate system ``y = x + sum q x^a e_i``
    (old -> new); ``substitution`` is its inverse (new -> old), used for the
    pullback.  Terms are ``(a, i, coefficient)`` with 0-based ``i``.
    """

    order: int
    removed_terms: tuple
    correction: CoordinateChange
    substitution: CoordinateChange
    obstructions: tuple

    @property
    def is_trivial(self) -> bool:
        return not self.removed_terms


def homological_solve(V: PolyVectorField, lams, m: int, float_zero: float = 1e-12,
                      select=None) -> HomologicalStep:
    """Solve the degree-``m`` homological equation.

    Every degree-``m`` monomial ``c x^a d_i`` of ``V - V0`` with
    ``<a, lambda> - lambda_i != 0`` gets the correction ``-c / (<a,lambda> - lambda_i) x^a``
    in component ``i``; resonant ones are returned as obstructions.

    Parameters
    ----------
    select : callable ``(a, i) -> bool``, optional
        Restrict the terms considered (used by :func:`cross_flatten`).

    Raises
    ------
    NormalFormError
        If the linear part is not ``diag(lambda)`` or a lower-degree residual
        monomial is non-resonant.
    """
    n, L = V.n, V.order
    lam, exact = _lams(lams, V.exact)
    if len(lam) != n:
        raise NormalFormError("eigenvalue vector has wrong length")
    if not 2 <= m:
        raise NormalFormError("homological order must be at least 2")
    for i, c in enumerate(V.components):
        for j in range(n):
            coef = c.coefficient(unit(n, j))
            target = lam[i] if i == j else 0
            if (coef != target) if exact else abs(float(coef) - float(target)) > float_zero * (1 + abs(float(target))):
                raise NormalFormError("linear part is not diag(lambda)")
    removed, obstr = [], []
    one = 1 if exact else 1.0
    corr = [dict() for _ in range(n)]
    for (a, i, c) in V.residual_terms(2):
        d = sum(a)
        if select is not None and not select(a, i):
            continue
        if d < m:
            if not is_resonant(a, i, lam, float_zero):
                raise NormalFormError(f"non-resonant residual {a}, component {i + 1} below order {m}")
            continue
        if d > m:
            break
        if is_resonant(a, i, lam, float_zero):
            obstr.append((a, i, c))
            continue
        den = resonance_denominator(a, i, lam)
        corr[i][a] = -c / den
        removed.append((a, i, c))
    comps = [Jet(n, L, {unit(n, i): one, **corr[i]}) for i in range(n)]
    correction = CoordinateChange(comps)
    substitution = invert_to_order(correction) if removed else correction
    return HomologicalStep(m, tuple(removed), correction, substitution, tuple(obstr))


def normalize_to_order(V: PolyVectorField, lams, L: int | None = None, float_zero: float = 1e-12):
    """Poincare-Dulac normalization through order ``L``.

    Returns
    -------
    change : CoordinateChange
        ``Psi = sigma_2 o sigma_3 o ... o sigma_L`` (new -> old).
    field : PolyVectorField
        ``pullback_field(V, Psi)``: ``V0`` plus resonant monomials only.
    steps : list of HomologicalStep
    """
    L = V.order if L is None else L
    V = V.truncate(L)
    lam, exact = _lams(lams, V.exact)
    one = 1 if exact else 1.0
    n = V.n
    Psi = CoordinateChange([Jet.variable(n, i, L, one) for i in range(n)])
    cur = V
    steps = []
    for m in range(2, L + 1):
        step = homological_solve(cur, lam, m, float_zero)
        steps.append(step)
        if step.removed_terms:
            cur = pullback_field(cur, step.substitution)
            Psi = Psi.compose(step.substitution)
    lam_field = lam if exact else [float(l) for l in lam]
    return Psi, PolyVectorField(cur.components, lam_field), steps


def obstruction_ledger(steps):
    """All obstructions of a normalization run, in order."""
    return [t for s in steps for t in s.obstructions]


# -- cross flattening ----------------------------------------------------------

class FlattenResult(NamedTuple):
    change: CoordinateChange
    field: PolyVectorField
    obstructions: tuple


def _block_degrees(a, k):
    return sum(a[:k]), sum(a[k:])


def cross_flatten(V: PolyVectorField, lams, k: int, alpha: int, float_zero: float = 1e-12) -> FlattenResult:
    """Remove mixed monomials whose smaller block degree is below ``alpha``.

    The first ``k`` coordinates form one block and the rest the other.
    Monomials are handled by increasing smaller block degree ``m`` and, for
    each ``m``, by increasing total degree; each is divided by its rate
    ``<a, lambda> - lambda_i``.  Resonant ones stay and are reported.

    Raises
    ------
    NormalFormError
        If ``V - V0`` has a monomial that is not mixed.
    """
    n, L = V.n, V.order
    if not 0 < k < n:
        raise NormalFormError("block split must leave both blocks nonempty")
    lam, exact = _lams(lams, V.exact)
    for (a, i, c) in V.residual_terms(2):
        if min(_block_degrees(a, k)) == 0:
            raise NormalFormError(f"residual monomial {a} in component {i + 1} is not mixed")
    one = 1 if exact else 1.0
    Psi = CoordinateChange([Jet.variable(n, i, L, one) for i in range(n)])
    cur = V
    obstructions = {}
    for m in range(1, alpha):
        for d in range(2, L + 1):
            sel = lambda a, i, m=m: min(_block_degrees(a, k)) == m
            step = homological_solve(cur, lam, d, float_zero, sel)
            for t in step.obstructions:
                obstructions[(t[0], t[1])] = t
            if step.removed_terms:
                cur = pullback_field(cur, step.substitution)
                Psi = Psi.compose(step.substitution)
    final_obs = tuple(sorted(((a, i, c) for (a, i, c) in cur.residual_terms(2)
                              if min(_block_degrees(a, k)) < alpha), key=lambda t: (sum(t[0]), t[0], t[1])))
    return FlattenResult(Psi, PolyVectorField(cur.components, lam), final_obs)


# -- invariant manifolds -------------------------------------------------------

@dataclass(frozen=True)
class ManifoldJet:
    """Graph of an invariant manifold over a coordinate block.

    ``graph[j]`` is a jet in ``len(free_variables)`` variables giving the
    coordinate ``dependent_variables[j]`` on the manifold.
    """

    which: str
    free_variables: tuple
    dependent_variables: tuple
    graph: tuple
    n: int

    def is_zero(self) -> bool:
        return all(g.is_zero() for g in self.graph)

    def embedded(self, order: int | None = None):
        """Graph components as jets in all ``n`` variables (depending on the free block)."""
        order = self.graph[0].order if order is None else order
        exact = all(g.exact for g in self.graph)
        one = 1 if exact else 1.0
        sub = [Jet.variable(self.n, v, order, one) for v in self.free_variables]
        return [jet_compose(g, sub) for g in self.graph]


def _blocks(which, k, n):
    u, s = tuple(range(k)), tuple(range(k, n))
    if which == "unstable":
        return u, s
    if which == "stable":
        return s, u
    raise ValueError("which must be 'unstable' or 'stable'")


def invariant_manifold_jet(V: PolyVectorField, lams, k: int, which: str = "unstable") -> ManifoldJet:
    """Taylor jet of the unstable (graph over the first ``k`` coordinates) or
    stable (graph over the rest) manifold.

    Solves ``DY . V_free(x, Y) = V_dep(x, Y)`` degree by degree; the degree-``d``
    coefficient of ``Y_j`` at ``x^a`` is the residual divided by
    ``<a, lambda_free> - lambda_j``.
    """
    n, L = V.n, V.order
    lam, exact = _lams(lams, V.exact)
    free, dep = _blocks(which, k, n)
    lam_free = [lam[i] for i in free]
    nf = len(free)
    one = 1 if exact else 1.0
    xs = [Jet.variable(nf, t, L, one) for t in range(nf)]
    Y = [Jet.zero(nf, L, exact) for _ in dep]

    def residual(Y):
        sub = [None] * n
        for t, v in enumerate(free):
            sub[v] = xs[t]
        for t, v in enumerate(dep):
            sub[v] = Y[t]
        Vf = [jet_compose(V.components[v], sub) for v in free]
        out = []
        for t, v in enumerate(dep):
            lhs = sum((Y[t].derivative(q) * Vf[q] for q in range(nf)), Jet.zero(nf, L, exact))
            out.append(jet_compose(V.components[v], sub) - lhs)
        return out

    for d in range(2, L + 1):
        R = residual(Y)
        for t, v in enumerate(dep):
            new = {}
            for a, c in R[t].terms.items():
                if sum(a) != d:
                    continue
                den = sum((e * l for e, l in zip(a, lam_free)), 0 * lam[v]) - lam[v]
                if den == 0:
                    raise NormalFormError(f"zero divisor for the graph monomial {a}")
                new[a] = c / den
            if new:
                Y[t] = Y[t] + Jet(nf, L, new)
    return ManifoldJet(which, free, dep, tuple(Y), n)


def straighten_manifolds(Y: ManifoldJet, Z: ManifoldJet) -> CoordinateChange:
    """``psi(x) = (x_u + Z(x_s), x_s + Y(x_u))`` (new -> old).

    Maps the unstable block to the graph ``Y`` and the stable block to ``Z``,
    so the pulled-back field has both coordinate blocks invariant.
    """
    if Y.which != "unstable" or Z.which != "stable":
        raise ValueError("expected an unstable graph Y and a stable graph Z")
    n = Y.n
    L = min(g.order for g in Y.graph + Z.graph) if (Y.graph + Z.graph) else 1
    exact = all(g.exact for g in Y.graph + Z.graph)
    one = 1 if exact else 1.0
    comps = [Jet.variable(n, i, L, one) for i in range(n)]
    for mj in (Y, Z):
        for v, g in zip(mj.dependent_variables, mj.embedded(L)):
            comps[v] = comps[v] + g
    return CoordinateChange(comps)


def remove_block_dynamics(V: PolyVectorField, lams, k: int, float_zero: float = 1e-12) -> FlattenResult:
    """Remove the monomials that depend on one coordinate block only.

    After :func:`straighten_manifolds` these terms are the dynamics inside
    each invariant manifold; once they are gone the residual is mixed and
    :func:`cross_flatten` applies. Resonant single-block terms are kept and
    reported in ``obstructions``.
    """
    n = V.n
    if not 0 < k < n:
        raise NormalFormError("block split must leave both blocks nonempty")
    pure = lambda a, i: not any(a[:k]) or not any(a[k:])
    cur = V
    change = CoordinateChange.identity(n, V.order, V.exact)
    obstructions = []
    for d in range(2, V.order + 1):
        step = homological_solve(cur, lams, d, float_zero, pure)
        obstructions.extend(step.obstructions)
        if step.removed_terms:
            cur = pullback_field(cur, step.substitution)
            change = change.compose(step.substitution)
    return FlattenResult(change, PolyVectorField(cur.components, cur.eigen_linear_part), tuple(obstructions))
