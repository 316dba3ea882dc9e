"""Critical points, Morse eigenvalues and the resonance scan.

The gradient of ``f`` with respect to a metric ``g`` is
``V_i = sum_j g^{ij} df/dx_j`` (ascending flow).  At a critical point the
Christoffel terms drop out, so the linear part of ``V`` is ``g^{-1} Hess f``;
its eigenvalues are the Morse eigenvalues.  They are returned in descending
order, so the positive (unstable) block comes first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from gmpy2 import mpq

from .jets import (
    CoordinateChange,
    Jet,
    PolyVectorField,
    _exact_inverse,
    is_exact,
    monomials_of_degree,
    pullback_field,
    to_coeff,
    unit,
)

__all__ = [
    "DegenerateCriticalPointError",
    "SpectrumError",
    "Spectrum",
    "Witness",
    "ResonanceReport",
    "gradient_jet",
    "gradient_from_jets",
    "field_jet",
    "find_critical_points",
    "morse_eigenvalues",
    "spectrum_from_jets",
    "check_N_linearity",
    "resonance_denominator",
    "is_resonant",
    "diagonalize_at_critical",
    "diagonalized_field",
]


class SpectrumError(ValueError):
    """Linear part outside the supported class (complex or defective spectrum)."""


class DegenerateCriticalPointError(SpectrumError):
    """Zero Morse eigenvalue (degenerate Hessian)."""


@dataclass(frozen=True)
class Spectrum:
    """Morse eigenvalues at a critical point.

    Attributes
    ----------
    eigenvalues : tuple of float
        Descending.
    exact_eigenvalues : tuple of mpq or None
        Rational eigenvalues when the data and the spectrum are rational.
    morse_index : int
        Number of negative eigenvalues.
    unstable_dim : int
        Number of positive eigenvalues (size of the leading block).
    diagonalizer : ndarray
        Columns are eigenvectors (unit length, first significant entry positive).
    groups : tuple of tuple of int
        Indices of equal eigenvalues.
    """

    eigenvalues: tuple
    exact_eigenvalues: tuple | None
    morse_index: int
    unstable_dim: int
    diagonalizer: np.ndarray = field(repr=False)
    exact_diagonalizer: tuple | None = field(default=None, repr=False)
    groups: tuple = ()
    point: tuple = ()

    @property
    def n(self):
        return len(self.eigenvalues)

    def lambdas(self, exact: bool = False):
        if exact:
            if self.exact_eigenvalues is None:
                raise SpectrumError("eigenvalues are not rational")
            return self.exact_eigenvalues
        return self.eigenvalues


# -- gradient jets -------------------------------------------------------------

def _metric_inverse(metric, order):
    """``g^{-1}(x)`` as jets via the Neumann series around ``g(0)``."""
    n = len(metric)
    exact = all(m.exact for row in metric for m in row)
    G0 = [[metric[i][j].constant_term() for j in range(n)] for i in range(n)]
    if exact:
        G0inv = _exact_inverse(G0)
    else:
        G0inv = np.linalg.inv(np.asarray(G0, dtype=float)).tolist()
    one = 1 if exact else 1.0
    N = [[metric[i][j].truncate(order) - G0[i][j] for j in range(n)] for i in range(n)]
    # K = -G0^{-1} N ; g^{-1} = sum_k K^k G0^{-1}
    K = [[sum((N[l][j].scale(-G0inv[i][l]) for l in range(n)), Jet.zero(n, order, exact))
          for j in range(n)] for i in range(n)]
    const = [[Jet.constant(n, order, G0inv[i][j] if G0inv[i][j] != 0 else 0 * one) for j in range(n)]
             for i in range(n)]
    if all(k.is_zero() for row in K for k in row):
        return const
    total = const
    term = const
    for _ in range(order):
        term = [[sum((K[i][l] * term[l][j] for l in range(n)), Jet.zero(n, order, exact))
                 for j in range(n)] for i in range(n)]
        if all(t.is_zero() for row in term for t in row):
            break
        total = [[total[i][j] + term[i][j] for j in range(n)] for i in range(n)]
    return total


def gradient_from_jets(f: Jet, metric, order: int) -> PolyVectorField:
    """``grad_g f`` through ``order`` (``f`` needs data through ``order + 1``)."""
    n = f.n
    df = [f.derivative(j).truncate(order) for j in range(n)]
    if metric is None:
        return PolyVectorField(df)
    ginv = _metric_inverse(metric, order)
    comps = [sum((ginv[i][j] * df[j] for j in range(n)), Jet.zero(n, order, f.exact))
             for i in range(n)]
    return PolyVectorField([c.truncate(order) for c in comps])


def _translated(spec, point):
    if point is None or all(v == 0 for v in point):
        return spec.function, spec.metric
    f = spec.function.translate(point)
    metric = tuple(tuple(m.translate(point) for m in row) for row in spec.metric)
    return f, metric


def gradient_jet(spec, order: int | None = None, point=None) -> PolyVectorField:
    """The gradient field of a function-mode spec, re-centred at ``point``."""
    order = spec.order if order is None else order
    f, metric = _translated(spec, point)
    V = gradient_from_jets(f, metric, order)
    if point is not None and any(v != 0 for v in point):
        # the constant term is the residual of the critical-point solve
        V = PolyVectorField([c - c.constant_term() for c in V.components])
    return V


def field_jet(spec, order: int | None = None, point=None) -> PolyVectorField:
    """The vector field of a spec (gradient in function mode, raw otherwise)."""
    order = spec.order if order is None else order
    if spec.mode == "function":
        return gradient_jet(spec, order, point)
    comps = spec.field
    if point is not None and any(v != 0 for v in point):
        comps = [c.translate(point) for c in comps]
        comps = [c - c.constant_term() for c in comps]
    return PolyVectorField([c.truncate(order) for c in comps])


# -- critical points -----------------------------------------------------------

@dataclass(frozen=True)
class CriticalPointSearch:
    points: tuple
    unconverged: tuple
    degenerate: tuple


def find_critical_points(spec, seeds=None, max_iter: int = 60, return_report: bool = False):
    """Newton iteration on ``df`` from each seed, deduplicated.

    Parameters
    ----------
    spec : ProblemSpec
        Function mode only.
    seeds : sequence of points, optional
        Defaults to ``spec.seeds`` or a uniform grid over the domain ball.
    return_report : bool
        Also return unconverged seeds and degenerate roots.
    """
    if spec.mode != "function":
        raise ValueError("critical point search needs a function-mode spec")
    n, R = spec.n, spec.radius
    f = spec.function
    df = [f.derivative(j) for j in range(n)]
    hess = [[d.derivative(k) for k in range(n)] for d in df]
    from .jets import PolyEvaluator

    ev_df = PolyEvaluator(df)
    ev_h = PolyEvaluator([h for row in hess for h in row])
    if seeds is None:
        seeds = spec.seeds
    if seeds is None:
        m = 7 if n <= 2 else 5 if n == 3 else 3
        axis = np.linspace(-R, R, m)
        grid = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), -1).reshape(-1, n)
        seeds = [s for s in grid if np.linalg.norm(s) <= R]
    found, unconverged, degenerate = [], [], []
    for seed in seeds:
        x = np.asarray(seed, dtype=float).copy()
        ok = False
        for _ in range(max_iter):
            g = ev_df.evaluate(x)
            if np.linalg.norm(g) < spec.ode_tol:
                ok = True
                break
            H = ev_h.evaluate(x).reshape(n, n)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            x = x - step
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 10 * R:
                break
        if not ok or np.linalg.norm(x) > R * (1 + 1e-9):
            unconverged.append(tuple(seed))
            continue
        if any(np.linalg.norm(x - y) < 1e-8 * R for y in found + degenerate):
            continue
        H = ev_h.evaluate(x).reshape(n, n)
        if np.min(np.abs(np.linalg.eigvalsh(0.5 * (H + H.T)))) <= spec.float_zero * max(1.0, np.abs(H).max()):
            degenerate.append(x)
        else:
            found.append(x)
    key = lambda p: tuple(np.round(p, 12))
    pts = tuple(tuple(float(v) + 0.0 for v in p) for p in sorted(found, key=key))
    pts = tuple(tuple(0.0 if abs(v) < 1e-15 else v for v in p) for p in pts)
    if return_report:
        return CriticalPointSearch(pts, tuple(unconverged), tuple(tuple(p) for p in degenerate))
    return list(pts)


# -- eigenvalues ---------------------------------------------------------------

def _normalize_columns(V):
    V = np.array(V, dtype=float)
    for j in range(V.shape[1]):
        V[:, j] /= np.linalg.norm(V[:, j])
        big = np.flatnonzero(np.abs(V[:, j]) > 1e-12)
        if len(big) and V[big[0], j] < 0:
            V[:, j] = -V[:, j]
    return V


def _groups(lams, tol):
    groups, cur = [], [0]
    for i in range(1, len(lams)):
        if abs(lams[i] - lams[cur[0]]) <= tol * (1 + abs(lams[cur[0]])):
            cur.append(i)
        else:
            groups.append(tuple(cur))
            cur = [i]
    groups.append(tuple(cur))
    return tuple(groups)


def _exact_eigen(M):
    """Rational eigenpairs of a rational matrix, or ``None`` when irrational."""
    import sympy  # imported lazily: only rational spectra need it

    n = len(M)
    S = sympy.Matrix(n, n, lambda i, j: sympy.Rational(int(M[i][j].numerator), int(M[i][j].denominator)))
    try:
        data = S.eigenvects()
    except Exception:  # sympy may fail on awkward characteristic polynomials
        return None
    pairs = []
    for val, mult, vecs in data:
        if not (val.is_rational and val.is_real):
            return None
        if len(vecs) != mult:
            raise SpectrumError("linear part is not diagonalizable")
        for v in vecs:
            col = [mpq(int(sympy.fraction(c)[0]), int(sympy.fraction(c)[1])) for c in v]
            lead = next(c for c in col if c != 0)
            pairs.append((mpq(int(sympy.fraction(val)[0]), int(sympy.fraction(val)[1])),
                          [c / lead for c in col]))
    pairs.sort(key=lambda t: -t[0])
    return pairs


def _spectrum(M_exact, M_float, sym_pair, tol, point):
    n = M_float.shape[0]
    if sym_pair is not None:
        H, G = sym_pair
        lams, vecs = scipy.linalg.eigh(H, G)
        lams, vecs = lams[::-1], vecs[:, ::-1]
    else:
        lams, vecs = np.linalg.eig(M_float)
        if np.any(np.abs(lams.imag) > tol * (1 + np.abs(lams.real))):
            raise SpectrumError("linear part has complex eigenvalues")
        lams, vecs = lams.real, vecs.real
        order = np.argsort(-lams, kind="stable")
        lams, vecs = lams[order], vecs[:, order]
        if abs(np.linalg.det(vecs)) < 1e-10:
            raise SpectrumError("linear part is not diagonalizable")
    scale = max(1.0, float(np.abs(M_float).max()))
    if np.min(np.abs(lams)) <= tol * scale:
        raise DegenerateCriticalPointError(f"zero Morse eigenvalue (|lambda| <= {tol * scale:g})")
    exact_l = exact_A = None
    if M_exact is not None:
        pairs = _exact_eigen(M_exact)
        if pairs is not None:
            exact_l = tuple(p[0] for p in pairs)
            if any(v == 0 for v in exact_l):
                raise DegenerateCriticalPointError("zero Morse eigenvalue")
            exact_A = tuple(tuple(pairs[j][1][i] for j in range(n)) for i in range(n))
            lams = np.array([float(v) for v in exact_l])
    A = _normalize_columns(vecs)
    return Spectrum(
        eigenvalues=tuple(float(v) for v in lams),
        exact_eigenvalues=exact_l,
        morse_index=int(np.sum(lams < 0)),
        unstable_dim=int(np.sum(lams > 0)),
        diagonalizer=A,
        exact_diagonalizer=exact_A,
        groups=_groups(list(lams), tol),
        point=tuple(point),
    )


def spectrum_from_jets(f: Jet, metric=None, tol: float = 1e-12, point=None) -> Spectrum:
    """Morse eigenvalues of ``(f, g)`` at the origin.

    Eigenvalues solve ``Hess f v = lambda g(0) v`` (congruence on ``g``,
    similarity on ``g^{-1} Hess f``), computed with ``scipy.linalg.eigh``.
    """
    n = f.n
    H = [[f.derivative(i).derivative(j).constant_term() for j in range(n)] for i in range(n)]
    G = ([[metric[i][j].constant_term() for j in range(n)] for i in range(n)]
         if metric is not None else [[mpq(int(i == j)) for j in range(n)] for i in range(n)])
    Hf, Gf = np.asarray(H, dtype=float), np.asarray(G, dtype=float)
    M_exact = None
    if all(is_exact(v) for row in H + G for v in row):
        Gi = _exact_inverse(G)
        M_exact = [[sum((Gi[i][l] * H[l][j] for l in range(n)), mpq(0)) for j in range(n)] for i in range(n)]
    M_float = np.linalg.solve(Gf, Hf)
    return _spectrum(M_exact, M_float, (Hf, Gf), tol, point if point is not None else (0.0,) * n)


def morse_eigenvalues(spec, p=None) -> Spectrum:
    """Spectrum at the critical point ``p`` (default: the origin).

    In field mode the eigenvalues of the linear part are used; complex or
    defective spectra raise :class:`SpectrumError`.
    """
    n = spec.n
    point = tuple(p) if p is not None else (0,) * n
    if spec.mode == "function":
        f, metric = _translated(spec, point)
        return spectrum_from_jets(f, metric, spec.float_zero, point)
    V = field_jet(spec, 1, point)
    lin = V.linear_part()
    M_exact = [list(r) for r in lin] if V.exact else None
    return _spectrum(M_exact, np.asarray(lin, dtype=float), None, spec.float_zero, point)


# -- resonance -----------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Witness:
    """Resonance ``<a, lambda> = lambda_i`` (``i`` is 0-based)."""

    a: tuple
    i: int

    def __str__(self):
        return f"(a={self.a}, i={self.i + 1})"


@dataclass(frozen=True)
class ResonanceReport:
    scanned_order: int
    witnesses: tuple
    satisfied: bool
    eigenvalues: tuple = ()
    mode: str = "exact"

    def witness_set(self):
        return {(w.a, w.i) for w in self.witnesses}


def resonance_denominator(a, i, lams):
    """``<a, lambda> - lambda_i``."""
    return sum((e * l for e, l in zip(a, lams)), 0 * lams[0]) - lams[i]


def is_resonant(a, i, lams, float_zero: float = 1e-12) -> bool:
    """Shared resonance predicate: exact zero, or relative float test."""
    den = resonance_denominator(a, i, lams)
    if all(is_exact(l) for l in lams):
        return den == 0
    dot = sum(e * float(l) for e, l in zip(a, lams))
    return abs(float(den)) <= float_zero * (1 + abs(dot))


def check_N_linearity(lams, max_order: int, mode: str = "exact", float_zero: float = 1e-12) -> ResonanceReport:
    """Scan every ``a`` with ``2 <= |a| <= max_order`` and every ``i`` for resonances.

    Parameters
    ----------
    lams : sequence
        Eigenvalues (rational for ``mode="exact"``).
    mode : {"exact", "float"}
        Exact comparison on rationals, or the relative test
        ``|<a,lambda> - lambda_i| <= float_zero (1 + |<a,lambda>|)``.

    Returns
    -------
    ResonanceReport
        Witnesses in graded-lex order of ``a``, then by ``i``.
    """
    if mode not in ("exact", "float"):
        raise ValueError("mode must be 'exact' or 'float'")
    if mode == "exact":
        lam = []
        for l in lams:
            c = to_coeff(l)
            if not is_exact(c):
                raise ValueError("exact resonance scan needs rational eigenvalues")
            lam.append(c)
    else:
        lam = [float(l) for l in lams]
    if any(l == 0 for l in lam):
        raise DegenerateCriticalPointError("zero eigenvalue")
    if max_order < 2:
        raise ValueError("max_order must be at least 2")
    n = len(lam)
    witnesses = []
    for d in range(2, max_order + 1):
        for a in monomials_of_degree(n, d):
            for i in range(n):
                if is_resonant(a, i, lam, float_zero):
                    witnesses.append(Witness(a, i))
    return ResonanceReport(max_order, tuple(witnesses), not witnesses, tuple(lam), mode)


# -- diagonalization -----------------------------------------------------------

def diagonalize_at_critical(spec, p=None, exact: bool = False) -> CoordinateChange:
    """Linear change ``x = A y`` making the linear part of the field ``diag(lambda)``.

    Float mode uses unit eigenvector columns (first significant entry
    positive); ``exact=True`` uses rational columns with leading entry 1 and
    needs a rational spectrum.
    """
    spec_ = morse_eigenvalues(spec, p)
    order = spec.order
    if exact:
        if spec_.exact_diagonalizer is None:
            raise SpectrumError("spectrum is not rational; use float mode")
        return CoordinateChange.linear(spec_.exact_diagonalizer, order)
    return CoordinateChange.linear(spec_.diagonalizer.tolist(), order)


def diagonalized_field(spec, p=None, exact: bool | None = None, order: int | None = None):
    """Field pulled back to eigen-coordinates at ``p``.

    Returns ``(W, spectrum, A)`` where ``W`` carries ``eigen_linear_part``.
    ``exact=None`` picks exact mode whenever the spectrum is rational and the
    point is the origin.  In float mode the linear part is snapped to
    ``diag(lambda)`` after checking it agrees within ``float_zero``.
    """
    order = spec.order if order is None else order
    sp = morse_eigenvalues(spec, p)
    at_origin = p is None or all(v == 0 for v in p)
    if exact is None:
        exact = sp.exact_eigenvalues is not None and at_origin
    V = field_jet(spec, order, p)
    if exact:
        if sp.exact_diagonalizer is None:
            raise SpectrumError("spectrum is not rational; use float mode")
        A = CoordinateChange.linear(sp.exact_diagonalizer, order)
        W = pullback_field(V, A)
        return W.with_eigenvalues(sp.exact_eigenvalues), sp, A
    A = CoordinateChange.linear(sp.diagonalizer.tolist(), order)
    W = pullback_field(V.to_float(), A)
    n = spec.n
    lin = W.linear_matrix()
    target = np.diag(sp.eigenvalues)
    scale = max(1.0, float(np.abs(target).max()))
    if np.abs(lin - target).max() > max(spec.float_zero, 1e-10) * scale:
        raise SpectrumError("diagonalization failed to reach float_zero")
    comps = []
    for i, c in enumerate(W.components):
        terms = {k: v for k, v in c.terms.items() if sum(k) != 1}
        terms[unit(n, i)] = sp.eigenvalues[i]
        comps.append(Jet(n, c.order, terms))
    return PolyVectorField(comps, sp.eigenvalues), sp, A
