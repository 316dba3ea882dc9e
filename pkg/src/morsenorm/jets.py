"""Truncated multivariate power series and the Lie calculus built on them.

A :class:`Jet` is a polynomial in ``n`` variables truncated at a graded
order ``L``.  Coefficients live in one of two modes:

* exact rationals (stored as ``gmpy2.mpq``; ``int`` and
  ``fractions.Fraction`` inputs are converted), used for all normal-form
  algebra where resonance decisions must be exact;
* binary64 floats, used for flow numerics.

Mixing the two promotes to floats.  All objects are immutable after
construction and every operation returns a new object.

Monomials are exponent tuples ``a = (a_1, ..., a_n)`` and are iterated in
graded lexicographic order: by total degree, then with larger leading
exponents first (``x1^2, x1*x2, x2^2``).
"""

from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational
from operator import add

import numpy as np
from gmpy2 import mpq

__all__ = [
    "DimensionError",
    "SingularLinearPartError",
    "Jet",
    "PolyVectorField",
    "CoordinateChange",
    "PolyEvaluator",
    "grlex_key",
    "monomials_of_degree",
    "monomials_up_to",
    "jet_mul",
    "jet_compose",
    "invert_to_order",
    "pullback_field",
    "lie_derivative",
    "lie_bracket",
]

MPQ = type(mpq(0))
FLOAT_PRUNE = 1e-14


class DimensionError(ValueError):
    """Operands live in different numbers of variables."""


class SingularLinearPartError(ValueError):
    """A coordinate change has a (numerically) singular linear part."""


def to_coeff(c):
    """Normalize a scalar to the jet coefficient types (``mpq`` or ``float``)."""
    if isinstance(c, MPQ):
        return c
    if isinstance(c, bool):
        return mpq(int(c))
    if isinstance(c, (int, np.integer)):
        return mpq(int(c))
    if isinstance(c, Fraction):
        return mpq(c.numerator, c.denominator)
    if isinstance(c, (float, np.floating)):
        return float(c)
    if isinstance(c, Rational):
        return mpq(int(c.numerator), int(c.denominator))
    raise TypeError(f"unsupported coefficient type {type(c).__name__}")


def is_exact(c) -> bool:
    return isinstance(c, MPQ)


def grlex_key(a):
    return (sum(a), tuple(-e for e in a))


def monomials_of_degree(n: int, d: int):
    """Yield all exponent tuples of length ``n`` and total degree ``d``, grlex order."""
    if n == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in monomials_of_degree(n - 1, d - first):
            yield (first,) + rest


def monomials_up_to(n: int, max_degree: int, min_degree: int = 0):
    for d in range(min_degree, max_degree + 1):
        yield from monomials_of_degree(n, d)


def unit(n: int, i: int):
    return tuple(1 if j == i else 0 for j in range(n))


def _prune(terms: dict, exact: bool) -> dict:
    if exact:
        return {k: v for k, v in terms.items() if v != 0}
    if not terms:
        return {}
    scale = max(abs(v) for v in terms.values())
    cut = FLOAT_PRUNE * scale
    return {k: v for k, v in terms.items() if abs(v) > cut}


class Jet:
    """Truncated power series in ``n`` variables.

    Parameters
    ----------
    n : int
        Number of variables.
    order : int
        Truncation order ``L``; monomials with ``|a| > L`` are dropped.
    terms : mapping, optional
        Exponent tuple -> coefficient.  Zero coefficients are pruned (exactly in
        rational mode, relative to the largest coefficient in float mode).
    reliable_order : int, optional
        Highest degree through which the coefficients are trustworthy.  Defaults
        to ``order``; differentiation lowers it by one.
    """

    __slots__ = ("n", "order", "terms", "reliable_order", "exact")

    def __init__(self, n: int, order: int, terms=None, reliable_order: int | None = None):
        if n < 1:
            raise ValueError("a jet needs at least one variable")
        if order < 0:
            raise ValueError("truncation order must be non-negative")
        raw = {}
        for a, c in (terms or {}).items():
            a = tuple(int(e) for e in a)
            if len(a) != n:
                raise DimensionError(f"exponent {a} does not have {n} entries")
            if any(e < 0 for e in a):
                raise ValueError(f"negative exponent in {a}")
            if sum(a) > order:
                continue
            raw[a] = raw.get(a, 0) + to_coeff(c)
        exact = all(is_exact(v) for v in raw.values())
        if not exact:
            raw = {k: float(v) for k, v in raw.items()}
        self._init(n, order, raw, exact, reliable_order)

    def _init(self, n, order, terms, exact, reliable_order):
        terms = _prune(terms, exact)
        self.n = n
        self.order = order
        self.terms = {k: terms[k] for k in sorted(terms, key=grlex_key)}
        self.exact = exact
        self.reliable_order = order if reliable_order is None else min(order, reliable_order)

    @classmethod
    def _raw(cls, n, order, terms, exact, reliable_order=None):
        obj = cls.__new__(cls)
        obj._init(n, order, terms, exact, reliable_order)
        return obj

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, n: int, order: int, exact: bool = True):
        return cls._raw(n, order, {}, exact)

    @classmethod
    def constant(cls, n: int, order: int, value):
        return cls(n, order, {(0,) * n: value})

    @classmethod
    def variable(cls, n: int, i: int, order: int, coeff=1):
        return cls(n, order, {unit(n, i): coeff})

    @classmethod
    def monomial(cls, n: int, exponent, order: int, coeff=1):
        return cls(n, order, {tuple(exponent): coeff})

    # -- inspection ---------------------------------------------------------
    def __repr__(self):
        mode = "exact" if self.exact else "float"
        return f"Jet(n={self.n}, order={self.order}, {mode}, terms={dict(self.terms)!r})"

    def __str__(self):
        from .parser import format_jet

        return format_jet(self)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms.items())

    def __hash__(self):
        return hash((self.n, tuple(self.terms.items())))

    def coefficient(self, a):
        return self.terms.get(tuple(a), mpq(0) if self.exact else 0.0)

    def constant_term(self):
        return self.coefficient((0,) * self.n)

    def is_zero(self) -> bool:
        return not self.terms

    def valuation(self) -> float:
        """Lowest degree present (``inf`` for the zero jet)."""
        return min((sum(a) for a in self.terms), default=math.inf)

    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=-1)

    def homogeneous(self, d: int) -> "Jet":
        return Jet._raw(self.n, self.order, {a: c for a, c in self.terms.items() if sum(a) == d},
                        self.exact, self.reliable_order)

    def truncate(self, order: int) -> "Jet":
        return Jet._raw(self.n, order, {a: c for a, c in self.terms.items() if sum(a) <= order},
                        self.exact, self.reliable_order)

    def with_order(self, order: int) -> "Jet":
        """Same coefficients under a different truncation order (drops terms above it)."""
        return self.truncate(order)

    def to_float(self) -> "Jet":
        if not self.exact:
            return self
        return Jet._raw(self.n, self.order, {a: float(c) for a, c in self.terms.items()}, False,
                        self.reliable_order)

    def to_exact(self) -> "Jet":
        """Rational copy; floats are converted by their exact binary value."""
        if self.exact:
            return self
        return Jet._raw(self.n, self.order, {a: mpq(c) for a, c in self.terms.items()}, True,
                        self.reliable_order)

    def max_abs(self) -> float:
        return max((abs(float(c)) for c in self.terms.values()), default=0.0)

    # -- arithmetic ---------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.n != self.n:
                raise DimensionError(f"cannot combine jets in {self.n} and {other.n} variables")
            return other
        return Jet.constant(self.n, self.order, other)

    def _common(self, other):
        if self.exact and other.exact:
            return self, other, True
        return self.to_float(), other.to_float(), False

    def __add__(self, other):
        other = self._coerce(other)
        a, b, exact = self._common(other)
        order = min(a.order, b.order)
        out = {k: v for k, v in a.terms.items() if sum(k) <= order}
        for k, v in b.terms.items():
            if sum(k) <= order:
                out[k] = out.get(k, 0) + v
        return Jet._raw(self.n, order, out, exact, min(a.reliable_order, b.reliable_order))

    __radd__ = __add__

    def __neg__(self):
        return Jet._raw(self.n, self.order, {k: -v for k, v in self.terms.items()}, self.exact,
                        self.reliable_order)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, s) -> "Jet":
        s = to_coeff(s)
        if self.exact and is_exact(s):
            return Jet._raw(self.n, self.order, {k: v * s for k, v in self.terms.items()}, True,
                            self.reliable_order)
        s = float(s)
        return Jet._raw(self.n, self.order, {k: float(v) * s for k, v in self.terms.items()}, False,
                        self.reliable_order)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other.reciprocal())
        s = to_coeff(other)
        if s == 0:
            raise ZeroDivisionError("division of a jet by zero")
        return self.scale(1 / s if is_exact(s) else 1.0 / s)

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("jets only support non-negative integer powers")
        result = Jet.constant(self.n, self.order, 1 if self.exact else 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = jet_mul(result, base)
            k >>= 1
            if k:
                base = jet_mul(base, base)
        return result

    def __eq__(self, other):
        if isinstance(other, Jet):
            return self.n == other.n and self.terms == other.terms
        if isinstance(other, (int, float, Fraction, MPQ)):
            return self == Jet.constant(self.n, self.order, other)
        return NotImplemented

    def allclose(self, other: "Jet", atol: float = 1e-12, rtol: float = 1e-12) -> bool:
        if self.n != other.n:
            return False
        keys = set(self.terms) | set(other.terms)
        scale = max(self.max_abs(), other.max_abs(), 1.0)
        return all(abs(float(self.coefficient(k)) - float(other.coefficient(k))) <= atol + rtol * scale
                   for k in keys)

    # -- calculus -------------------------------------------------------------
    def derivative(self, i: int) -> "Jet":
        out = {}
        for a, c in self.terms.items():
            if a[i]:
                b = a[:i] + (a[i] - 1,) + a[i + 1:]
                out[b] = c * a[i]
        return Jet._raw(self.n, self.order, out, self.exact, self.reliable_order - 1)

    def gradient(self):
        return [self.derivative(i) for i in range(self.n)]

    def reciprocal(self) -> "Jet":
        """Series of ``1/f`` for a jet with nonzero constant term."""
        c0 = self.constant_term()
        if c0 == 0:
            raise ZeroDivisionError("reciprocal of a jet with zero constant term")
        inv0 = 1 / c0 if self.exact else 1.0 / float(c0)
        z = (self - c0).scale(inv0)
        return _binomial_series(z, -1).scale(inv0)

    def power_series(self, alpha) -> "Jet":
        """``f**alpha`` for a jet with constant term 1 (binomial series).

        ``alpha`` may be any rational (exact coefficients survive) or float.
        """
        if self.constant_term() != 1:
            raise ValueError("power_series needs a jet with constant term 1")
        return _binomial_series(self - 1, alpha)

    # -- evaluation / re-centring ---------------------------------------------
    def evaluate(self, x):
        """Evaluate at a point or an array of points ``(..., n)`` in floats."""
        return PolyEvaluator([self]).evaluate(np.asarray(x, dtype=float))[..., 0]

    def translate(self, p) -> "Jet":
        """Re-expand around ``p``: the jet of ``x -> f(x + p)``.

        Exact only when the stored jet is the full polynomial (degree <= order).
        """
        p = [to_coeff(v) for v in p]
        if len(p) != self.n:
            raise DimensionError("translation vector has wrong length")
        exact = self.exact and all(is_exact(v) for v in p)
        if not exact:
            p = [float(v) for v in p]
        shifted = [Jet(self.n, self.order, {unit(self.n, j): 1, (0,) * self.n: p[j]})
                   for j in range(self.n)]
        if not exact:
            shifted = [s.to_float() for s in shifted]
        one = Jet.constant(self.n, self.order, 1 if exact else 1.0)
        src = self if exact else self.to_float()
        out = Jet.zero(self.n, self.order, exact)
        cache = {}
        for a, c in src.terms.items():
            term = one
            for j, e in enumerate(a):
                if e:
                    key = (j, e)
                    if key not in cache:
                        cache[key] = shifted[j] ** e
                    term = jet_mul(term, cache[key])
            out = out + term.scale(c)
        return out


def _binomial_series(z: Jet, alpha) -> Jet:
    """``(1 + z)**alpha`` for a jet ``z`` without constant term."""
    if z.constant_term() != 0:
        raise ValueError("binomial series needs z(0) = 0")
    exact = z.exact and not isinstance(alpha, float)
    if exact:
        alpha = to_coeff(alpha)
    else:
        alpha = float(alpha)
        z = z.to_float()
    result = Jet.constant(z.n, z.order, 1 if exact else 1.0)
    v = z.valuation()
    if v == math.inf:
        return result
    kmax = int(z.order // v)
    coeff = mpq(1) if exact else 1.0
    zk = Jet.constant(z.n, z.order, 1 if exact else 1.0)
    for k in range(1, kmax + 1):
        coeff = coeff * (alpha - (k - 1)) / k
        zk = jet_mul(zk, z)
        if coeff != 0:
            result = result + zk.scale(coeff)
    return result


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Product truncated to ``min(a.order, b.order)``."""
    if a.n != b.n:
        raise DimensionError(f"cannot multiply jets in {a.n} and {b.n} variables")
    a, b, exact = a._common(b)
    order = min(a.order, b.order)
    bt = [(k, sum(k), v) for k, v in b.terms.items()]
    out = {}
    get = out.get
    for ka, va in a.terms.items():
        room = order - sum(ka)
        if room < 0:
            break
        for kb, db, vb in bt:
            if db > room:
                break
            k = tuple(map(add, ka, kb))
            out[k] = get(k, 0) + va * vb
    va_, vb_ = a.valuation(), b.valuation()
    rel = min(a.reliable_order + (vb_ if vb_ != math.inf else order),
              b.reliable_order + (va_ if va_ != math.inf else order))
    return Jet._raw(a.n, order, out, exact, int(min(rel, order)))


def _components(g):
    comps = g.components if isinstance(g, (CoordinateChange, PolyVectorField)) else tuple(g)
    if not comps:
        raise ValueError("empty substitution")
    return comps


def jet_compose(f: Jet, g) -> Jet:
    """Taylor coefficients of ``f o g`` through order ``min(L_f, L_g)``.

    ``g`` is a :class:`CoordinateChange` or any sequence of ``f.n`` jets that
    vanish at the origin (they may live in a different number of variables).
    """
    comps = _components(g)
    if len(comps) != f.n:
        raise DimensionError(f"substitution has {len(comps)} components, jet has {f.n} variables")
    m = comps[0].n
    for c in comps:
        if c.n != m:
            raise DimensionError("substitution components disagree in dimension")
        if c.constant_term() != 0:
            raise ValueError("substitution must fix the origin")
    order = min(f.order, min(c.order for c in comps))
    exact = f.exact and all(c.exact for c in comps)
    if not exact:
        f = f.to_float()
        comps = [c.to_float() for c in comps]
    zero_key = (0,) * f.n
    cache = {zero_key: Jet.constant(m, order, 1 if exact else 1.0)}

    def image(a):
        hit = cache.get(a)
        if hit is not None:
            return hit
        j = max(i for i, e in enumerate(a) if e)
        prev = a[:j] + (a[j] - 1,) + a[j + 1:]
        res = jet_mul(image(prev), comps[j])
        cache[a] = res
        return res

    out = {}
    for a, c in f.terms.items():
        if sum(a) > order:
            break
        for k, v in image(a).terms.items():
            out[k] = out.get(k, 0) + c * v
    rel = min(f.reliable_order,
              min(cc.reliable_order for cc in comps) + max(int(min(f.valuation(), order)), 1) - 1)
    return Jet._raw(m, order, out, exact, rel)


# -- small dense linear algebra in either coefficient mode ---------------------

def _exact_inverse(A):
    n = len(A)
    M = [[to_coeff(v) for v in row] + [mpq(int(i == j)) for j in range(n)] for i, row in enumerate(A)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            raise SingularLinearPartError("linear part is singular")
        M[col], M[piv] = M[piv], M[col]
        p = M[col][col]
        M[col] = [v / p for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [row[n:] for row in M]


def exact_det(A):
    n = len(A)
    M = [[to_coeff(v) for v in row] for row in A]
    det = mpq(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            return mpq(0)
        if piv != col:
            M[col], M[piv] = M[piv], M[col]
            det = -det
        p = M[col][col]
        det *= p
        for r in range(col + 1, n):
            if M[r][col] != 0:
                f = M[r][col] / p
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return det


def matrix_inverse(A, exact: bool, det_tol: float = 1e-12):
    if exact:
        return _exact_inverse(A)
    arr = np.asarray(A, dtype=float)
    if abs(np.linalg.det(arr)) <= det_tol:
        raise SingularLinearPartError(f"linear part is singular (|det| <= {det_tol})")
    return np.linalg.inv(arr).tolist()


def _lincomb(coeffs, jets, n, order, exact):
    out = {}
    for c, jet in zip(coeffs, jets):
        if c == 0:
            continue
        for k, v in jet.terms.items():
            out[k] = out.get(k, 0) + c * v
    return Jet._raw(n, order, out, exact)


def _matvec(M, jets, n, order, exact):
    return [_lincomb(row, jets, n, order, exact) for row in M]


class CoordinateChange:
    """Polynomial map germ ``x -> (g_1(x), ..., g_n(x))`` fixing the origin.

    The linear part (matrix of degree-one coefficients) must be invertible.
    Under :func:`pullback_field` the map is read as *new -> old* coordinates.
    """

    __slots__ = ("n", "components", "linear_part", "exact")

    def __init__(self, components, det_tol: float = 1e-12):
        comps = tuple(components)
        n = len(comps)
        if n == 0:
            raise ValueError("a coordinate change needs components")
        exact = all(c.exact for c in comps)
        if not exact:
            comps = tuple(c.to_float() for c in comps)
        for c in comps:
            if c.n != n:
                raise DimensionError("coordinate change must map R^n to R^n")
            if c.constant_term() != 0:
                raise ValueError("coordinate change must fix the origin")
        lin = tuple(tuple(c.coefficient(unit(n, j)) for j in range(n)) for c in comps)
        if exact:
            if exact_det(lin) == 0:
                raise SingularLinearPartError("linear part is singular")
        elif abs(np.linalg.det(np.asarray(lin, dtype=float))) <= det_tol:
            raise SingularLinearPartError(f"linear part is singular (|det| <= {det_tol})")
        self.n = n
        self.components = comps
        self.linear_part = lin
        self.exact = exact

    @property
    def order(self) -> int:
        return min(c.order for c in self.components)

    @classmethod
    def identity(cls, n: int, order: int, exact: bool = True):
        one = 1 if exact else 1.0
        return cls([Jet.variable(n, i, order, one) for i in range(n)])

    @classmethod
    def linear(cls, A, order: int):
        """The linear map ``x -> A x``."""
        rows = [list(r) for r in A]
        n = len(rows)
        return cls([Jet(n, order, {unit(n, j): rows[i][j] for j in range(n)}) for i in range(n)])

    def __repr__(self):
        return f"CoordinateChange(n={self.n}, order={self.order}, components={self.components!r})"

    def __eq__(self, other):
        return isinstance(other, CoordinateChange) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def linear_matrix(self) -> np.ndarray:
        return np.asarray(self.linear_part, dtype=float)

    def to_float(self):
        return CoordinateChange([c.to_float() for c in self.components])

    def truncate(self, order: int):
        return CoordinateChange([c.truncate(order) for c in self.components])

    def compose(self, other: "CoordinateChange") -> "CoordinateChange":
        """``self o other``."""
        return CoordinateChange([jet_compose(c, other) for c in self.components])

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self):
        return invert_to_order(self)

    def is_identity(self) -> bool:
        return all(c == Jet.variable(self.n, i, c.order) for i, c in enumerate(self.components))

    def nonlinear_part(self):
        return [c - c.homogeneous(1) for c in self.components]

    def __call__(self, x):
        return PolyEvaluator(self.components).evaluate(np.asarray(x, dtype=float))

    def allclose(self, other, atol=1e-12, rtol=1e-12):
        return all(a.allclose(b, atol, rtol) for a, b in zip(self.components, other.components))


def invert_to_order(g: CoordinateChange) -> CoordinateChange:
    """Compositional inverse of ``g`` through its truncation order.

    Solves ``A h + N(h) = x`` by the order-raising recursion
    ``h <- A^{-1} (x - N(h))``; each pass fixes one more degree.
    """
    n, order, exact = g.n, g.order, g.exact
    Ainv = matrix_inverse(g.linear_part, exact)
    nonlin = [c.truncate(order) for c in g.nonlinear_part()]
    xs = [Jet.variable(n, i, order, 1 if exact else 1.0) for i in range(n)]
    h = _matvec(Ainv, xs, n, order, exact)
    if all(c.is_zero() for c in nonlin):
        return CoordinateChange(h)
    for _ in range(order):
        hx = [xs[i] - jet_compose(nonlin[i], h) for i in range(n)]
        new = _matvec(Ainv, hx, n, order, exact)
        if exact and new == h:
            break
        if not exact and all(a.allclose(b, 0.0, 0.0) for a, b in zip(new, h)):
            break
        h = new
    return CoordinateChange(h)


class PolyVectorField:
    """Polynomial vector field ``V = sum_i V_i(x) d/dx_i`` given by jets.

    ``eigen_linear_part`` records ``lambda`` when the linear part is exactly
    ``diag(lambda)``; it is validated on construction.
    """

    __slots__ = ("n", "components", "eigen_linear_part")

    def __init__(self, components, eigen_linear_part=None):
        comps = tuple(components)
        n = len(comps)
        if n == 0:
            raise ValueError("a vector field needs components")
        exact = all(c.exact for c in comps)
        if not exact:
            comps = tuple(c.to_float() for c in comps)
        for c in comps:
            if c.n != n:
                raise DimensionError("vector field components must live in R^n")
        lam = None
        if eigen_linear_part is not None:
            lam = tuple(to_coeff(v) for v in eigen_linear_part)
            if len(lam) != n:
                raise DimensionError("eigenvalue vector has wrong length")
            for i, c in enumerate(comps):
                lin = c.homogeneous(1)
                expect = Jet(n, c.order, {unit(n, i): lam[i]})
                if exact and all(is_exact(v) for v in lam):
                    ok = lin == expect
                else:
                    ok = lin.allclose(expect, atol=1e-12, rtol=1e-10)
                if not ok:
                    raise ValueError(f"degree-1 part of component {i} is not {lam[i]}*x{i + 1}")
        self.n = n
        self.components = comps
        self.eigen_linear_part = lam

    @classmethod
    def linear(cls, lams, order: int):
        """The standard form ``V0 = sum lambda_i x_i d/dx_i``."""
        n = len(lams)
        return cls([Jet.variable(n, i, order, lams[i]) for i in range(n)], eigen_linear_part=lams)

    @property
    def order(self) -> int:
        return min(c.order for c in self.components)

    @property
    def exact(self) -> bool:
        return all(c.exact for c in self.components)

    def __repr__(self):
        return f"PolyVectorField(n={self.n}, order={self.order}, components={self.components!r})"

    def __str__(self):
        from .parser import format_jet

        return ", ".join(f"({format_jet(c)})*d{i + 1}" for i, c in enumerate(self.components))

    def __getitem__(self, i):
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def __eq__(self, other):
        return isinstance(other, PolyVectorField) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __add__(self, other):
        return PolyVectorField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other):
        return PolyVectorField([a - b for a, b in zip(self.components, other.components)])

    def scale(self, s):
        return PolyVectorField([c.scale(s) for c in self.components])

    def allclose(self, other, atol=1e-12, rtol=1e-12):
        return all(a.allclose(b, atol, rtol) for a, b in zip(self.components, other.components))

    def to_float(self):
        lam = None if self.eigen_linear_part is None else [float(v) for v in self.eigen_linear_part]
        return PolyVectorField([c.to_float() for c in self.components], lam)

    def truncate(self, order: int):
        return PolyVectorField([c.truncate(order) for c in self.components], self.eigen_linear_part)

    def linear_part(self):
        return tuple(tuple(c.coefficient(unit(self.n, j)) for j in range(self.n)) for c in self.components)

    def linear_matrix(self) -> np.ndarray:
        return np.asarray(self.linear_part(), dtype=float)

    def diagonal_eigenvalues(self, tol: float = 0.0):
        """``lambda`` if the linear part is diagonal (within ``tol``), else ``None``."""
        lin = self.linear_part()
        for i in range(self.n):
            for j in range(self.n):
                if i != j and abs(float(lin[i][j])) > tol:
                    return None
        return tuple(lin[i][i] for i in range(self.n))

    def with_eigenvalues(self, lams=None):
        lams = self.diagonal_eigenvalues() if lams is None else lams
        if lams is None:
            raise ValueError("linear part is not diagonal")
        return PolyVectorField(self.components, lams)

    def standard_form(self):
        """``V0`` built from the recorded (or detected) diagonal linear part."""
        lam = self.eigen_linear_part or self.diagonal_eigenvalues()
        if lam is None:
            raise ValueError("linear part is not diagonal")
        v0 = PolyVectorField.linear(lam, self.order)
        return v0 if self.exact else v0.to_float()

    def residual(self):
        """``V - V0`` (the higher-order part of a diagonalized field)."""
        return PolyVectorField([c - c.homogeneous(1) for c in self.components])

    def residual_terms(self, min_degree: int = 2):
        """List of ``(a, i, coeff)`` for every monomial ``coeff*x^a d/dx_i`` with ``|a| >= min_degree``."""
        out = []
        for i, c in enumerate(self.components):
            for a, v in c.terms.items():
                if sum(a) >= min_degree:
                    out.append((a, i, v))
        out.sort(key=lambda t: (grlex_key(t[0]), t[1]))
        return out

    def evaluator(self):
        return PolyEvaluator(self.components)

    def __call__(self, x):
        return self.evaluator().evaluate(np.asarray(x, dtype=float))


def pullback_field(V: PolyVectorField, g: CoordinateChange) -> PolyVectorField:
    """``g^*V``: the field ``W`` with ``Dg(x) W(x) = V(g(x))`` through order ``L``.

    ``g`` maps new coordinates to old ones.  Contravariant:
    ``pullback(V, g o h) == pullback(pullback(V, g), h)``.
    """
    if V.n != g.n:
        raise DimensionError("field and coordinate change disagree in dimension")
    n = V.n
    exact = V.exact and g.exact
    if not exact:
        V, g = V.to_float(), g.to_float()
    order = min(V.order, g.order)
    U = [jet_compose(c, g) for c in V.components]
    Ainv = matrix_inverse(g.linear_part, exact)
    M = [[g.components[i].derivative(j) - g.linear_part[i][j] for j in range(n)] for i in range(n)]
    W = _matvec(Ainv, U, n, order, exact)
    if all(m.is_zero() for row in M for m in row):
        return PolyVectorField(W)
    for _ in range(order + 1):
        MW = [sum((jet_mul(M[i][j], W[j]) for j in range(n) if not M[i][j].is_zero()),
                  Jet.zero(n, order, exact)) for i in range(n)]
        new = _matvec(Ainv, [U[i] - MW[i] for i in range(n)], n, order, exact)
        if exact and new == W:
            break
        if not exact and all(a.allclose(b, 0.0, 0.0) for a, b in zip(new, W)):
            break
        W = new
    return PolyVectorField([w.truncate(order) for w in W])


def lie_derivative(V: PolyVectorField, f: Jet) -> Jet:
    """``L_V f = sum_i V_i df/dx_i`` truncated to ``L``.

    The returned jet's ``reliable_order`` records how far the truncated data
    determines the result.
    """
    if V.n != f.n:
        raise DimensionError("field and jet disagree in dimension")
    exact = V.exact and f.exact
    order = min(V.order, f.order)
    out = Jet.zero(f.n, order, exact)
    for i, c in enumerate(V.components):
        d = f.derivative(i)
        if not d.is_zero() and not c.is_zero():
            out = out + jet_mul(c, d)
    vmin = min((c.valuation() for c in V.components), default=math.inf)
    rel = order if vmin == math.inf else order - int(vmin) + 1
    return Jet._raw(out.n, out.order, out.terms, out.exact, min(out.reliable_order, rel))


def lie_bracket(V: PolyVectorField, W: PolyVectorField) -> PolyVectorField:
    """``[V, W]_i = L_V W_i - L_W V_i``."""
    return PolyVectorField([lie_derivative(V, w) - lie_derivative(W, v)
                            for v, w in zip(V.components, W.components)])


class PolyEvaluator:
    """Vectorized float evaluation of a tuple of jets.

    ``evaluate(X)`` takes points of shape ``(..., n)`` and returns
    ``(..., len(jets))``.
    """

    def __init__(self, jets):
        jets = list(jets)
        self.n = jets[0].n
        keys = sorted({a for j in jets for a in j.terms}, key=grlex_key)
        index = {a: t for t, a in enumerate(keys)}
        self.exponents = np.array(keys, dtype=float).reshape(len(keys), self.n)
        C = np.zeros((len(jets), len(keys)))
        for r, j in enumerate(jets):
            for a, c in j.terms.items():
                C[r, index[a]] = float(c)
        self.coeffs = C
        # linear monomials are evaluated without pow for speed
        self._max_exp = int(self.exponents.max()) if len(keys) else 0

    def evaluate(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n:
            raise DimensionError(f"points must have {self.n} coordinates")
        if not len(self.exponents):
            return np.zeros(X.shape[:-1] + (self.coeffs.shape[0],))
        powers = [np.ones(X.shape)]
        for _ in range(self._max_exp):
            powers.append(powers[-1] * X)
        P = np.stack(powers, axis=-1)  # (..., n, e+1)
        E = self.exponents.astype(int)
        mons = np.ones(X.shape[:-1] + (E.shape[0],))
        for j in range(self.n):
            mons = mons * P[..., j, :][..., E[:, j]]
        return mons @ self.coeffs.T
