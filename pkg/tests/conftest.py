"""Shared helpers: sympy oracles and random problem generators."""

import itertools
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from gmpy2 import mpq

from morsenorm.jets import Jet, PolyVectorField


def symbols(n):
    return sp.symbols(f"x1:{n + 1}")


def to_sympy(jet, xs=None):
    xs = xs or symbols(jet.n)
    out = sp.Integer(0)
    for a, c in jet.terms.items():
        coeff = sp.Rational(int(c.numerator), int(c.denominator)) if jet.exact else sp.Float(c, 17)
        out += coeff * sp.Mul(*[x ** e for x, e in zip(xs, a)])
    return out


def from_sympy(expr, n, order, xs=None):
    """Jet of a sympy polynomial, keeping degrees up to ``order``."""
    xs = xs or symbols(n)
    poly = sp.Poly(sp.expand(expr), *xs)
    terms = {}
    for a, c in poly.terms():
        if sum(a) <= order:
            c = sp.Rational(c)
            terms[tuple(a)] = mpq(int(c.p), int(c.q))
    return Jet(n, order, terms)


def truncate_sympy(expr, xs, order):
    poly = sp.Poly(sp.expand(expr), *xs)
    return sum((c * sp.Mul(*[x ** e for x, e in zip(xs, a)]) for a, c in poly.terms() if sum(a) <= order),
               sp.Integer(0))


def brute_witnesses(lams, max_order):
    """Independent resonance scan with python Fractions."""
    lams = [Fraction(l) for l in lams]
    n = len(lams)
    out = set()
    for d in range(2, max_order + 1):
        for a in itertools.product(range(d + 1), repeat=n):
            if sum(a) != d:
                continue
            s = sum(e * l for e, l in zip(a, lams))
            for i in range(n):
                if s == lams[i]:
                    out.add((a, i))
    return out


def random_rational(rng, lo=-3, hi=3, dens=(1, 2, 3, 4)):
    return Fraction(int(rng.integers(lo, hi + 1)), int(rng.choice(dens)))


def random_nonresonant_lams(rng, n, L):
    while True:
        lams = []
        while len(lams) < n:
            q = Fraction(int(rng.integers(1, 40)) * int(rng.choice([-1, 1])), int(rng.choice([1, 3, 7, 11, 13])))
            if q not in lams:
                lams.append(q)
        if not brute_witnesses(lams, L):
            return lams


def random_field(rng, lams, L, terms=4):
    n = len(lams)
    comps = [{tuple(int(i == j) for j in range(n)): mpq(l.numerator, l.denominator)} for i, l in enumerate(lams)]
    for _ in range(terms):
        d = int(rng.integers(2, L + 1))
        cut = np.sort(rng.choice(np.arange(d + n - 1), n - 1, replace=False))
        parts = np.diff(np.concatenate([[-1], cut, [d + n - 1]])) - 1
        a = tuple(int(p) for p in parts)
        i = int(rng.integers(n))
        c = random_rational(rng)
        if c:
            comps[i][a] = comps[i].get(a, 0) + mpq(c.numerator, c.denominator)
    return PolyVectorField([Jet(n, L, t) for t in comps], tuple(mpq(l.numerator, l.denominator) for l in lams))


def random_morse_function(rng, n, L, terms=5):
    """Random rational polynomial with nondegenerate quadratic part and no constant or linear terms."""
    while True:
        Q = np.array([[int(rng.integers(-3, 4)) for _ in range(n)] for _ in range(n)])
        Q = Q + Q.T
        if round(abs(np.linalg.det(Q))) != 0:
            break
    t = {}
    for i in range(n):
        for j in range(i, n):
            a = [0] * n
            a[i] += 1
            a[j] += 1
            # Hessian Q: diagonal entries enter as Q_ii / 2
            c = Fraction(int(Q[i, i]), 2) if i == j else Fraction(int(Q[i, j]))
            if c:
                t[tuple(a)] = mpq(c.numerator, c.denominator)
    for _ in range(terms):
        d = int(rng.integers(3, L + 1))
        a = [0] * n
        for _ in range(d):
            a[int(rng.integers(n))] += 1
        c = random_rational(rng)
        if c:
            t[tuple(a)] = t.get(tuple(a), 0) + mpq(c.numerator, c.denominator)
    return Jet(n, L, t)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number, ok, detail, elapsed, limit):
        ok = bool(ok) and elapsed < limit
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} ({elapsed:.2f} s, limit {limit:g} s)"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
