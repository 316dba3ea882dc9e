"""Property battery run by ``morsenorm verify``.

Each check returns a :class:`CheckResult` with status ``PASS``, ``FAIL`` or
``SKIPPED``.  Checks that only make sense without resonances (full
normalization, manifold flatness) are skipped when the scan finds witnesses.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .flows import conjugacy_phi, conjugacy_residual
from .jets import CoordinateChange, Jet, jet_compose, pullback_field
from .normal_form import invariant_manifold_jet, morse_lemma_jet, normalize_to_order, obstruction_ledger
from .parser import format_jet, parse_expression
from .pipeline import Prepared, block_linear_field
from .sobolev import (
    WeightedNormParams,
    delta_min,
    fixed_point_batch,
    graded_grid,
    lemma_integration_constant,
    weighted_norms,
)
from .spectrum import check_N_linearity, spectrum_from_jets

__all__ = ["CheckResult", "run_checks", "flow_field", "random_compact_cubic", "lemma_ratio", "CHECKS"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "FAIL"


def _res(name, ok, detail=""):
    return CheckResult(name, "PASS" if ok else "FAIL", detail)


def _skip(name, why):
    return CheckResult(name, "SKIPPED", why)


_FLOW_FIELDS = {}


def flow_field(prep: Prepared):
    """Field used by the flow checks: ``prep.field`` made linear on the unstable block, or ``None``."""
    key = id(prep)
    if key not in _FLOW_FIELDS or _FLOW_FIELDS[key][0] is not prep:
        _FLOW_FIELDS.clear()
        _FLOW_FIELDS[key] = (prep, block_linear_field(prep))
    return _FLOW_FIELDS[key][1]


def _flow_setup(prep, name):
    got = flow_field(prep)
    if got is None:
        return None, _skip(name, "no block-linear chart (resonance inside a block)")
    return got, None


def _resonant_through(prep, L):
    return not check_N_linearity(prep.lams, L, "exact" if prep.exact else "float",
                                 prep.spec.float_zero).satisfied


def check_round_trip(prep, rng):
    spec = prep.spec
    jets = []
    if spec.mode == "function":
        jets.append(spec.function)
        jets.extend(m for row in spec.metric for m in row)
    else:
        jets.extend(spec.field)
    ok = all(parse_expression(format_jet(j), spec.n) == j for j in jets)
    return _res("parser_round_trip", ok, f"{len(jets)} expressions")


def check_eigen_invariance(prep, rng, trials=20):
    spec = prep.spec
    if spec.mode != "function":
        return _skip("eigenvalue_invariance", "raw-field spec")
    n, L = spec.n, 3
    f = spec.function.translate(prep.point).truncate(L).to_float() if any(prep.point) else spec.function.truncate(L).to_float()
    metric = [[m.truncate(L).to_float() for m in row] for row in spec.metric]
    base = np.array(prep.spectrum.eigenvalues)
    worst = 0.0
    for _ in range(trials):
        T = rng.normal(size=(n, n))
        while abs(np.linalg.det(T)) < 0.2:
            T = rng.normal(size=(n, n))
        lin = CoordinateChange.linear(T.tolist(), L)
        fT = jet_compose(f, lin)
        gT = [[sum((jet_compose(metric[a][b], lin) * (T[a, i] * T[b, j]) for a in range(n) for b in range(n)),
                   Jet.zero(n, L, False)) for j in range(n)] for i in range(n)]
        lam = np.sort(spectrum_from_jets(fT, gT, spec.float_zero).eigenvalues)
        worst = max(worst, float(np.max(np.abs(lam - np.sort(base)) / np.abs(np.sort(base)))))
    return _res("eigenvalue_invariance", worst <= 1e-10, f"max relative deviation {worst:.2e}")


def check_resonance_symmetry(prep, rng):
    lams = list(prep.lams)
    n = len(lams)
    mode = "exact" if prep.exact else "float"
    L = min(prep.spec.resonance_order, 6)
    rep = check_N_linearity(lams, L, mode, prep.spec.float_zero)
    perm = list(rng.permutation(n))
    rep2 = check_N_linearity([lams[p] for p in perm], L, mode, prep.spec.float_zero)
    mapped = {(tuple(a[perm.index(j)] for j in range(n)), perm.index(i)) for a, i in rep.witness_set()}
    ok = mapped == rep2.witness_set()
    # completeness cross-check on single-signed spectra
    fl = [float(l) for l in lams]
    if all(l > 0 for l in fl) or all(l < 0 for l in fl):
        bound = max(abs(l) for l in fl) / min(abs(l) for l in fl)
        ok = ok and all(sum(w.a) <= bound + 1e-9 for w in rep.witnesses)
    return _res("resonance_scan_symmetry", ok, f"{len(rep.witnesses)} witnesses through order {L}")


def _normalized(prep):
    return normalize_to_order(prep.field, prep.lams, prep.field.order, prep.spec.float_zero)


def check_obstruction_completeness(prep, rng):
    Psi, W, steps = _normalized(prep)
    L = prep.field.order
    wit = check_N_linearity(prep.lams, L, "exact" if prep.exact else "float", prep.spec.float_zero).witness_set()
    obs = {(a, i) for a, i, _ in obstruction_ledger(steps)}
    left = {(a, i) for a, i, _ in W.residual_terms(2)}
    ok = obs <= wit and left <= wit
    return _res("obstruction_completeness", ok, f"{len(obs)} obstruction(s)")


def check_normalization(prep, rng):
    L = prep.field.order
    if _resonant_through(prep, L):
        return _skip("normalization_soundness", "resonant spectrum")
    Psi, W, steps = _normalized(prep)
    V0 = prep.field.standard_form()
    if prep.exact:
        ok = W == V0
    else:
        ok = W.allclose(V0, atol=1e-9, rtol=1e-9)
    direct = pullback_field(prep.field, Psi)
    ok = ok and (direct == W if prep.exact else direct.allclose(W, 1e-9, 1e-9))
    return _res("normalization_soundness", ok, f"order {L}")


def check_idempotence(prep, rng):
    L = prep.field.order
    if _resonant_through(prep, L):
        return _skip("normalization_idempotence", "resonant spectrum")
    Psi, W, steps = _normalized(prep)
    Psi2, W2, steps2 = normalize_to_order(W, prep.lams, L, prep.spec.float_zero)
    ok = Psi2.is_identity() and not obstruction_ledger(steps2) and all(s.is_trivial for s in steps2)
    return _res("normalization_idempotence", ok)


def check_morse_lemma(prep, rng):
    spec = prep.spec
    if spec.mode != "function":
        return _skip("morse_lemma", "raw-field spec")
    L = spec.order
    f = spec.function.translate(prep.point) if any(prep.point) else spec.function
    f = f.truncate(L)
    f = f - f.constant_term()
    chart = morse_lemma_jet(f)
    diff = jet_compose(f, chart.chart_inverse) - chart.weighted_form()
    ok = diff.is_zero() if f.exact else diff.max_abs() <= 1e-9
    return _res("morse_lemma", ok, f"index {chart.index}")


def check_manifold_flatness(prep, rng):
    k = prep.spectrum.unstable_dim
    n = prep.spec.n
    if k in (0, n):
        return _skip("manifold_flatness", "no saddle split")
    if _resonant_through(prep, prep.field.order):
        return _skip("manifold_flatness", "resonant spectrum")
    Psi, W, steps = _normalized(prep)
    Y = invariant_manifold_jet(W, prep.lams, k, "unstable")
    Z = invariant_manifold_jet(W, prep.lams, k, "stable")
    return _res("manifold_flatness", Y.is_zero() and Z.is_zero())


def _sample_grid(prep, per_axis):
    n = prep.spec.n
    h = prep.spec.bump_inner / (2 * np.sqrt(n))
    axis = np.linspace(-h, h, per_axis)
    return np.stack(np.meshgrid(*([axis] * n), indexing="ij"), -1).reshape(-1, n)


def check_conjugation(prep, rng):
    got, skip = _flow_setup(prep, "conjugation_identity")
    if skip:
        return skip
    G = prep.truncated_field(got[0])
    X = _sample_grid(prep, 5 if prep.spec.n <= 2 else 3)
    r = conjugacy_residual(G, prep.float_lams, X)
    tol = prep.spec.conjugacy_tol
    return _res("conjugation_identity", float(r.max()) <= tol, f"max residual {r.max():.2e}, {got[2]} field")


def check_stationarity(prep, rng):
    got, skip = _flow_setup(prep, "exit_time_stationarity")
    if skip:
        return skip
    G = prep.truncated_field(got[0])
    X = _sample_grid(prep, 5 if prep.spec.n <= 2 else 3)
    base = conjugacy_phi(G, prep.float_lams, X)
    worst = max(float(np.max(np.abs(conjugacy_phi(G, prep.float_lams, X, horizon_extra=d) - base)))
                for d in (0.5, 1.0, 2.0))
    return _res("exit_time_stationarity", worst <= prep.spec.conjugacy_tol, f"max change {worst:.2e}")


def random_compact_cubic(rng, t, n=1, pieces=6):
    """Random ``C^1`` piecewise cubic on ``[-T, 0]`` vanishing with its slope outside a sub-interval."""
    T = -t[0]
    a, b = np.sort(rng.uniform(-0.8 * T, -0.05 * T, size=2))
    if b - a < 0.1:
        b = a + 0.1
    knots = np.linspace(a, b, pieces + 1)
    out = np.zeros((len(t), n))
    for c in range(n):
        vals = rng.normal(size=pieces + 1)
        slopes = rng.normal(size=pieces + 1)
        vals[[0, -1]] = 0.0
        slopes[[0, -1]] = 0.0
        spline = CubicHermiteSpline(knots, vals, slopes)
        inside = (t >= a) & (t <= b)
        out[inside, c] = spline(t[inside])
    return out


def lemma_ratio(w, t, params):
    """``||int w|| / ((C0/delta) ||w||)`` for one grid function."""
    from scipy.integrate import cumulative_trapezoid

    W = cumulative_trapezoid(w, t, axis=0, initial=0.0)
    lhs = weighted_norms(t, W, params)
    rhs = lemma_integration_constant(params.p) / params.delta * weighted_norms(t, w, params)
    return float(lhs / rhs)


def check_lemma(prep, rng, samples=10):
    t = graded_grid(4.0, 8001, 0.0)
    worst = 0.0
    for _ in range(samples):
        w = random_compact_cubic(rng, t)
        for k in (0, 1):
            for d in (4.0, 8.0, 16.0):
                worst = max(worst, lemma_ratio(w, t, WeightedNormParams(2.0, k, d)))
    return _res("weighted_integration_lemma", worst <= 1.05, f"max ratio {worst:.3f}")


def check_fixed_point(prep, rng):
    got, skip = _flow_setup(prep, "fixed_point_agreement")
    if skip:
        return skip
    G = prep.truncated_field(got[0])
    lams = prep.float_lams
    X = _sample_grid(prep, 3)
    d = delta_min(G)
    t = graded_grid(12.0 / np.min(np.abs(lams)), 4001)
    U, phi_fp, ratios, conv = fixed_point_batch(G, lams, X, WeightedNormParams(2.0, 0, d), t)
    phi = conjugacy_phi(G, lams, X)
    dev = float(np.max(np.abs(phi_fp - phi)))
    rho = float(np.nanmax(ratios)) if np.any(np.isfinite(ratios)) else 0.0
    ok = dev <= 5 * prep.spec.conjugacy_tol and rho < 1
    return _res("fixed_point_agreement", ok, f"max deviation {dev:.2e}, rho {rho:.3f}")


CHECKS = [
    check_round_trip,
    check_eigen_invariance,
    check_resonance_symmetry,
    check_obstruction_completeness,
    check_normalization,
    check_idempotence,
    check_morse_lemma,
    check_manifold_flatness,
    check_conjugation,
    check_stationarity,
    check_lemma,
    check_fixed_point,
]


def run_checks(prep: Prepared, seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    _FLOW_FIELDS.clear()
    for chk in CHECKS:
        try:
            out.append(chk(prep, rng))
        except Exception as exc:  # a crashing check is a failing check
            name = chk.__name__.replace("check_", "")
            out.append(CheckResult(name, "FAIL", f"{type(exc).__name__}: {exc}"))
    return out
