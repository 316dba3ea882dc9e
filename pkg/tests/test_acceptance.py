"""Acceptance battery: one PASS/FAIL line per criterion, at the stated tolerances and time limits.

Run under pytest (lines are repeated in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import sympy as sp
from gmpy2 import mpq

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import (  # noqa: E402
    brute_witnesses,
    random_field,
    random_morse_function,
    random_nonresonant_lams,
    symbols,
    to_sympy,
    truncate_sympy,
)
from morsenorm import cli  # noqa: E402
from morsenorm.benchmarks import GOLDEN, example_resonant_field, golden_saddle_field  # noqa: E402
from morsenorm.checks import lemma_ratio, random_compact_cubic  # noqa: E402
from morsenorm.flows import TruncatedField, conjugacy_phi, conjugacy_residual, flow_G  # noqa: E402
from morsenorm.jets import CoordinateChange, Jet, PolyVectorField, jet_compose, pullback_field  # noqa: E402
from morsenorm.normal_form import (  # noqa: E402
    cross_flatten,
    invariant_manifold_jet,
    morse_lemma_jet,
    normalize_to_order,
    obstruction_ledger,
    remove_block_dynamics,
    straighten_manifolds,
)
from morsenorm.sobolev import (  # noqa: E402
    WeightedNormParams,
    delta_min,
    fixed_point_batch,
    graded_grid,
    lemma_integration_constant,
)
from morsenorm.spectrum import check_N_linearity, spectrum_from_jets  # noqa: E402

SPECS = Path(__file__).resolve().parents[1] / "specs"
SEED = 20240611
LAMS = np.array([1.0, -GOLDEN])


def benchmark_grid():
    g = np.linspace(-0.25, 0.25, 21)
    return np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)


def test_criterion_1_resonance_ground_truth(criterion, tmp_path):
    t0 = time.perf_counter()
    rep = check_N_linearity([2, 1], 3)
    scan = rep.witness_set() == {((0, 2), 0)} == brute_witnesses([2, 1], 3)
    Psi, W, steps = normalize_to_order(example_resonant_field(6), (2, 1), 6)
    ledger = [(a, i) for a, i, _ in obstruction_ledger(steps)]
    code = cli.main(["normalize", str(SPECS / "example_field.json"), "--out", str(tmp_path)])
    report = json.loads((tmp_path / "report.json").read_text())
    cli_ledger = [(tuple(e["exponent"]), e["component"]) for e in report["normalization"]["ledger"]]
    elapsed = time.perf_counter() - t0
    ok = scan and not rep.satisfied and ledger == [((0, 2), 0)] and code == 4 and cli_ledger == [((0, 2), 1)]
    criterion(1, ok, f"witnesses {sorted(rep.witness_set())}, ledger {ledger}, cli exit {code}", elapsed, 1.0)


def test_criterion_2_normalization_soundness(criterion):
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    L, bad = 6, []
    for trial in range(25):
        n = 2 + trial % 2
        lams = random_nonresonant_lams(rng, n, L)
        V = random_field(rng, lams, L, terms=6)
        Psi, W, steps = normalize_to_order(V, V.eigen_linear_part, L)
        sound = W == PolyVectorField.linear(V.eigen_linear_part, L) and pullback_field(V, Psi) == W
        Psi2, W2, _ = normalize_to_order(W, V.eigen_linear_part, L)
        if not (sound and Psi2.is_identity() and W2 == W):
            bad.append(trial)
    elapsed = time.perf_counter() - t0
    criterion(2, not bad, f"25 systems, exact residual V0 and idempotent, failures {bad}", elapsed, 60.0)


def test_criterion_3_morse_lemma_jets(criterion):
    rng = np.random.default_rng(SEED + 3)
    t0 = time.perf_counter()
    L, bad, oracle = 6, [], 0
    for trial in range(25):
        n = 2 + trial % 2
        f = random_morse_function(rng, n, L, terms=6)
        m = morse_lemma_jet(f)
        if (jet_compose(f, m.chart_inverse) - m.weighted_form()).terms:
            bad.append(trial)
        if n == 2 and trial < 6:
            # independent route: substitute the inverse chart in sympy
            xs = symbols(n)
            sub = dict(zip(xs, [to_sympy(c) for c in m.chart_inverse.components]))
            lhs = truncate_sympy(to_sympy(f).subs(sub, simultaneous=True), xs, L)
            rhs = sum(s * sp.Rational(int(w.numerator), int(w.denominator)) * x ** 2
                      for s, w, x in zip(m.signs, m.weights, xs))
            oracle += 1
            if sp.expand(lhs - rhs) != 0:
                bad.append(("sympy", trial))
    elapsed = time.perf_counter() - t0
    criterion(3, not bad, f"25 functions exact through order {L}, {oracle} sympy cross-checks, failures {bad}",
              elapsed, 30.0)


def test_criterion_4_eigenvalue_invariance(criterion):
    rng = np.random.default_rng(SEED + 4)
    t0 = time.perf_counter()
    n, L = 3, 3
    f = random_morse_function(rng, n, L).to_float()
    B = rng.normal(size=(n, n))
    G0 = B @ B.T + n * np.eye(n)
    metric = [[Jet.constant(n, L, float(G0[i, j])) for j in range(n)] for i in range(n)]
    H = np.array([[f.derivative(i).derivative(j).coefficient((0,) * n) for j in range(n)] for i in range(n)])
    # oracle: generalized symmetric eigenproblem solved by numpy on g^{-1/2} H g^{-1/2}
    w, U = np.linalg.eigh(G0)
    S = U @ np.diag(w ** -0.5) @ U.T
    want = np.sort(np.linalg.eigvalsh(S @ H @ S))
    base = np.sort(spectrum_from_jets(f, metric).eigenvalues)
    worst = float(np.max(np.abs(base - want) / np.abs(want)))
    for _ in range(100):
        T = rng.normal(size=(n, n))
        while abs(np.linalg.det(T)) < 0.2:
            T = rng.normal(size=(n, n))
        lin = CoordinateChange.linear(T.tolist(), L)
        fT = jet_compose(f, lin)
        gT = [[Jet.constant(n, L, float((T.T @ G0 @ T)[i, j])) for j in range(n)] for i in range(n)]
        lam = np.sort(spectrum_from_jets(fT, gT).eigenvalues)
        worst = max(worst, float(np.max(np.abs(lam - want) / np.abs(want))))
    elapsed = time.perf_counter() - t0
    criterion(4, worst <= 1e-10, f"100 linear changes, max relative deviation {worst:.2e}", elapsed, 10.0)


def test_criterion_5_conjugation_identity(criterion):
    t0 = time.perf_counter()
    G = golden_saddle_field()
    X = benchmark_grid()
    phi = conjugacy_phi(G, LAMS, X)
    res = conjugacy_residual(G, LAMS, X, (0.1, -0.1, 0.5, -0.5), phi=phi)
    on_axes = (X[:, 0] == 0) | (X[:, 1] == 0)
    axes = float(np.abs(phi[on_axes] - X[on_axes]).max())
    elapsed = time.perf_counter() - t0
    ok = res.max() <= 1e-6 and axes <= 1e-8
    criterion(5, ok, f"21x21 grid, max residual {res.max():.2e}, axis deviation {axes:.2e}", elapsed, 120.0)


def test_criterion_6_fixed_point_agreement(criterion):
    t0 = time.perf_counter()
    G = golden_saddle_field()
    X = benchmark_grid()
    d = delta_min(G)
    t = graded_grid(12.0)
    U, phi_fp, ratios, conv = fixed_point_batch(G, LAMS, X, WeightedNormParams(2.0, 0, d), t)
    dev = float(np.abs(phi_fp - conjugacy_phi(G, LAMS, X)).max())
    rho = float(np.nanmax(ratios))
    _, _, ratios2, conv2 = fixed_point_batch(G, LAMS, X, WeightedNormParams(2.0, 0, 2 * d), t)
    rho2 = float(np.nanmax(ratios2))
    elapsed = time.perf_counter() - t0
    ok = conv.all() and conv2.all() and dev <= 5e-6 and rho < 1 and rho2 < rho
    criterion(6, ok, f"max deviation {dev:.2e}, rho(delta_min={d:.2f}) {rho:.4f}, rho(2 delta_min) {rho2:.4f}",
              elapsed, 300.0)


def test_criterion_7_weighted_integration(criterion):
    rng = np.random.default_rng(SEED + 7)
    t0 = time.perf_counter()
    C0 = lemma_integration_constant(2.0)
    closed = 1 / (2 * (np.sqrt(2) - 1))
    t = graded_grid(4.0, 8001, 0.0)
    worst = 0.0
    for _ in range(50):
        w = random_compact_cubic(rng, t)
        for k in (0, 1):
            for delta in (4.0, 8.0, 16.0):
                worst = max(worst, lemma_ratio(w, t, WeightedNormParams(2.0, k, delta)))
    elapsed = time.perf_counter() - t0
    ok = abs(C0 - closed) <= 1e-10 and worst <= 1.05
    criterion(7, ok, f"C0(2)={C0:.12f} (closed form {closed:.12f}), max ratio {worst:.4f} over 50 functions",
              elapsed, 30.0)


def flattened_residual(V, lams, k, alpha, inner=False):
    Y = invariant_manifold_jet(V, lams, k, "unstable")
    Z = invariant_manifold_jet(V, lams, k, "stable")
    W = pullback_field(V, straighten_manifolds(Y, Z))
    if inner:
        # the dynamics inside each manifold is not mixed; remove it first
        flat = remove_block_dynamics(W, lams, k)
        assert not flat.obstructions
        W = flat.field
    res = cross_flatten(W, lams, k, alpha)
    return Y, res, list(res.field.residual_terms())


def test_criterion_8_invariant_manifold_jets(criterion):
    t0 = time.perf_counter()
    L = 6
    V = PolyVectorField([Jet(2, L, {(1, 0): 1}), Jet(2, L, {(0, 1): -1, (2, 0): 1})], (1, -1))
    Y, res, terms = flattened_residual(V, (1, -1), 1, 3)
    coeff = Y.graph[0].coefficient((2,))
    ok = coeff == mpq(1, 3) and all(min(sum(a[:1]), sum(a[1:])) >= 3 for a, _, _ in terms)
    # a nonresonant system where the scan is not vacuous
    rng = np.random.default_rng(SEED + 8)
    lams = [Fraction(3), Fraction(2, 7), Fraction(-5, 3)]
    assert not brute_witnesses(lams, L)
    V3 = random_field(rng, lams, L, terms=12)
    _, res3, terms3 = flattened_residual(V3, V3.eigen_linear_part, 2, 3, inner=True)
    ok3 = not res3.obstructions and all(min(sum(a[:2]), sum(a[2:])) >= 3 for a, _, _ in terms3)
    elapsed = time.perf_counter() - t0
    criterion(8, ok and ok3, f"graph coefficient {coeff}, residual block degrees >= 3 "
              f"({len(terms)} and {len(terms3)} monomials)", elapsed, 10.0)


def test_criterion_9_unstable_decay_rates(criterion):
    t0 = time.perf_counter()
    s = np.linspace(2, 6, 21)

    def rates(G, x, idx):
        # one lane per sample time
        ys = flow_G(G, np.tile(x, (len(s), 1)), -s, tol=1e-13, atol=1e-300)
        return [-np.polyfit(s, np.log(np.abs(ys[:, i])), 1)[0] for i in idx]

    got = []
    got.append((1.0, rates(golden_saddle_field(), np.array([0.3, 0.0]), [0])[0]))
    V1 = PolyVectorField([Jet(1, 2, {(1,): 1.0, (2,): 1.0})], (1.0,))
    got.append((1.0, rates(TruncatedField(V1, 0.5, 1.0), np.array([0.3]), [0])[0]))
    lams3 = (3.0, 1.0, -1.0)
    V3 = PolyVectorField([Jet(3, 3, {(1, 0, 0): 3.0, (1, 1, 0): 1.0, (0, 2, 1): 0.5}),
                          Jet(3, 3, {(0, 1, 0): 1.0, (0, 2, 0): 0.5}),
                          Jet(3, 3, {(0, 0, 1): -1.0, (1, 0, 1): 1.0})], lams3)
    got += list(zip(lams3[:2], rates(TruncatedField(V3, 0.5, 1.0), np.array([0.2, 0.25, 0.0]), [0, 1])))
    worst = max(abs(r - l) / l for l, r in got)
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{l:g}->{r:.4f}" for l, r in got)
    criterion(9, worst <= 0.05, f"fitted rates {detail}, max relative error {worst:.2%}", elapsed, 30.0)


if __name__ == "__main__":
    import tempfile

    from conftest import ACCEPTANCE_LINES

    def record(number, ok, detail, elapsed, limit):
        ok = bool(ok) and elapsed < limit
        print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} ({elapsed:.2f} s, limit {limit:g} s)")
        ACCEPTANCE_LINES.append(ok)

    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            with tempfile.TemporaryDirectory() as d:
                args = {"criterion": record, "tmp_path": Path(d)}
                fn(**{k: v for k, v in args.items() if k in fn.__code__.co_varnames[:fn.__code__.co_argcount]})
    sys.exit(0 if all(ACCEPTANCE_LINES) else 1)
