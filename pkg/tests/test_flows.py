import numpy as np
import pytest

from morsenorm.benchmarks import GOLDEN, golden_saddle_field
from morsenorm.flows import (
    TruncatedField,
    conjugacy_phi,
    conjugacy_psi_manifold,
    conjugacy_residual,
    exit_time,
    flow_F,
    flow_G,
    integrate,
    smooth_step,
)
from morsenorm.jets import Jet, PolyVectorField

LAMS = np.array([1.0, -GOLDEN])


def logistic_field(r_in=0.5, r_out=1.0):
    V = PolyVectorField([Jet(1, 2, {(1,): 1.0, (2,): 1.0})], (1.0,))
    return TruncatedField(V, r_in, r_out)


def logistic_exact(x0, t):
    # x' = x + x^2
    e = np.exp(t)
    return x0 * e / (1 + x0 * (1 - e))


def test_smooth_step_limits():
    s = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    assert np.allclose(smooth_step(s), [1, 1, 0.5, 0, 0])


def test_cutoff_regions():
    G = golden_saddle_field()
    x_in = np.array([[0.3, 0.2]])
    x_out = np.array([[0.8, 0.7]])
    assert np.allclose(G(x_in), G.V(x_in), rtol=1e-15)
    assert np.array_equal(G(x_out), G.V0(x_out))


def test_integrator_linear_and_nonlinear():
    X0 = np.array([[0.2, 0.1], [-0.3, 0.05]])
    y = integrate(lambda X: X * LAMS, X0, 1.7).y
    assert np.allclose(y, flow_F(LAMS, X0, 1.7), rtol=1e-9, atol=0)
    x0 = np.array([[0.1], [-0.2], [0.05]])
    T = np.array([1.0, -2.0, 0.5])
    y = integrate(lambda X: X + X ** 2, x0, T, rtol=1e-12).y
    assert np.allclose(y[:, 0], logistic_exact(x0[:, 0], T), rtol=1e-10)


def test_integrator_per_lane_independence():
    f = lambda X: X + X ** 2
    x0 = np.array([[0.1], [0.3]])
    both = integrate(f, x0, 1.0).y
    alone = integrate(f, x0[1:], 1.0).y
    assert np.array_equal(both[1:], alone)


def test_integrator_reports_blowup():
    res = integrate(lambda X: X ** 2, np.array([[1.0]]), 2.0)
    assert not res.ok[0]


def test_linear_flow_overflow():
    with pytest.raises(OverflowError):
        flow_F([1.0], np.array([1.0]), 1000.0)


def test_exit_time_closed_form():
    x = np.array([0.1, 0.2])
    T = exit_time(LAMS, x, 1.0)
    assert np.isclose(np.linalg.norm(flow_F(LAMS, x, -T)), 1.0, atol=1e-13)
    assert exit_time(LAMS, np.array([0.0, 0.5]), 1.0) == pytest.approx(np.log(2) / GOLDEN, rel=1e-14)
    assert exit_time(LAMS, np.array([0.3, 0.0]), 1.0) == np.inf


def test_phi_is_identity_for_linear_field():
    G = TruncatedField.linear(LAMS)
    X = np.array([[0.1, 0.1], [-0.2, 0.05], [0.0, 0.2]])
    assert np.allclose(conjugacy_phi(G, LAMS, X), X, atol=1e-12)


def test_phi_fixes_the_axes_and_conjugates():
    G = golden_saddle_field()
    ax = np.array([[0.2, 0.0], [-0.25, 0.0], [0.0, 0.2], [0.0, -0.1]])
    assert np.abs(conjugacy_phi(G, LAMS, ax) - ax).max() <= 1e-8
    g = np.linspace(-0.2, 0.2, 5)
    X = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    assert conjugacy_residual(G, LAMS, X).max() <= 1e-6


def test_phi_moves_off_axis_points():
    G = golden_saddle_field()
    x = np.array([[0.2, 0.2]])
    assert np.abs(conjugacy_phi(G, LAMS, x) - x).max() > 1e-3


def test_exit_time_stationarity():
    G = golden_saddle_field()
    X = np.array([[0.1, 0.2], [-0.2, 0.1], [0.15, -0.15]])
    base = conjugacy_phi(G, LAMS, X)
    for extra in (0.5, 1.0, 2.0):
        assert np.abs(conjugacy_phi(G, LAMS, X, horizon_extra=extra) - base).max() <= 1e-6


def flat_saddle_field(c=5.0):
    """Pre-normalized saddle: ``V - V0 = c x1^3 x2^3 d1`` vanishes to third order on both axes."""
    V = PolyVectorField([Jet(2, 6, {(1, 0): 1.0, (3, 3): c}), Jet(2, 6, {(0, 1): -GOLDEN})], tuple(LAMS))
    return TruncatedField(V, 0.5, 1.0)


def test_phi_jacobian_at_origin_is_identity():
    G = flat_saddle_field()
    h = 1e-3
    for v in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]) / np.sqrt(2),
              np.array([1.0, -2.0]) / np.sqrt(5)):
        d = (conjugacy_phi(G, LAMS, h * v) - conjugacy_phi(G, LAMS, -h * v)) / (2 * h)
        assert np.abs(d - v).max() <= 1e-6
    # the map is not the identity away from the axes
    x = np.array([0.2, 0.2])
    assert np.abs(conjugacy_phi(G, LAMS, x) - x).max() > 1e-6


def test_mixed_quadratic_term_gives_a_nonsmooth_phi():
    # with V - V0 = x1 x2 d1, Phi_1(x) = x1 exp(int x2 dt) depends on the direction of x only,
    # so difference quotients at 0 do not approach the identity
    G = golden_saddle_field()
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    q = [(conjugacy_phi(G, LAMS, h * v) - conjugacy_phi(G, LAMS, -h * v))[0] / (2 * h) for h in (1e-3, 1e-4)]
    assert abs(q[0] - q[1]) < 1e-3
    assert abs(q[1] - v[0]) > 1e-2


def test_manifold_conjugacy_matches_closed_form():
    # x -> x / (1 + x) conjugates x' = x + x^2 to x' = x
    G = logistic_field()
    got = conjugacy_psi_manifold(G, [1.0], np.array([0.3]), "unstable")
    assert got[0] == pytest.approx(0.3 / 1.3, abs=1e-10)


def fit_rate(t, y):
    return -np.polyfit(t, np.log(np.abs(y)), 1)[0]


def test_decay_rate_one_dimensional():
    G = logistic_field()
    t = np.linspace(2, 6, 21)
    ys = np.array([flow_G(G, np.array([0.3]), -s, tol=1e-12)[0] for s in t])
    assert fit_rate(t, ys) == pytest.approx(1.0, rel=0.05)


def test_decay_rates_three_dimensional():
    # unstable block (x1, x2) with rates (3, 1); the nonlinear terms keep it invariant
    lams = (3.0, 1.0, -1.0)
    V = PolyVectorField([Jet(3, 3, {(1, 0, 0): 3.0, (1, 1, 0): 1.0, (0, 2, 1): 0.5}),
                         Jet(3, 3, {(0, 1, 0): 1.0, (0, 2, 0): 0.5}),
                         Jet(3, 3, {(0, 0, 1): -1.0, (1, 0, 1): 1.0})], lams)
    G = TruncatedField(V, 0.5, 1.0)
    t = np.linspace(2, 6, 21)
    x = np.array([0.2, 0.25, 0.0])
    ys = np.array([flow_G(G, x, -s, tol=1e-13, atol=1e-300) for s in t])
    for i in (0, 1):
        assert fit_rate(t, ys[:, i]) == pytest.approx(lams[i], rel=0.05)
