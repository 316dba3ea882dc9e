"""Weighted Sobolev norms on ``[-T_max, 0]`` and the integral operator ``F_x``.

The weighted norm is

    ||u||_{p,k,delta} = sum_{j=0}^{k} ( int e^{-delta p t} |u^{(j)}(t)|^p dt )^{1/p}

evaluated by the trapezoidal rule (in log scale, since ``e^{-delta p t}`` is
huge for ``t`` near ``-T_max``), with derivatives from ``np.gradient``.

``F_x(u)(t) = int_{-T_max}^t [G(u(s) + F_s(x)) - V0(F_s(x))] ds`` is the
operator whose fixed point ``p(t, x)`` gives the conjugacy
``Phi(x) = p(0, x) + x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .flows import TruncatedField

__all__ = [
    "NonContractionError",
    "WeightedNormParams",
    "TrajectoryGrid",
    "graded_grid",
    "weighted_norm",
    "weighted_norms",
    "operator_F",
    "fixed_point_iterate",
    "fixed_point_batch",
    "lemma_integration_constant",
    "delta_min",
]


class NonContractionError(RuntimeError):
    """Successive differences stopped shrinking; ``ratios`` holds the measurements."""

    def __init__(self, message, ratios):
        super().__init__(message)
        self.ratios = ratios


@dataclass(frozen=True)
class WeightedNormParams:
    p: float = 2.0
    k: int = 0
    delta: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.k < 0 or int(self.k) != self.k:
            raise ValueError("k must be a non-negative integer")


@dataclass(frozen=True)
class TrajectoryGrid:
    """Samples ``values[j] = u(t_nodes[j])`` on a grid ending at 0."""

    t_nodes: np.ndarray
    values: np.ndarray
    params: WeightedNormParams = field(default_factory=WeightedNormParams)

    def __post_init__(self):
        t = np.asarray(self.t_nodes, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "t_nodes", t)
        object.__setattr__(self, "values", v)
        if t[-1] != 0:
            raise ValueError("grid must end at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid must be strictly increasing")
        if len(t) < self.params.k + 2:
            raise ValueError("grid too coarse for the derivative count")
        if v.shape[0] != len(t):
            raise ValueError("values and nodes disagree in length")

    def with_values(self, values):
        return TrajectoryGrid(self.t_nodes, values, self.params)

    @property
    def final(self):
        return self.values[-1]


def graded_grid(T_max: float, nodes: int = 4001, grading: float = 3.0) -> np.ndarray:
    """Nodes on ``[-T_max, 0]``, fine near 0 and geometrically coarser toward ``-T_max``.

    ``t(s) = -T_max (e^{g s} - 1) / (e^g - 1)`` for uniform ``s`` in ``[0, 1]``.
    """
    s = np.linspace(0.0, 1.0, nodes)
    if grading == 0:
        t = -T_max * s
    else:
        t = -T_max * np.expm1(grading * s) / np.expm1(grading)
    t = t[::-1].copy()
    t[-1] = 0.0
    return t


def _log_weighted_integral(t, vals, p, delta):
    """``log int e^{-delta p t} |vals|^p dt`` (trapezoid) with ``vals`` of shape ``(..., N)``."""
    with np.errstate(divide="ignore"):
        logf = -delta * p * t + p * np.log(vals)
    top = np.max(logf, axis=-1, keepdims=True)
    finite = np.isfinite(top)
    top = np.where(finite, top, 0.0)
    g = np.exp(logf - top)
    integral = np.trapezoid(g, t, axis=-1) if hasattr(np, "trapezoid") else np.trapz(g, t, axis=-1)
    with np.errstate(divide="ignore"):
        out = np.log(integral) + top[..., 0]
    return np.where(finite[..., 0], out, -np.inf)


def weighted_norms(t, U, params: WeightedNormParams):
    """Norms of many trajectories at once; ``U`` has shape ``(..., N, n)``."""
    t = np.asarray(t, dtype=float)
    U = np.asarray(U, dtype=float)
    total = np.zeros(U.shape[:-2])
    D = U
    for j in range(params.k + 1):
        if j:
            D = np.gradient(D, t, axis=-2, edge_order=2)
        mag = np.linalg.norm(D, axis=-1)
        logI = _log_weighted_integral(t, mag, params.p, params.delta)
        total = total + np.exp(logI / params.p)
    return total


def weighted_norm(u: TrajectoryGrid) -> float:
    """``||u||_{p,k,delta}`` of a trajectory grid (``j = 0`` included)."""
    return float(weighted_norms(u.t_nodes, u.values, u.params))


def _integrand(field: TruncatedField, lams, X, t, U):
    Fs = X[..., None, :] * np.exp(t[:, None] * np.asarray(lams, dtype=float))
    # G(u + F) - V0(F) = V0(u) + chi (V - V0)(u + F), using linearity of V0
    return field.V0(U) + field.residual(U + Fs)


def operator_F(field: TruncatedField, lams, x, u: TrajectoryGrid) -> TrajectoryGrid:
    """``F_x(u)(t) = int_{-T_max}^t [G(u(s) + F_s(x)) - V0(F_s(x))] ds`` by cumulative trapezoid."""
    x = np.asarray(x, dtype=float)
    w = _integrand(field, lams, x, u.t_nodes, u.values)
    out = cumulative_trapezoid(w, u.t_nodes, axis=0, initial=0.0)
    return u.with_values(out)


@dataclass
class FixedPointDiagnostics:
    ratios: list
    iterations: int
    converged: bool
    phi: np.ndarray
    rho: float


def _rho(ratios):
    finite = [r for r in ratios if np.isfinite(r)]
    return max(finite) if finite else 0.0


def fixed_point_batch(field: TruncatedField, lams, X, params: WeightedNormParams, t_nodes=None,
                      fp_tol: float = 1e-13, m_cap: int = 400, noise: float = 1e-14):
    """Picard iteration ``u_{m+1} = F_x(u_m)`` from ``u_0 = 0`` for every row of ``X``.

    Returns
    -------
    U : ndarray, shape (m, N, n)
        Final iterates.
    phi : ndarray, shape (m, n)
        ``U[:, -1] + X``.
    ratios : ndarray, shape (m, iterations)
        ``||u_{m+1} - u_m|| / ||u_m - u_{m-1}||`` (NaN once below the noise floor).
    converged : ndarray of bool
    """
    lams = np.asarray(lams, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if t_nodes is None:
        t_nodes = graded_grid(12.0 / np.min(np.abs(lams)))
    t = np.asarray(t_nodes, dtype=float)
    m, n = X.shape
    U = np.zeros((m, len(t), n))
    prev = np.full(m, np.nan)
    ratios = np.full((m, m_cap), np.nan)
    converged = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)
    bad_run = np.zeros(m, dtype=int)
    for it in range(m_cap):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        W = _integrand(field, lams, X[idx], t, U[idx])
        new = cumulative_trapezoid(W, t, axis=1, initial=0.0)
        diff = weighted_norms(t, new - U[idx], params)
        size = weighted_norms(t, new, params)
        floor = noise * np.maximum(size, 1e-300)
        meaningful = diff > floor
        r = np.where(meaningful & (prev[idx] > 0), diff / np.where(prev[idx] > 0, prev[idx], 1.0), np.nan)
        ratios[idx, it] = r
        bad_run[idx] = np.where(r >= 1.0, bad_run[idx] + 1, 0)
        U[idx] = new
        prev[idx] = np.where(meaningful, diff, 0.0)
        done = (diff <= fp_tol * np.maximum(size, 1e-300)) | (diff == 0)
        converged[idx[done]] = True
        active[idx[done]] = False
        stuck = bad_run[idx] >= 5
        if np.any(stuck):
            bad = idx[stuck]
            raise NonContractionError(
                f"successive differences grow for {len(bad)} point(s); increase delta or shrink the domain",
                ratios[bad[0], : it + 1])
    return U, U[:, -1, :] + X, ratios[:, : it + 1], converged


def fixed_point_iterate(field: TruncatedField, lams, x, params: WeightedNormParams, t_nodes=None,
                        fp_tol: float = 1e-13, m_cap: int = 400):
    """Fixed point ``p(t, x)`` of ``F_x`` for a single point.

    Returns
    -------
    TrajectoryGrid, FixedPointDiagnostics
        ``diagnostics.phi = p(0, x) + x`` and ``diagnostics.rho`` is the largest
        measured contraction ratio.
    """
    x = np.asarray(x, dtype=float)
    lams = np.asarray(lams, dtype=float)
    if t_nodes is None:
        t_nodes = graded_grid(12.0 / np.min(np.abs(lams)))
    U, phi, ratios, conv = fixed_point_batch(field, lams, x[None, :], params, t_nodes, fp_tol, m_cap)
    r = [float(v) for v in ratios[0]]
    diag = FixedPointDiagnostics(r, len(r), bool(conv[0]), phi[0], _rho(r))
    return TrajectoryGrid(t_nodes, U[0], params), diag


def lemma_integration_constant(p: float, tol: float = 1e-12) -> float:
    """``C0 = 1/c`` with ``c`` the positive root of ``1 = ((p-1)^(p-1) / p^p) c^p + c``.

    The right side increases in ``c`` and equals 0 at 0 and more than 1 at 1,
    so bisection on ``[0, 1]`` converges.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    a = (p - 1) ** (p - 1) / p ** p
    g = lambda c: a * c ** p + c - 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 1.0 / (0.5 * (lo + hi))


def delta_min(field: TruncatedField, p: float = 2.0, samples: int = 41) -> float:
    """Heuristic weight rate ``4 C0(p) (max|lambda| + sup|D(chi (V - V0))|)``."""
    return 4.0 * lemma_integration_constant(p) * (float(np.max(np.abs(field.lams)))
                                                  + field.sup_residual_jacobian(samples))
