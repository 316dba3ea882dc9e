"""Linear and truncated flows, and the exit-time conjugacy.

``F_t`` is the flow of the standard form ``V0 = sum lambda_i x_i d_i`` (closed
form).  ``G_t`` is the flow of a :class:`TruncatedField`, which equals ``V``
inside the ball of radius ``r_in`` and ``V0`` outside ``r_out``; it is
integrated with a vectorized Dormand-Prince 4(5) pair.  Every lane (initial
point) keeps its own step size, so results do not depend on how points are
batched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .jets import PolyEvaluator, PolyVectorField

__all__ = [
    "IntegrationError",
    "TruncatedField",
    "smooth_step",
    "flow_F",
    "flow_G",
    "integrate",
    "exit_time",
    "conjugacy_phi",
    "conjugacy_psi_manifold",
    "conjugacy_residual",
]


class IntegrationError(RuntimeError):
    """Step size underflow or a non-finite state.

    ``state`` holds the last accepted state of the failing lane(s).
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


def _psi(t):
    out = np.zeros_like(t, dtype=float)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(s):
    """``C^inf`` step: 1 for ``s <= 0``, 0 for ``s >= 1``, built from ``exp(-1/t)``."""
    s = np.asarray(s, dtype=float)
    a, b = _psi(1.0 - s), _psi(s)
    return a / (a + b)


class TruncatedField:
    """``V0 + chi(|x|) (V - V0)`` with a radial smooth cutoff.

    Parameters
    ----------
    V : PolyVectorField
        Field with diagonal linear part ``diag(lambda)``.
    r_in, r_out : float
        ``chi = 1`` for ``|x| <= r_in`` and ``chi = 0`` for ``|x| >= r_out``.
    lams : sequence, optional
        Eigenvalues; read from the linear part of ``V`` by default.
    """

    def __init__(self, V: PolyVectorField, r_in: float, r_out: float, lams=None):
        if not 0 < r_in < r_out:
            raise ValueError("need 0 < r_in < r_out")
        if lams is None:
            lams = V.eigen_linear_part or V.diagonal_eigenvalues(tol=1e-12)
            if lams is None:
                raise ValueError("field has no diagonal linear part")
        self.V = V
        self.lams = np.array([float(l) for l in lams])
        self.n = V.n
        self.r_in = float(r_in)
        self.r_out = float(r_out)
        residual = V.residual().to_float()
        self.residual_field = residual
        self._trivial = all(c.is_zero() for c in residual.components)
        self._res = None if self._trivial else PolyEvaluator(residual.components)

    @classmethod
    def linear(cls, lams, r_in=0.5, r_out=1.0):
        return cls(PolyVectorField.linear([float(l) for l in lams], 1), r_in, r_out, lams)

    def chi(self, X):
        r = np.linalg.norm(np.asarray(X, dtype=float), axis=-1)
        return smooth_step((r - self.r_in) / (self.r_out - self.r_in))

    def V0(self, X):
        return np.asarray(X, dtype=float) * self.lams

    def residual(self, X):
        """``chi (V - V0)`` at points ``(..., n)``."""
        X = np.asarray(X, dtype=float)
        out = np.zeros_like(X)
        if self._trivial:
            return out
        r = np.linalg.norm(X, axis=-1)
        inside = r < self.r_out
        if np.any(inside):
            Xi = X[inside]
            chi = smooth_step((r[inside] - self.r_in) / (self.r_out - self.r_in))
            out[inside] = chi[:, None] * self._res.evaluate(Xi)
        return out

    def __call__(self, X):
        return self.V0(X) + self.residual(X)

    def sup_residual_jacobian(self, samples: int = 41) -> float:
        """Estimate ``sup |D(chi (V - V0))|`` (spectral norm) on a grid over the cutoff ball."""
        if self._trivial:
            return 0.0
        m = samples if self.n <= 2 else max(7, int(round(samples ** (2 / self.n))))
        axis = np.linspace(-self.r_out, self.r_out, m)
        X = np.stack(np.meshgrid(*([axis] * self.n), indexing="ij"), -1).reshape(-1, self.n)
        X = X[np.linalg.norm(X, axis=1) < self.r_out]
        h = 1e-6 * self.r_out
        J = np.empty((len(X), self.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = h
            J[:, :, j] = (self.residual(X + e) - self.residual(X - e)) / (2 * h)
        return float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2))))


def flow_F(lams, x, t):
    """``F_t(x)_i = x_i exp(lambda_i t)``; ``x`` is ``(..., n)`` and ``t`` broadcasts over ``...``."""
    lams = np.asarray(lams, dtype=float)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    expo = np.multiply.outer(t, lams) if t.ndim and t.shape != x.shape[:-1] else t[..., None] * lams
    if np.any(expo > 709.0):
        raise OverflowError("exp overflow in the linear flow")
    return x * np.exp(expo)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass
class IntegrationResult:
    y: np.ndarray
    ok: np.ndarray
    steps: np.ndarray
    rejected: np.ndarray


def integrate(fun, X0, T, rtol: float = 1e-10, atol: float | None = None,
              max_steps: int = 200_000) -> IntegrationResult:
    """Integrate the autonomous system ``y' = fun(y)`` from ``X0`` over times ``T``.

    Parameters
    ----------
    fun : callable
        Vectorized field, ``(m, n) -> (m, n)``.
    X0 : array, shape (m, n)
    T : float or array, shape (m,)
        Signed integration time per lane.
    rtol, atol : float
        Local error tolerances (``atol`` defaults to ``rtol``).

    Returns
    -------
    IntegrationResult
        Final states; ``ok`` is False for lanes that underflowed or blew up
        (their ``y`` holds the last accepted state).
    """
    # blow-up shows up as non-finite trial states, which are rejected and reported through ``ok``
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate(fun, X0, T, rtol, atol, max_steps)


def _integrate(fun, X0, T, rtol, atol, max_steps):
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim == 1:
        X = X[None, :]
    m, n = X.shape
    T = np.broadcast_to(np.asarray(T, dtype=float), (m,)).copy()
    atol = rtol if atol is None else atol
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (m,))[:, None]
    sgn = np.where(T < 0, -1.0, 1.0)[:, None]
    left = np.abs(T)
    ok = np.ones(m, dtype=bool)
    steps = np.zeros(m, dtype=int)
    rejected = np.zeros(m, dtype=int)
    active = left > 0
    if not np.any(active):
        return IntegrationResult(X, ok, steps, rejected)

    def f(Y, s):
        return s * fun(Y)

    K1 = np.zeros_like(X)
    K1[active] = f(X[active], sgn[active])
    # initial step from the scaled size of y and y'
    sc = atol + rtol * np.abs(X)
    d0 = np.sqrt(np.mean((X / sc) ** 2, axis=1))
    d1 = np.sqrt(np.mean((K1 / sc) ** 2, axis=1))
    h = np.where((d0 > 1e-5) & (d1 > 1e-5), 0.01 * d0 / np.maximum(d1, 1e-300), 1e-4)
    h = np.minimum(np.minimum(h, left), 0.1)
    h = np.maximum(h, 1e-12 * np.maximum(left, 1.0))
    err_prev = np.full(m, 1e-4)
    total = np.abs(T)
    it = 0
    while np.any(active):
        it += 1
        idx = np.flatnonzero(active)
        if it > max_steps:
            ok[idx] = False
            break
        y = X[idx]
        s = sgn[idx]
        hh = np.minimum(h[idx], left[idx])[:, None]
        K = [K1[idx]]
        for i in range(1, 7):
            yi = y + hh * sum(a * K[j] for j, a in enumerate(_A[i]) if a != 0.0)
            K.append(f(yi, s))
        ynew = y + hh * sum(b * K[j] for j, b in enumerate(_B[:6]) if b != 0.0)
        errv = hh * sum(e * K[j] for j, e in enumerate(_E) if e != 0.0)
        scale = atol[idx] + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = np.sqrt(np.mean((errv / scale) ** 2, axis=1))
        finite = np.all(np.isfinite(ynew), axis=1) & np.isfinite(err)
        accept = finite & (err <= 1.0)
        hflat = hh[:, 0]
        # PI step control on accepted steps, plain I control after a rejection
        safe_err = np.where(finite, np.maximum(err, 1e-10), 1e10)
        fac_acc = 0.9 * safe_err ** (-0.7 / 5) * err_prev[idx] ** (0.4 / 5)
        fac_rej = np.maximum(0.2, 0.9 * safe_err ** (-1 / 5))
        fac = np.where(accept, np.clip(fac_acc, 0.2, 10.0), np.minimum(fac_rej, 1.0))
        a_idx = idx[accept]
        X[a_idx] = ynew[accept]
        K1[a_idx] = K[6][accept]
        left[a_idx] -= hflat[accept]
        err_prev[a_idx] = np.maximum(err[accept], 1e-4)
        steps[a_idx] += 1
        rejected[idx[~accept]] += 1
        h[idx] = hflat * fac
        done = left[idx] <= 1e-13 * np.maximum(total[idx], 1.0)
        under = (~accept) & (h[idx] < 1e-14 * np.maximum(total[idx], 1.0))
        ok[idx[under]] = False
        active[idx[done | under]] = False
    return IntegrationResult(X, ok, steps, rejected)


def flow_G(field: TruncatedField, x, t, tol: float = 1e-10, atol: float | None = None,
           return_result: bool = False):
    """``G_t(x)`` for one point ``(n,)`` or a batch ``(m, n)`` with scalar or per-lane ``t``.

    Raises
    ------
    IntegrationError
        If any lane fails (unless ``return_result`` is set).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    res = integrate(field, x[None, :] if single else x, t, rtol=tol, atol=atol)
    if return_result:
        return res
    if not np.all(res.ok):
        raise IntegrationError("step size underflow or non-finite state", res.y[~res.ok])
    return res.y[0] if single else res.y


def exit_time(lams, x, r_out: float) -> float:
    """First ``t >= 0`` with ``|F_{-t}(x)| >= r_out``; ``inf`` if the stable part of ``x`` is zero.

    Candidates ``ln(r_out / |x_i|) / -lambda_i`` over stable components bound
    the root from above; ``brentq`` refines it (``|F_{-t}|^2`` is convex, so
    the crossing is unique).
    """
    lams = np.asarray(lams, dtype=float)
    x = np.asarray(x, dtype=float)
    r0 = np.linalg.norm(x)
    if r0 >= r_out:
        return 0.0
    stable = (lams < 0) & (x != 0)
    if not np.any(stable):
        return np.inf
    cand = np.log(r_out / np.abs(x[stable])) / (-lams[stable])
    hi = float(np.min(cand))
    g = lambda t: np.linalg.norm(x * np.exp(-lams * t)) - r_out
    if g(hi) <= 0:  # rounding at the candidate itself
        return hi
    return brentq(g, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


@dataclass
class PhiResult:
    phi: np.ndarray
    exit_times: np.ndarray
    ok: np.ndarray


def conjugacy_phi(field: TruncatedField, lams, x, tol: float = 1e-11, horizon_extra: float = 0.0,
                  return_info: bool = False):
    """``Phi(x) = G_{T*}(F_{-T*}(x))`` with the exit time ``T*`` of the bump ball.

    Points with vanishing stable part have ``T* = inf`` and ``Phi(x) = x``.
    ``horizon_extra`` adds to ``T*`` (stationarity check: the result must not move).
    """
    lams = np.asarray(lams, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if np.any(np.linalg.norm(X, axis=1) >= field.r_out):
        raise ValueError("conjugacy_phi needs |x| < r_out")
    Ts = np.array([exit_time(lams, p, field.r_out) for p in X])
    phi = X.copy()
    ok = np.ones(len(X), dtype=bool)
    fin = np.isfinite(Ts)
    if np.any(fin):
        T = Ts[fin] + horizon_extra
        start = flow_F(lams, X[fin], -T)
        res = integrate(field, start, T, rtol=tol)
        phi[fin] = res.y
        ok[fin] = res.ok
    if return_info:
        return PhiResult(phi[0] if single else phi, Ts, ok)
    if not np.all(ok):
        raise IntegrationError("integration failed for some points", phi[~ok])
    return phi[0] if single else phi


def conjugacy_psi_manifold(field: TruncatedField, lams, x, which: str = "unstable",
                           eps_stop: float = 1e-9, conjugacy_tol: float = 1e-6,
                           tol: float = 1e-12, T_cap: float = 200.0, chunk: float = 1.0):
    """``Psi_u(x) = lim F_T G_{-T}(x)`` (unstable) or ``Psi_s(x) = lim F_{-T} G_T(x)`` (stable).

    The flow is run in chunks until ``|G_{-+T}(x)| < eps_stop |x|``; the result
    at ``T`` is compared with the one at ``2T`` (the returned value), and
    non-agreement within ``conjugacy_tol`` raises.
    """
    lams = np.asarray(lams, dtype=float)
    x = np.asarray(x, dtype=float)
    sgn = -1.0 if which == "unstable" else 1.0
    if which not in ("unstable", "stable"):
        raise ValueError("which must be 'unstable' or 'stable'")
    r0 = np.linalg.norm(x)
    if r0 == 0:
        return x.copy()

    def run(y, T):
        # the state shrinks like e^{-|lambda| t}, so atol follows it chunk by chunk
        done = 0.0
        while done < T:
            dt = min(chunk, T - done)
            y = flow_G(field, y, sgn * dt, tol=tol, atol=tol * 1e-3 * max(np.linalg.norm(y), 1e-300))
            done += dt
        return y

    y, T = x.copy(), 0.0
    while np.linalg.norm(y) >= eps_stop * r0:
        if T >= T_cap:
            raise IntegrationError(f"no convergence within T_cap={T_cap}", y)
        y = run(y, chunk)
        T += chunk
    first = flow_F(lams, y, -sgn * T)
    y2 = run(y, T)
    second = flow_F(lams, y2, -sgn * 2 * T)
    if np.linalg.norm(first - second) >= conjugacy_tol:
        raise IntegrationError("doubling check failed: limit not reached", second)
    return second


def residual_times(lams, base=(0.1, -0.1, 0.5, -0.5)):
    """Test times for the conjugacy residual, shrunk for rates above 1 so ``F_s(x)`` stays in the ball."""
    scale = 1.0 / max(1.0, float(np.max(np.abs(lams))))
    return tuple(scale * s for s in base)


def conjugacy_residual(field: TruncatedField, lams, X, s_values=None,
                       tol: float = 1e-11, phi=None):
    """``max_s |G_s(Phi(x)) - Phi(F_s(x))|`` per point of ``X`` (shape ``(m, n)``).

    ``s_values`` defaults to :func:`residual_times`.
    """
    X = np.asarray(X, dtype=float)
    if s_values is None:
        s_values = residual_times(lams)
    if phi is None:
        phi = conjugacy_phi(field, lams, X, tol=tol)
    worst = np.zeros(len(X))
    for s in s_values:
        lhs = flow_G(field, phi, s, tol=tol)
        rhs = conjugacy_phi(field, lams, flow_F(lams, X, s), tol=tol)
        worst = np.maximum(worst, np.linalg.norm(lhs - rhs, axis=1))
    return worst
