"""Level-dependent volatility ``dX = X sigma(t, X) dB + X r(t) dt``.

Error due to the Brownian path only (Ornstein-Uhlenbeck structure). The
auxiliary processes are

    K_s = sigma + X sigma'_x,    L_s = 2 sigma'_x + X sigma''_xx,
    M_u = exp(int K dB - 1/2 int K^2 ds + int r ds),

and ``Gamma[X_t] = M_t^2 int_0^t X^2 sigma^2 / M^2 ds``. Conditional
expectations given ``F_t`` are estimated by restarting inner simulations
from ``(t, X_t)``; ``M_{t,u} = M_u / M_t`` depends only on the post-``t``
path, so the restart is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from . import _rng
from .errors import InputError, NumericError
from .wiener import TimeGrid

EXPLOSION = 20.0


def _const(c):
    return lambda t, x: np.full(np.shape(x), float(c))


@dataclass(frozen=True)
class LocalVolModel:
    x0: float
    sigma: Callable
    sigma_x: Callable
    sigma_xx: Callable
    T: float
    r: float | Callable = 0.0
    name: str = "custom"
    params: dict | None = None

    def __post_init__(self):
        if not self.x0 > 0 or not self.T > 0:
            raise InputError("need x0 > 0 and T > 0")

    def rate(self, t):
        if callable(self.r):
            return np.asarray(self.r(t), dtype=float)
        return np.full(np.shape(t), float(self.r))

    def int_rate(self, a: float, b: float) -> float:
        if callable(self.r):
            return float(integrate.quad(lambda s: float(self.r(s)), a, b)[0])
        return float(self.r) * (b - a)

    def check(self, bound: float = 1e3, n: int = 257) -> None:
        """Sample sigma and its x-derivative on a wide price range."""
        xs = self.x0 * np.exp(np.linspace(-5, 5, n))
        for t in np.linspace(0, self.T, 9):
            s = self.sigma(t, xs)
            sx = self.sigma_x(t, xs)
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(sx))):
                raise InputError("sigma or its derivative is not finite on the sampled range")
            if np.max(np.abs(s)) > bound or np.max(np.abs(xs * sx)) > bound:
                raise InputError("sigma is not bounded with bounded derivative on the sampled range")

    # constructors -----------------------------------------------------------

    @classmethod
    def constant(cls, x0, sigma, T, r=0.0):
        return cls(x0, _const(sigma), _const(0.0), _const(0.0), T, r, "constant", {"sigma": sigma})

    @classmethod
    def cev(cls, x0, a, gamma, T, r=0.0):
        """``dX = a X^gamma dB + ...``, i.e. ``sigma(x) = a x^(gamma - 1)``."""
        g = gamma - 1.0
        return cls(x0,
                   lambda t, x: a * np.power(x, g),
                   lambda t, x: a * g * np.power(x, g - 1),
                   lambda t, x: a * g * (g - 1) * np.power(x, g - 2),
                   T, r, "cev", {"a": a, "gamma": gamma})

    @classmethod
    def rational(cls, x0, a, b, c, T, r=0.0):
        """``sigma(x) = a + b / (1 + (x / c)^2)``."""
        def s(t, x):
            return a + b / (1 + (x / c) ** 2)

        def sx(t, x):
            u = x / c
            return -2 * b * u / (c * (1 + u * u) ** 2)

        def sxx(t, x):
            u = x / c
            return 2 * b * (3 * u * u - 1) / (c * c * (1 + u * u) ** 3)

        return cls(x0, s, sx, sxx, T, r, "rational", {"a": a, "b": b, "c": c})

    @classmethod
    def polynomial(cls, x0, coeffs, T, r=0.0):
        """``sigma(t, x) = sum a[p, q] t^p x^q``."""
        a = np.atleast_2d(np.asarray(coeffs, dtype=float))

        def ev(t, x, d):
            x = np.asarray(x, dtype=float)
            out = np.zeros(np.broadcast(np.asarray(t), x).shape)
            for p in range(a.shape[0]):
                tp = np.asarray(t, dtype=float) ** p
                for q in range(d, a.shape[1]):
                    if a[p, q] != 0.0:
                        fall = np.prod(np.arange(q, q - d, -1)) if d else 1.0
                        out = out + a[p, q] * fall * tp * x ** (q - d)
            return out

        return cls(x0, lambda t, x: ev(t, x, 0), lambda t, x: ev(t, x, 1),
                   lambda t, x: ev(t, x, 2), T, r, "polynomial", {"coeffs": a.tolist()})


@dataclass
class AuxPaths:
    """Per-path arrays on the grid nodes (shape ``(n_paths, n + 1)``).

    ``I`` is the running integral ``int_0^t X^2 sigma^2 / M^2 ds``;
    ``aborted`` flags paths stopped by the explosion guard (their entries
    are NaN).
    """

    grid: TimeGrid
    dB: np.ndarray
    X: np.ndarray
    M: np.ndarray
    K: np.ndarray
    L: np.ndarray
    I: np.ndarray
    aborted: np.ndarray

    def gamma_X(self, i: int) -> np.ndarray:
        return self.M[:, i] ** 2 * self.I[:, i]

    def gamma_X_cross(self, i: int, j: int) -> np.ndarray:
        return self.M[:, i] * self.M[:, j] * self.I[:, min(i, j)]


def simulate_aux(model: LocalVolModel, grid: TimeGrid, n_paths: int, seed: int,
                 dB: np.ndarray | None = None, workers: int | None = None) -> AuxPaths:
    """Euler scheme for X, exact exponential of the summed increments for M."""
    n = grid.n_steps
    if dB is None:
        dB = _rng.normals(seed, "path", n_paths, n, workers) * np.sqrt(grid.dt)
    dB = np.asarray(dB, dtype=float)
    n_paths = dB.shape[0]
    t, dt = grid.t, grid.dt
    X = np.empty((n_paths, n + 1))
    logM = np.zeros((n_paths, n + 1))
    K = np.empty((n_paths, n + 1))
    L = np.empty((n_paths, n + 1))
    I = np.zeros((n_paths, n + 1))
    X[:, 0] = model.x0
    lo, hi = model.x0 * np.exp(-EXPLOSION), model.x0 * np.exp(EXPLOSION)
    dead = np.zeros(n_paths, dtype=bool)
    for i in range(n + 1):
        x = X[:, i]
        s = model.sigma(t[i], x)
        sx = model.sigma_x(t[i], x)
        K[:, i] = s + x * sx
        L[:, i] = 2 * sx + x * model.sigma_xx(t[i], x)
        if i == n:
            break
        r = float(model.rate(t[i]))
        M = np.exp(logM[:, i])
        I[:, i + 1] = I[:, i] + (x * s / M) ** 2 * dt[i]
        logM[:, i + 1] = logM[:, i] + K[:, i] * dB[:, i] + (r - 0.5 * K[:, i] ** 2) * dt[i]
        X[:, i + 1] = x + x * s * dB[:, i] + x * r * dt[i]
        bad = ~((X[:, i + 1] > lo) & (X[:, i + 1] < hi))
        if bad.any():
            dead |= bad
            X[bad, i + 1] = model.x0
    out = AuxPaths(grid, dB, X, np.exp(logM), K, L, I, dead)
    if dead.any():
        for a in (out.X, out.M, out.K, out.L, out.I):
            a[dead] = np.nan
    return out


# ---------------------------------------------------------------------------
# Nested Monte Carlo.

@dataclass(frozen=True)
class NestedMCBudget:
    n_outer: int = 10_000
    n_inner: int = 1_000
    n_steps: int = 200
    cost_ceiling: float = 5e9

    def __post_init__(self):
        if min(self.n_outer, self.n_inner, self.n_steps) < 1:
            raise InputError("budget sizes must be positive")
        if self.n_inner % 2:
            raise InputError("n_inner must be even (two independent halves)")

    def cost(self, remaining_steps: int) -> float:
        return float(self.n_outer) * self.n_inner * remaining_steps + self.n_outer * self.n_steps

    def check(self, remaining_steps: int) -> None:
        c = self.cost(remaining_steps)
        if c > self.cost_ceiling:
            raise NumericError(f"nested Monte Carlo cost {c:.3g} exceeds the ceiling {self.cost_ceiling:.3g}")


@dataclass
class InnerMoments:
    """Inner-sample averages per restart state, each split in two halves.

    ``fX``      f(X_T)
    ``P``       f'(X_T) M_{t,T}
    ``Q``       M_{t,T} (f''(X_T) M_{t,T} + f'(X_T) Z / M_t)
    ``*_se``    standard error of the full-sample average
    """

    fX: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    P_se: np.ndarray
    Q_se: np.ndarray
    fX_se: np.ndarray


def restart_moments(i_t: int, grid: TimeGrid, model: LocalVolModel, payoff, x: np.ndarray,
                    M_t: np.ndarray, n_inner: int, seed: int, keys: np.ndarray,
                    z_form: str = "literal", need_second: bool = True) -> InnerMoments:
    """Restart ``n_inner`` paths from ``(t_i, x_k)`` for every state ``k``.

    ``keys`` index the inner random streams, so equal keys give common
    random numbers. ``z_form="literal"`` (default) uses
    ``Z = int L dB - int K L M ds`` as stated; ``"consistent"`` uses
    ``int L M (dB - K ds)``. Only the latter agrees with a finite
    difference of the hedge in ``x`` when sigma depends on ``x``.
    """
    if z_form not in ("literal", "consistent"):
        raise InputError("z_form must be 'literal' or 'consistent'")
    x = np.asarray(x, dtype=float)
    c = x.size
    n_rem = grid.n_steps - i_t
    t, dt = grid.t, grid.dt
    Z = np.empty((c, n_inner, n_rem))
    for k in range(c):
        Z[k] = _rng.generator(seed, "inner", int(i_t), int(keys[k])).standard_normal((n_inner, n_rem))
    X = np.repeat(x[:, None], n_inner, axis=1)
    logm = np.zeros((c, n_inner))
    LdB = np.zeros((c, n_inner))
    LMdB = np.zeros((c, n_inner))
    KLMds = np.zeros((c, n_inner))
    lo, hi = model.x0 * np.exp(-EXPLOSION), model.x0 * np.exp(EXPLOSION)
    for j in range(n_rem):
        i = i_t + j
        h = dt[i]
        dW = Z[:, :, j] * np.sqrt(h)
        s = model.sigma(t[i], X)
        sx = model.sigma_x(t[i], X)
        r = float(model.rate(t[i]))
        Kv = s + X * sx
        if need_second:
            Lv = 2 * sx + X * model.sigma_xx(t[i], X)
            m = np.exp(logm)
            LdB += Lv * dW
            LMdB += Lv * m * dW
            KLMds += Kv * Lv * m * h
        logm += Kv * dW + (r - 0.5 * Kv * Kv) * h
        X = X + X * s * dW + X * r * h
    if np.any(~((X > lo) & (X < hi))):
        raise NumericError("inner path left the explosion guard band")
    mT = np.exp(logm)
    fX = np.asarray(payoff.f(X), dtype=float)
    d1 = np.asarray(payoff.f_prime(X), dtype=float)
    P = d1 * mT
    if need_second:
        if z_form == "literal":
            z = LdB / M_t[:, None] - KLMds
        else:
            z = LMdB - KLMds
        Q = mT * (np.asarray(payoff.f_second(X), dtype=float) * mT + d1 * z)
    else:
        Q = np.full_like(P, np.nan)
    half = n_inner // 2

    def split(a):
        return np.stack([a[:, :half].mean(axis=1), a[:, half:].mean(axis=1)])

    def se(a):
        return a.std(axis=1, ddof=1) / np.sqrt(n_inner)

    return InnerMoments(split(fX), split(P), split(Q), se(P), se(Q), se(fX))


@dataclass
class NestedResult:
    """Outer-path estimates at time ``t``.

    ``gamma_V`` and ``gamma_H`` multiply the two independent inner halves,
    which removes the upward bias of a squared average.
    """

    t: float
    X_t: np.ndarray
    M_t: np.ndarray
    I_t: np.ndarray
    V: np.ndarray
    H: np.ndarray
    gamma_V: np.ndarray
    gamma_H: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    gamma_X: np.ndarray
    inner_se_V: np.ndarray
    aborted: int

    def summary(self, key: str) -> tuple[float, float]:
        """Mean over outer paths and its standard error."""
        a = getattr(self, key)
        a = a[np.isfinite(a)]
        return float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size))


def nested(t: float, model: LocalVolModel, payoff, budget: NestedMCBudget = NestedMCBudget(),
           seed: int = 0, z_form: str = "literal", need_second: bool = True,
           chunk: int | None = None) -> NestedResult:
    """Outer Euler paths to ``t``, then inner restarts to ``T``."""
    grid = TimeGrid.uniform(model.T, budget.n_steps)
    i_t = grid.index(t)
    budget.check(grid.n_steps - i_t)
    model.check()
    aux = simulate_aux(model, grid, budget.n_outer, seed)
    x_t, M_t, I_t = aux.X[:, i_t], aux.M[:, i_t], aux.I[:, i_t]
    n_outer = budget.n_outer
    disc = np.exp(-model.int_rate(t, model.T))
    V = np.full(n_outer, np.nan)
    H = np.full(n_outer, np.nan)
    gV = np.full(n_outer, np.nan)
    gH = np.full(n_outer, np.nan)
    gam = np.full(n_outer, np.nan)
    seV = np.full(n_outer, np.nan)
    live = np.flatnonzero(~aux.aborted)
    if chunk is None:
        chunk = max(1, 200_000 // budget.n_inner)
    if i_t == grid.n_steps:
        raise InputError("t must be before maturity")
    for lo in range(0, live.size, chunk):
        k = live[lo:lo + chunk]
        mom = restart_moments(i_t, grid, model, payoff, x_t[k], M_t[k], budget.n_inner, seed, k,
                              z_form, need_second)
        P = mom.P.mean(axis=0)
        V[k] = disc * mom.fX.mean(axis=0)
        H[k] = disc * P
        seV[k] = disc * mom.fX_se
        gV[k] = disc ** 2 * M_t[k] ** 2 * mom.P[0] * mom.P[1] * I_t[k]
        if need_second:
            gam[k] = disc * mom.Q.mean(axis=0)
            gH[k] = disc ** 2 * M_t[k] ** 2 * mom.Q[0] * mom.Q[1] * I_t[k]
    return NestedResult(float(t), x_t, M_t, I_t, V, H, gV, gH, H.copy(), gam,
                        M_t ** 2 * I_t, seV, int(aux.aborted.sum()))


def value_and_gamma_V(t, model, payoff, budget=NestedMCBudget(), seed=0):
    """``(V_t, Gamma[V_t])`` per outer path."""
    if payoff.f_prime is None:
        raise InputError("payoff must be C1 and Lipschitz")
    res = nested(t, model, payoff, budget, seed, need_second=False)
    return res.V, res.gamma_V


def hedge_and_gamma_H(t, model, payoff, budget=NestedMCBudget(), seed=0, z_form="literal"):
    """``(H_t, Gamma[H_t])`` per outer path; payoff must be C2Lip."""
    if not payoff.at_least("C2Lip"):
        raise InputError("hedge errors need f and f' in C1 and Lipschitz")
    res = nested(t, model, payoff, budget, seed, z_form=z_form)
    return res.H, res.gamma_H


def gamma_V_cross(s, t, model, payoff, budget=NestedMCBudget(), seed=0):
    """Plug-in ``(Gamma[V_s], Gamma[V_t], Gamma[V_s, V_t])`` on shared outer paths.

    All three use full inner averages, so the Cauchy-Schwarz inequality
    holds exactly at the estimator level.
    """
    a = nested(s, model, payoff, budget, seed, need_second=False)
    b = nested(t, model, payoff, budget, seed, need_second=False)
    aux_I = a.I_t if s <= t else b.I_t
    ua = a.M_t * a.H
    ub = b.M_t * b.H
    g_ss = ua ** 2 * a.I_t
    g_tt = ub ** 2 * b.I_t
    g_st = ua * ub * aux_I
    return g_ss, g_tt, g_st


# ---------------------------------------------------------------------------
# Error on sigma as a functional coefficient.

def functional_vol_gamma(aux: AuxPaths, coeffs, t: float) -> np.ndarray:
    """``M_t^2 sum_pq (int_0^t s^p X^(q+1) / M (dB - K ds))^2 a_pq^2`` per path,
    for ``sigma = sum a_pq t^p x^q`` with ``Gamma[a_pq] = a_pq^2`` uncorrelated."""
    a = np.atleast_2d(np.asarray(coeffs, dtype=float))
    grid = aux.grid
    i = grid.index(t)
    s = grid.t[:i]
    X, M, K = aux.X[:, :i], aux.M[:, :i], aux.K[:, :i]
    incr = aux.dB[:, :i] - K * grid.dt[:i]
    total = np.zeros(X.shape[0])
    for p in range(a.shape[0]):
        for q in range(a.shape[1]):
            if a[p, q] == 0.0:
                continue
            J = np.sum(s ** p * X ** (q + 1) / M * incr, axis=1)
            total += (J * a[p, q]) ** 2
    return aux.M[:, i] ** 2 * total


def functional_vol_sensitivity(model: LocalVolModel, t: float, grid: TimeGrid, n_paths: int,
                               seed: int) -> np.ndarray:
    """Simulate a polynomial-coefficient model and return ``Gamma[X_t]`` per path."""
    if model.name != "polynomial":
        raise InputError("functional sensitivity needs a polynomial sigma(t, x)")
    aux = simulate_aux(model, grid, n_paths, seed)
    return functional_vol_gamma(aux, model.params["coeffs"], t)
