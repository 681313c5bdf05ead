"""Integration by parts on the Monte Carlo sample space ``(0, 1)^N``.

Each coordinate carries the structure with ``Gamma[u] = u^2 (1 - u)^2``
under Lebesgue measure, so that

    D F = (dF/du_n * u_n (1 - u_n))_n,
    E[<DF, a>] = -E[F sum a_n (1 - 2 u_n)].

The Euler-type scheme ``S_{n+1} = S_n + sigma(S_n) lambda xi(n+1, U_{n+1})``
then admits weights for ``d/dx`` and ``d/dlambda`` of ``E[Psi(S_N)]`` that
never differentiate ``Psi``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from . import _rng
from .errors import InputError, NumericError

GUARD = 1e-12
MAX_REJECT = 1e-3
_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Xi:
    """Increment map ``xi(n, u)`` with its first two ``u``-derivatives."""

    f: Callable
    d1: Callable
    d2: Callable
    name: str = "custom"

    def ratio_prime(self, n, u):
        """``d/du (xi / xi')``."""
        d1 = self.d1(n, u)
        return 1.0 - self.f(n, u) * self.d2(n, u) / (d1 * d1)

    @classmethod
    def gaussian(cls):
        """``xi = Phi^{-1}(u)``: ``xi' = 1 / phi(xi)`` and ``xi'' = xi xi'^2``."""
        def d1(n, u):
            y = special.ndtri(u)
            return _SQRT2PI * np.exp(0.5 * y * y)

        def d2(n, u):
            y = special.ndtri(u)
            return y * 2 * np.pi * np.exp(y * y)

        return cls(lambda n, u: special.ndtri(u), d1, d2, "gaussian")

    @classmethod
    def linear(cls):
        """``xi = u - 1/2``."""
        return cls(lambda n, u: u - 0.5, lambda n, u: np.ones_like(u),
                   lambda n, u: np.zeros_like(u), "linear")


@dataclass(frozen=True)
class DiscreteScheme:
    N: int
    x: float
    lam: float
    sigma: Callable
    sigma_prime: Callable
    xi: Xi = Xi.gaussian()

    def __post_init__(self):
        if self.N < 1:
            raise InputError("N must be at least 1")
        if self.lam == 0:
            raise InputError("lambda must be nonzero")
        if self.sigma(np.asarray(self.x)) == 0:
            raise InputError("sigma(x) must be nonzero")

    @classmethod
    def constant(cls, N, x, lam, sigma0, xi=None):
        return cls(N, x, lam, lambda s: np.full(np.shape(s), float(sigma0)),
                   lambda s: np.zeros(np.shape(s)), xi or Xi.gaussian())

    @classmethod
    def affine(cls, N, x, lam, a, b, xi=None):
        """``sigma(s) = a + b s``."""
        return cls(N, x, lam, lambda s: a + b * np.asarray(s), lambda s: np.full(np.shape(s), float(b)),
                   xi or Xi.gaussian())

    def with_(self, x=None, lam=None) -> "DiscreteScheme":
        return DiscreteScheme(self.N, self.x if x is None else x, self.lam if lam is None else lam,
                              self.sigma, self.sigma_prime, self.xi)

    def terminal(self, U: np.ndarray) -> np.ndarray:
        """``S_N`` for each row of ``U`` (shape ``(n, N)``)."""
        S = np.full(U.shape[0], float(self.x))
        for n in range(self.N):
            S = S + self.sigma(S) * self.lam * self.xi.f(n + 1, U[:, n])
        return S


@dataclass(frozen=True)
class UniformSample:
    U: np.ndarray
    seed: int

    def __post_init__(self):
        if not np.all((self.U > 0) & (self.U < 1)):
            raise InputError("uniform sample must lie strictly inside (0, 1)")

    @classmethod
    def draw(cls, seed: int, n_samples: int, N: int, stream: str = "ibp", workers=None):
        return cls(_rng.uniforms(seed, stream, n_samples, N, guard=GUARD, workers=workers), seed)


@dataclass(frozen=True)
class Estimate:
    estimate: float
    std_error: float
    n_used: int = 0
    n_rejected: int = 0


def _mean_se(a: np.ndarray) -> tuple[float, float]:
    return float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size))


# ---------------------------------------------------------------------------
# Gradient and the integration-by-parts identity.

def fd_partials(F: Callable, U: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``F`` in each coordinate, step shrunk near 0 and 1."""
    U = np.atleast_2d(U)
    out = np.empty_like(U, dtype=float)
    step = np.minimum(h, 0.5 * np.minimum(U, 1 - U))
    for n in range(U.shape[1]):
        up, dn = U.copy(), U.copy()
        up[:, n] += step[:, n]
        dn[:, n] -= step[:, n]
        out[:, n] = (F(up) - F(dn)) / (2 * step[:, n])
    return out


def discrete_gradient(F: Callable, U, partials: Callable | None = None) -> np.ndarray:
    """``DF = (dF/du_n u_n (1 - u_n))_n`` at each row of ``U``."""
    U = np.asarray(U.U if isinstance(U, UniformSample) else U, dtype=float)
    single = U.ndim == 1
    U2 = np.atleast_2d(U)
    d = partials(U2) if partials is not None else fd_partials(F, U2)
    g = np.asarray(d, dtype=float) * U2 * (1 - U2)
    return g[0] if single else g


@dataclass(frozen=True)
class IBPCheck:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    se_diff: float

    @property
    def z(self) -> float:
        return (self.lhs - self.rhs) / self.se_diff if self.se_diff > 0 else 0.0


def ibp_check(F: Callable, a, n_samples: int, seed: int, partials: Callable | None = None,
              workers=None) -> IBPCheck:
    """Both sides of ``E[<DF, a>] = -E[F sum a_n (1 - 2 u_n)]`` on shared samples."""
    a = np.asarray(a, dtype=float)
    U = UniformSample.draw(seed, n_samples, a.size, workers=workers).U
    lhs = discrete_gradient(F, U, partials) @ a
    rhs = -np.asarray(F(U), dtype=float) * ((1 - 2 * U) @ a)
    ml, sl = _mean_se(lhs)
    mr, sr = _mean_se(rhs)
    return IBPCheck(ml, mr, sl, sr, _mean_se(lhs - rhs)[1])


# ---------------------------------------------------------------------------
# Weights.

def _screen(w: np.ndarray, d1: np.ndarray) -> np.ndarray:
    ok = np.isfinite(w) & (d1 != 0) & np.isfinite(d1)
    bad = int((~ok).sum())
    if bad > MAX_REJECT * w.size:
        raise NumericError(f"{bad} of {w.size} samples rejected (xi' vanishing or weight not finite)")
    return ok


def delta_weight(scheme: DiscreteScheme, U: np.ndarray) -> np.ndarray:
    """Per-sample weight ``pi`` with ``d/dx E[Psi(S_N)] = E[Psi(S_N) pi]``.

    Only the first step's uniform enters:
    ``xi''(1 + sigma'(x) lambda xi) / (sigma(x) lambda xi'^2) - sigma'(x) / sigma(x)``.
    """
    u = U[:, 0]
    xi = scheme.xi
    y, d1, d2 = xi.f(1, u), xi.d1(1, u), xi.d2(1, u)
    s, sp = float(scheme.sigma(np.asarray(scheme.x))), float(scheme.sigma_prime(np.asarray(scheme.x)))
    lam = scheme.lam
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return d2 * (1 + sp * lam * y) / (s * lam * d1 * d1) - sp / s


def lambda_weight(scheme: DiscreteScheme, U: np.ndarray) -> np.ndarray:
    """Per-sample weight ``-sum_n d/du (xi / xi')(n, U_n) / lambda``."""
    xi = scheme.xi
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tot = sum(xi.ratio_prime(n + 1, U[:, n]) for n in range(scheme.N))
        return -tot / scheme.lam


def _weighted(scheme, psi, n_samples, seed, weight_fn, workers=None, return_samples=False):
    U = UniformSample.draw(seed, n_samples, scheme.N, workers=workers).U
    w = weight_fn(scheme, U)
    d1 = scheme.xi.d1(1, U[:, 0])
    ok = _screen(w, d1)
    vals = np.asarray(psi(scheme.terminal(U)), dtype=float) * w
    if not np.all(np.isfinite(vals[ok])):
        raise NumericError("payoff is not finite on the sampled range")
    m, se = _mean_se(vals[ok])
    est = Estimate(m, se, int(ok.sum()), int((~ok).sum()))
    return (est, vals, ok, U) if return_samples else est


def delta_weight_estimator(scheme: DiscreteScheme, psi: Callable, n_samples: int, seed: int,
                           workers=None) -> Estimate:
    """Monte Carlo estimate of ``d/dx E[Psi(S_N)]`` by the weight."""
    return _weighted(scheme, psi, n_samples, seed, delta_weight, workers)


def lambda_weight_estimator(scheme: DiscreteScheme, psi: Callable, n_samples: int, seed: int,
                            workers=None) -> Estimate:
    """Monte Carlo estimate of ``d/dlambda E[Psi(S_N)]`` by the weight."""
    return _weighted(scheme, psi, n_samples, seed, lambda_weight, workers)


# ---------------------------------------------------------------------------
# Finite-difference oracles with common random numbers.

@dataclass(frozen=True)
class FDComparison:
    weight: Estimate
    fd: float
    fd_half: float
    richardson: float
    se_fd: float
    se_diff: float

    @property
    def z(self) -> float:
        return (self.weight.estimate - self.fd) / self.se_diff


def _fd_samples(scheme, psi, U, param, h):
    if param == "x":
        up, dn = scheme.with_(x=scheme.x + h), scheme.with_(x=scheme.x - h)
    else:
        up, dn = scheme.with_(lam=scheme.lam + h), scheme.with_(lam=scheme.lam - h)
    return (np.asarray(psi(up.terminal(U))) - np.asarray(psi(dn.terminal(U)))) / (2 * h)


def compare_fd(scheme: DiscreteScheme, psi: Callable, n_samples: int, seed: int, param: str = "x",
               h: float | None = None, workers=None) -> FDComparison:
    """Weight estimator against central differences on the same uniforms.

    ``h`` defaults to ``1e-3`` times the parameter scale; a second difference
    at ``h / 2`` gives a Richardson value. ``se_diff`` is the standard error
    of the per-sample difference between weight and finite difference.
    """
    if param not in ("x", "lambda"):
        raise InputError("param must be 'x' or 'lambda'")
    fn = delta_weight if param == "x" else lambda_weight
    est, vals, ok, U = _weighted(scheme, psi, n_samples, seed, fn, workers, return_samples=True)
    base = scheme.x if param == "x" else scheme.lam
    if h is None:
        h = 1e-3 * max(1.0, abs(base))
    fd = _fd_samples(scheme, psi, U, param, h)[ok]
    fd2 = _fd_samples(scheme, psi, U, param, h / 2)[ok]
    m1, s1 = _mean_se(fd)
    m2 = float(fd2.mean())
    return FDComparison(est, m1, m2, (4 * m2 - m1) / 3, s1, _mean_se(vals[ok] - fd)[1])
