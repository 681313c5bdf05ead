"""Error structures on a discretised Wiener space.

Paths live on a :class:`TimeGrid` and come in bundles: one row per path,
each with an independent companion path used both for the Ornstein-Uhlenbeck
perturbation of the path and for the ``#`` derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import integrate, special

from . import _rng
from .errors import CapabilityError, InputError
from .quadrature import gaussian_rule

# Bias of B_t is -c * B_t. The perturbation generator gives c = 1/2; the
# concluding table of the source uses c = 1.
BIAS_GENERATOR = 0.5
BIAS_TABLE = 1.0


@dataclass(frozen=True)
class TimeGrid:
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InputError("a time grid needs at least one step")
        if t[0] != 0.0:
            raise InputError("a time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise InputError("grid times must be strictly increasing")
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, horizon: float, n_steps: int, extra=()) -> "TimeGrid":
        """Uniform grid, optionally refined so every time in ``extra`` is a node."""
        if horizon <= 0 or n_steps < 1:
            raise InputError("horizon must be positive and n_steps >= 1")
        t = np.linspace(0.0, horizon, n_steps + 1)
        if len(extra):
            t = np.unique(np.concatenate([t, np.asarray(extra, dtype=float)]))
        return cls(t)

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    def index(self, time: float) -> int:
        i = int(np.searchsorted(self.t, time))
        if i >= self.t.size or not np.isclose(self.t[i], time, rtol=0, atol=1e-12 * max(1.0, self.horizon)):
            raise InputError(f"time {time} is not a grid node")
        return i


class Indicator:
    """``s -> 1_{[0, upper)}(s)``; kernels use the exact value when they see one.

    Half-open, so left-point sums stop at the increment ending at ``upper``.
    """

    def __init__(self, upper: float):
        self.upper = float(upper)

    def __call__(self, s):
        return (np.asarray(s, dtype=float) < self.upper).astype(float)

    def __repr__(self):
        return f"Indicator({self.upper})"


def indicator(upper: float) -> Indicator:
    return Indicator(upper)


@dataclass(frozen=True)
class ErrorKernel:
    """Error operator on Wiener integrals ``Gamma[int h dB]``.

    kind is one of ``"ou"``, ``"weighted_ou"`` (weight ``alpha``),
    ``"beta"`` (``beta``, integrable on the half line) or ``"fractional"``
    (order ``q`` in (0, 1/2), series cut at ``truncation`` terms).
    """

    kind: str = "ou"
    alpha: Callable | None = None
    beta: Callable | None = None
    q: float | None = None
    truncation: int = 10 ** 5

    def __post_init__(self):
        if self.kind not in ("ou", "weighted_ou", "beta", "fractional"):
            raise InputError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "weighted_ou" and self.alpha is None:
            raise InputError("weighted OU kernel needs alpha")
        if self.kind == "beta" and self.beta is None:
            raise InputError("beta kernel needs beta")
        if self.kind == "fractional":
            if self.q is None or not 0.0 < self.q < 0.5:
                raise InputError("fractional order q must lie in (0, 1/2)")
            if self.truncation < 1:
                raise InputError("truncation must be positive")

    @classmethod
    def ou(cls):
        return cls("ou")

    @classmethod
    def weighted_ou(cls, alpha):
        return cls("weighted_ou", alpha=alpha)

    @classmethod
    def beta_kernel(cls, beta):
        return cls("beta", beta=beta)

    @classmethod
    def fractional(cls, q, truncation=10 ** 5):
        return cls("fractional", q=q, truncation=truncation)

    def weight(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "ou":
            return np.ones_like(s)
        if self.kind == "weighted_ou":
            a = np.broadcast_to(np.asarray(self.alpha(s), dtype=float), s.shape)
            if np.any(a < 0):
                raise InputError("alpha must be nonnegative")
            return a
        raise CapabilityError(f"{self.kind} kernel has no pointwise weight")

    def gamma_brownian(self, t: float) -> float:
        """``Gamma[B_t]`` under this kernel."""
        return gamma_wiener_integral(Indicator(t), self)

    def check_beta(self, grid: "TimeGrid") -> float:
        """Integral of beta over the grid span; raises if beta < 0 on the grid."""
        b = np.asarray(self.beta(grid.t), dtype=float)
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise InputError("beta must be finite and nonnegative")
        return float(integrate.trapezoid(b, grid.t))


def _quad(f, a, b) -> float:
    val, _ = integrate.quad(f, a, b, limit=200, epsabs=0.0, epsrel=1e-12)
    return float(val)


def fractional_series(t: float, q: float, truncation: int = 10 ** 5, tail: bool = True):
    """``sum_n 4 (1 - cos 2 pi n t) / (2 pi n)^(2 (1 - q))`` and an error bound.

    With ``tail=True`` the terms beyond ``truncation`` are replaced by their
    mean, ``4 zeta(p, N + 1) / (2 pi)^p``; the neglected oscillating part is
    bounded by summation by parts.
    """
    if not 0.0 <= t <= 1.0:
        raise InputError("fractional kernel needs t in [0, 1]")
    if t in (0.0, 1.0):
        # every term vanishes; the tail mean would not
        return 0.0, 0.0
    p = 2.0 * (1.0 - q)
    N = int(truncation)
    total = 0.0
    chunk = 1 << 20
    for lo in range(1, N + 1, chunk):
        n = np.arange(lo, min(lo + chunk, N + 1), dtype=float)
        total += float(np.sum((1.0 - np.cos(2 * np.pi * n * t)) / n ** p))
    s = np.sin(np.pi * t)
    if tail:
        total += float(special.zeta(p, N + 1))
        bound = (N + 1) ** -p / abs(s) if s > 1e-300 else 0.0
    else:
        bound = 2.0 * (N + 1) ** (1 - p) / (p - 1)
    scale = 4.0 / (2 * np.pi) ** p
    return scale * total, scale * bound


def gamma_wiener_integral(h, kernel: ErrorKernel, grid: TimeGrid | None = None) -> float:
    """``Gamma[int h dB]`` for a deterministic integrand ``h``.

    ``h`` may be an :class:`Indicator` (exact formulas) or any vectorised
    callable, in which case quadrature runs on ``grid``.
    """
    is_ind = isinstance(h, Indicator)
    if kernel.kind == "ou":
        if is_ind:
            return max(h.upper, 0.0)
        _need(grid)
        return float(integrate.trapezoid(np.asarray(h(grid.t)) ** 2, grid.t))
    if kernel.kind == "weighted_ou":
        if is_ind:
            return _quad(lambda s: float(kernel.weight(np.array(s))), 0.0, h.upper)
        _need(grid)
        return float(integrate.trapezoid(kernel.weight(grid.t) * np.asarray(h(grid.t)) ** 2, grid.t))
    if kernel.kind == "beta":
        beta = lambda s: float(kernel.beta(s))
        if is_ind:
            inner = _quad(beta, 0.0, h.upper)
            outer = _quad(beta, h.upper, np.inf)
            return 2.0 * inner * outer
        _need(grid)
        # h vanishes beyond the grid horizon
        hv = np.asarray(h(grid.t), dtype=float)
        bv = np.asarray(kernel.beta(grid.t), dtype=float)
        diff2 = (hv[:, None] - hv[None, :]) ** 2 * bv[:, None] * bv[None, :]
        inside = integrate.trapezoid(integrate.trapezoid(diff2, grid.t, axis=1), grid.t)
        beyond = _quad(beta, grid.horizon, np.inf)
        return float(inside + 2.0 * beyond * integrate.trapezoid(hv * hv * bv, grid.t))
    # fractional
    if is_ind:
        return fractional_series(h.upper, kernel.q, kernel.truncation)[0]
    _need(grid)
    if grid.horizon > 1.0 + 1e-12:
        raise InputError("fractional kernel lives on [0, 1]")
    # Fourier coefficients on [0, 1] from a fine uniform resampling
    m = 1 << 14
    s = (np.arange(m) + 0.5) / m
    hv = np.interp(s, grid.t, np.asarray(h(grid.t), dtype=float), right=0.0)
    c = np.fft.rfft(hv) / m
    k = np.arange(1, c.size)
    return float(2.0 * np.sum(np.abs(c[1:]) ** 2 * (2 * np.pi * k) ** (2 * kernel.q)))


def _need(grid):
    if grid is None:
        raise InputError("a time grid is required for a general integrand")


@dataclass(frozen=True)
class PathBundle:
    """``n_paths`` Brownian paths on ``grid`` with independent companions.

    ``dB`` and ``dB_hat`` have shape ``(n_paths, n_steps)``.
    """

    grid: TimeGrid
    dB: np.ndarray
    dB_hat: np.ndarray
    seed: int = 0

    def __len__(self):
        return self.dB.shape[0]

    def __getitem__(self, item) -> "PathBundle":
        if isinstance(item, (int, np.integer)):
            item = slice(item, item + 1)
        return replace(self, dB=self.dB[item], dB_hat=self.dB_hat[item])

    @property
    def B(self) -> np.ndarray:
        return _cumulate(self.dB)

    @property
    def B_hat(self) -> np.ndarray:
        return _cumulate(self.dB_hat)

    def at(self, time: float) -> np.ndarray:
        """``B_time`` for every path."""
        i = self.grid.index(time)
        return self.dB[:, :i].sum(axis=1)

    def with_companion(self, dB_hat) -> "PathBundle":
        return replace(self, dB_hat=np.asarray(dB_hat, dtype=float))

    def antithetic(self) -> "PathBundle":
        return replace(self, dB_hat=-self.dB_hat)


def _cumulate(d):
    out = np.zeros((d.shape[0], d.shape[1] + 1))
    np.cumsum(d, axis=1, out=out[:, 1:])
    return out


def sample_paths(grid: TimeGrid, n_paths: int, seed: int, workers: int | None = None) -> PathBundle:
    """Independent Gaussian increments for paths and companions.

    Row ``p`` depends only on ``(seed, p, grid)``.
    """
    if n_paths < 1:
        raise InputError("n_paths must be >= 1")
    sd = np.sqrt(grid.dt)
    dB = _rng.normals(seed, "path", n_paths, grid.n_steps, workers) * sd
    dB_hat = _rng.normals(seed, "companion", n_paths, grid.n_steps, workers) * sd
    return PathBundle(grid, dB, dB_hat, int(seed))


def ou_perturb(path: PathBundle, theta: float) -> PathBundle:
    """Move every path to ``sqrt(e^-theta) w + sqrt(1 - e^-theta) w_hat``."""
    if theta < 0:
        raise InputError("theta must be nonnegative")
    if theta == 0:
        return path
    a = np.exp(-0.5 * theta)
    b = np.sqrt(-np.expm1(-theta))
    return replace(path, dB=a * path.dB + b * path.dB_hat)


def wiener_integral(h, path: PathBundle) -> np.ndarray:
    """Left-point sums ``sum h(t_i) dB_i`` per path."""
    return path.dB @ np.asarray(h(path.grid.t[:-1]), dtype=float)


def sharp_wiener_integral(h, path: PathBundle, kernel: ErrorKernel = ErrorKernel()) -> np.ndarray:
    """``(int h dB)^#``: the companion integral of ``sqrt(alpha) h``."""
    if kernel.kind not in ("ou", "weighted_ou"):
        raise CapabilityError(f"sharp derivative not available for the {kernel.kind} kernel")
    s = path.grid.t[:-1]
    return path.dB_hat @ (np.sqrt(kernel.weight(s)) * np.asarray(h(s), dtype=float))


def bias_wiener_integral(h, path: PathBundle, kernel: ErrorKernel = ErrorKernel(),
                         normalization: float = BIAS_GENERATOR) -> np.ndarray:
    """``A[int h dB] = -c int alpha h dB`` with ``c`` the bias normalization."""
    s = path.grid.t[:-1]
    return -normalization * (path.dB @ (kernel.weight(s) * np.asarray(h(s), dtype=float)))


# ---------------------------------------------------------------------------
# Brute-force perturbation oracles.

def perturbation_gamma(functional, path: PathBundle, theta: float):
    """Mean of ``(F(perturbed) - F(path))^2 / theta`` and its standard error.

    ``functional`` maps a :class:`PathBundle` to one value per path.
    """
    f0 = np.asarray(functional(path), dtype=float)
    f1 = np.asarray(functional(ou_perturb(path, theta)), dtype=float)
    x = (f1 - f0) ** 2 / theta
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def perturbation_bias(functional, path: PathBundle, theta: float) -> np.ndarray:
    """Per-path estimate of ``E[F(perturbed) - F | path] / theta``.

    The companion is used with both signs, which removes the first-order
    noise of the conditional-mean estimate.
    """
    f0 = np.asarray(functional(path), dtype=float)
    fp = np.asarray(functional(ou_perturb(path, theta)), dtype=float)
    fm = np.asarray(functional(ou_perturb(path.antithetic(), theta)), dtype=float)
    return (0.5 * (fp + fm) - f0) / theta


def regression_slope(y, x) -> float:
    """Least-squares slope of ``y`` on ``x`` (with intercept)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


# ---------------------------------------------------------------------------
# Conditional expectations and the Clark formula.

def screen_lipschitz(f, lo: float, hi: float, bound: float = 1e6, n_pairs: int = 1000,
                     seed: int = 0) -> float:
    """Largest difference quotient of ``f`` over random pairs in ``[lo, hi]``.

    Heuristic screening only; raises :class:`InputError` above ``bound``.
    """
    rng = _rng.generator(seed, "lipschitz", 0)
    a = rng.uniform(lo, hi, n_pairs)
    b = rng.uniform(lo, hi, n_pairs)
    keep = np.abs(a - b) > 1e-12 * max(1.0, abs(hi - lo))
    q = np.abs(np.asarray(f(a[keep])) - np.asarray(f(b[keep]))) / np.abs(a[keep] - b[keep])
    k = float(q.max()) if q.size else 0.0
    if not np.isfinite(k) or k > bound:
        raise InputError(f"payoff fails Lipschitz screening (quotient {k:.3g} > {bound:.3g})")
    return k


def brownian_conditional(g, b, tau: float, n: int = 64) -> np.ndarray:
    """``E[g(b + sqrt(tau) Y)]`` for each entry of ``b``."""
    b = np.asarray(b, dtype=float)
    if tau <= 0:
        return np.asarray(g(b), dtype=float)
    y, w = gaussian_rule(None, n)
    return np.asarray(g(b[..., None] + np.sqrt(tau) * y), dtype=float) @ w


def clark_integrand(payoff, model, path: PathBundle, lipschitz_bound: float = 1e6) -> np.ndarray:
    """``t -> E[D U(t) | F_t]`` at the left grid points of every path.

    ``model`` is ``"brownian"`` for ``U = f(B_T)`` or a Black-Scholes model
    for ``U = f(S_T)``. ``payoff`` needs ``f`` and ``f_prime``.
    """
    grid = path.grid
    T = grid.horizon
    t = grid.t[:-1]
    B = path.B[:, :-1]
    if payoff.f_prime is None:
        raise InputError("payoff derivative required")
    if model == "brownian":
        screen_lipschitz(payoff.f, -8 * np.sqrt(T), 8 * np.sqrt(T), lipschitz_bound)
        out = np.empty_like(B)
        for i, ti in enumerate(t):
            out[:, i] = brownian_conditional(payoff.f_prime, B[:, i], T - ti)
        return out
    from .black_scholes import BSModel, greeks_grid, stock_price

    if isinstance(model, BSModel):
        if model.T != T:
            raise InputError("grid horizon must equal the option maturity")
        spread = 8 * model.sigma * np.sqrt(T)
        screen_lipschitz(payoff.f, model.s0 * np.exp(-spread), model.s0 * np.exp(spread), lipschitz_bound)
        S = stock_price(model, B, t)
        delta = greeks_grid(t[None, :], S, model, payoff)["delta"]
        return np.exp(model.r * (T - t)) * model.sigma * S * delta
    raise InputError(f"unsupported model {model!r}")


def clark_mean(payoff, model, T: float) -> float:
    """``E[U]`` matching :func:`clark_integrand`."""
    if model == "brownian":
        return float(brownian_conditional(payoff.f, np.array(0.0), T))
    from .black_scholes import price

    return float(np.exp(model.r * T) * price(0.0, model.s0, model, payoff))


def clark_reconstruct(payoff, model, path: PathBundle) -> np.ndarray:
    """``E[U] + sum psi_i dB_i`` per path."""
    psi = clark_integrand(payoff, model, path)
    return clark_mean(payoff, model, path.grid.horizon) + np.sum(psi * path.dB, axis=1)
