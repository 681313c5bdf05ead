"""Black-Scholes values, Greeks and their error operators.

Prices are Gaussian integrals of the payoff; all x-derivatives come from
differentiating the Gaussian density rather than the payoff, so any payoff
that can be evaluated can be priced and differentiated. Kinked payoffs are
integrated panel by panel, split at the kink.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, special

from .error_algebra import ErrorVector, SmoothMap, propagate_bias
from .errors import CapabilityError, InputError
from .quadrature import DEFAULT_NODES, gaussian_rule
from .wiener import BIAS_GENERATOR, ErrorKernel, Indicator, fractional_series

SOURCES = ("B", "S0", "sigma", "r")
_SMOOTHNESS = ("Lipschitz", "C1Lip", "C2Lip")
_CHUNK = 2048


@dataclass(frozen=True)
class Payoff:
    """European payoff ``f(S_T)``.

    ``kinks`` lists the points where ``f`` (or, for smoothed payoffs, its
    curvature) changes abruptly; quadrature splits there.
    """

    f: Callable
    f_prime: Callable | None = None
    f_second: Callable | None = None
    smoothness: str = "Lipschitz"
    kinks: tuple = ()
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.smoothness not in _SMOOTHNESS:
            raise InputError(f"smoothness must be one of {_SMOOTHNESS}")

    def at_least(self, level: str) -> bool:
        return _SMOOTHNESS.index(self.smoothness) >= _SMOOTHNESS.index(level)

    def __call__(self, x):
        return self.f(x)

    def scaled(self, a: float) -> "Payoff":
        a = float(a)
        d1, d2 = self.f_prime, self.f_second
        return Payoff(lambda x: a * self.f(x),
                      None if d1 is None else (lambda x: a * d1(x)),
                      None if d2 is None else (lambda x: a * d2(x)),
                      self.smoothness, self.kinks, "scaled", {"a": a, "base": self})


def call(K: float) -> Payoff:
    return Payoff(lambda x: np.maximum(np.asarray(x, dtype=float) - K, 0.0),
                  lambda x: (np.asarray(x, dtype=float) > K).astype(float),
                  lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                  "Lipschitz", (float(K),), "call", {"K": float(K)})


def put(K: float) -> Payoff:
    return Payoff(lambda x: np.maximum(K - np.asarray(x, dtype=float), 0.0),
                  lambda x: -(np.asarray(x, dtype=float) < K).astype(float),
                  lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                  "Lipschitz", (float(K),), "put", {"K": float(K)})


def forward(K: float = 0.0) -> Payoff:
    """``f(x) = x - K``."""
    return Payoff(lambda x: np.asarray(x, dtype=float) - K,
                  lambda x: np.ones_like(np.asarray(x, dtype=float)),
                  lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                  "C2Lip", (), "forward", {"K": float(K)})


def constant(c: float) -> Payoff:
    return Payoff(lambda x: np.full_like(np.asarray(x, dtype=float), c),
                  lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                  lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                  "C2Lip", (), "constant", {"c": float(c)})


def softplus_call(K: float, width: float) -> Payoff:
    """``width * log(1 + exp((x - K) / width))``, a C-infinity call."""
    if width <= 0:
        raise InputError("softplus width must be positive")

    def f(x):
        return width * np.logaddexp(0.0, (np.asarray(x, dtype=float) - K) / width)

    def d1(x):
        return special.expit((np.asarray(x, dtype=float) - K) / width)

    def d2(x):
        p = d1(x)
        return p * (1.0 - p) / width

    return Payoff(f, d1, d2, "C2Lip", (float(K),), "softplus_call",
                  {"K": float(K), "width": float(width)})


def polynomial(coeffs: Sequence[float]) -> Payoff:
    """``sum c_k x^k``; treated as smooth on the simulated range."""
    p = np.polynomial.Polynomial(coeffs)
    d1, d2 = p.deriv(1), p.deriv(2)
    return Payoff(lambda x: p(np.asarray(x, dtype=float)), lambda x: d1(np.asarray(x, dtype=float)),
                  lambda x: d2(np.asarray(x, dtype=float)), "C2Lip", (), "polynomial",
                  {"coeffs": [float(c) for c in coeffs]})


def table(xs: Sequence[float], ys: Sequence[float]) -> Payoff:
    """Piecewise-linear interpolation of ``(x, f(x))``, flat outside."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.size < 2 or xs.shape != ys.shape or np.any(np.diff(xs) <= 0):
        raise InputError("table payoff needs increasing x nodes and matching values")
    slopes = np.diff(ys) / np.diff(xs)

    def d1(x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, slopes.size - 1)
        return np.where((x < xs[0]) | (x > xs[-1]), 0.0, slopes[i])

    return Payoff(lambda x: np.interp(np.asarray(x, dtype=float), xs, ys), d1,
                  lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                  "Lipschitz", tuple(xs), "table", {"x": xs.tolist(), "y": ys.tolist()})


@dataclass(frozen=True)
class BSModel:
    s0: float
    sigma: float
    r: float
    T: float
    kernel: ErrorKernel = ErrorKernel()
    switches: dict = field(default_factory=lambda: {s: True for s in SOURCES})

    def __post_init__(self):
        if not self.s0 > 0 or not self.sigma > 0 or not self.T > 0 or not np.isfinite(self.T):
            raise InputError("need s0 > 0, sigma > 0 and a finite T > 0")
        sw = {s: True for s in SOURCES}
        unknown = set(self.switches) - set(SOURCES)
        if unknown:
            raise InputError(f"unknown error sources {sorted(unknown)}")
        sw.update({k: bool(v) for k, v in self.switches.items()})
        object.__setattr__(self, "switches", sw)

    def enabled(self, source: str) -> bool:
        return self.switches[source]


@dataclass(frozen=True)
class GreekSet:
    value: float
    delta: float
    gamma: float
    vega: float
    rho: float
    theta: float = float("nan")
    speed: float = float("nan")


def stock_price(model: BSModel, B, t):
    """``S_t = S_0 exp(sigma B_t + (r - sigma^2 / 2) t)``."""
    return model.s0 * np.exp(model.sigma * np.asarray(B) + (model.r - 0.5 * model.sigma ** 2) * np.asarray(t))


# ---------------------------------------------------------------------------
# Pricing.

def _closed_price(tau, x, model, payoff):
    kind = payoff.name
    disc = np.exp(-model.r * tau)
    if kind == "constant":
        return payoff.params["c"] * disc * np.ones_like(x)
    K = payoff.params["K"]
    if kind == "forward":
        return x - K * disc
    s = model.sigma * np.sqrt(tau)
    d1 = (np.log(x / K) + (model.r + 0.5 * model.sigma ** 2) * tau) / s
    d2 = d1 - s
    if kind == "call":
        return x * special.ndtr(d1) - K * disc * special.ndtr(d2)
    return K * disc * special.ndtr(-d2) - x * special.ndtr(-d1)


CLOSED_FORMS = ("call", "put", "forward", "constant")


def _moments(tau, x, model, payoff, n):
    """``G_k = E[f(exp(m + s Y)) He_k(Y)] / s^k`` for k = 0..3."""
    m = np.log(x) + (model.r - 0.5 * model.sigma ** 2) * tau
    s = model.sigma * np.sqrt(tau)
    if payoff.kinks:
        logk = np.log(np.asarray(payoff.kinks, dtype=float))
        y, w = gaussian_rule((logk[None, :] - m[:, None]) / s[:, None], n)
    else:
        y, w = gaussian_rule(None, n)
        y = np.broadcast_to(y, (x.size, y.size))
        w = np.broadcast_to(w, y.shape)
    fv = np.asarray(payoff.f(np.exp(m[:, None] + s[:, None] * y)), dtype=float)
    wf = w * fv
    y2 = y * y
    g0 = wf.sum(axis=1)
    g1 = (wf * y).sum(axis=1) / s
    g2 = (wf * (y2 - 1.0)).sum(axis=1) / s ** 2
    g3 = (wf * y * (y2 - 3.0)).sum(axis=1) / s ** 3
    return g0, g1, g2, g3


def greeks_grid(t, x, model: BSModel, payoff: Payoff, n: int = DEFAULT_NODES) -> dict:
    """Vectorised value and Greeks at ``(t, x)``; arrays broadcast together.

    Keys: value, delta, gamma, speed (third x-derivative), vega, rho, theta.
    """
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    shape = x.shape
    t, x = t.ravel(), x.ravel()
    if np.any(x <= 0):
        raise InputError("price level must be positive")
    tau = model.T - t
    out = {k: np.full(x.shape, np.nan) for k in ("value", "delta", "gamma", "speed", "vega", "rho", "theta")}
    live = tau > 0
    idx = np.flatnonzero(live)
    sig, r = model.sigma, model.r
    for lo in range(0, idx.size, _CHUNK):
        j = idx[lo:lo + _CHUNK]
        tj, xj = tau[j], x[j]
        g0, g1, g2, g3 = _moments(tj, xj, model, payoff, n)
        disc = np.exp(-r * tj)
        F = disc * g0
        out["value"][j] = F
        out["delta"][j] = disc * g1 / xj
        out["gamma"][j] = disc * (g2 - g1) / xj ** 2
        out["speed"][j] = disc * (g3 - 3 * g2 + 2 * g1) / xj ** 3
        out["vega"][j] = disc * tj * sig * (g2 - g1)
        out["rho"][j] = tj * (disc * g1 - F)
        out["theta"][j] = r * F - disc * ((r - 0.5 * sig ** 2) * g1 + 0.5 * sig ** 2 * g2)
    dead = ~live
    if dead.any():
        xd = x[dead]
        out["value"][dead] = payoff.f(xd)
        out["delta"][dead] = payoff.f_prime(xd) if payoff.f_prime else np.nan
        out["gamma"][dead] = payoff.f_second(xd) if payoff.f_second else np.nan
        out["vega"][dead] = 0.0
        out["rho"][dead] = 0.0
    if not np.all(np.isfinite(out["value"])):
        raise InputError("payoff is not integrable against the lognormal law")
    return {k: v.reshape(shape) for k, v in out.items()}


def price(t, x, model: BSModel, payoff: Payoff, method: str = "auto", n: int = DEFAULT_NODES):
    """Value ``F(t, x)`` of the payoff.

    ``method`` is ``"quadrature"``, ``"closed"`` or ``"auto"`` (closed form
    for call, put, forward and constant payoffs).
    """
    t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    scalar = t_arr.ndim == 0
    if method not in ("auto", "closed", "quadrature"):
        raise InputError(f"unknown pricing method {method!r}")
    use_closed = payoff.name in CLOSED_FORMS and method != "quadrature"
    if method == "closed" and not use_closed:
        raise CapabilityError(f"no closed form for {payoff.name} payoffs")
    if use_closed:
        tau = model.T - t_arr
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(tau > 0, _closed_price(np.maximum(tau, 1e-300), x_arr, model, payoff),
                         payoff.f(x_arr))
    else:
        v = greeks_grid(t_arr, x_arr, model, payoff, n)["value"]
    return float(v) if scalar else v


def quadrature_error(t, x, model, payoff, n: int = DEFAULT_NODES) -> float:
    """Richardson-style estimate: ``|F_n - F_2n|``."""
    a = price(t, x, model, payoff, "quadrature", n)
    b = price(t, x, model, payoff, "quadrature", 2 * n)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def greeks(t: float, x: float, model: BSModel, payoff: Payoff, n: int = DEFAULT_NODES) -> GreekSet:
    g = greeks_grid(t, x, model, payoff, n)
    return GreekSet(*(float(g[k]) for k in ("value", "delta", "gamma", "vega", "rho", "theta", "speed")))


# ---------------------------------------------------------------------------
# Error operators.

def gamma_brownian(t, kernel: ErrorKernel) -> np.ndarray:
    """``Gamma[B_t]`` for each entry of ``t``."""
    t = np.asarray(t, dtype=float)
    if kernel.kind == "ou":
        return t.copy()
    flat = [kernel.gamma_brownian(float(ti)) for ti in t.ravel()]
    return np.asarray(flat).reshape(t.shape)


def gamma_brownian_cross(s: float, t: float, kernel: ErrorKernel) -> float:
    """``Gamma[B_s, B_t]`` by polarisation."""
    a, b = sorted((float(s), float(t)))
    if kernel.kind == "ou":
        return a
    if kernel.kind == "weighted_ou":
        return kernel.gamma_brownian(a)
    if kernel.kind == "fractional":
        incr = fractional_series(b - a, kernel.q, kernel.truncation)[0]
    else:
        from .wiener import _quad

        beta = lambda u: float(kernel.beta(u))
        incr = 2.0 * _quad(beta, a, b) * (_quad(beta, 0.0, a) + _quad(beta, b, np.inf))
    return 0.5 * (kernel.gamma_brownian(a) + kernel.gamma_brownian(b) - incr)


def gamma_stock(t, S, B, model: BSModel, source: str = "B"):
    """``Gamma_source[S_t]``."""
    _check_source(model, source)
    S = np.asarray(S, dtype=float)
    t = np.asarray(t, dtype=float)
    if source == "B":
        return S ** 2 * model.sigma ** 2 * gamma_brownian(t, model.kernel)
    if source == "S0":
        return S ** 2
    if source == "sigma":
        return (S * (np.asarray(B) - model.sigma * t) * model.sigma) ** 2
    return (t * S * model.r) ** 2


def gamma_stock_total(t, S, B, model: BSModel):
    """Sum of ``Gamma[S_t]`` over the enabled sources."""
    return sum(gamma_stock(t, S, B, model, s) for s in SOURCES if model.enabled(s))


def _check_source(model, source):
    if source not in SOURCES:
        raise InputError(f"unknown error source {source!r}")
    if not model.enabled(source):
        raise CapabilityError(f"error source {source} is disabled")


def gamma_value(t, S, B, model: BSModel, payoff: Payoff, source: str = "B", g: dict | None = None):
    """``Gamma_source[V_t]`` with ``V_t = F(t, S_t)``.

    ``B`` is only needed for ``source="sigma"``. Pass precomputed Greeks as
    ``g`` to avoid re-integrating.
    """
    _check_source(model, source)
    g = greeks_grid(t, S, model, payoff) if g is None else g
    S = np.asarray(S, dtype=float)
    t = np.asarray(t, dtype=float)
    if source == "B":
        return g["delta"] ** 2 * gamma_stock(t, S, B, model, "B")
    if source == "S0":
        return (g["delta"] * S) ** 2
    if source == "sigma":
        if B is None:
            raise InputError("the sigma source needs B_t")
        return ((g["vega"] + S * (np.asarray(B) - model.sigma * t) * g["delta"]) * model.sigma) ** 2
    return ((t * S * g["delta"] + g["rho"]) * model.r) ** 2


def gamma_value_cross(s, t, S_s, S_t, model: BSModel, payoff: Payoff):
    """``Gamma_B[V_s, V_t] = delta_s delta_t S_s S_t sigma^2 Gamma[B_s, B_t]``."""
    _check_source(model, "B")
    ds = greeks_grid(s, S_s, model, payoff)["delta"]
    dt = greeks_grid(t, S_t, model, payoff)["delta"]
    return ds * dt * np.asarray(S_s) * np.asarray(S_t) * model.sigma ** 2 * gamma_brownian_cross(s, t, model.kernel)


def _need_c2(payoff):
    if not payoff.at_least("C2Lip"):
        raise InputError("hedge errors need f and f' in C1 and Lipschitz; use a smoothed payoff")


def gamma_hedge(t, S, model: BSModel, payoff: Payoff, g: dict | None = None):
    """``Gamma_B[H_t] = gamma_t^2 Gamma_B[S_t]``."""
    _need_c2(payoff)
    _check_source(model, "B")
    g = greeks_grid(t, S, model, payoff) if g is None else g
    return g["gamma"] ** 2 * gamma_stock(t, S, None, model, "B")


def gamma_hedge_cross(s, t, S_s, S_t, model: BSModel, payoff: Payoff):
    _need_c2(payoff)
    _check_source(model, "B")
    gs = greeks_grid(s, S_s, model, payoff)["gamma"]
    gt = greeks_grid(t, S_t, model, payoff)["gamma"]
    return gs * gt * np.asarray(S_s) * np.asarray(S_t) * model.sigma ** 2 * gamma_brownian_cross(s, t, model.kernel)


# ---------------------------------------------------------------------------
# Limits as t -> T.

def limit_checks(model: BSModel, payoff: Payoff, times: Sequence[float], n_paths: int = 1000,
                 seed: int = 0) -> list[dict]:
    """Gap between the error on ``V_t`` (and ``H_t``) and its terminal limit.

    For each time, on common simulated paths:

    ``terminal_gap``  sum |Gamma_B[V_t] - f'(S_T)^2 Gamma_B[S_T]| / sum f'(S_T)^2 Gamma_B[S_T]
    ``state_gap``     sum |delta_t^2 - f'(S_t)^2| Gamma_B[S_t] / sum f'(S_t)^2 Gamma_B[S_t]

    and the hedge analogues with gamma and f''. The hedge columns are NaN
    when the payoff is not C2Lip. A gap whose reference vanishes on every
    path is reported in absolute terms.
    """
    from .wiener import TimeGrid, sample_paths

    times = np.asarray(sorted(times), dtype=float)
    if np.any(times >= model.T) or np.any(times < 0):
        raise InputError("limit times must lie in [0, T)")
    grid = TimeGrid(np.unique(np.concatenate([[0.0], times, [model.T]])))
    paths = sample_paths(grid, n_paths, seed)
    BT = paths.at(model.T)
    ST = stock_price(model, BT, model.T)
    gST = gamma_stock(model.T, ST, BT, model, "B")
    lim_v = payoff.f_prime(ST) ** 2 * gST
    smooth = payoff.at_least("C2Lip")
    lim_h = payoff.f_second(ST) ** 2 * gST if smooth else None
    rows = []
    for t in times:
        Bt = paths.at(t)
        St = stock_price(model, Bt, t)
        g = greeks_grid(t, St, model, payoff)
        gSt = gamma_stock(t, St, Bt, model, "B")
        gv = g["delta"] ** 2 * gSt
        row = {"t": float(t),
               "terminal_gap": _rel(gv - lim_v, lim_v),
               "state_gap": _rel(gv - payoff.f_prime(St) ** 2 * gSt, payoff.f_prime(St) ** 2 * gSt),
               "hedge_terminal_gap": np.nan, "hedge_state_gap": np.nan}
        if smooth:
            gh = g["gamma"] ** 2 * gSt
            row["hedge_terminal_gap"] = _rel(gh - lim_h, lim_h)
            row["hedge_state_gap"] = _rel(gh - payoff.f_second(St) ** 2 * gSt, payoff.f_second(St) ** 2 * gSt)
        rows.append(row)
    return rows


def _rel(diff, ref) -> float:
    num = float(np.sum(np.abs(diff)))
    den = float(np.sum(np.abs(ref)))
    return num / den if den > 0 else num


# ---------------------------------------------------------------------------
# Portfolios insensitive to sigma and r at t = 0.

@dataclass(frozen=True)
class NeutralBasis:
    weights: np.ndarray  # shape (k, dim), one basis vector per row
    rank: int
    diagnostic: str


def neutral_portfolio(payoffs: Sequence[Payoff], model: BSModel, rtol: float = 1e-10) -> NeutralBasis:
    """Basis of weight vectors orthogonal to ``(gamma_0^i)`` and ``(rho_0^i)``."""
    if len(payoffs) < 3:
        raise InputError("need at least three payoffs")
    gam = np.array([greeks(0.0, model.s0, model, p).gamma for p in payoffs])
    rho = np.array([greeks(0.0, model.s0, model, p).rho for p in payoffs])
    M = np.vstack([gam, rho])
    norms = np.linalg.norm(M, axis=1)
    scale = max(norms.max(), np.finfo(float).tiny)
    # rows that vanish relative to the largest one carry no constraint
    keep = norms > rtol * scale
    A = M[keep] / norms[keep, None] if keep.any() else np.zeros((0, len(payoffs)))
    if A.shape[0] == 0:
        ns = np.eye(len(payoffs))
    else:
        ns = linalg.null_space(A, rcond=1e-9)
    rank = len(payoffs) - ns.shape[1]
    diag = "full rank" if rank == 2 else f"rank {rank}: null space of dimension {ns.shape[1]}"
    return NeutralBasis(ns.T.copy(), rank, diag)


def portfolio_gammas_t0(weights, payoffs, model: BSModel) -> tuple[float, float]:
    """``(Gamma_sigma[V_0], Gamma_r[V_0])`` of ``sum a_i f_i`` by direct evaluation."""
    gs = [greeks(0.0, model.s0, model, p) for p in payoffs]
    vega = sum(a * g.vega for a, g in zip(weights, gs))
    delta = sum(a * g.delta for a, g in zip(weights, gs))
    rho = sum(a * g.rho for a, g in zip(weights, gs))
    S, B, t = model.s0, 0.0, 0.0
    g_sigma = ((vega + S * (B - model.sigma * t) * delta) * model.sigma) ** 2
    g_r = ((t * S * delta + rho) * model.r) ** 2
    return float(g_sigma), float(g_r)


# ---------------------------------------------------------------------------
# Biases due to the error on B.

def bias_table(t, S, B, model: BSModel, payoff: Payoff, normalization: float = BIAS_GENERATOR,
               g: dict | None = None) -> dict:
    """``A[B_t], A[S_t], A[V_t], A[H_t]`` (plus ``Gamma[B_t], Gamma[S_t]``).

    Computed by the second-order chain rule from ``A[B_t] = -c B_t`` with
    ``c = normalization``. ``A[H_t]`` is NaN unless the payoff is C2Lip.
    """
    if model.kernel.kind != "ou":
        raise CapabilityError("bias table is available for the Ornstein-Uhlenbeck kernel only")
    t = np.asarray(t, dtype=float)
    S = np.asarray(S, dtype=float)
    B = np.asarray(B, dtype=float)
    g = greeks_grid(t, S, model, payoff) if g is None else g
    sig = model.sigma
    gB = np.broadcast_to(t, S.shape).astype(float)
    aB = -normalization * B
    gS = (sig * S) ** 2 * gB
    aS = sig * S * aB + 0.5 * sig * sig * S * gB
    aV = g["delta"] * aS + 0.5 * g["gamma"] * gS
    aH = g["gamma"] * aS + 0.5 * g["speed"] * gS if payoff.at_least("C2Lip") else np.full(S.shape, np.nan)
    return {"gamma_B": gB, "gamma_S": gS, "A_B": aB, "A_S": aS, "A_V": aV, "A_H": aH}


def bias_stock_closed(t, S, B, model: BSModel, normalization: float = BIAS_GENERATOR):
    """Closed form ``A[S_t] = -c sigma S_t B_t + sigma^2 S_t t / 2``."""
    return -normalization * model.sigma * S * B + 0.5 * model.sigma ** 2 * S * t


def bias_chain_point(t: float, B: float, model: BSModel, payoff: Payoff,
                     normalization: float = BIAS_GENERATOR) -> dict:
    """Scalar ``A[S_t], A[V_t], A[H_t]`` through the generic finite-dimensional
    bias rule applied to ``b -> S(b)``, ``b -> F(t, S(b))`` and
    ``b -> dF/dx(t, S(b))``."""
    sig = model.sigma
    drift = (model.r - 0.5 * sig * sig) * t

    def s_of(b):
        return model.s0 * np.exp(sig * b + drift)

    g = greeks_grid(t, s_of(B), model, payoff)
    x0 = ErrorVector([B], [[t]], [-normalization * B])
    Smap = SmoothMap(1, 1, lambda v: s_of(v),
                     lambda v: np.array([[sig * s_of(v[0])]]),
                     lambda v: np.array([[[sig * sig * s_of(v[0])]]]))
    S = s_of(B)
    # chain rule for b -> G(S(b)): G' S', G'' S'^2 + G' S''
    d1s, d2s = sig * S, sig * sig * S

    def chained(val, d1, d2):
        return SmoothMap(1, 1, lambda v: np.array([val]), lambda v: np.array([[d1 * d1s]]),
                         lambda v: np.array([[[d2 * d1s ** 2 + d1 * d2s]]]))

    out = {"A_S": float(propagate_bias(Smap, x0)[0]),
           "A_V": float(propagate_bias(chained(g["value"], g["delta"], g["gamma"]), x0)[0]),
           "A_H": float(propagate_bias(chained(g["delta"], g["gamma"], g["speed"]), x0)[0])}
    return out
