"""Finite-dimensional error structures.

An :class:`ErrorVector` carries values together with the conditional
covariance of their infinitesimal errors (``gamma``) and, optionally, the
conditional mean of those errors (``bias``). Smooth maps act on it by the
first-order rule ``J gamma J^T`` and the second-order rule for the bias.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, InputError, NumericError

_EPS = np.finfo(float).eps
PSD_RTOL = 1e-10


def _psd_ok(m: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    if m.size == 0:
        return True
    tr = float(np.trace(m))
    lo = float(np.linalg.eigvalsh(m).min())
    return lo >= -rtol * max(abs(tr), np.finfo(float).tiny)


@dataclass(frozen=True)
class ErrorVector:
    """Values with error covariance and (optional) error bias.

    ``bias`` is ``None`` when no second-order information is available.
    """

    values: np.ndarray
    gamma: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        d = v.shape[0]
        if v.ndim != 1 or d < 1:
            raise InputError("values must be a non-empty vector")
        if g.shape != (d, d):
            raise InputError(f"gamma must be {d}x{d}, got {g.shape}")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g))):
            raise InputError("non-finite entry in values or gamma")
        if not np.allclose(g, g.T, rtol=1e-12, atol=1e-300):
            raise InputError("gamma is not symmetric")
        if not _psd_ok(g):
            raise InputError("gamma is not positive semidefinite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gamma", 0.5 * (g + g.T))
        if self.bias is not None:
            b = np.atleast_1d(np.asarray(self.bias, dtype=float))
            if b.shape != (d,) or not np.all(np.isfinite(b)):
                raise InputError("bias must be a finite vector matching values")
            object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @classmethod
    def independent(cls, values, variances, bias=None) -> "ErrorVector":
        return cls(values, np.diag(np.atleast_1d(np.asarray(variances, dtype=float))), bias)


def _fd_step(x: np.ndarray) -> np.ndarray:
    return np.cbrt(_EPS) * np.maximum(1.0, np.abs(x))


def fd_jacobian(fun: Callable, x: np.ndarray) -> np.ndarray:
    """Central finite-difference Jacobian, step ``cbrt(eps) max(1, |x|)``."""
    x = np.asarray(x, dtype=float)
    h = _fd_step(x)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * h[i]))
    return np.stack(cols, axis=-1)


def fd_hessians(fun: Callable, x: np.ndarray) -> np.ndarray:
    """Central finite-difference hessians, shape ``(k, d, d)``."""
    x = np.asarray(x, dtype=float)
    d = x.size
    # second differences need a larger step: eps^(1/4)
    h = _EPS ** 0.25 * np.maximum(1.0, np.abs(x))
    f0 = np.atleast_1d(fun(x))
    out = np.empty((f0.size, d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        out[:, i, i] = (np.atleast_1d(fun(x + ei)) - 2 * f0 + np.atleast_1d(fun(x - ei))) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            v = (np.atleast_1d(fun(x + ei + ej)) - np.atleast_1d(fun(x + ei - ej))
                 - np.atleast_1d(fun(x - ei + ej)) + np.atleast_1d(fun(x - ei - ej))) / (4 * h[i] * h[j])
            out[:, i, j] = out[:, j, i] = v
    return out


@dataclass(frozen=True)
class SmoothMap:
    """A map R^d -> R^k with first and (optionally) second derivatives.

    When ``jacobian`` is omitted, central differences are used. Hessians are
    never guessed: pass ``hessians`` or build with ``with_hessians=True``.
    """

    dimension_in: int
    dimension_out: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    hessians: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.eval(np.asarray(x, dtype=float)), dtype=float))

    def jac(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian is None:
            j = fd_jacobian(self.eval, x)
        else:
            j = np.asarray(self.jacobian(x), dtype=float)
        return j.reshape(self.dimension_out, self.dimension_in)

    def hess(self, x) -> np.ndarray:
        if self.hessians is None:
            raise CapabilityError("map has no hessians; bias propagation needs second derivatives")
        h = np.asarray(self.hessians(np.asarray(x, dtype=float)), dtype=float)
        return h.reshape(self.dimension_out, self.dimension_in, self.dimension_in)

    @property
    def has_hessians(self) -> bool:
        return self.hessians is not None

    @classmethod
    def from_function(cls, fun, dimension_in, dimension_out=1, with_hessians: bool = False):
        """Wrap a bare function; derivatives by finite differences."""
        h = (lambda x: fd_hessians(fun, x)) if with_hessians else None
        return cls(dimension_in, dimension_out, fun, None, h)

    @classmethod
    def scalar(cls, f, df, d2f=None):
        """Build a 1 -> 1 map from ``f, f', f''``."""
        return cls(1, 1,
                   lambda x: np.array([f(x[0])]),
                   lambda x: np.array([[df(x[0])]]),
                   None if d2f is None else (lambda x: np.array([[[d2f(x[0])]]])))

    @classmethod
    def linear(cls, matrix, offset=None):
        a = np.atleast_2d(np.asarray(matrix, dtype=float))
        c = np.zeros(a.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        k, d = a.shape
        return cls(d, k, lambda x: a @ x + c, lambda x: a, lambda x: np.zeros((k, d, d)))

    @classmethod
    def constant(cls, value, dimension_in):
        c = np.atleast_1d(np.asarray(value, dtype=float))
        k = c.size
        return cls(dimension_in, k, lambda x: c.copy(),
                   lambda x: np.zeros((k, dimension_in)),
                   lambda x: np.zeros((k, dimension_in, dimension_in)))

    @classmethod
    def identity(cls, d):
        return cls.linear(np.eye(d))


def compose(outer: SmoothMap, inner: SmoothMap) -> SmoothMap:
    """``outer o inner`` with chain-rule Jacobian and hessians."""
    if outer.dimension_in != inner.dimension_out:
        raise InputError("composition dimension mismatch")

    def ev(x):
        return outer(inner(x))

    def jac(x):
        return outer.jac(inner(x)) @ inner.jac(x)

    hess = None
    if outer.has_hessians and inner.has_hessians:
        def hess(x):
            y = inner(x)
            jo, ho = outer.jac(y), outer.hess(y)
            ji, hi = inner.jac(x), inner.hess(x)
            return (np.einsum("km,mij->kij", jo, hi)
                    + np.einsum("mi,kmn,nj->kij", ji, ho, ji))

    return SmoothMap(inner.dimension_in, outer.dimension_out, ev, jac, hess)


def check_derivatives(F: SmoothMap, points: Sequence, rtol: float = 1e-5) -> bool:
    """Compare supplied derivatives with central differences at ``points``.

    Returns True when every analytic Jacobian (and hessian, if present)
    agrees with its finite-difference estimate to ``rtol`` relative to the
    largest entry at that point.
    """
    for x in points:
        x = np.asarray(x, dtype=float)
        if F.jacobian is not None:
            ja, jf = F.jac(x), fd_jacobian(F.eval, x)
            if np.max(np.abs(ja - jf)) > rtol * max(1.0, np.max(np.abs(ja))):
                return False
        if F.has_hessians:
            ha, hf = F.hess(x), fd_hessians(F.eval, x)
            if np.max(np.abs(ha - hf)) > rtol * max(1.0, np.max(np.abs(ha))):
                return False
    return True


def propagate_gamma(F: SmoothMap, x: ErrorVector) -> ErrorVector:
    """Push ``x`` through ``F``: values ``F(x)``, covariance ``J gamma J^T``.

    The output bias is filled in only when ``F`` has hessians and ``x``
    carries a bias; otherwise it is ``None``.
    """
    if F.dimension_in != x.dim:
        raise InputError(f"map expects dimension {F.dimension_in}, got {x.dim}")
    j = F.jac(x.values)
    if not np.all(np.isfinite(j)):
        raise NumericError("non-finite Jacobian entry")
    g = j @ x.gamma @ j.T
    bias = None
    if F.has_hessians and x.bias is not None:
        bias = propagate_bias(F, x)
    return ErrorVector(F(x.values), 0.5 * (g + g.T), bias)


def propagate_bias(F: SmoothMap, x: ErrorVector) -> np.ndarray:
    """Second-order bias rule ``A[F(f)] = F' A f + 1/2 sum F''_ij Gamma[f_i, f_j]``."""
    if F.dimension_in != x.dim:
        raise InputError(f"map expects dimension {F.dimension_in}, got {x.dim}")
    if x.bias is None:
        raise CapabilityError("input has no bias")
    j = F.jac(x.values)
    h = F.hess(x.values)
    return j @ x.bias + 0.5 * np.einsum("kij,ij->k", h, x.gamma)


def transport_sequence(fs: Sequence[SmoothMap], x0: float, bias0: float, var0: float):
    """Iterate the scalar bias/variance transport through ``f_1, f_2, ...``.

    Returns the list ``[(bias_1, var_1), (bias_2, var_2), ...]``.
    """
    x, b, v = float(x0), float(bias0), float(var0)
    out = []
    for f in fs:
        d1 = float(f.jac(np.array([x]))[0, 0])
        d2 = float(f.hess(np.array([x]))[0, 0, 0])
        b, v = b * d1 + 0.5 * v * d2, v * d1 * d1
        x = float(f(np.array([x]))[0])
        if not (np.isfinite(b) and np.isfinite(v) and np.isfinite(x)):
            raise NumericError("overflow in transport recursion")
        out.append((b, v))
    return out


@dataclass(frozen=True)
class GammaField:
    """A field ``v -> Gamma(v)`` of symmetric PSD matrices on R^d."""

    dimension: int
    field: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v) -> np.ndarray:
        m = np.atleast_2d(np.asarray(self.field(np.asarray(v, dtype=float)), dtype=float))
        if m.shape != (self.dimension, self.dimension):
            raise InputError("gamma field returned a matrix of the wrong shape")
        return m

    def is_psd_at(self, v) -> bool:
        m = self(v)
        return bool(np.allclose(m, m.T) and _psd_ok(m))

    def gamma_of(self, F: SmoothMap, v) -> np.ndarray:
        """Error covariance of ``F`` at ``v`` under this field."""
        j = F.jac(v)
        return j @ self(v) @ j.T

    def at(self, v, bias=None) -> ErrorVector:
        return ErrorVector(v, self(v), bias)

    @classmethod
    def constant(cls, matrix):
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(m.shape[0], lambda v: m)

    @classmethod
    def proportional(cls):
        """One-dimensional constant proportional error ``Gamma[phi] = phi'^2 v^2``."""
        return cls(1, lambda v: np.array([[v[0] ** 2]]))


def product_structure(gammas: Sequence[GammaField]) -> GammaField:
    """Block-diagonal product of independent fields with uncorrelated errors."""
    if not gammas:
        raise InputError("product of an empty list of structures")
    if len(gammas) == 1:
        return gammas[0]
    dims = [g.dimension for g in gammas]
    edges = np.concatenate([[0], np.cumsum(dims)])
    n = int(edges[-1])

    def field_(v):
        m = np.zeros((n, n))
        for g, lo, hi in zip(gammas, edges[:-1], edges[1:]):
            m[lo:hi, lo:hi] = g(v[lo:hi])
        return m

    return GammaField(n, field_)


# ---------------------------------------------------------------------------
# Triangle drawn with a graduated rule and a protractor.

def triangle_gamma_field(l1: float, l2: float) -> np.ndarray:
    """Error covariance of ``(l1, l2, theta1, theta2)``.

    Off-diagonal entries are half the cross coefficients of the quadratic
    form, so the matrix is PSD and ``grad^T M grad`` reproduces it.
    """
    return np.array([[l1 * l1, 0.5 * l1 * l2, 0.0, 0.0],
                     [0.5 * l1 * l2, l2 * l2, 0.0, 0.0],
                     [0.0, 0.0, 1.0, 0.5],
                     [0.0, 0.0, 0.5, 1.0]])


TRIANGLE_FIELD = GammaField(4, lambda v: triangle_gamma_field(v[0], v[1]))


def _triangle_eval(v):
    l1, l2, t1, t2 = v
    return np.array([l1 * np.cos(t1) + l2 * np.cos(t1 + t2),
                     l1 * np.sin(t1) + l2 * np.sin(t1 + t2)])


def _triangle_jac(v):
    l1, l2, t1, t2 = v
    c1, s1 = np.cos(t1), np.sin(t1)
    c12, s12 = np.cos(t1 + t2), np.sin(t1 + t2)
    return np.array([[c1, c12, -l1 * s1 - l2 * s12, -l2 * s12],
                     [s1, s12, l1 * c1 + l2 * c12, l2 * c12]])


TRIANGLE_MAP = SmoothMap(4, 2, _triangle_eval, _triangle_jac)


def triangle_errors(l1: float, l2: float, theta1: float, theta2: float,
                    L: float = np.inf):
    """Closed-form ``(Gamma[X_B], Gamma[Y_B], Gamma[X_B, Y_B])`` for the
    point B reached by a segment of length ``l1`` at polar angle ``theta1``
    followed by one of length ``l2`` at angle ``theta2`` to the first."""
    if not (0 < l1 < L and 0 < l2 < L):
        raise InputError("lengths must lie in (0, L)")
    if not (0 <= theta1 < np.pi and 0 <= theta2 < np.pi):
        raise InputError("angles must lie in [0, pi)")
    s1, c1 = np.sin(theta1), np.cos(theta1)
    s12, c12 = np.sin(theta1 + theta2), np.cos(theta1 + theta2)
    gx = l1 * l1 + l1 * l2 * (np.cos(theta2) + 2 * s1 * s12) + l2 * l2 * (1 + 2 * s12 * s12)
    gy = l1 * l1 + l1 * l2 * (np.cos(theta2) + 2 * c1 * c12) + l2 * l2 * (1 + 2 * c12 * c12)
    gxy = -l1 * l2 * np.sin(2 * theta1 + theta2) - l2 * l2 * np.sin(2 * theta1 + 2 * theta2)
    return float(gx), float(gy), float(gxy)


def triangle_errors_matrix(l1, l2, theta1, theta2) -> np.ndarray:
    """Same quantities by explicit Jacobian propagation (2x2 covariance).

    Scalar inputs go through :func:`propagate_gamma`. Array inputs are
    broadcast and give shape ``(..., 2, 2)`` from the same Jacobian and
    field, without the per-point validation.
    """
    args = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (l1, l2, theta1, theta2)))
    if args[0].ndim == 0:
        v = np.array([float(a) for a in args])
        return propagate_gamma(TRIANGLE_MAP, TRIANGLE_FIELD.at(v)).gamma
    l1, l2, t1, t2 = args
    c1, s1 = np.cos(t1), np.sin(t1)
    c12, s12 = np.cos(t1 + t2), np.sin(t1 + t2)
    z = np.zeros_like(l1)
    J = np.stack([np.stack([c1, c12, -l1 * s1 - l2 * s12, -l2 * s12], -1),
                  np.stack([s1, s12, l1 * c1 + l2 * c12, l2 * c12], -1)], -2)
    G = np.stack([np.stack([l1 * l1, 0.5 * l1 * l2, z, z], -1),
                  np.stack([0.5 * l1 * l2, l2 * l2, z, z], -1),
                  np.stack([z, z, z + 1.0, z + 0.5], -1),
                  np.stack([z, z, z + 0.5, z + 1.0], -1)], -2)
    return np.einsum("...ki,...ij,...lj->...kl", J, G, J)
