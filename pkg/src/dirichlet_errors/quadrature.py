"""Gaussian expectations ``E[g(Y)]``, ``Y ~ N(0, 1)``, by quadrature.

Smooth integrands use Gauss-Hermite nodes. Integrands with kinks are split
at the kink: the truncated line ``[-L, L]`` is cut into graded panels around
each break point and every panel gets Gauss-Legendre nodes.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

DEFAULT_NODES = 64
TRUNCATION = 12.0
_GLOBAL_EDGES = np.array([-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0])
_BREAK_OFFSETS = np.array([-6.0, -3.0, -1.0, -0.2, -0.02, 0.0, 0.02, 0.2, 1.0, 3.0, 6.0])


@lru_cache(maxsize=16)
def hermite_rule(n: int = DEFAULT_NODES):
    """Nodes and weights with ``sum(w * g(y)) ~ E[g(Y)]``."""
    y, w = hermegauss(n)
    return y, w / np.sqrt(2.0 * np.pi)


@lru_cache(maxsize=16)
def _legendre(n: int):
    return leggauss(n)


def panel_nodes(n: int) -> int:
    return max(8, n // 4)


def gaussian_rule(breaks=None, n: int = DEFAULT_NODES, half_width: float = TRUNCATION):
    """Quadrature rule for ``E[g(Y)]``.

    Parameters
    ----------
    breaks : array_like, optional
        Kink locations in the standard-normal variable, shape ``(m, k)`` for
        ``m`` independent integrals (or ``(k,)`` for one). ``None`` selects
        plain Gauss-Hermite.
    n : int
        Hermite node count; piecewise rules use ``n // 4`` (at least 8)
        Legendre nodes per panel.

    Returns
    -------
    nodes, weights : numpy.ndarray
        Shape ``(n,)`` for Gauss-Hermite, ``(m, N)`` (or ``(N,)``) otherwise.
    """
    if breaks is None:
        return hermite_rule(n)
    b = np.asarray(breaks, dtype=float)
    single = b.ndim <= 1
    b = np.atleast_2d(b.reshape(1, -1) if single else b)
    m = b.shape[0]
    L = half_width
    edges = np.concatenate([
        np.full((m, 1), -L), np.full((m, 1), L),
        np.broadcast_to(_GLOBAL_EDGES, (m, _GLOBAL_EDGES.size)),
        (b[:, :, None] + _BREAK_OFFSETS).reshape(m, -1),
    ], axis=1)
    edges = np.sort(np.clip(edges, -L, L), axis=1)
    lo, hi = edges[:, :-1], edges[:, 1:]
    x, w = _legendre(panel_nodes(n))
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    nodes = (mid[:, :, None] + half[:, :, None] * x).reshape(m, -1)
    weights = (half[:, :, None] * w).reshape(m, -1)
    weights = weights * np.exp(-0.5 * nodes * nodes) / np.sqrt(2.0 * np.pi)
    if single:
        return nodes[0], weights[0]
    return nodes, weights


def expectation(g, breaks=None, n: int = DEFAULT_NODES) -> float:
    """``E[g(Y)]`` for a vectorised scalar function ``g``."""
    y, w = gaussian_rule(breaks, n)
    return float(np.sum(w * g(y)))
