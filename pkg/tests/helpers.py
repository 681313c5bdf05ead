"""Shared test fixtures: random smooth maps with exact derivatives."""
import numpy as np

from dirichlet_errors.error_algebra import ErrorVector, SmoothMap


def random_map(rng, d_in, d_out, m=3):
    """``x -> A tanh(B x + c) + 1/2 x^T Q_k x + D x`` with analytic derivatives."""
    A = rng.normal(size=(d_out, m))
    B = rng.normal(size=(m, d_in)) * 0.7
    c = rng.normal(size=m)
    Q = rng.normal(size=(d_out, d_in, d_in)) * 0.3
    Q = 0.5 * (Q + Q.transpose(0, 2, 1))
    D = rng.normal(size=(d_out, d_in))

    def ev(x):
        return A @ np.tanh(B @ x + c) + 0.5 * np.einsum("i,kij,j->k", x, Q, x) + D @ x

    def jac(x):
        s = 1 - np.tanh(B @ x + c) ** 2
        return (A * s) @ B + np.einsum("kij,j->ki", Q, x) + D

    def hess(x):
        th = np.tanh(B @ x + c)
        s2 = -2 * th * (1 - th ** 2)
        return np.einsum("km,mi,mj->kij", A * s2, B, B) + Q

    return SmoothMap(d_in, d_out, ev, jac, hess)


def random_error_vector(rng, d, with_bias=True):
    L = rng.normal(size=(d, d))
    g = L @ L.T
    return ErrorVector(rng.normal(size=d), g, rng.normal(size=d) if with_bias else None)


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
