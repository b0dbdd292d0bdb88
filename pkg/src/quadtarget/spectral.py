"""Legendre-Gauss nodes, weights and the pseudospectral differentiation matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from quadtarget.errors import ConfigurationError

MAX_NODES = 64


def legendre(n: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Values of ``P_n`` and ``P_n'`` at ``x`` via the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for k in range(1, n):
        p0, p1 = p1, ((2 * k + 1) * x * p1 - k * p0) / (k + 1)
    # P_n' = n (x P_n - P_{n-1}) / (x^2 - 1)
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def barycentric_weights(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    diff = pts[:, None] - pts[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def differentiation_matrix(points) -> np.ndarray:
    """Square matrix differentiating the Lagrange interpolant through ``points``."""
    pts = np.asarray(points, dtype=float)
    w = barycentric_weights(pts)
    diff = pts[:, None] - pts[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def interpolation_row(points, x: float) -> np.ndarray:
    """Row vector ``r`` with ``r @ f(points)`` = Lagrange interpolant at ``x``."""
    pts = np.asarray(points, dtype=float)
    hit = np.isclose(pts, x, rtol=0.0, atol=1e-15)
    if hit.any():
        r = np.zeros_like(pts)
        r[np.argmax(hit)] = 1.0
        return r
    w = barycentric_weights(pts) / (x - pts)
    return w / w.sum()


@dataclass(frozen=True)
class LgGrid:
    """LG collocation grid on [-1, 1].

    ``D`` has shape ``(N, N + 1)``: it maps samples at ``[-1, tau_1..tau_N]``
    to derivatives of their interpolant at ``tau_1..tau_N``.
    """

    N: int
    nodes: np.ndarray
    weights: np.ndarray
    D: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.concatenate([[-1.0], self.nodes])


def lg_nodes(N: int, tol: float = 1e-15, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Roots of ``P_N`` by Newton refinement and the matching Gauss weights."""
    k = np.arange(1, N + 1)
    # Chebyshev-like initial guess, descending order
    x = np.cos(np.pi * (k - 0.25) / (N + 0.5))
    for _ in range(max_iter):
        p, dp = legendre(N, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= tol:
            break
    _, dp = legendre(N, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # enforce the exact symmetry of the rule
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return x, w


def lg_grid(N: int) -> LgGrid:
    if not isinstance(N, (int, np.integer)) or not 1 <= N <= MAX_NODES:
        raise ConfigurationError(f"node count must be an integer in [1, {MAX_NODES}], got {N!r}")
    nodes, weights = lg_nodes(int(N))
    D = differentiation_matrix(np.concatenate([[-1.0], nodes]))[1:, :]
    return LgGrid(int(N), nodes, weights, D)
