"""
Radial collocation for the mapped ball.

Three Chebyshev-Lobatto subdomains in rho: [0, 1/4] (folded from the
symmetric interval [-1/4, 1/4] using the parity (-1)^l of each angular
mode), [1/4, 1/2] where the cutoff switches on, and [1/2, 1].
Nodes are stored in ascending order of rho.
"""
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.interpolate import BarycentricInterpolator

logger = logging.getLogger(__name__)

BREAKS = (0.0, 0.25, 0.5, 1.0)


def chebdiff(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev-Lobatto points x_j = cos(j pi / N) and the differentiation matrix."""
    if N == 0:
        return np.array([1.0]), np.zeros((1, 1))
    j = np.arange(N + 1)
    x = np.cos(np.pi * j / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** j
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def _segment(N: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    x, D = chebdiff(N)
    x, D = x[::-1], D[::-1, ::-1]
    return a + (b - a) * (x + 1) / 2, D * 2 / (b - a)


def cutoff(rho) -> tuple[np.ndarray, np.ndarray]:
    """Quintic C^2 smoothstep: 0 below 1/4, 1 above 1/2. Returns (chi, chi')."""
    rho = np.asarray(rho, dtype=float)
    t = np.clip((rho - 0.25) / 0.25, 0.0, 1.0)
    chi = t**3 * (10 - 15 * t + 6 * t**2)
    dchi = 30 * t**2 * (1 - t) ** 2 / 0.25
    return chi, dchi


@dataclass(frozen=True, eq=False)
class RadialGrid:
    n_inner: int
    n_mid: int
    n_outer: int
    rho: np.ndarray
    inner: slice
    mid: slice
    outer: slice
    D_even: np.ndarray
    D_odd: np.ndarray
    D2_even: np.ndarray
    D2_odd: np.ndarray
    D_mid: np.ndarray
    D_outer: np.ndarray
    full_inner: np.ndarray

    @property
    def size(self) -> int:
        return len(self.rho)

    @property
    def boundary(self) -> int:
        return self.size - 1

    def D_inner(self, odd: bool) -> np.ndarray:
        return self.D_odd if odd else self.D_even

    def D2_inner(self, odd: bool) -> np.ndarray:
        return self.D2_odd if odd else self.D2_even

    @cached_property
    def chi(self) -> tuple[np.ndarray, np.ndarray]:
        return cutoff(self.rho)

    def interpolate(self, values: np.ndarray, parity: np.ndarray, rho) -> np.ndarray:
        """Evaluate per-mode radial profiles values (K, Nc) at rho (P,) -> (P, Nc)."""
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        out = np.empty((rho.size, values.shape[1]))
        where_inner = rho <= BREAKS[1]
        where_mid = (rho > BREAKS[1]) & (rho <= BREAKS[2])
        where_outer = rho > BREAKS[2]
        if where_inner.any():
            pos = values[self.inner]
            mirrored = pos[::-1] * parity[None, :]
            both = np.vstack([mirrored, pos])
            out[where_inner] = BarycentricInterpolator(self.full_inner, both)(rho[where_inner])
        if where_mid.any():
            out[where_mid] = BarycentricInterpolator(self.rho[self.mid], values[self.mid])(rho[where_mid])
        if where_outer.any():
            out[where_outer] = BarycentricInterpolator(self.rho[self.outer], values[self.outer])(rho[where_outer])
        return out


@lru_cache(maxsize=16)
def radial_grid(n_inner: int, n_mid: int, n_outer: int) -> RadialGrid:
    """n_inner positive nodes on (0, 1/4]; n_mid + 1 and n_outer + 1 Lobatto nodes on the others."""
    N = 2 * n_inner - 1
    x, D = chebdiff(N)
    x, D = x * BREAKS[1], D / BREAKS[1]
    pos = np.arange(n_inner - 1, -1, -1)
    mirror = N - pos
    D_even = D[np.ix_(pos, pos)] + D[np.ix_(pos, mirror)]
    D_odd = D[np.ix_(pos, pos)] - D[np.ix_(pos, mirror)]
    D2 = D @ D
    D2_even = D2[np.ix_(pos, pos)] + D2[np.ix_(pos, mirror)]
    D2_odd = D2[np.ix_(pos, pos)] - D2[np.ix_(pos, mirror)]
    rho_inner = x[pos]
    full_inner = np.concatenate([-rho_inner[::-1], rho_inner])

    rho_mid, D_mid = _segment(n_mid, BREAKS[1], BREAKS[2])
    rho_outer, D_outer = _segment(n_outer, BREAKS[2], BREAKS[3])
    rho = np.concatenate([rho_inner, rho_mid, rho_outer])
    k0 = n_inner
    k1 = k0 + n_mid + 1
    grid = RadialGrid(
        n_inner=n_inner,
        n_mid=n_mid,
        n_outer=n_outer,
        rho=rho,
        inner=slice(0, k0),
        mid=slice(k0, k1),
        outer=slice(k1, k1 + n_outer + 1),
        D_even=D_even,
        D_odd=D_odd,
        D2_even=D2_even,
        D2_odd=D2_odd,
        D_mid=D_mid,
        D_outer=D_outer,
        full_inner=full_inner,
    )
    logger.debug("radial grid: %d nodes (%d/%d/%d)", grid.size, n_inner, n_mid + 1, n_outer + 1)
    return grid
