"""Vertical (xi) discretization on a uniform cell-centred grid.

Levels sit at ``xi_k = (k + 1/2) h`` with ``h = 1/K``; interfaces at ``k h``
for ``k = 0..K``. Integrals over [xi, 1] use the midpoint rule with a half
cell at the evaluation level, so the discrete partial integral and its
complement sum exactly to the full-column integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg

from moistpe.core.errors import (
    BoundaryConditionError,
    ColumnDomainError,
    EigenSolverError,
    GridSizingError,
)
from moistpe.numerics import sphere_ops
from moistpe.numerics.sphere_ops import SphereGrid, VectorField

if TYPE_CHECKING:
    from moistpe.schemas.config import ModelParams


@dataclass(frozen=True, eq=False)
class VerticalGrid:
    n_levels: int
    xi_nodes: np.ndarray = field(repr=False)
    int_weights: np.ndarray = field(repr=False)
    spacing: float

    @property
    def interfaces(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_levels + 1)


class BoundaryKind(str, Enum):
    NEUMANN = "neumann-neumann"
    ROBIN = "robin"


@dataclass(frozen=True, eq=False)
class VerticalClosure:
    """Ghost values realizing the boundary conditions of the second-difference stencil.

    Bottom (xi = 0) is always Neumann. At the top (xi = 1) the ghost is
    ``ratio * f[K-1]`` with ``ratio = (1 - a h/2) / (1 + a h/2)``, which makes the
    stencil flux equal ``-alpha`` times the ghost-level average. The reported
    ``top_flux`` is ``-alpha`` times the second-order surface value, so it is
    accurate to O(h^2) for any smooth profile.
    """

    kind: BoundaryKind
    alpha: float
    ratio: float
    spacing: float
    bottom_ghost: np.ndarray
    top_value: np.ndarray
    top_below: np.ndarray
    top_ghost: np.ndarray

    @property
    def top_trace(self) -> np.ndarray:
        return 1.5 * self.top_value - 0.5 * self.top_below

    @property
    def top_flux(self) -> np.ndarray:
        return -self.alpha * self.top_trace

    @property
    def stencil_flux(self) -> np.ndarray:
        return (self.top_ghost - self.top_value) / self.spacing


def make_vertical_grid(K: int) -> VerticalGrid:
    if K < 2:
        raise GridSizingError(f"need at least 2 vertical levels, got K={K}", K=K)
    h = 1.0 / K
    return VerticalGrid(
        n_levels=K,
        xi_nodes=(np.arange(K) + 0.5) * h,
        int_weights=np.full(K, h),
        spacing=h,
    )


def pressure_of_xi(xi: float | np.ndarray, P: float, p0: float) -> float | np.ndarray:
    """``p = (P - p0) xi + p0``."""
    if not 0.0 < p0 <= P:
        raise ColumnDomainError(f"require 0 < p0 <= P, got p0={p0}, P={P}", P=P, p0=p0)
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0.0) or np.any(xi_arr > 1.0):
        raise ColumnDomainError(
            "xi outside [0, 1]", xi_min=float(xi_arr.min()), xi_max=float(xi_arr.max())
        )
    p = (P - p0) * xi_arr + p0
    return float(p) if p.ndim == 0 else p


def robin_ratio(alpha: float, h: float) -> float:
    if alpha < 0.0:
        raise BoundaryConditionError(
            f"Robin coefficient must be non-negative, got {alpha}", alpha=alpha
        )
    return (1.0 - 0.5 * alpha * h) / (1.0 + 0.5 * alpha * h)


def apply_vertical_bc(
    f: np.ndarray,
    grid: VerticalGrid,
    kind: BoundaryKind | str = BoundaryKind.NEUMANN,
    alpha: float = 0.0,
) -> VerticalClosure:
    kind = BoundaryKind(kind)
    ratio = robin_ratio(alpha, grid.spacing) if kind is BoundaryKind.ROBIN else 1.0
    if kind is BoundaryKind.NEUMANN:
        alpha = 0.0
    top = f[..., -1]
    return VerticalClosure(
        kind=kind,
        alpha=alpha,
        ratio=ratio,
        spacing=grid.spacing,
        bottom_ghost=f[..., 0].copy(),
        top_value=top.copy(),
        top_below=f[..., -2].copy(),
        top_ghost=ratio * top,
    )


def second_derivative(f: np.ndarray, grid: VerticalGrid, closure: VerticalClosure) -> np.ndarray:
    """Discrete d^2/dxi^2 with ghost-value closure, along the last axis."""
    ext = np.concatenate(
        [closure.bottom_ghost[..., None], f, closure.top_ghost[..., None]], axis=-1
    )
    return (ext[..., 2:] - 2.0 * ext[..., 1:-1] + ext[..., :-2]) / grid.spacing**2


def second_difference_matrix(grid: VerticalGrid, alpha: float | None = None) -> np.ndarray:
    """Symmetric matrix of the closed stencil; ``alpha=None`` means Neumann at both ends."""
    K, h = grid.n_levels, grid.spacing
    ratio = 1.0 if alpha is None else robin_ratio(alpha, h)
    D = np.diag(np.full(K, -2.0)) + np.diag(np.ones(K - 1), 1) + np.diag(np.ones(K - 1), -1)
    D[0, 0] = -1.0
    D[-1, -1] = -2.0 + ratio
    return D / h**2


def vertical_eigenpairs(
    grid: VerticalGrid, alpha: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of ``-d^2/dxi^2`` with closure, orthonormal under the level weights.

    Returns ``(sigma, V)`` with ascending ``sigma`` and ``V.T @ diag(w) @ V = I``.
    For the Neumann-Neumann closure the first pair is exactly ``(0, 1)``.
    """
    W = np.diag(grid.int_weights)
    A = W @ (-second_difference_matrix(grid, alpha))
    try:
        sigma, V = scipy.linalg.eigh(A, W)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise EigenSolverError(f"vertical eigenproblem failed: {e}", alpha=alpha) from e
    if alpha is None:
        sigma[0] = 0.0
        V[:, 0] = 1.0
    # fix signs so the top-level entry of every mode is non-negative
    signs = np.where(V[-1, :] < 0.0, -1.0, 1.0)
    return sigma, V * signs


def dirichlet_form(f: np.ndarray, grid: VerticalGrid, alpha: float | None = None) -> np.ndarray:
    """``-sum_k h f_k (D2 f)_k`` per column: interior jumps plus the Robin boundary term."""
    h = grid.spacing
    jumps = np.sum(np.diff(f, axis=-1) ** 2, axis=-1) / h
    if alpha is None:
        return jumps
    ratio = robin_ratio(alpha, h)
    return jumps + (1.0 - ratio) / h * f[..., -1] ** 2


def vertical_gradient_sq(f: np.ndarray, grid: VerticalGrid) -> np.ndarray:
    """``integral (d_xi f)^2`` from differences between adjacent levels."""
    return np.sum(np.diff(f, axis=-1) ** 2, axis=-1) / grid.spacing


def surface_trace(f: np.ndarray) -> np.ndarray:
    """Second-order extrapolation of level values to xi = 1."""
    return 1.5 * f[..., -1] - 0.5 * f[..., -2]


def vertical_mean(f: np.ndarray, grid: VerticalGrid) -> np.ndarray:
    return np.tensordot(f, grid.int_weights, axes=([-1], [0]))


def interface_integral(f: np.ndarray, grid: VerticalGrid) -> np.ndarray:
    """``integral_{xi_i}^1 f`` at the K+1 interfaces; the value at xi = 1 is exactly zero."""
    tail = np.cumsum(f[..., ::-1], axis=-1)[..., ::-1] * grid.spacing
    return np.concatenate([tail, np.zeros(f.shape[:-1] + (1,))], axis=-1)


def partial_vertical_integral(f: np.ndarray, grid: VerticalGrid) -> np.ndarray:
    """``integral_{xi_k}^1 f`` at every level (half cell at the level itself)."""
    return interface_integral(f, grid)[..., :-1] - 0.5 * grid.spacing * f


def vertical_mean_and_fluct(v: VectorField, grid: VerticalGrid) -> tuple[VectorField, VectorField]:
    mean = VectorField(vertical_mean(v.theta, grid), vertical_mean(v.phi, grid))
    fluct = VectorField(v.theta - mean.theta[..., None], v.phi - mean.phi[..., None])
    return mean, fluct


def diagnose_w(v: VectorField, sphere: SphereGrid, grid: VerticalGrid) -> np.ndarray:
    """Vertical velocity ``w = integral_xi^1 div v`` on the K+1 interfaces."""
    return interface_integral(sphere_ops.div(sphere, v), grid)


def w_at_levels(w_interfaces: np.ndarray) -> np.ndarray:
    return 0.5 * (w_interfaces[..., :-1] + w_interfaces[..., 1:])


def vertical_advection(w_interfaces: np.ndarray, f: np.ndarray, grid: VerticalGrid) -> np.ndarray:
    """Energy-conserving ``w d_xi f``: interface velocities times one-sided jumps.

    Summed against ``f`` with the level weights this equals
    ``1/2 sum_k h div_k f_k^2`` whenever ``w`` vanishes at both ends.
    """
    up = np.zeros_like(f)
    down = np.zeros_like(f)
    up[..., :-1] = f[..., 1:] - f[..., :-1]
    down[..., 1:] = f[..., 1:] - f[..., :-1]
    return (w_interfaces[..., 1:] * up + w_interfaces[..., :-1] * down) / (2.0 * grid.spacing)


def buoyancy_weight(grid: VerticalGrid, params: "ModelParams") -> np.ndarray:
    """``b P / p(xi_k)`` at the levels."""
    p = pressure_of_xi(grid.xi_nodes, params.P, params.p0)
    return params.b * params.P / np.asarray(p)


def reconstruct_phi(
    T: np.ndarray,
    q: np.ndarray,
    phi_s: np.ndarray,
    grid: VerticalGrid,
    params: "ModelParams",
    on_interfaces: bool = False,
) -> np.ndarray:
    """Geopotential ``Phi_s + integral_xi^1 (bP/p)(1 + a q) T``."""
    g = buoyancy_weight(grid, params) * (1.0 + params.a * q) * T
    integral = interface_integral(g, grid) if on_interfaces else partial_vertical_integral(g, grid)
    return phi_s[..., None] + integral


def barotropic_residual(v: VectorField, sphere: SphereGrid, grid: VerticalGrid) -> float:
    """``|integral_0^1 div v dxi|_2`` over the sphere."""
    mean, _ = vertical_mean_and_fluct(v, grid)
    d = sphere_ops.div(sphere, mean)
    return float(np.sqrt(max(sphere_ops.inner(sphere, d, d), 0.0)))
