"""Covariant calculus on the unit sphere through a Gaussian-grid spectral transform.

Spectral coefficients are complex arrays indexed ``[l, m, ...]`` with
``0 <= m <= l <= L``; negative orders follow from conjugate symmetry of real
fields. Grid fields are real arrays indexed ``[lat, lon, ...]`` with latitudes
ordered by increasing colatitude. Vector fields carry components in the
orthonormal frame (e_theta, e_phi) and are represented spectrally by a
velocity potential ``chi`` and a streamfunction ``psi``::

    v = grad(chi) + e_r x grad(psi)

on which the vector Laplacian is diagonal with eigenvalue ``-l(l+1)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.special

from moistpe.core.errors import GaugeError, GridSizingError
from moistpe.core.observability import get_logger

logger = get_logger("sphere_ops")

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gaussian latitudes times equispaced longitudes, no pole points."""

    truncation_L: int
    n_lat: int
    n_lon: int
    theta_nodes: np.ndarray = field(repr=False)
    lon_nodes: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.truncation_L, self.n_lat, self.n_lon)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @property
    def cos_theta(self) -> np.ndarray:
        return np.cos(self.theta_nodes)

    @property
    def sin_theta(self) -> np.ndarray:
        return np.sin(self.theta_nodes)

    @property
    def alias_free(self) -> bool:
        L = self.truncation_L
        return self.n_lon >= 3 * L + 1 and 2 * self.n_lat >= 3 * L + 1

    def column(self, values: np.ndarray, ndim: int) -> np.ndarray:
        """Reshape a per-latitude array to broadcast against an ``ndim`` grid field."""
        return values.reshape((self.n_lat,) + (1,) * (ndim - 1))


@dataclass(frozen=True, eq=False)
class VectorField:
    """Tangent vector field; components share a shape ``(lat, lon, ...)``."""

    theta: np.ndarray
    phi: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> "VectorField":
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.theta.shape

    def dot(self, other: "VectorField") -> np.ndarray:
        return self.theta * other.theta + self.phi * other.phi

    def norm_sq(self) -> np.ndarray:
        return self.dot(self)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.phi)))

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.theta + other.theta, self.phi + other.phi)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.theta - other.theta, self.phi - other.phi)

    def __neg__(self) -> "VectorField":
        return VectorField(-self.theta, -self.phi)

    def __mul__(self, factor: float | np.ndarray) -> "VectorField":
        return VectorField(self.theta * factor, self.phi * factor)

    __rmul__ = __mul__


def make_grid(L: int, n_lat: int, n_lon: int) -> SphereGrid:
    """Build a Gaussian grid for truncation ``L``.

    Requires ``n_lat >= L+1`` and ``n_lon >= 2L+1``; quadratic products are
    alias-free only when ``n_lon >= 3L+1`` and ``2 n_lat >= 3L+1``.
    """
    if L < 1:
        raise GridSizingError(f"truncation must be at least 1, got L={L}", L=L)
    if n_lat < L + 1 or n_lon < 2 * L + 1:
        raise GridSizingError(
            f"grid {n_lat}x{n_lon} too coarse for L={L} "
            f"(need n_lat >= {L + 1}, n_lon >= {2 * L + 1})",
            L=L,
            n_lat=n_lat,
            n_lon=n_lon,
        )

    x, w = scipy.special.roots_legendre(n_lat)
    # increasing colatitude means decreasing cos(theta)
    x = x[::-1].copy()
    w = w[::-1].copy()
    grid = SphereGrid(
        truncation_L=L,
        n_lat=n_lat,
        n_lon=n_lon,
        theta_nodes=np.arccos(x),
        lon_nodes=2.0 * np.pi * np.arange(n_lon) / n_lon,
        quad_weights=w * (2.0 * np.pi / n_lon),
    )
    if not grid.alias_free:
        logger.warning(
            "Grid is not alias-free for quadratic products",
            L=L,
            n_lat=n_lat,
            n_lon=n_lon,
        )
    return grid


def normalized_legendre(x: np.ndarray, L: int) -> np.ndarray:
    """Orthonormal associated Legendre functions ``P[j, l, m]`` for ``m <= l <= L``.

    Normalized so that ``2 pi * integral P_lm(x)^2 dx = 1`` over [-1, 1]; no
    Condon-Shortley phase.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(1.0 - x**2)
    P = np.zeros((x.size, L + 1, L + 1))
    P[:, 0, 0] = 1.0 / np.sqrt(FOUR_PI)
    for m in range(1, L + 1):
        P[:, m, m] = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * P[:, m - 1, m - 1]
    for m in range(L):
        P[:, m + 1, m] = np.sqrt(2.0 * m + 3.0) * x * P[:, m, m]
    for m in range(L + 1):
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            a_prev = np.sqrt((4.0 * (l - 1) ** 2 - 1.0) / ((l - 1) ** 2 - m * m))
            P[:, l, m] = a * (x * P[:, l - 1, m] - P[:, l - 2, m] / a_prev)
    return P


def _epsilon(l: np.ndarray, m: np.ndarray) -> np.ndarray:
    num = np.clip(l * l - m * m, 0.0, None)
    den = 4.0 * l * l - 1.0
    return np.where((l > 0) & (m <= l), np.sqrt(num / np.where(den > 0, den, 1.0)), 0.0)


class SphereTransform:
    """Analysis and synthesis tables for one grid.

    Tables are read-only once built, so one instance can serve concurrent callers.
    """

    def __init__(self, grid: SphereGrid):
        L = grid.truncation_L
        self.grid = grid
        self.L = L
        x = grid.cos_theta
        s = grid.sin_theta

        full = normalized_legendre(x, L + 1)
        l = np.arange(L + 1, dtype=float)[:, None]
        m = np.arange(L + 1, dtype=float)[None, :]
        self.mask = (m <= l)

        P = full[:, : L + 1, : L + 1]
        P_next = full[:, 1 : L + 2, : L + 1]
        P_prev = np.zeros_like(P)
        P_prev[:, 1:, :] = full[:, :L, : L + 1]
        s3 = s[:, None, None]
        x3 = x[:, None, None]
        # (1 - x^2) dP/dx recurrence, then d/dtheta = -sin(theta) d/dx
        H = (l * _epsilon(l + 1, m) * P_next - (l + 1) * _epsilon(l, m) * P_prev) / s3
        H2 = -(x3 / s3) * H + (m**2 / s3**2 - l * (l + 1)) * P

        self.P = np.where(self.mask, P, 0.0)
        self.H = np.where(self.mask, H, 0.0)
        self.H2 = np.where(self.mask, H2, 0.0)

        qw = grid.quad_weights[:, None, None]
        self.P_w = self.P * qw
        self.H_w = self.H * qw
        self.Ps_w = self.P / s3 * qw

        self.m = np.arange(L + 1)
        self.ell = np.arange(L + 1) * (np.arange(L + 1) + 1.0)
        self.inv_s = 1.0 / s
        self.cot = x / s

    # -- shape plumbing -------------------------------------------------

    @staticmethod
    def _flat_grid(f: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
        rest = f.shape[2:]
        return f.reshape(f.shape[0], f.shape[1], -1), rest

    @staticmethod
    def _flat_coeffs(c: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
        rest = c.shape[2:]
        return c.reshape(c.shape[0], c.shape[1], -1), rest

    def per_degree(self, factor: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Multiply coefficients by a per-degree factor of shape ``(L+1,)``."""
        return c * factor.reshape((-1,) + (1,) * (c.ndim - 1))

    def _im(self, g: np.ndarray) -> np.ndarray:
        return 1j * self.m[None, :, None] * g

    # -- Fourier in longitude ------------------------------------------

    def _fourier(self, f3: np.ndarray) -> np.ndarray:
        return np.fft.rfft(f3, axis=1)[:, : self.L + 1, :]

    def _to_grid(self, g: np.ndarray) -> np.ndarray:
        n_lon = self.grid.n_lon
        G = np.zeros((g.shape[0], n_lon // 2 + 1, g.shape[2]), dtype=complex)
        G[:, : self.L + 1, :] = g * n_lon
        return np.fft.irfft(G, n=n_lon, axis=1)

    def _sum(self, table: np.ndarray, c3: np.ndarray) -> np.ndarray:
        return np.einsum("jlm,lmr->jmr", table, c3)

    def _project(self, table: np.ndarray, F: np.ndarray) -> np.ndarray:
        return np.einsum("jlm,jmr->lmr", table, F)

    # -- scalar transforms ----------------------------------------------

    def analyze(self, f: np.ndarray) -> np.ndarray:
        f3, rest = self._flat_grid(np.asarray(f, dtype=float))
        c = self._project(self.P_w, self._fourier(f3))
        return c.reshape(c.shape[:2] + rest)

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        c3, rest = self._flat_coeffs(c)
        f = self._to_grid(self._sum(self.P, c3))
        return f.reshape(f.shape[:2] + rest)

    def gradient(self, c: np.ndarray) -> VectorField:
        """Grid gradient ``(d_theta h, d_phi h / sin theta)`` from coefficients of h."""
        c3, rest = self._flat_coeffs(c)
        inv_s = self.inv_s[:, None, None]
        g_theta = self._to_grid(self._sum(self.H, c3))
        g_phi = self._to_grid(self._im(self._sum(self.P, c3)) * inv_s)
        shape = (self.grid.n_lat, self.grid.n_lon) + rest
        return VectorField(g_theta.reshape(shape), g_phi.reshape(shape))

    # -- vector transforms ----------------------------------------------

    def analyze_vector(self, v: VectorField) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(chi, psi)`` coefficients by the weak form of div and vorticity."""
        vt, rest = self._flat_grid(np.asarray(v.theta, dtype=float))
        vp, _ = self._flat_grid(np.asarray(v.phi, dtype=float))
        At = self._fourier(vt)
        Ap = self._fourier(vp)
        im = 1j * self.m[None, :, None]
        D = -(self._project(self.H_w, At) - im * self._project(self.Ps_w, Ap))
        Z = -(im * self._project(self.Ps_w, At) + self._project(self.H_w, Ap))
        inv_ell = np.zeros(self.L + 1)
        inv_ell[1:] = 1.0 / self.ell[1:]
        chi = -self.per_degree(inv_ell, D)
        psi = -self.per_degree(inv_ell, Z)
        shape = chi.shape[:2] + rest
        return chi.reshape(shape), psi.reshape(shape)

    def synthesize_vector(self, chi: np.ndarray, psi: np.ndarray) -> VectorField:
        c3, rest = self._flat_coeffs(chi)
        p3, _ = self._flat_coeffs(psi)
        inv_s = self.inv_s[:, None, None]
        Hc, Pc = self._sum(self.H, c3), self._sum(self.P, c3)
        Hp, Pp = self._sum(self.H, p3), self._sum(self.P, p3)
        vt = self._to_grid(Hc - self._im(Pp) * inv_s)
        vp = self._to_grid(self._im(Pc) * inv_s + Hp)
        shape = (self.grid.n_lat, self.grid.n_lon) + rest
        return VectorField(vt.reshape(shape), vp.reshape(shape))

    def vector_partials(self, chi: np.ndarray, psi: np.ndarray) -> dict[str, np.ndarray]:
        """Components and their coordinate partials for ``v = grad chi + e_r x grad psi``.

        Keys: ``ut, up, dth_ut, dph_ut, dth_up, dph_up``.
        """
        c3, rest = self._flat_coeffs(chi)
        p3, _ = self._flat_coeffs(psi)
        inv_s = self.inv_s[:, None, None]
        cot_s = (self.cot * self.inv_s)[:, None, None]
        Hc, Pc, H2c = self._sum(self.H, c3), self._sum(self.P, c3), self._sum(self.H2, c3)
        Hp, Pp, H2p = self._sum(self.H, p3), self._sum(self.P, p3), self._sum(self.H2, p3)

        ut = Hc - self._im(Pp) * inv_s
        up = self._im(Pc) * inv_s + Hp
        dth_ut = H2c - self._im(Hp * inv_s - Pp * cot_s)
        dth_up = self._im(Hc * inv_s - Pc * cot_s) + H2p
        spectral = {
            "ut": ut,
            "up": up,
            "dth_ut": dth_ut,
            "dph_ut": self._im(ut),
            "dth_up": dth_up,
            "dph_up": self._im(up),
        }
        shape = (self.grid.n_lat, self.grid.n_lon) + rest
        return {k: self._to_grid(g).reshape(shape) for k, g in spectral.items()}


@functools.lru_cache(maxsize=16)
def _cached_transform(L: int, n_lat: int, n_lon: int) -> SphereTransform:
    return SphereTransform(make_grid(L, n_lat, n_lon))


def get_transform(grid: SphereGrid) -> SphereTransform:
    """Shared transform tables for ``grid`` (cached per resolution)."""
    return _cached_transform(*grid.key)


# -- operators on grid fields ---------------------------------------------


def sphere_integral(grid: SphereGrid, f: np.ndarray) -> np.ndarray | float:
    """Gaussian quadrature of ``f`` over S^2; trailing axes are kept."""
    result = np.tensordot(grid.quad_weights, np.asarray(f).sum(axis=1), axes=(0, 0))
    return float(result) if np.ndim(result) == 0 else result


def inner(grid: SphereGrid, a: np.ndarray, b: np.ndarray) -> float:
    """L2(S^2) inner product, summed over any trailing axes."""
    return float(np.sum(sphere_integral(grid, a * b)))


def inner_vector(grid: SphereGrid, a: VectorField, b: VectorField) -> float:
    return float(np.sum(sphere_integral(grid, a.dot(b))))


def truncate(grid: SphereGrid, f: np.ndarray) -> np.ndarray:
    """Project a grid field onto degrees ``l <= L``."""
    tr = get_transform(grid)
    return tr.synthesize(tr.analyze(f))


def truncate_vector(grid: SphereGrid, v: VectorField) -> VectorField:
    tr = get_transform(grid)
    return tr.synthesize_vector(*tr.analyze_vector(v))


def spherical_harmonic(
    grid: SphereGrid, l: int, m: int, part: Literal["cos", "sin"] = "cos"
) -> np.ndarray:
    """Real orthonormal harmonic of degree ``l`` and order ``m`` on the grid."""
    if not 0 <= m <= l <= grid.truncation_L:
        raise GridSizingError(f"harmonic ({l}, {m}) outside truncation", l=l, m=m)
    P = normalized_legendre(grid.cos_theta, grid.truncation_L)[:, l, m]
    if m == 0:
        if part == "sin":
            return np.zeros(grid.shape)
        return np.repeat(P[:, None], grid.n_lon, axis=1)
    trig = np.cos if part == "cos" else np.sin
    return np.sqrt(2.0) * P[:, None] * trig(m * grid.lon_nodes)[None, :]


def grad(grid: SphereGrid, h: np.ndarray) -> VectorField:
    tr = get_transform(grid)
    return tr.gradient(tr.analyze(h))


def div(grid: SphereGrid, v: VectorField) -> np.ndarray:
    tr = get_transform(grid)
    chi, _ = tr.analyze_vector(v)
    return tr.synthesize(tr.per_degree(-tr.ell, chi))


def vorticity(grid: SphereGrid, v: VectorField) -> np.ndarray:
    """Radial vorticity ``(1/sin)(d_theta(sin v_phi) - d_phi v_theta)``."""
    tr = get_transform(grid)
    _, psi = tr.analyze_vector(v)
    return tr.synthesize(tr.per_degree(-tr.ell, psi))


def advect_scalar(grid: SphereGrid, v: VectorField, h: np.ndarray) -> np.ndarray:
    """``v_theta d_theta h + (v_phi / sin) d_phi h``, truncated to degree L."""
    tr = get_transform(grid)
    g = tr.gradient(tr.analyze(h))
    return truncate(grid, v.dot(g))


def covariant_partials(grid: SphereGrid, v: VectorField, d: dict[str, np.ndarray]) -> VectorField:
    """Covariant derivative ``nabla_v u`` from the partials of u (see ``vector_partials``)."""
    ndim = v.theta.ndim
    inv_s = grid.column(1.0 / grid.sin_theta, ndim)
    cot = grid.column(grid.cos_theta / grid.sin_theta, ndim)
    vs = v.phi * inv_s
    theta = v.theta * d["dth_ut"] + vs * d["dph_ut"] - v.phi * d["up"] * cot
    phi = v.theta * d["dth_up"] + vs * d["dph_up"] + v.phi * d["ut"] * cot
    return VectorField(theta, phi)


def advect_vector(grid: SphereGrid, v: VectorField, u: VectorField) -> VectorField:
    """``nabla_v u`` with the cot(theta) curvature coupling, truncated to degree L."""
    tr = get_transform(grid)
    d = tr.vector_partials(*tr.analyze_vector(u))
    return truncate_vector(grid, covariant_partials(grid, v, d))


def covariant_gradient(grid: SphereGrid, u: VectorField) -> tuple[VectorField, VectorField]:
    """``(nabla_{e_theta} u, nabla_{e_phi} u)`` on the grid."""
    tr = get_transform(grid)
    d = tr.vector_partials(*tr.analyze_vector(u))
    ndim = u.theta.ndim
    inv_s = grid.column(1.0 / grid.sin_theta, ndim)
    cot = grid.column(grid.cos_theta / grid.sin_theta, ndim)
    along_theta = VectorField(d["dth_ut"], d["dth_up"])
    along_phi = VectorField(
        d["dph_ut"] * inv_s - d["up"] * cot,
        d["dph_up"] * inv_s + d["ut"] * cot,
    )
    return along_theta, along_phi


def lap_scalar(grid: SphereGrid, h: np.ndarray) -> np.ndarray:
    tr = get_transform(grid)
    return tr.synthesize(tr.per_degree(-tr.ell, tr.analyze(h)))


def lap_vector(grid: SphereGrid, v: VectorField) -> VectorField:
    """Hodge Laplacian: ``-l(l+1)`` on both potential and streamfunction."""
    tr = get_transform(grid)
    chi, psi = tr.analyze_vector(v)
    return tr.synthesize_vector(tr.per_degree(-tr.ell, chi), tr.per_degree(-tr.ell, psi))


def poisson_solve(
    grid: SphereGrid, rhs: np.ndarray, tol: float = 1e-10, project: bool = True
) -> np.ndarray:
    """Mean-zero solution of ``lap_scalar(phi) = rhs``.

    A right-hand side whose mean exceeds ``tol`` (relative to its magnitude) is
    projected to zero mean with a warning, or rejected with ``GaugeError`` when
    ``project`` is false.
    """
    tr = get_transform(grid)
    c = tr.analyze(rhs)
    mean = np.abs(c[0, 0]) / np.sqrt(FOUR_PI)
    scale = max(1.0, float(np.max(np.abs(rhs)))) if np.size(rhs) else 1.0
    residual = float(np.max(mean))
    if residual > tol * scale:
        if not project:
            raise GaugeError("Poisson right-hand side has nonzero mean", residual=residual)
        logger.warning("Projected Poisson right-hand side to zero mean", residual=residual)
    inv = np.zeros(tr.L + 1)
    inv[1:] = -1.0 / tr.ell[1:]
    return tr.synthesize(tr.per_degree(inv, c))
