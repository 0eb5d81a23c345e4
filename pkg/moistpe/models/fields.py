"""Value types of the model: grids, prognostic state, forcing and tendency."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from moistpe.numerics import column_ops, sphere_ops
from moistpe.numerics.column_ops import VerticalGrid
from moistpe.numerics.sphere_ops import SphereGrid, VectorField
from moistpe.schemas.config import ResolutionConfig


@dataclass(frozen=True, eq=False)
class Grids:
    sphere: SphereGrid
    vertical: VerticalGrid

    @classmethod
    def from_resolution(cls, resolution: ResolutionConfig) -> "Grids":
        return cls(
            sphere=sphere_ops.make_grid(resolution.L, resolution.n_lat, resolution.n_lon),
            vertical=column_ops.make_vertical_grid(resolution.K),
        )

    @classmethod
    def build(cls, L: int, n_lat: int, n_lon: int, K: int) -> "Grids":
        return cls(sphere_ops.make_grid(L, n_lat, n_lon), column_ops.make_vertical_grid(K))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.sphere.n_lat, self.sphere.n_lon, self.vertical.n_levels)


@dataclass(frozen=True, eq=False)
class State:
    """Prognostic triple U = (v, T, q) on (lat, lon, level) plus model time."""

    v: VectorField
    T: np.ndarray
    q: np.ndarray
    time: float = 0.0

    @classmethod
    def zeros(cls, grids: Grids, time: float = 0.0) -> "State":
        shape = grids.shape
        return cls(VectorField.zeros(shape), np.zeros(shape), np.zeros(shape), time)

    def with_time(self, time: float) -> "State":
        return replace(self, time=time)

    def is_finite(self) -> bool:
        scalars_finite = np.all(np.isfinite(self.T)) and np.all(np.isfinite(self.q))
        return self.v.is_finite() and bool(scalars_finite)

    def __sub__(self, other: "State") -> "State":
        return State(self.v - other.v, self.T - other.T, self.q - other.q, self.time)

    def __add__(self, other: "State") -> "State":
        return State(self.v + other.v, self.T + other.T, self.q + other.q, self.time)

    def scaled(self, factor: float) -> "State":
        return State(self.v * factor, self.T * factor, self.q * factor, self.time)


@dataclass(frozen=True, eq=False)
class Forcing:
    """Time-independent heat and moisture sources."""

    Q1: np.ndarray
    Q2: np.ndarray

    @classmethod
    def zeros(cls, grids: Grids) -> "Forcing":
        return cls(np.zeros(grids.shape), np.zeros(grids.shape))


@dataclass(frozen=True, eq=False)
class Tendency:
    dv: VectorField
    dT: np.ndarray
    dq: np.ndarray
    phi_s: np.ndarray


def forcing_preset(name: str, amplitude: float, grids: Grids) -> Forcing:
    """Smooth forcing presets.

    ``zonal`` heats the equator and cools the poles, strongest near the surface.
    ``wave`` adds a wavenumber-2 heating pattern and a moisture source.
    """
    if name == "none" or amplitude == 0.0:
        return Forcing.zeros(grids)
    sphere = grids.sphere
    ct = sphere.cos_theta[:, None, None]
    st = sphere.sin_theta[:, None, None]
    lon = sphere.lon_nodes[None, :, None]
    xi = grids.vertical.xi_nodes[None, None, :]
    ones = np.ones(grids.shape)

    Q1 = amplitude * 0.5 * (1.0 - 3.0 * ct**2) * (0.5 + xi) * ones
    Q2 = np.zeros(grids.shape)
    if name == "zonal":
        return Forcing(Q1, Q2)
    if name == "wave":
        Q1 = Q1 + amplitude * 2.0 * st**2 * np.cos(2.0 * lon) * xi * (1.0 - xi) * ones
        Q2 = amplitude * 0.25 * (st**2 + ct * st * np.cos(lon)) * (1.0 - 0.5 * xi) * ones
        return Forcing(Q1, Q2)
    raise ValueError(f"unknown forcing preset '{name}'")


def random_state(
    grids: Grids,
    rng: np.random.Generator,
    amplitude: float = 0.1,
    max_degree: int = 5,
    vertical_modes: int = 3,
    time: float = 0.0,
) -> State:
    """Random smooth state whose barotropic velocity is divergence-free.

    Harmonic coefficients up to ``max_degree`` decay like 1/(l+1); vertical
    structure is a sum of the first ``vertical_modes`` cosines.
    """
    tr = sphere_ops.get_transform(grids.sphere)
    L = min(max_degree, grids.sphere.truncation_L)
    n = tr.L + 1
    xi = grids.vertical.xi_nodes
    profiles = np.stack([np.cos(j * np.pi * xi) for j in range(vertical_modes)], axis=0)

    def coeffs(min_degree: int) -> np.ndarray:
        size = (n, n, vertical_modes)
        a = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        a[:, 0, :] = a[:, 0, :].real
        degree = np.arange(n)[:, None, None]
        keep = (degree <= L) & (degree >= min_degree) & tr.mask[:, :, None]
        a = np.where(keep, a / (1.0 + degree), 0.0)
        return np.einsum("lmj,jk->lmk", a, profiles)

    chi = coeffs(1)
    chi = chi - column_ops.vertical_mean(chi, grids.vertical)[..., None]
    psi = coeffs(1)
    v = tr.synthesize_vector(chi, psi) * amplitude
    T = tr.synthesize(coeffs(0)) * amplitude
    q = tr.synthesize(coeffs(0)) * amplitude
    return State(v, T, q, time)
