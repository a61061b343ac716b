"""Periodic torus grids, sampled functions and spectral calculus.

Everything lives on the torus ``[0, side_length)^dim`` sampled at
``points_per_side`` points per axis.  Derivatives are Fourier multipliers,
so ``divergence`` is exactly minus the adjoint of ``gradient`` for the
cell-volume weighted inner product.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .exceptions import GridMismatch

__all__ = [
    "Grid",
    "GridFunction",
    "VectorField",
    "Box",
    "make_torus_grid",
    "gradient",
    "divergence",
    "laplacian",
    "l2_norm",
    "inner",
]


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    dim: int
    points_per_side: int
    side_length: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not _is_power_of_two(int(self.points_per_side)) or self.points_per_side < 4:
            raise ValueError(
                f"points_per_side must be a power of 2 >= 4, got {self.points_per_side}"
            )
        if not self.side_length > 0:
            raise ValueError("side_length must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_side,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_side**self.dim

    @property
    def spacing(self) -> float:
        return self.side_length / self.points_per_side

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.side_length**self.dim

    @property
    def levels(self) -> int:
        """Number of dyadic refinements from the torus down to one cell."""
        return int(self.points_per_side).bit_length() - 1

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Point coordinates, shape ``(dim, size)``."""
        axis = np.arange(self.points_per_side) * self.spacing
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh])

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers in FFT order, shape ``(dim, size)``."""
        k = 2 * np.pi * np.fft.fftfreq(self.points_per_side, d=self.spacing)
        mesh = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh])

    @cached_property
    def mode_indices(self) -> np.ndarray:
        """Integer Fourier indices in FFT order, shape ``(dim, size)``."""
        k = np.rint(np.fft.fftfreq(self.points_per_side) * self.points_per_side).astype(int)
        mesh = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh])

    @cached_property
    def wavenumber_squared(self) -> np.ndarray:
        return np.sum(self.wavenumbers**2, axis=0)

    def fft(self, values: np.ndarray) -> np.ndarray:
        """Unitary DFT of flat values; extra trailing axes are batched."""
        values = np.asarray(values)
        batch = values.shape[1:]
        arr = values.reshape(self.shape + batch)
        out = np.fft.fftn(arr, axes=tuple(range(self.dim)), norm="ortho")
        return out.reshape((self.size,) + batch)

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs)
        batch = coeffs.shape[1:]
        arr = coeffs.reshape(self.shape + batch)
        out = np.fft.ifftn(arr, axes=tuple(range(self.dim)), norm="ortho")
        return out.reshape((self.size,) + batch)

    def multiplier_apply(self, multiplier: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Apply a Fourier multiplier (given in FFT order) to flat values."""
        coeffs = self.fft(values)
        m = np.asarray(multiplier).reshape((self.size,) + (1,) * (coeffs.ndim - 1))
        return self.ifft(m * coeffs)

    def torus_offsets(self, origin_index: int = 0) -> np.ndarray:
        """Minimal-image displacement of every point from a given point, ``(dim, size)``."""
        d = self.coordinates - self.coordinates[:, [origin_index]]
        return d - self.side_length * np.round(d / self.side_length)

    def flat_index(self, multi_index) -> int:
        return int(np.ravel_multi_index(tuple(int(i) % self.points_per_side for i in multi_index), self.shape))


def make_torus_grid(dim: int, points_per_side: int, side_length: float) -> Grid:
    return Grid(int(dim), int(points_per_side), float(side_length))


@lru_cache(maxsize=16)
def dft_matrix(grid: Grid) -> np.ndarray:
    """Unitary matrix ``W`` with ``W @ u == grid.fft(u)``."""
    return grid.fft(np.eye(grid.size, dtype=complex))


@lru_cache(maxsize=16)
def gradient_matrices(grid: Grid) -> np.ndarray:
    """Dense spectral partial-derivative matrices, shape ``(dim, size, size)``."""
    W = dft_matrix(grid)
    out = np.empty((grid.dim, grid.size, grid.size), dtype=complex)
    for j in range(grid.dim):
        out[j] = W.conj().T @ ((1j * grid.wavenumbers[j])[:, None] * W)
    return out


def _as_complex_flat(values, grid: Grid) -> np.ndarray:
    arr = np.asarray(values, dtype=complex)
    if arr.size != grid.size:
        raise ValueError(f"expected {grid.size} values, got {arr.size}")
    return arr.reshape(grid.size)


class GridFunction:
    """Complex samples of a function on a torus grid (stored flat, C order)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        self.grid = grid
        vals = _as_complex_flat(values, grid)
        vals.setflags(write=False)
        self.values = vals

    @classmethod
    def from_callable(cls, grid: Grid, func) -> "GridFunction":
        return cls(grid, func(*grid.coordinates))

    @classmethod
    def constant(cls, grid: Grid, value: complex = 1.0) -> "GridFunction":
        return cls(grid, np.full(grid.size, value, dtype=complex))

    @classmethod
    def fourier_mode(cls, grid: Grid, mode) -> "GridFunction":
        mode = np.atleast_1d(mode)
        phase = sum(2 * np.pi * mode[j] * grid.coordinates[j] / grid.side_length for j in range(grid.dim))
        return cls(grid, np.exp(1j * phase))

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def _check(self, other: "GridFunction"):
        if other.grid != self.grid:
            raise GridMismatch("grid functions live on different grids")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - other)

    def __mul__(self, scalar):
        return GridFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __repr__(self):
        return f"GridFunction(grid={self.grid!r}, norm={l2_norm(self):.6g})"


class VectorField:
    """``dim`` complex components on a shared grid, stored as ``(dim, size)``."""

    __slots__ = ("grid", "components")

    def __init__(self, grid: Grid, components):
        comps = np.asarray(components, dtype=complex).reshape(grid.dim, grid.size)
        comps.setflags(write=False)
        self.grid = grid
        self.components = comps

    @classmethod
    def constant(cls, grid: Grid, vector) -> "VectorField":
        vec = np.asarray(vector, dtype=complex).reshape(grid.dim, 1)
        return cls(grid, np.broadcast_to(vec, (grid.dim, grid.size)).copy())

    def component(self, j: int) -> GridFunction:
        return GridFunction(self.grid, self.components[j])

    def __add__(self, other: "VectorField"):
        if other.grid != self.grid:
            raise GridMismatch("vector fields live on different grids")
        return VectorField(self.grid, self.components + other.components)

    def __sub__(self, other: "VectorField"):
        if other.grid != self.grid:
            raise GridMismatch("vector fields live on different grids")
        return VectorField(self.grid, self.components - other.components)

    def __mul__(self, scalar):
        return VectorField(self.grid, self.components * scalar)

    __rmul__ = __mul__


def gradient_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Spectral gradient of flat values; returns ``(dim, size, *batch)``."""
    coeffs = grid.fft(values)
    extra = (1,) * (coeffs.ndim - 1)
    return np.stack(
        [grid.ifft((1j * grid.wavenumbers[j]).reshape((grid.size,) + extra) * coeffs) for j in range(grid.dim)]
    )


def divergence_values(grid: Grid, components: np.ndarray) -> np.ndarray:
    extra = (1,) * (components.ndim - 2)
    total = 0
    for j in range(grid.dim):
        total = total + (1j * grid.wavenumbers[j]).reshape((grid.size,) + extra) * grid.fft(components[j])
    return grid.ifft(total)


def gradient(u: GridFunction) -> VectorField:
    return VectorField(u.grid, gradient_values(u.grid, u.values))


def divergence(F: VectorField) -> GridFunction:
    return GridFunction(F.grid, divergence_values(F.grid, F.components))


def laplacian(u: GridFunction) -> GridFunction:
    return GridFunction(u.grid, u.grid.multiplier_apply(-u.grid.wavenumber_squared, u.values))


def inner(u, v) -> complex:
    """Cell-volume weighted ``<u, v>``, linear in ``u`` and antilinear in ``v``."""
    if u.grid != v.grid:
        raise GridMismatch("inner product of objects on different grids")
    a = u.values if isinstance(u, GridFunction) else u.components
    b = v.values if isinstance(v, GridFunction) else v.components
    return complex(np.vdot(b, a) * u.grid.cell_volume)


def l2_norm(u) -> float:
    a = u.values if isinstance(u, GridFunction) else u.components
    return float(np.sqrt(np.sum(np.abs(a) ** 2) * u.grid.cell_volume))


@dataclass(frozen=True)
class Box:
    """Grid-aligned box of cells ``start .. start+size-1`` per axis (torus-wrapped).

    Each grid point owns the closed cell to its upper right, so two boxes
    whose index ranges touch are at distance zero.
    """

    start: tuple
    size: tuple

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(int(s) for s in self.start))
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))
        if len(self.start) != len(self.size) or any(s < 1 for s in self.size):
            raise ValueError("box start/size must have matching length and positive sizes")

    @classmethod
    def cube(cls, start, side_cells: int, dim: int) -> "Box":
        start = np.broadcast_to(np.atleast_1d(start), (dim,))
        return cls(tuple(start), (side_cells,) * dim)

    def axis_indices(self, grid: Grid, axis: int) -> np.ndarray:
        return (self.start[axis] + np.arange(self.size[axis])) % grid.points_per_side

    def mask(self, grid: Grid) -> np.ndarray:
        if len(self.start) != grid.dim:
            raise ValueError("box dimension does not match grid")
        m = np.zeros(grid.shape, dtype=bool)
        m[np.ix_(*[self.axis_indices(grid, a) for a in range(grid.dim)])] = True
        return m.ravel()

    def indices(self, grid: Grid) -> np.ndarray:
        return np.flatnonzero(self.mask(grid))

    def side(self, grid: Grid) -> float:
        return max(self.size) * grid.spacing

    def volume(self, grid: Grid) -> float:
        return float(np.prod(self.size)) * grid.cell_volume

    def distance(self, other: "Box", grid: Grid) -> float:
        """Torus distance between the closed cell unions; ``ValueError`` if they overlap."""
        n = grid.points_per_side
        gaps = []
        for a in range(grid.dim):
            I = self.axis_indices(grid, a)
            J = other.axis_indices(grid, a)
            diff = np.abs(I[:, None] - J[None, :])
            cyc = np.minimum(diff, n - diff).min()
            gaps.append(0 if cyc == 0 else (cyc - 1))
        if all(g == 0 for g in gaps) and np.any(self.mask(grid) & other.mask(grid)):
            raise ValueError("regions overlap")
        return float(np.sqrt(np.sum(np.square(gaps)))) * grid.spacing
