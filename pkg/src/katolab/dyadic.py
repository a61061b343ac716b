"""Dyadic cubes on the torus, Carleson measures on Whitney layers, stopping times.

A cube at level ``k`` has side ``side_length / 2**k``; level 0 is the whole
torus and level ``grid.levels`` is a single cell.  The half-space above the
torus is cut into one Whitney layer per level, ``t in (l_k/2, l_k]``; the
finest layer is extended down to ``t -> 0`` so that every Carleson window
``R_Q = Q x (0, l(Q)]`` is an exact union of Whitney rectangles.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

from ._validation import as_grid_function, check_open_unit, check_positive
from .exceptions import ContractViolation, KatoLabError, RootStopped
from .grid import Box, Grid, GridFunction

__all__ = [
    "DyadicCube",
    "DyadicTree",
    "CarlesonMeasure",
    "StoppingTimeResult",
    "build_tree",
    "whitney_level",
    "layer_quadrature",
    "level_averages",
    "level_broadcast",
    "dyadic_average",
    "s_t_apply",
    "carleson_norm",
    "carleson_embedding_check",
    "stopping_time",
    "stopping_time_reference",
    "select_maximal",
    "stopping_region_mask",
    "coverage_eta",
    "black_hole_bound",
    "nested_measure",
]


@dataclass(frozen=True)
class DyadicCube:
    grid: Grid = field(repr=False)
    level: int
    index: tuple

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(i) for i in np.atleast_1d(self.index)))
        if not 0 <= self.level <= self.grid.levels:
            raise ValueError(f"level {self.level} outside [0, {self.grid.levels}]")
        if len(self.index) != self.grid.dim or any(not 0 <= i < 2**self.level for i in self.index):
            raise ValueError(f"bad cube index {self.index} at level {self.level}")

    @classmethod
    def root(cls, grid: Grid) -> "DyadicCube":
        return cls(grid, 0, (0,) * grid.dim)

    @property
    def cells(self) -> int:
        """Grid cells per side."""
        return self.grid.points_per_side >> self.level

    @property
    def side(self) -> float:
        return self.grid.side_length / 2**self.level

    @property
    def volume(self) -> float:
        return self.side**self.grid.dim

    @property
    def start(self) -> tuple:
        return tuple(i * self.cells for i in self.index)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.start) + self.cells / 2) * self.grid.spacing

    @property
    def box(self) -> Box:
        return Box(self.start, (self.cells,) * self.grid.dim)

    def dilate(self, factor: int = 3) -> Box:
        """Torus-wrapped concentric dilate, e.g. ``3Q``; needs ``factor * l(Q) <= side_length``."""
        if factor % 2 != 1:
            raise ValueError("dilation factor must be odd to stay grid-aligned")
        if factor * self.cells > self.grid.points_per_side:
            raise ValueError(f"{factor}Q does not fit on the torus at level {self.level}")
        shift = (factor - 1) // 2 * self.cells
        return Box(tuple(s - shift for s in self.start), (factor * self.cells,) * self.grid.dim)

    def mask(self) -> np.ndarray:
        return self.box.mask(self.grid)

    def indices(self) -> np.ndarray:
        return self.box.indices(self.grid)

    def children(self) -> list["DyadicCube"]:
        if self.level == self.grid.levels:
            return []
        offsets = np.stack(np.meshgrid(*([[0, 1]] * self.grid.dim), indexing="ij"), -1).reshape(-1, self.grid.dim)
        return [DyadicCube(self.grid, self.level + 1, tuple(2 * np.asarray(self.index) + o)) for o in offsets]

    def parent(self) -> "DyadicCube | None":
        if self.level == 0:
            return None
        return DyadicCube(self.grid, self.level - 1, tuple(i // 2 for i in self.index))

    def contains(self, other: "DyadicCube") -> bool:
        if other.level < self.level:
            return False
        shift = other.level - self.level
        return all(o >> shift == s for o, s in zip(other.index, self.index))

    def descendant_slice(self, level: int) -> tuple:
        """Slice of the level-``level`` cube array covering this cube."""
        r = 2 ** (level - self.level)
        return tuple(slice(i * r, (i + 1) * r) for i in self.index)


class DyadicTree:
    """All dyadic cubes of a grid, level 0 (torus) down to single cells."""

    def __init__(self, grid: Grid):
        self.grid = grid

    @property
    def levels(self) -> int:
        return self.grid.levels + 1

    @property
    def root(self) -> DyadicCube:
        return DyadicCube.root(self.grid)

    def cubes(self, level: int) -> list[DyadicCube]:
        n = 2**level
        idx = np.stack(np.meshgrid(*([np.arange(n)] * self.grid.dim), indexing="ij"), -1).reshape(-1, self.grid.dim)
        return [DyadicCube(self.grid, level, tuple(i)) for i in idx]

    def __iter__(self) -> Iterator[DyadicCube]:
        for k in range(self.levels):
            yield from self.cubes(k)

    def __len__(self) -> int:
        return sum(2 ** (k * self.grid.dim) for k in range(self.levels))


def build_tree(grid: Grid) -> DyadicTree:
    return DyadicTree(grid)


def whitney_level(grid: Grid, t: float, extend: bool = False) -> int:
    """Level ``k`` with ``t in (l_k/2, l_k]``.

    Out of range ``t`` raise unless ``extend``: then ``t <= h/2`` maps to
    the finest level and ``t > side_length`` to the root.
    """
    t = check_positive(t, "t")
    k = int(np.floor(np.log2(grid.side_length / t) + 1e-12))
    if 0 <= k <= grid.levels:
        return k
    if not extend:
        raise ValueError(f"t={t} outside the Whitney range ({grid.spacing / 2}, {grid.side_length}]")
    return min(max(k, 0), grid.levels)


def layer_quadrature(grid: Grid, t_min: float, t_max: float, nodes: int = 4):
    """Gauss-Legendre nodes in ``log t`` on octaves ``(side 2^{j-1}, side 2^j]``.

    The octave boundaries coincide with the Whitney layer boundaries, so
    integrands that jump between layers (anything involving ``S_t``) are
    integrated without error from the jumps.  Returns ``(t, weights)`` with
    ``sum(w * g(t)) ~ int g(t) dt/t`` over the octaves covering ``[t_min, t_max]``.
    """
    lo = int(np.floor(np.log2(t_min / grid.side_length)))
    hi = int(np.ceil(np.log2(t_max / grid.side_length)))
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * np.log(2.0)
    ts, ws = [], []
    for j in range(lo, hi):
        centre = np.log(grid.side_length) + (j + 0.5) * np.log(2.0)
        ts.append(np.exp(centre + half * x))
        ws.append(half * w)
    return np.concatenate(ts), np.concatenate(ws)


def _blocked(grid: Grid, values: np.ndarray, level: int) -> np.ndarray:
    n, c = 2**level, grid.points_per_side >> level
    batch = values.shape[1:]
    shape = sum(((n, c) for _ in range(grid.dim)), ()) + batch
    return values.reshape(shape)


def level_averages(grid: Grid, values: np.ndarray, level: int) -> np.ndarray:
    """Mean over every level-``level`` cube: shape ``(2**level,)*dim + batch``."""
    blocks = _blocked(grid, np.asarray(values), level)
    return blocks.mean(axis=tuple(2 * a + 1 for a in range(grid.dim)))


def level_broadcast(grid: Grid, cube_values: np.ndarray, level: int) -> np.ndarray:
    """Inverse of :func:`level_averages`: piecewise-constant flat values."""
    c = grid.points_per_side >> level
    out = np.asarray(cube_values)
    for a in range(grid.dim):
        out = np.repeat(out, c, axis=a)
    return out.reshape((grid.size,) + out.shape[grid.dim:])


def dyadic_average(f, Q: DyadicCube) -> complex:
    f = as_grid_function(f, Q.grid)
    return complex(np.mean(f.values[Q.indices()]))


def _s_t_values(grid: Grid, values: np.ndarray, t: float, extend: bool) -> np.ndarray:
    k = whitney_level(grid, t, extend)
    return level_broadcast(grid, level_averages(grid, values, k), k)


def s_t_apply(f, t: float, extend: bool = False) -> GridFunction:
    """Dyadic averaging ``S_t``: mean over the cube ``Q`` with ``l(Q)/2 < t <= l(Q)``."""
    f = as_grid_function(f, f.grid)
    return GridFunction(f.grid, _s_t_values(f.grid, f.values, t, extend))


class CarlesonMeasure:
    """Nonnegative atoms ``mass[k, x]`` on Whitney layer ``k`` above cell ``x``.

    ``mass[k, x]`` is the measure of ``cell(x) x layer_k``; the layer of the
    finest level also carries everything below it in ``t``.
    """

    def __init__(self, grid: Grid, mass):
        mass = np.array(mass, dtype=float)
        if mass.shape != (grid.levels + 1, grid.size):
            raise ValueError(f"mass must have shape {(grid.levels + 1, grid.size)}")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ValueError("Carleson measure samples must be finite and nonnegative")
        mass.setflags(write=False)
        self.grid = grid
        self.mass = mass

    @classmethod
    def zero(cls, grid: Grid) -> "CarlesonMeasure":
        return cls(grid, np.zeros((grid.levels + 1, grid.size)))

    @classmethod
    def from_density(cls, grid: Grid, ts, weights, density) -> "CarlesonMeasure":
        """Atoms of ``density(t, x) dx dt/t`` from quadrature nodes; nodes above the root layer are dropped."""
        ts = np.asarray(ts, dtype=float)
        density = np.asarray(density, dtype=float)
        mass = np.zeros((grid.levels + 1, grid.size))
        for t, w, row in zip(ts, np.asarray(weights, dtype=float), density):
            if t > grid.side_length * (1 + 1e-12):
                continue
            mass[whitney_level(grid, t, extend=True)] += w * row * grid.cell_volume
        return cls(grid, mass)

    @classmethod
    def from_function(cls, grid: Grid, density_fn: Callable, nodes: int = 4, floor_octaves: int = 12):
        """Atoms of ``density_fn(ts) dx dt/t``; ``density_fn`` maps ``(T,)`` times to ``(T, size)`` values."""
        t_min = grid.spacing * 2.0 ** (-floor_octaves)
        ts, ws = layer_quadrature(grid, t_min, grid.side_length, nodes)
        return cls.from_density(grid, ts, ws, density_fn(ts))

    @property
    def layer_times(self) -> np.ndarray:
        """Representative ``t`` per layer (geometric midpoint)."""
        return self.grid.side_length * 2.0 ** (-np.arange(self.grid.levels + 1)) / np.sqrt(2)

    @cached_property
    def _cumulative(self) -> np.ndarray:
        # cum[k, x] = mass in layers k..finest above x, i.e. t <= l_k
        return np.cumsum(self.mass[::-1], axis=0)[::-1]

    def windows(self, level: int) -> np.ndarray:
        """``mu(R_Q)`` for every cube of the level, shape ``(2**level,)*dim``."""
        return level_averages(self.grid, self._cumulative[level], level) * (self.grid.points_per_side >> level) ** self.grid.dim

    def window(self, Q: DyadicCube) -> float:
        return float(self.windows(Q.level)[Q.index])

    def restricted_window(self, Q: DyadicCube, mask: np.ndarray) -> float:
        """``mu`` of the atoms of ``R_Q`` selected by a ``(levels+1, size)`` boolean mask."""
        inside = _window_mask(Q)
        return float(np.sum(self.mass[inside & mask]))

    def total(self) -> float:
        return float(self.mass.sum())

    def __add__(self, other: "CarlesonMeasure") -> "CarlesonMeasure":
        return CarlesonMeasure(self.grid, self.mass + other.mass)

    def __mul__(self, scalar: float) -> "CarlesonMeasure":
        return CarlesonMeasure(self.grid, self.mass * float(scalar))

    __rmul__ = __mul__


def _window_mask(Q: DyadicCube) -> np.ndarray:
    """Atoms of ``R_Q``: layers ``>= level(Q)`` above cells of ``Q``."""
    grid = Q.grid
    m = np.zeros((grid.levels + 1, grid.size), dtype=bool)
    m[Q.level:, Q.indices()] = True
    return m


def carleson_norm(mu: CarlesonMeasure, return_cube: bool = False):
    """Exhaustive ``max_Q mu(R_Q) / |Q|`` over all dyadic cubes."""
    grid = mu.grid
    best, arg = -1.0, None
    for k in range(grid.levels + 1):
        ratio = mu.windows(k) / (grid.side_length / 2**k) ** grid.dim
        i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        if ratio[i] > best:
            best, arg = float(ratio[i]), DyadicCube(grid, k, i)
    return (best, arg) if return_cube else best


def carleson_embedding_check(mu: CarlesonMeasure, f) -> float:
    """``int |P_t f|^2 dmu / (||mu||_c ||f||^2)`` with ``P_t`` at the layer times."""
    from .squarefn import _mollifier_multiplier

    grid = mu.grid
    f = as_grid_function(f, grid)
    total = 0.0
    for k, t in enumerate(mu.layer_times):
        if not mu.mass[k].any():
            continue
        ptf = grid.multiplier_apply(_mollifier_multiplier(grid, float(t)), f.values)
        total += float(np.sum(np.abs(ptf) ** 2 * mu.mass[k]))
    norm = carleson_norm(mu)
    if norm == 0.0:
        if total > 0.0:
            raise KatoLabError("zero Carleson norm with a nonzero embedding integral")
        return 0.0
    f2 = float(np.sum(np.abs(f.values) ** 2) * grid.cell_volume)
    if f2 == 0.0:
        return 0.0
    return total / (norm * f2)


@dataclass
class StoppingTimeResult:
    root: DyadicCube
    bad_cubes: list
    good_mask: np.ndarray
    coverage_fraction: float
    eta: float | None = None
    info: dict = field(default_factory=dict)

    def whitney_mask(self, level: int) -> np.ndarray:
        """Good flags of the level's Whitney rectangles inside the root, cube-shaped."""
        grid = self.root.grid
        avg = level_averages(grid, self.good_mask[level].astype(float), level)
        return avg[self.root.descendant_slice(level)] > 0.5

    @property
    def bad_window_mask(self) -> np.ndarray:
        grid = self.root.grid
        m = np.zeros((grid.levels + 1, grid.size), dtype=bool)
        for Q in self.bad_cubes:
            m |= _window_mask(Q)
        return m


def select_maximal(root: DyadicCube, stop_masks: Sequence[np.ndarray]) -> list[DyadicCube]:
    """Maximal strict subcubes of ``root`` whose ``stop_masks[level][index]`` is set.

    Worklist traversal with fixed child order; ``stop_masks[k]`` is a boolean
    array of shape ``(2**k,)*dim`` for every level ``k``.
    """
    bad = []
    work = list(reversed(root.children()))
    while work:
        Q = work.pop()
        if stop_masks[Q.level][Q.index]:
            bad.append(Q)
        else:
            work.extend(reversed(Q.children()))
    return bad


def _good_mask(root: DyadicCube, bad: list) -> np.ndarray:
    m = _window_mask(root)
    for Q in bad:
        m &= ~_window_mask(Q)
    return m


def coverage_eta(delta: float, C: float, variant: str = "mean") -> float:
    """``eta`` with ``sum |Q_i| <= (1 - eta)|Q|`` for the single-condition stopping time.

    ``variant="mean"``: ``C = |Q|^{-1} int_Q |b|^2`` and ``eta = (1 - delta)^2 / C``,
    from Cauchy-Schwarz applied to ``b`` on the complement of the bad cubes.
    ``variant="deviation"``: ``C = |Q|^{-1} int_Q |1 - b|^2``, from
    ``(1 - delta) x <= sqrt(C (1 - x))`` solved for the covered fraction ``x``.
    Both assume ``int_Q b = |Q|``.
    """
    delta = check_open_unit(delta, "delta")
    if variant == "mean":
        C = check_positive(C, "C")
        return min(1.0, (1 - delta) ** 2 / C)
    if variant == "deviation":
        if C <= 0:
            return 1.0
        a = (1 - delta) ** 2
        x = (-C + np.sqrt(C * C + 4 * a * C)) / (2 * a)
        return float(1 - x)
    raise ValueError(f"unknown variant {variant!r}")


def stopping_time(b, Q: DyadicCube, delta: float, normalize: bool = False) -> StoppingTimeResult:
    """Select the maximal dyadic ``Q' < Q`` with ``Re avg_{Q'} b <= delta``.

    With ``normalize`` the function is divided by its average over ``Q`` first,
    so that ``int_Q b = |Q|``.  The returned ``eta`` is the ``"mean"`` variant
    of :func:`coverage_eta` and is only meaningful for normalized input.
    """
    grid = Q.grid
    delta = check_open_unit(delta, "delta")
    b = as_grid_function(b, grid)
    values = b.values
    avg = np.mean(values[Q.indices()])
    if normalize:
        if avg == 0:
            raise RootStopped("b has zero average on the root cube")
        values = values / avg
        avg = 1.0 + 0j
    if avg.real <= delta:
        raise RootStopped(f"root average {avg.real:.4g} <= delta={delta}")
    stop = [level_averages(grid, values, k).real <= delta for k in range(grid.levels + 1)]
    bad = select_maximal(Q, stop)
    coverage = sum(c.volume for c in bad) / Q.volume
    C = float(np.mean(np.abs(values[Q.indices()]) ** 2))
    eta = coverage_eta(delta, C) if abs(avg - 1) < 1e-12 else None
    result = StoppingTimeResult(Q, bad, _good_mask(Q, bad), float(coverage), eta)
    result.info.update(delta=delta, mean_square=C, average=complex(avg))
    return result


def stopping_time_reference(b, Q: DyadicCube, delta: float) -> list[DyadicCube]:
    """Slow recursive version of the selection in :func:`stopping_time`.

    Averages are recomputed from the cell values of every visited cube, so
    it shares no code with the level-average pyramid.
    """
    b = as_grid_function(b, Q.grid)

    def descend(P: DyadicCube) -> list[DyadicCube]:
        out = []
        for child in P.children():
            if np.mean(b.values[child.indices()]).real <= delta:
                out.append(child)
            else:
                out.extend(descend(child))
        return out

    return descend(Q)


def stopping_region_mask(b, Q: DyadicCube, delta: float) -> np.ndarray:
    """Atoms of ``R_Q`` where ``Re S_t b >= delta`` (layer ``k`` uses the level-``k`` averages)."""
    grid = Q.grid
    b = as_grid_function(b, grid)
    m = np.zeros((grid.levels + 1, grid.size), dtype=bool)
    for k in range(grid.levels + 1):
        m[k] = level_broadcast(grid, level_averages(grid, b.values, k), k).real >= delta
    return m & _window_mask(Q)


def black_hole_bound(
    mu: CarlesonMeasure,
    window_bound: float,
    eta: float,
    callback: Callable[[DyadicCube], list] | None = None,
    tol: float = 1e-12,
) -> float:
    """Check the black-hole hypotheses on every cube and return ``||mu||_c``.

    ``callback(Q)`` returns the bad subcubes of ``Q`` (default: none).  Each
    cube must satisfy ``sum |Q_i| <= (1 - eta)|Q|`` and
    ``mu(R_Q minus the R_{Q_i}) <= window_bound |Q|``; a violation raises
    :class:`ContractViolation`.  The conclusion ``||mu||_c <= window_bound / eta``
    is then asserted.
    """
    grid = mu.grid
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    callback = callback or (lambda Q: [])
    for Q in DyadicTree(grid):
        bad = list(callback(Q))
        for i, P in enumerate(bad):
            if not (Q.contains(P) and P.level > Q.level):
                raise ContractViolation(f"callback returned {P} which is not a strict subcube of {Q}")
            for R in bad[i + 1:]:
                if P.contains(R) or R.contains(P):
                    raise ContractViolation(f"callback returned overlapping cubes {P}, {R} for {Q}")
        frac = sum(P.volume for P in bad) / Q.volume
        if frac > 1 - eta + tol:
            raise ContractViolation(f"bad cubes cover {frac:.6g} of {Q} > 1 - eta = {1 - eta:.6g}")
        light = mu.restricted_window(Q, _good_mask(Q, bad))
        if light > window_bound * Q.volume * (1 + tol) + tol:
            raise ContractViolation(
                f"mu of the good region of {Q} is {light / Q.volume:.6g}|Q| > window_bound={window_bound:.6g}"
            )
    norm = carleson_norm(mu)
    if norm > window_bound / eta * (1 + tol) + tol:
        raise ContractViolation(f"||mu||_c = {norm:.6g} exceeds window_bound/eta = {window_bound / eta:.6g}")
    return norm


def nested_measure(grid: Grid, window_bound: float, depth: int | None = None, corner: int = 0):
    """Near-saturating example for the black-hole bound.

    Puts mass ``window_bound |Q_k|`` on the top Whitney rectangle of each cube
    of the chain ``Q_0 = torus > Q_1 > ...`` (child number ``corner`` each
    time).  Returns ``(mu, callback, eta)`` with ``eta = 1 - 2^{-dim}``; the
    callback excises the next chain cube, and ``||mu||_c`` tends to
    ``window_bound / eta`` as the depth grows.
    """
    depth = grid.levels if depth is None else depth
    mass = np.zeros((grid.levels + 1, grid.size))
    chain = [DyadicCube.root(grid)]
    for _ in range(depth):
        chain.append(chain[-1].children()[corner])
    for Q in chain:
        idx = Q.indices()
        mass[Q.level, idx] += window_bound * Q.volume / idx.size
    nxt = {c: chain[i + 1] for i, c in enumerate(chain[:-1])}

    def callback(Q):
        return [nxt[Q]] if Q in nxt else []

    return CarlesonMeasure(grid, mass), callback, 1 - 2.0 ** (-grid.dim)
