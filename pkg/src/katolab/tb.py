"""The T(b) route to the Carleson bound for ``|theta_t 1|^2 dx dt/t``.

Pipeline: cover the directions of ``C^n`` by cones, build a localized affine
test function per (cube, direction), smooth it with the resolvent at scale
``epsilon * l(Q)``, run the two-condition stopping time on the averages of
its gradient, bound the measure on the good part of each Carleson window by
the cone geometry, and close with the black-hole lemma.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive
from .dyadic import (
    CarlesonMeasure,
    DyadicCube,
    StoppingTimeResult,
    _good_mask,
    black_hole_bound,
    carleson_norm,
    layer_quadrature,
    level_averages,
    level_broadcast,
    select_maximal,
    whitney_level,
)
from .elliptic import EllipticOperator
from .exceptions import KatoLabError, RootStopped
from .funcalc import TGrid
from .grid import GridFunction, VectorField, gradient_values
from .squarefn import theta_apply, theta_one_many

__all__ = [
    "ConeDecomposition",
    "TestFunctionPair",
    "FQReport",
    "TbReport",
    "build_cones",
    "cone_constant",
    "make_test_pair",
    "verify_fq_estimates",
    "interpolation_constant",
    "two_condition_stopping_time",
    "carleson_via_tb",
    "carleson_via_tb_report",
]


# --- cones ----------------------------------------------------------------

@dataclass
class ConeDecomposition:
    """Cones ``C_w = {u : |u - (u|w) w| <= epsilon |(u|w)|}`` around unit ``w``."""

    epsilon: float
    directions: np.ndarray  # (K, n)

    @property
    def count(self) -> int:
        return len(self.directions)

    def membership(self, u: np.ndarray) -> np.ndarray:
        """``(K, N)`` flags of ``u`` (rows of an ``(N, n)`` array) in each cone."""
        u = np.atleast_2d(u)
        proj = np.conj(self.directions) @ u.T  # (u|w)
        norm2 = np.sum(np.abs(u) ** 2, axis=1)
        perp2 = np.maximum(norm2[None, :] - np.abs(proj) ** 2, 0.0)
        return perp2 <= self.epsilon**2 * np.abs(proj) ** 2 * (1 + 1e-12) + 1e-300

    def covered(self, u: np.ndarray) -> np.ndarray:
        return self.membership(u).any(axis=0)


def _random_unit(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    z = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def build_cones(epsilon: float, n: int, seed: int = 0, samples: int = 10_000, retries: int = 3) -> ConeDecomposition:
    """Greedy net of directions in complex projective space, verified by random sampling.

    ``u`` lies in ``C_w`` iff the Fubini-Study angle between ``[u]`` and
    ``[w]`` is at most ``arctan(epsilon)``.  The net uses a smaller radius
    and is accepted once ``samples`` fresh random directions are covered;
    otherwise the radius shrinks and the net is rebuilt.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if n < 1:
        raise ValueError("n must be positive")
    if n == 1:
        return ConeDecomposition(float(epsilon), np.ones((1, 1), dtype=complex))
    rng = np.random.default_rng(seed)
    radius = 0.7 * np.arctan(epsilon)
    for _ in range(retries + 1):
        n_cand = int(min(400_000, 40 * (np.pi / 2 / radius) ** (2 * (n - 1))))
        cand = _random_unit(rng, n_cand, n)
        cos_r = np.cos(radius)
        alive = np.ones(n_cand, dtype=bool)
        chosen = []
        while alive.any():
            i = int(np.flatnonzero(alive)[0])
            w = cand[i]
            chosen.append(w)
            alive &= np.abs(cand @ np.conj(w)) < cos_r
        cones = ConeDecomposition(float(epsilon), np.array(chosen))
        test = _random_unit(rng, samples, n)
        if cones.covered(test).all():
            return cones
        radius *= 0.8
    raise KatoLabError(f"cone covering failed for epsilon={epsilon}, n={n}")


def cone_constant(epsilon: float, delta: float, c_upper: float) -> float:
    """``K`` with ``|u| <= K |u . v|`` for ``u`` in a cone and ``Re(w . v) >= delta``, ``|v| <= c_upper``.

    Writing ``u = a w + u_perp`` gives ``|u . v| >= |a| (delta - epsilon c_upper)``
    and ``|u| <= sqrt(1 + epsilon^2) |a|``.
    """
    gap = delta - epsilon * c_upper
    if gap <= 0:
        raise ValueError(f"need epsilon * c_upper < delta (got {epsilon * c_upper:.3g} >= {delta})")
    return float(np.sqrt(1 + epsilon**2) / gap)


# --- test functions -------------------------------------------------------

def _smooth_step(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for ``u <= 0``, 1 for ``u >= 1``."""
    u = np.clip(u, 0.0, 1.0)
    a = np.where(u > 0, np.exp(-1 / np.where(u > 0, u, 1)), 0.0)
    b = np.where(u < 1, np.exp(-1 / np.where(u < 1, 1 - u, 1)), 0.0)
    return a / (a + b)


def _smooth_step_derivative(u: np.ndarray) -> np.ndarray:
    inside = (u > 0) & (u < 1)
    out = np.zeros_like(u)
    v = u[inside]
    a, b = np.exp(-1 / v), np.exp(-1 / (1 - v))
    da, db = a / v**2, -b / (1 - v) ** 2
    out[inside] = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return out


def _cutoff_radii(Q: DyadicCube) -> tuple[float, float]:
    """Cutoff is 1 for ``|x_i - c_i| <= a`` and 0 beyond ``b`` (per axis)."""
    side, ell = Q.grid.side_length, Q.side
    gap = side / 2 - 1.5 * ell
    return min(2 * ell, 1.5 * ell + gap / 4), min(4 * ell, side / 2 - gap / 4)


def _localized_basis(Q: DyadicCube):
    """``phi_i = chi (x - x_Q)_i`` and the analytic gradients ``d_j phi_i``: ``(M, n)``, ``(n, M, n)``."""
    grid = Q.grid
    d = grid.coordinates - Q.center[:, None]
    d -= grid.side_length * np.round(d / grid.side_length)
    a, b = _cutoff_radii(Q)
    u = (b - np.abs(d)) / (b - a)
    chi_axis = _smooth_step(u)
    dchi_axis = -_smooth_step_derivative(u) * np.sign(d) / (b - a)
    chi = np.prod(chi_axis, axis=0)
    phi = (chi * d).T
    grad = np.empty((grid.dim, grid.size, grid.dim))
    for j in range(grid.dim):
        dchi = dchi_axis[j] * np.prod(np.delete(chi_axis, j, axis=0), axis=0)
        for i in range(grid.dim):
            grad[j, :, i] = dchi * d[i] + (chi if i == j else 0.0)
    return phi, grad


def _check_cube(Q: DyadicCube):
    if 3 * Q.side > Q.grid.side_length * (1 + 1e-12):
        raise ValueError(f"cube of side {Q.side} too large: 3Q must fit in the torus")


@dataclass
class TestFunctionPair:
    """``f_Q = chi (x - x_Q | w)`` and ``f_Q^eps = (I + eps^2 l(Q)^2 L)^{-1} f_Q``."""

    __test__ = False

    operator: EllipticOperator = field(repr=False)
    cube: DyadicCube
    direction: np.ndarray
    epsilon: float
    f_Q: GridFunction = field(repr=False)
    f_Q_eps: GridFunction = field(repr=False)
    grad_f_Q: VectorField = field(repr=False)

    @property
    def grad_f_Q_eps(self) -> VectorField:
        return VectorField(self.cube.grid, gradient_values(self.cube.grid, self.f_Q_eps.values))

    def lemma_scaling(self) -> float:
        """``||f_Q - f_Q^eps||_{L^2(3Q)} / (eps l(Q) |Q|^{1/2})``."""
        Q = self.cube
        idx = Q.dilate(3).indices(Q.grid)
        diff = np.sum(np.abs(self.f_Q.values[idx] - self.f_Q_eps.values[idx]) ** 2) * Q.grid.cell_volume
        return float(np.sqrt(diff) / (self.epsilon * Q.side * np.sqrt(Q.volume)))


def make_test_pair(L: EllipticOperator, Q: DyadicCube, w, epsilon: float) -> TestFunctionPair:
    grid = L.grid
    _check_cube(Q)
    epsilon = check_positive(epsilon, "epsilon")
    w = np.asarray(w, dtype=complex).reshape(grid.dim)
    if not np.isclose(np.linalg.norm(w), 1.0):
        raise ValueError("w must be a unit vector")
    phi, grad = _localized_basis(Q)
    f = phi @ np.conj(w)
    f_eps = L.resolvent_solve(epsilon * Q.side, f)
    return TestFunctionPair(
        L, Q, w, epsilon, GridFunction(grid, f), GridFunction(grid, f_eps), VectorField(grid, grad @ np.conj(w))
    )


def interpolation_constant(h: GridFunction, Q: DyadicCube) -> float:
    """``|int_Q grad h| / (l^{(n-1)/2} (int_Q |h|^2)^{1/4} (int_Q |grad h|^2)^{1/4})``."""
    grid = h.grid
    idx = Q.indices()
    dv = grid.cell_volume
    g = gradient_values(grid, h.values)[:, idx]
    num = np.linalg.norm(g.sum(axis=1) * dv)
    h2 = np.sum(np.abs(h.values[idx]) ** 2) * dv
    g2 = np.sum(np.abs(g) ** 2) * dv
    den = Q.side ** ((grid.dim - 1) / 2) * (h2 * g2) ** 0.25
    return float(num / den) if den > 0 else 0.0


@dataclass
class FQReport:
    fq1: float
    fq1_eps: float
    fq2: float
    fq2_constant: float
    fq3: float
    fq3_identity_residual: float
    interpolation: float
    lemma_scaling: float


def verify_fq_estimates(pair: TestFunctionPair, tg: TGrid | None = None, nodes: int = 4) -> FQReport:
    """The three test-function estimates, normalized by ``|Q|``.

    ``fq3`` integrates ``|theta_t grad f_Q^eps|^2`` over ``Q x (t_min, l(Q)]``
    using ``theta_t grad f_Q^eps = -(I + t^2 L)^{-1} t (f_Q - f_Q^eps) / (eps l)^2``;
    the identity is checked against a direct ``theta_t`` solve at three ``t``.
    """
    L, Q = pair.operator, pair.cube
    grid = L.grid
    dv = grid.cell_volume
    idx3 = Q.dilate(3).indices(grid)
    idx = Q.indices()
    fq1 = float(np.sum(np.abs(pair.grad_f_Q.components[:, idx3]) ** 2) * dv / Q.volume)
    ge = pair.grad_f_Q_eps.components
    fq1_eps = float(np.sum(np.abs(ge[:, idx3]) ** 2) * dv / Q.volume)
    fq2 = float(np.linalg.norm(ge[:, idx].sum(axis=1) * dv) / Q.volume)
    scale = (pair.epsilon * Q.side) ** 2
    diff = pair.f_Q.values - pair.f_Q_eps.values
    t_min = tg.t_min if tg is not None else grid.spacing / 64
    ts, ws = layer_quadrature(grid, min(t_min, Q.side / 2), Q.side, nodes)
    keep = ts <= Q.side
    ts, ws = ts[keep], ws[keep]
    vals = L.factorization.resolvent_many(diff, ts) * (ts / scale)[:, None]
    fq3 = float(np.sum(ws * np.sum(np.abs(vals[:, idx]) ** 2, axis=1)) * dv / Q.volume)
    resid = 0.0
    for t in (Q.side / 8, Q.side / 2, Q.side):
        direct = theta_apply(L, t, pair.grad_f_Q_eps).values
        via = -L.resolvent_solve(t, diff) * t / scale
        resid = max(resid, float(np.linalg.norm(direct - via) / max(np.linalg.norm(via), 1e-300)))
    h = GridFunction(grid, diff)
    return FQReport(
        fq1=fq1,
        fq1_eps=fq1_eps,
        fq2=fq2,
        fq2_constant=float((1 - fq2) / np.sqrt(pair.epsilon)),
        fq3=fq3,
        fq3_identity_residual=resid,
        interpolation=interpolation_constant(h, Q),
        lemma_scaling=pair.lemma_scaling(),
    )


# --- stopping time --------------------------------------------------------

def _two_condition_masks(grid, grad_values: np.ndarray, w: np.ndarray, delta: float, c_upper: float):
    masks = []
    for k in range(grid.levels + 1):
        avg = level_averages(grid, grad_values.T, k)  # (cubes..., n)
        low = np.real(avg @ w) <= delta
        high = np.linalg.norm(avg, axis=-1) >= c_upper
        masks.append(low | high)
    return masks


def two_condition_stopping_time(pair: TestFunctionPair, delta: float, c_upper: float | None = None) -> StoppingTimeResult:
    """Maximal ``Q' < Q`` where ``Re (w* | avg grad f_Q^eps) <= delta`` or ``|avg grad f_Q^eps| >= c_upper``.

    ``(w* | v)`` has real part ``Re(w . v)``.  The default ``c_upper`` is
    ``delta / (2 epsilon)``, which keeps the cone constant finite.
    """
    Q = pair.cube
    grid = Q.grid
    delta = check_positive(delta, "delta")
    if c_upper is None:
        c_upper = delta / (2 * pair.epsilon)
    if delta >= 1:
        raise RootStopped("delta >= 1 fails on the root cube: Re (w*|grad f_Q) averages to 1")
    grad = pair.grad_f_Q_eps.components
    masks = _two_condition_masks(grid, grad, pair.direction, delta, c_upper)
    if masks[Q.level][Q.index]:
        raise RootStopped(f"root cube {Q} fails the two-condition test")
    bad = select_maximal(Q, masks)
    coverage = sum(c.volume for c in bad) / Q.volume
    result = StoppingTimeResult(Q, bad, _good_mask(Q, bad), float(coverage), 1 - float(coverage))
    result.info.update(delta=delta, c_upper=c_upper)
    return result


# --- end to end -----------------------------------------------------------

@dataclass
class TbReport:
    bound: float
    exhaustive_norm: float
    epsilon: float
    delta: float
    c_upper: float
    cone_constant: float
    n_cones: int
    active_cones: int
    window_bounds: np.ndarray
    etas: np.ndarray
    cone_norms: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.bound / self.exhaustive_norm if self.exhaustive_norm > 0 else float("inf")


def _block_sum(grid, values: np.ndarray, level: int) -> np.ndarray:
    """Sum of ``(K, size)`` cell values over each level cube -> ``(K, cubes)``."""
    c = (grid.points_per_side >> level) ** grid.dim
    return level_averages(grid, values.T, level).reshape(-1, values.shape[0]).T * c


def _count_blocks(arr: np.ndarray, r: int, dim: int) -> np.ndarray:
    """``(K, (m*r,)*dim)`` flags -> ``(K, m**dim)`` counts per block of ``r**dim``."""
    K, m = arr.shape[0], arr.shape[1] // r
    shape = (K,) + sum(((m, r) for _ in range(dim)), ())
    summed = arr.reshape(shape).sum(axis=tuple(2 + 2 * a for a in range(dim)))
    return summed.reshape(K, -1)


def _upsample(arr: np.ndarray, dim: int) -> np.ndarray:
    for a in range(1, dim + 1):
        arr = np.repeat(arr, 2, axis=a)
    return arr


def carleson_via_tb_report(
    L: EllipticOperator,
    epsilon: float = 0.05,
    delta: float = 0.5,
    tg: TGrid | None = None,
    c_upper: float | None = None,
    nodes: int = 4,
    floor_octaves: int = 6,
    cones: ConeDecomposition | None = None,
    verify: bool = False,
    retries: int = 4,
) -> TbReport:
    """Carleson bound for ``mu = |theta_t 1|^2 dx dt/t`` via test functions and the black-hole lemma.

    For each cone ``w`` and each cube of level >= 2 the two-condition
    stopping time gives the bad cubes and the cone geometry gives
    ``mu_w(good part of R_Q) <= K^2 int_good |gamma_{t,w} . S_t grad f_Q^eps|^2``;
    the right side is evaluated on the same quadrature atoms as ``mu``.
    Cubes of level 0 and 1 (where ``3Q`` does not fit) use ``mu_w(R_Q)``
    with no bad cubes.  The result is ``sum_w W_w / eta_w``.  When a root
    cube fails the stopping test ``epsilon`` is halved up to ``retries`` times.
    """
    eps = check_positive(epsilon, "epsilon")
    for attempt in range(retries + 1):
        try:
            return _carleson_via_tb(L, eps, delta, tg, c_upper, nodes, floor_octaves, cones, verify)
        except RootStopped:
            if attempt == retries:
                raise
            eps /= 2
            cones = None
    raise AssertionError("unreachable")


def carleson_via_tb(L: EllipticOperator, epsilon: float = 0.05, delta: float = 0.5, tg: TGrid | None = None, **kw) -> float:
    return carleson_via_tb_report(L, epsilon, delta, tg, **kw).bound


def _carleson_via_tb(L, eps, delta, tg, c_upper, nodes, floor_octaves, cones, verify) -> TbReport:
    grid = L.grid
    n, M, levels = grid.dim, grid.size, grid.levels
    dv = grid.cell_volume
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    c_upper = delta / (2 * eps) if c_upper is None else float(c_upper)
    K = cone_constant(eps, delta, c_upper)
    cones = cones or build_cones(min(eps, 0.99), n)
    W = cones.directions
    Kc = cones.count

    t_lo = tg.t_min if tg is not None else grid.spacing * 2.0 ** (-floor_octaves)
    ts, ws = layer_quadrature(grid, t_lo, grid.side_length, nodes)
    gammas = theta_one_many(L, ts)  # (T, n, M)
    layer = np.array([whitney_level(grid, t, extend=True) for t in ts])
    mass = np.zeros((levels + 1, M))
    for i in range(ts.size):
        mass[layer[i]] += ws[i] * np.sum(np.abs(gammas[i]) ** 2, axis=0) * dv
    mu = CarlesonMeasure(grid, mass)
    exhaustive = carleson_norm(mu)

    def member(i):
        return cones.membership(gammas[i].T)  # (Kc, M)

    def weighted(i):
        return ws[i] * member(i) * np.sum(np.abs(gammas[i]) ** 2, axis=0)[None, :] * dv

    # per-cone atoms, needed for levels 0/1 and for the exhaustive per-cone norms
    cone_mass = np.zeros((Kc, levels + 1, M))
    for i in range(ts.size):
        cone_mass[:, layer[i]] += weighted(i)
    active = cone_mass.reshape(Kc, -1).sum(axis=1) > 0

    Wbound = np.zeros(Kc)
    eta = np.ones(Kc)
    cum = np.cumsum(cone_mass[:, ::-1], axis=1)[:, ::-1]  # layers >= k
    for lv in range(min(2, levels + 1)):
        win = _block_sum(grid, cum[:, lv], lv) / (grid.side_length / 2**lv) ** n
        Wbound = np.maximum(Wbound, win.max(axis=1))

    bad_record = {} if verify else None
    conjW = np.conj(W)
    for lv in range(2, levels + 1):
        ell = grid.side_length / 2**lv
        cubes = [DyadicCube(grid, lv, idx) for idx in np.ndindex(*(2**lv,) * n)]
        basis = np.empty((M, len(cubes), n))
        grads = np.empty((n, M, len(cubes), n))
        for q, Q in enumerate(cubes):
            basis[:, q, :], _ = _localized_basis(Q)
        smooth = L.resolvent_solve(eps * ell, basis.reshape(M, -1).astype(complex)).reshape(M, len(cubes), n)
        grads = gradient_values(grid, smooth)  # (n_d, M, nQ, n_i)
        owner = level_broadcast(grid, np.arange(len(cubes)).reshape((2**lv,) * n), lv).astype(int)
        G_own = grads[:, np.arange(M), owner, :]  # (n_d, M, n_i)
        blocked = np.zeros((Kc,) + (2**lv,) * n, dtype=bool)
        covered = np.zeros((Kc, len(cubes)))
        window = np.zeros((Kc, M))
        for j in range(lv, levels + 1):
            B = level_averages(grid, np.moveaxis(G_own, 1, 0), j)  # (cubes_j..., n_d, n_i)
            v = np.einsum("ki,...di->k...d", conjW, B)  # (Kc, cubes_j..., n_d)
            low = np.real(np.einsum("kd,k...d->k...", W, v)) <= delta
            high = np.linalg.norm(v, axis=-1) >= c_upper
            stop = low | high
            if j == lv:
                if stop[active].any():
                    k0, *q0 = np.argwhere(stop & active.reshape((-1,) + (1,) * n))[0]
                    raise RootStopped(f"root cube (level {lv}, index {tuple(q0)}) fails for direction {W[k0]}")
                good = np.ones_like(stop)
            else:
                bad = stop & ~blocked
                covered += _count_blocks(bad, 2 ** (j - lv), n) * 2.0 ** (-(j - lv) * n)
                if verify:
                    for k, *q in np.argwhere(bad & active.reshape((-1,) + (1,) * n)):
                        P = DyadicCube(grid, j, tuple(q))
                        anc = DyadicCube(grid, lv, tuple(x >> (j - lv) for x in q))
                        bad_record.setdefault((k, anc), []).append(P)
                good = ~(stop | blocked)
            good_cells = level_broadcast(grid, np.moveaxis(good, 0, -1), j).T  # (Kc, M)
            Bcells = level_broadcast(grid, B, j)  # (M, n_d, n_i)
            for i in np.flatnonzero(layer == j):
                c = np.einsum("dx,xdi->xi", gammas[i], Bcells)  # (M, n_i)
                dot = conjW @ c.T  # (Kc, M)
                window += ws[i] * member(i) * good_cells * np.abs(dot) ** 2 * dv
            if j < levels:
                blocked = _upsample(blocked | stop, n)
        per_cube = _block_sum(grid, window, lv) * K**2 / ell**n
        Wbound = np.maximum(Wbound, per_cube.max(axis=1))
        eta = np.minimum(eta, 1 - covered.max(axis=1))

    with np.errstate(divide="ignore"):
        per_cone = np.where(active, Wbound / np.where(eta > 0, eta, 0.0), 0.0)
    bound = float(per_cone.sum())
    cone_norms = np.array([carleson_norm(CarlesonMeasure(grid, cone_mass[k])) if active[k] else 0.0 for k in range(Kc)])
    info = {}
    if verify:
        checked = 0
        for k in np.flatnonzero(active):
            mu_k = CarlesonMeasure(grid, cone_mass[k])

            def callback(Q, k=k):
                return bad_record.get((k, Q), []) if Q.level >= 2 else []

            black_hole_bound(mu_k, Wbound[k], eta[k], callback, tol=1e-9)
            checked += 1
        info["black_hole_checked"] = checked
    return TbReport(
        bound=bound,
        exhaustive_norm=float(exhaustive),
        epsilon=eps,
        delta=delta,
        c_upper=c_upper,
        cone_constant=K,
        n_cones=Kc,
        active_cones=int(active.sum()),
        window_bounds=Wbound,
        etas=eta,
        cone_norms=cone_norms,
        info=info,
    )
