"""``kato-lab``: run configured experiments and emit report files.

A config is one YAML file::

    experiment: kato-ratio
    seed: 0                      # required whenever anything random is drawn
    grid: {dim: 1, points_per_side: 256, side_length: 1.0}
    coefficients: {recipe: identity, params: {}}
    params: {samples: 100}
    output: {dir: reports, name: kato-ratio}

Every key except ``experiment`` is optional; ``kato-lab list`` prints the
defaults of each experiment.  Reports are written as ``<name>.json`` and
``<name>.txt``.  Exit codes: 0 when every check passes, 1 when a check fails
or a computation errors out, 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .exceptions import ConfigError, KatoLabError
from .grid import Box, Grid, GridFunction

__all__ = ["ExperimentConfig", "Report", "EXPERIMENTS", "run", "emit_plotdata", "load_config", "main"]

RANDOM_RECIPES = {"diagonal-rough", "smooth-complex", "random-elliptic", "hermitian-elliptic"}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int | None = None
    grid: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(data) - {"experiment", "seed", "grid", "coefficients", "params", "output"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        if "experiment" not in data:
            raise ConfigError("config needs an 'experiment' key")
        seed = data.get("seed")
        if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
            raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
        sections = {}
        for key in ("grid", "coefficients", "params", "output"):
            value = data.get(key) or {}
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a mapping")
            sections[key] = dict(value)
        return cls(str(data["experiment"]), seed, **sections)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "grid": self.grid,
            "coefficients": self.coefficients,
            "params": self.params,
            "output": self.output,
        }


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return ExperimentConfig.from_mapping(data)


# --- report -----------------------------------------------------------------

def _plain(value):
    """Convert numpy scalars and arrays to JSON-friendly Python values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    return value


@dataclass
class Report:
    experiment: str
    config: dict
    scalars: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def check(self, name: str, passed: bool, value, threshold=None):
        self.checks.append({"name": name, "passed": bool(passed), "value": _plain(value), "threshold": _plain(threshold)})

    def table(self, name: str, columns: list, rows: list):
        self.tables[name] = {"columns": list(columns), "rows": _plain(rows)}

    def add_series(self, name: str, x, y):
        self.series[name] = [[float(a), float(b)] for a, b in zip(x, y)]

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return _plain(
            {
                "experiment": self.experiment,
                "config": self.config,
                "scalars": self.scalars,
                "tables": self.tables,
                "series": self.series,
                "checks": self.checks,
                "passed": self.passed,
                "provenance": self.provenance,
            }
        )

    def to_text(self) -> str:
        lines = [f"experiment: {self.experiment}", f"katolab {self.provenance.get('version', '?')}", ""]
        if self.scalars:
            width = max(len(k) for k in self.scalars)
            lines += [f"{k:<{width}}  {_fmt(v)}" for k, v in self.scalars.items()] + [""]
        for name, tab in self.tables.items():
            lines.append(f"[{name}]")
            cols = tab["columns"]
            cells = [[_fmt(v) for v in row] for row in tab["rows"]]
            widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(cols)]
            lines.append("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
            lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
            lines.append("")
        for c in self.checks:
            mark = "PASS" if c["passed"] else "FAIL"
            thr = "" if c["threshold"] is None else f" (threshold {_fmt(c['threshold'])})"
            lines.append(f"{mark}  {c['name']}: {_fmt(c['value'])}{thr}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


# --- experiment context ----------------------------------------------------

@dataclass
class _Context:
    config: ExperimentConfig
    params: dict
    grid: Grid | None
    rng: np.random.Generator | None

    def coefficients(self, recipe: str | None = None, **override):
        from .recipes import make_coefficients

        spec = self.config.coefficients
        recipe = recipe or spec.get("recipe", "identity")
        params = dict(spec.get("params") or {})
        params.update(override)
        if recipe in RANDOM_RECIPES and "seed" not in params:
            params["seed"] = self.config.seed
        try:
            return make_coefficients(self.grid, recipe, **params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for recipe {recipe!r}: {exc}") from exc

    def operator(self, **kw):
        from .elliptic import assemble

        return assemble(self.coefficients(**kw), float(self.params.get("kappa", 0.0)))

    def samples(self, count: int, max_mode: int, mean_zero: bool = False) -> np.ndarray:
        from .recipes import random_band_limited

        return np.stack([random_band_limited(self.grid, self.rng, max_mode, mean_zero).values for _ in range(count)])


@dataclass(frozen=True)
class Experiment:
    run: object
    description: str
    params: dict
    grid: dict | None
    recipe: str | None
    draws: bool = True


def _exp_kato_ratio(ctx: _Context, rep: Report):
    from .funcalc import kato_ratios, self_adjoint_defect

    L = ctx.operator()
    fs = ctx.samples(ctx.params["samples"], ctx.params["max_mode"])
    ratios = kato_ratios(L, fs)
    rep.scalars.update(min_ratio=ratios.min(), max_ratio=ratios.max(), spread=ratios.max() / ratios.min())
    rep.table("ratios", ["sample", "kato_ratio"], [[i, r] for i, r in enumerate(ratios)])
    rep.add_series("ratio", np.arange(ratios.size), ratios)
    rep.check("ratios finite and positive", bool(np.all(np.isfinite(ratios)) and np.all(ratios > 0)), ratios.min())
    A = L.coefficients
    if A.is_constant() and np.allclose(A.values[0], np.eye(ctx.grid.dim), atol=0, rtol=0):
        err = float(np.max(np.abs(ratios - 1)))
        rep.check("identity coefficients give ratio 1", err <= 1e-10, err, 1e-10)
    if L.is_self_adjoint:
        defect = max(self_adjoint_defect(L, GridFunction(ctx.grid, f)) for f in fs)
        rep.scalars["self_adjoint_defect"] = defect
        rep.check("||L^1/2 f||^2 = Q(f, f)", defect <= 1e-9, defect, 1e-9)


def _exp_mcintosh_yagi(ctx: _Context, rep: Report):
    from .funcalc import TGrid, mcintosh_yagi_norm, sqrt_apply
    from .grid import l2_norm

    L = ctx.operator()
    tg = TGrid.spanning(L, ctx.params["decades"], ctx.params["tgrid_points"])
    fs = ctx.samples(ctx.params["samples"], ctx.params["max_mode"])
    rows = []
    for i, f in enumerate(fs):
        f = GridFunction(ctx.grid, f)
        q, tail = mcintosh_yagi_norm(L, f, tg, return_tail=True)
        s = l2_norm(sqrt_apply(L, f)) ** 2
        rows.append([i, q**2 / s, tail / s])
    ratios = np.array([r[1] for r in rows])
    rep.scalars.update(
        t_min=tg.t_min, t_max=tg.t_max, min_ratio=ratios.min(), max_ratio=ratios.max(),
        equivalence_constant=max(ratios.max(), 1 / ratios.min()),
    )
    rep.table("ratios", ["sample", "quadrature/||L^1/2 f||^2", "tail/||L^1/2 f||^2"], rows)
    rep.add_series("ratio", np.arange(ratios.size), ratios)
    rep.check("ratios finite and positive", bool(np.all(np.isfinite(ratios)) and np.all(ratios > 0)), ratios.min())
    if L.is_self_adjoint:
        err = float(np.max(np.abs(ratios - 0.5)))
        rep.check("self-adjoint constant 1/2", err <= 1e-3, err, 1e-3)


def _exp_gaffney(ctx: _Context, rep: Report):
    from .elliptic import gaffney_profile

    L = ctx.operator()
    grid = ctx.grid
    n = grid.points_per_side
    s = max(1, n // ctx.params["source_fraction"])
    E0 = Box.cube((0,) * grid.dim, s, grid.dim)
    E = Box.cube((n // 2,) * grid.dim, s, grid.dim)
    d = E.distance(E0, grid)
    scaled = np.asarray(ctx.params["scaled_distances"], dtype=float)
    prof = gaffney_profile(L, E, E0, d / scaled)
    slopes = prof.slopes()
    rep.scalars.update(distance=d, **{f"slope_{k}": v for k, v in slopes.items()})
    cols = ["t", "d/t"] + list(prof.ratios)
    rows = [[t, d / t] + [prof.ratios[k][i] for k in prof.ratios] for i, t in enumerate(prof.t)]
    rep.table("profile", cols, rows)
    for k, r in prof.ratios.items():
        rep.add_series(k, prof.scaled_distance, np.log(np.maximum(r, np.finfo(float).tiny)))
        rep.check(f"{k} decay slope negative", slopes[k] < 0, slopes[k], 0.0)


def _exp_carleson_tb(ctx: _Context, rep: Report):
    from .tb import carleson_via_tb_report

    L = ctx.operator()
    p = ctx.params
    r = carleson_via_tb_report(L, epsilon=p["epsilon"], delta=p["delta"], verify=p["verify"])
    rep.scalars.update(
        bound=r.bound, exhaustive_norm=r.exhaustive_norm, looseness=r.ratio, epsilon=r.epsilon,
        delta=r.delta, c_upper=r.c_upper, cone_constant=r.cone_constant, cones=r.n_cones, active_cones=r.active_cones,
    )
    rep.check("bound and exhaustive norm finite", math.isfinite(r.bound) and math.isfinite(r.exhaustive_norm), r.bound)
    rep.check("bound >= exhaustive norm", r.bound >= r.exhaustive_norm * (1 - 1e-12), r.bound - r.exhaustive_norm, 0.0)
    if L.coefficients.is_constant():
        rep.check("constant coefficients give bound 0", r.bound <= 1e-12, r.bound, 1e-12)


def _exp_carleson_exhaustive(ctx: _Context, rep: Report):
    from .dyadic import carleson_embedding_check, carleson_norm
    from .squarefn import theta_one_measure

    L = ctx.operator()
    mu = theta_one_measure(L, ctx.params["nodes"])
    norm, Q = carleson_norm(mu, return_cube=True)
    fs = ctx.samples(ctx.params["samples"], ctx.params["max_mode"])
    emb = np.array([carleson_embedding_check(mu, GridFunction(ctx.grid, f)) for f in fs])
    rep.scalars.update(carleson_norm=norm, argmax_level=Q.level, argmax_index=list(Q.index), total_mass=mu.total(),
                       embedding_max=emb.max() if emb.size else 0.0)
    rows = []
    for k in range(ctx.grid.levels + 1):
        w = mu.windows(k) / (ctx.grid.side_length / 2**k) ** ctx.grid.dim
        rows.append([k, float(w.max())])
    rep.table("levels", ["level", "max mu(R_Q)/|Q|"], rows)
    rep.add_series("level_max", [r[0] for r in rows], [r[1] for r in rows])
    rep.check("norm finite", math.isfinite(norm), norm)
    rep.check("embedding ratios finite", bool(np.all(np.isfinite(emb))), emb.max() if emb.size else 0.0)


def _exp_stopping_time(ctx: _Context, rep: Report):
    from .dyadic import DyadicCube, black_hole_bound, nested_measure, stopping_time, stopping_time_reference

    grid, p = ctx.grid, ctx.params
    root = DyadicCube.root(grid)
    mismatches, violations, rows = 0, 0, []
    for case in range(p["cases"]):
        amp = ctx.rng.uniform(0.2, p["amplitude"])
        b = 1 + amp * (ctx.rng.standard_normal(grid.size) + 1j * ctx.rng.standard_normal(grid.size))
        b = b / np.mean(b)
        res = stopping_time(GridFunction(grid, b), root, p["delta"])
        ref = stopping_time_reference(GridFunction(grid, b), root, p["delta"])
        same = sorted((c.level, c.index) for c in res.bad_cubes) == sorted((c.level, c.index) for c in ref)
        mismatches += not same
        ok = res.coverage_fraction <= 1 - res.eta + 1e-12
        violations += not ok
        rows.append([case, len(res.bad_cubes), res.coverage_fraction, 1 - res.eta])
    rep.table("cases", ["case", "bad_cubes", "coverage", "1-eta"], rows)
    rep.add_series("coverage", [r[3] for r in rows], [r[2] for r in rows])
    rep.check("vectorized selection equals recursive oracle", mismatches == 0, mismatches, 0)
    rep.check("coverage <= 1 - eta", violations == 0, violations, 0)
    worst = 0.0
    for corner in range(2**grid.dim):
        mu, callback, eta = nested_measure(grid, p["window_bound"], corner=corner)
        norm = black_hole_bound(mu, p["window_bound"], eta, callback)
        worst = max(worst, norm / (p["window_bound"] / eta))
    rep.scalars["nested_saturation"] = worst
    rep.check("black-hole bound on nested family", worst <= 1 + 1e-12, worst, 1.0)


def _exp_counterexample(ctx: _Context, rep: Report):
    from . import counterexample as ce

    p = ctx.params
    c = ce.c_sequence(1)
    exact = [abs(c[2] - 2j / (3 * np.pi)), abs(c[0] + 1j / (3 * np.pi)), abs(c[1])]
    rep.check("c_1, c_-1, c_0 closed form", max(exact) <= 1e-15, max(exact), 1e-15)
    syl = max(ce.sylvester_check(N) for N in p["sylvester_N"])
    rep.check("Sylvester residual", syl <= 1e-10, syl, 1e-10)
    rows = ce.norm_blowup_table(p["N_list"])
    Ns = [r.N for r in rows]
    sups = [r.chat_sup for r in rows]
    slope = ce.log_slope(Ns, sups)
    rep.table(
        "blowup", ["N", "||R0' D^-1||", "chat_sup(N)", "chat_sup(2N)"],
        [[r.N, r.section_norm, r.chat_sup, r.chat_sup_double] for r in rows],
    )
    rep.add_series("chat_sup", np.log(Ns), sups)
    rep.add_series("section_norm", np.log(Ns), [r.section_norm for r in rows])
    rep.scalars.update(slope=slope, slope_times_pi=slope * np.pi)
    rep.check("chat_sup slope vs ln N in [0.8/pi, 1.2/pi]", 0.8 / np.pi <= slope <= 1.2 / np.pi, slope, [0.8 / np.pi, 1.2 / np.pi])
    rep.check("chat_sup strictly increasing", bool(np.all(np.diff(sups) > 0)), min(np.diff(sups)) if len(sups) > 1 else 0.0)
    norms = [r.section_norm for r in rows]
    rep.check("section norms strictly increasing", bool(np.all(np.diff(norms) > 0)), min(np.diff(norms)) if len(norms) > 1 else 0.0)
    gap = min(r.section_gap for r in rows)
    rep.check("section norm <= chat_sup(2N)", gap >= -1e-8, gap, -1e-8)
    bs = ce.bhat_sup(p["bhat_N"])
    rep.scalars["bhat_sup"] = bs
    rep.check("bhat_sup within 1e-2 of 1 outside the Gibbs window", abs(bs - 1) <= 1e-2, abs(bs - 1), 1e-2)


def _exp_critical_exponent(ctx: _Context, rep: Report):
    from .funcalc import critical_exponent_scan

    if ctx.grid.dim != 1:
        raise ConfigError("critical-exponent needs a 1-D grid")
    A = ctx.coefficients()
    a = A.values[:, 0, 0]
    if np.max(np.abs(a.imag)) > 0 or np.min(a.real) < 1:
        raise ConfigError("critical-exponent needs a real coefficient with a >= 1")
    rows = critical_exponent_scan(GridFunction(ctx.grid, a.real), ctx.params["alphas"])
    rep.table("scan", ["alpha", "||L^alpha (1-Lap)^-alpha||"], rows)
    rep.add_series("norm", [r[0] for r in rows], [r[1] for r in rows])
    rep.check("norms finite", all(math.isfinite(r[1]) for r in rows), max(r[1] for r in rows))


def _exp_wave_gap(ctx: _Context, rep: Report):
    from .elliptic import CoefficientField, assemble
    from .recipes import hermitian_elliptic
    from .wave import energy, evolve, pde_residual, sharpness_ratio, sqrt_perturbation_ratio, wave_perturbation_gap

    grid, p = ctx.grid, ctx.params
    A1 = ctx.coefficients()
    if not A1.is_hermitian():
        raise ConfigError("wave-gap needs Hermitian coefficients")
    H = hermitian_elliptic(grid, seed=(ctx.config.seed or 0) + 1).values
    H = H / np.max(np.linalg.norm(H, 2, axis=(1, 2)))
    A2 = CoefficientField(grid, A1.values + p["b"] * H)
    f = GridFunction(grid, ctx.samples(1, p["max_mode"])[0])
    g = GridFunction(grid, ctx.samples(1, p["max_mode"])[0])
    L1 = assemble(A1)

    rows = []
    for t in p["t_list"]:
        r = wave_perturbation_gap(A1, A2, f, g, t)
        rows.append([t, r.lhs, r.rhs, r.ratio])
    rep.table("gap", ["t", "lhs", "rhs", "ratio"], rows)
    rep.add_series("gap_ratio", [r[0] for r in rows], [r[3] for r in rows])

    res = pde_residual(L1, f, g, p["residual_t"], p["tau"])
    rep.check("PDE residual", res <= 1e-6, res, 1e-6)
    T = p["energy_time"]
    e0 = energy(L1, evolve(L1, f, g, 0.0))
    drift = max(abs(energy(L1, evolve(L1, f, g, t)) - e0) / e0 for t in np.linspace(0, T, 11)[1:]) / T
    rep.check("energy drift per unit time", drift <= 1e-8, drift, 1e-8)
    same = wave_perturbation_gap(A1, A1, f, g, 1.0).lhs
    rep.check("identical fields give zero gap", same == 0.0, same, 0.0)

    sharp = [[b, sharpness_ratio(grid, b, p["sharpness_t"], f, g)] for b in p["sharpness_b"]]
    rep.table("sharpness", ["b", "ratio"], sharp)
    rep.add_series("sharpness", [np.log10(r[0]) for r in sharp], [r[1] for r in sharp])
    low = min(r[1] for r in sharp)
    rep.scalars.update(sharpness_lower=low, max_gap_ratio=max(r[3] for r in rows))
    rep.check("sharpness ratio bounded below", low > 0.05, low, 0.05)

    mode = GridFunction.fourier_mode(grid, (1,) * grid.dim)
    b = min(p["sharpness_b"])
    single = float(sqrt_perturbation_ratio(CoefficientField.identity(grid), CoefficientField(grid, (1 + b) * np.eye(grid.dim)), mode))
    rep.scalars["single_mode_ratio"] = single
    rep.check("single-mode ratio near 1/2", abs(single - 0.5) <= 1e-3, abs(single - 0.5), 1e-3)


def _exp_t1_residual(ctx: _Context, rep: Report):
    from .funcalc import TGrid
    from .squarefn import t1_residual

    L = ctx.operator()
    grid, p = ctx.grid, ctx.params
    tg = TGrid(grid.spacing * 2.0 ** (-p["floor_octaves"]), grid.side_length, 16)
    fs = ctx.samples(p["samples"], p["max_mode"])
    ratios = t1_residual(L, fs, tg, averaging=p["averaging"])
    rep.scalars.update(max_ratio=ratios.max(), mean_ratio=ratios.mean())
    rep.table("ratios", ["sample", "residual/||grad f||^2"], [[i, r] for i, r in enumerate(ratios)])
    rep.add_series("ratio", np.arange(ratios.size), ratios)
    rep.check("residual ratios finite", bool(np.all(np.isfinite(ratios))), ratios.max())


EXPERIMENTS = {
    "kato-ratio": Experiment(
        _exp_kato_ratio, "||L^1/2 f|| / ||grad f|| over random band-limited f",
        {"samples": 100, "max_mode": 8, "kappa": 0.0}, {"dim": 1, "points_per_side": 256, "side_length": 1.0}, "identity",
    ),
    "mcintosh-yagi": Experiment(
        _exp_mcintosh_yagi, "quadratic resolvent norm against ||L^1/2 f||^2",
        {"samples": 20, "max_mode": 8, "decades": 8.0, "tgrid_points": 256, "kappa": 0.0},
        {"dim": 1, "points_per_side": 256, "side_length": 1.0}, "hermitian-elliptic",
    ),
    "gaffney": Experiment(
        _exp_gaffney, "off-diagonal decay of the three resolvent families",
        {"source_fraction": 16, "scaled_distances": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0], "kappa": 0.0},
        {"dim": 1, "points_per_side": 256, "side_length": 1.0}, "random-elliptic", draws=False,
    ),
    "carleson-tb": Experiment(
        _exp_carleson_tb, "Carleson bound for |theta_t 1|^2 through the T(b) stopping argument",
        {"epsilon": 0.05, "delta": 0.5, "verify": False, "kappa": 0.0},
        {"dim": 2, "points_per_side": 16, "side_length": 1.0}, "random-elliptic", draws=False,
    ),
    "carleson-exhaustive": Experiment(
        _exp_carleson_exhaustive, "exhaustive Carleson norm of |theta_t 1|^2 dx dt/t",
        {"nodes": 4, "samples": 10, "max_mode": 4, "kappa": 0.0},
        {"dim": 2, "points_per_side": 16, "side_length": 1.0}, "random-elliptic",
    ),
    "stopping-time": Experiment(
        _exp_stopping_time, "stopping-time selection, coverage and black-hole checks",
        {"cases": 200, "delta": 0.5, "amplitude": 1.5, "window_bound": 1.0},
        {"dim": 2, "points_per_side": 8, "side_length": 1.0}, None,
    ),
    "counterexample": Experiment(
        _exp_counterexample, "finite sections of the l^2(Z) square-root counterexample",
        {"N_list": [16, 32, 64, 128, 256, 512, 1024], "sylvester_N": [1, 2, 3, 4, 5, 6], "bhat_N": 4096},
        None, None, draws=False,
    ),
    "critical-exponent": Experiment(
        _exp_critical_exponent, "||L^alpha (1 - Laplacian)^-alpha|| for L = D a D in 1-D",
        {"alphas": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]},
        {"dim": 1, "points_per_side": 128, "side_length": 1.0}, "diagonal-rough", draws=False,
    ),
    "wave-gap": Experiment(
        _exp_wave_gap, "wave perturbation gap, energy, PDE residual and sharpness",
        {"b": 0.05, "max_mode": 2, "t_list": [0.1, 0.5, 1.0, 2.0, 5.0, 10.0], "residual_t": 1.0, "tau": 2.5e-4,
         "energy_time": 10.0, "sharpness_t": 1.0, "sharpness_b": [1e-1, 1e-2, 1e-3, 1e-4]},
        {"dim": 1, "points_per_side": 64, "side_length": 2 * math.pi}, "hermitian-elliptic",
    ),
    "t1-residual": Experiment(
        _exp_t1_residual, "T(1) reduction residual against ||grad f||^2",
        {"samples": 100, "max_mode": 4, "averaging": "dyadic", "floor_octaves": 6, "kappa": 0.0},
        {"dim": 1, "points_per_side": 128, "side_length": 1.0}, "random-elliptic",
    ),
}

_COUNT_PARAMS = {"samples", "cases", "max_mode", "nodes", "tgrid_points", "source_fraction", "floor_octaves", "bhat_N"}

# recipe-specific defaults applied when the config does not set them
_RECIPE_DEFAULTS = {("critical-exponent", "diagonal-rough"): {"low": 1.0, "high": 4.0, "pieces": 8}}


def _prepare(config: ExperimentConfig) -> tuple[Experiment, _Context]:
    exp = EXPERIMENTS.get(config.experiment)
    if exp is None:
        raise ConfigError(f"unknown experiment {config.experiment!r}; known: {sorted(EXPERIMENTS)}")
    unknown = set(config.params) - set(exp.params)
    if unknown:
        raise ConfigError(f"unknown params for {config.experiment}: {sorted(unknown)}")
    params = {**exp.params, **config.params}
    for key in _COUNT_PARAMS & set(params):
        v = params[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"param {key} must be a positive integer, got {v!r}")
    grid = None
    if exp.grid is not None:
        gspec = {**exp.grid, **config.grid}
        extra = set(gspec) - {"dim", "points_per_side", "side_length"}
        if extra:
            raise ConfigError(f"unknown grid keys: {sorted(extra)}")
        try:
            grid = Grid(int(gspec["dim"]), int(gspec["points_per_side"]), float(gspec["side_length"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if exp.recipe is not None:
            config.coefficients.setdefault("recipe", exp.recipe)
            recipe = config.coefficients["recipe"]
            defaults = _RECIPE_DEFAULTS.get((config.experiment, recipe), {})
            config.coefficients["params"] = {**defaults, **(config.coefficients.get("params") or {})}
    recipe = config.coefficients.get("recipe") if exp.recipe is not None else None
    unseeded_recipe = recipe in RANDOM_RECIPES and "seed" not in (config.coefficients.get("params") or {})
    if config.seed is None and (exp.draws or unseeded_recipe):
        raise ConfigError(f"experiment {config.experiment} draws random data: set 'seed'")
    rng = np.random.default_rng(config.seed) if config.seed is not None else None
    return exp, _Context(config, params, grid, rng)


def run(config: ExperimentConfig, out_dir=None) -> Report:
    """Run one experiment; write ``<name>.json`` and ``<name>.txt`` when ``out_dir`` is given."""
    exp, ctx = _prepare(config)
    report = Report(config.experiment, config.to_dict())
    start = time.perf_counter()
    try:
        exp.run(ctx, report)
    except (ConfigError, KatoLabError):
        raise
    except ValueError as exc:
        raise ConfigError(f"{config.experiment}: {exc}") from exc
    report.provenance = {
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seconds": round(time.perf_counter() - start, 3),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        name = config.output.get("name", config.experiment)
        (out / f"{name}.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / f"{name}.txt").write_text(report.to_text(), encoding="utf-8")
    return report


def emit_plotdata(report_path, series: str, out_path=None) -> Path:
    """Write one report series as two whitespace-separated columns."""
    if not series:
        raise ConfigError("series name must not be empty")
    try:
        data = json.loads(Path(report_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {report_path}: {exc}") from exc
    available = data.get("series", {})
    if series not in available:
        raise ConfigError(f"unknown series {series!r}; available: {sorted(available)}")
    path = Path(out_path) if out_path else Path(report_path).with_suffix(f".{series}.dat")
    lines = [f"# {data.get('experiment', '?')} {series}"] + [f"{x:.17g} {y:.17g}" for x, y in available[series]]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _list() -> str:
    lines = []
    for name, exp in EXPERIMENTS.items():
        lines.append(f"{name}: {exp.description}")
        if exp.grid:
            lines.append(f"    grid: {exp.grid}")
        if exp.recipe:
            lines.append(f"    recipe: {exp.recipe}")
        lines.append(f"    params: {exp.params}")
    return "\n".join(lines)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kato-lab", description="Square-root and square-function experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out-dir", default=None, help="report directory (default: output.dir or ./reports)")
    r.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK thread limit")
    e = sub.add_parser("emit", help="write a report series as plot data")
    e.add_argument("report")
    e.add_argument("--series", required=True)
    e.add_argument("--out", default=None)
    sub.add_parser("list", help="list experiments and their defaults")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "list":
            print(_list())
            return 0
        if args.command == "emit":
            print(emit_plotdata(args.report, args.series, args.out))
            return 0
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        out_dir = args.out_dir or config.output.get("dir", "reports")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        with threadpool_limits(limits=args.threads):
            report = run(config, out_dir)
    except ConfigError as exc:
        print(f"kato-lab: configuration error: {exc}", file=sys.stderr)
        return 2
    except KatoLabError as exc:
        print(f"kato-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(report.to_text(), end="")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
