"""
Monte Carlo drivers: full simulation, partial (conditional) simulation through
per-sample RPDE solves, a conditional-SDE oracle for frozen drivers, finite
difference Greeks and variance statistics.

Samples are processed in fixed blocks of ``vol_models.BLOCK``.  Each block is a
pure function of (configuration, root seed, block index); workers only change
the order in which blocks are computed, never their content, and results are
assembled in block order before any reduction.  Hence the reports are
bit-identical for every worker count.

Coupling: full and partial runs with the same root seed share the backbone (W)
samples; the full run draws its independent Brownian motion B from a separate
stream.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import closed_form
from .lsv_models import SABR, BachelierSV, BlackScholesSV, coeffs, payoff_eval
from .rough_core import LiftedPath, TimeGrid, coarsen
from .rpde_solver import DEFAULT_STENCIL, BoundarySpec, SpaceGrid, default_domain, solve_rpde_batch
from .vol_models import (
    BLOCK,
    STREAM_INNER,
    STREAM_PRICE,
    integrate_vol,
    sample_rng,
    simulate_block,
)

__all__ = [
    "MCError",
    "RunConfig",
    "PriceReport",
    "GreeksReport",
    "VarianceReport",
    "full_mc_samples",
    "partial_mc_samples",
    "full_mc_price",
    "partial_mc_price",
    "conditional_sde_price",
    "greeks_fd",
    "variance_ratios",
    "strong_relative_error",
    "convergence_study",
    "pde_setup",
]


class MCError(ArithmeticError):
    """A sample failed; carries the global sample index."""

    def __init__(self, msg, sample=None):
        super().__init__(msg)
        self.sample = sample


@dataclass(frozen=True)
class RunConfig:
    m_samples: int = 1000
    n_fine: int = 2000
    T: float = 1.0
    j_steps: int = 120
    n_space: int = 90
    domain: Optional[tuple] = None  # None: automatic
    scheme: str = "order2"
    stencil: str = DEFAULT_STENCIL
    boundary: str = "auto"  # closed form when available, else conditional mean
    seed: int = 0
    inner_m: int = 20000
    h: float = 0.05
    x0: float = 5.0
    workers: int = 1
    v_cap: Optional[float] = None

    def __post_init__(self):
        for name in ("m_samples", "n_fine", "j_steps", "inner_m", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_space < 3:
            raise ValueError("n_space must be >= 3")
        if self.j_steps > self.n_fine:
            raise ValueError("j_steps cannot exceed n_fine")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def fine_grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.n_fine, self.T)


@dataclass(eq=False)
class PriceReport:
    x: np.ndarray
    values: np.ndarray  # (M, len(x))
    mean: np.ndarray = field(init=False)
    stderr: np.ndarray = field(init=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.values = np.asarray(self.values, float)
        m = self.values.shape[0]
        self.mean = self.values.mean(axis=0)
        if m > 1:
            self.stderr = self.values.std(axis=0, ddof=1) / math.sqrt(m)
        else:
            self.stderr = np.zeros(self.x.shape)

    @property
    def m_samples(self) -> int:
        return self.values.shape[0]


@dataclass(eq=False)
class GreeksReport:
    x: np.ndarray
    h: float
    delta_samples: np.ndarray
    gamma_samples: np.ndarray
    price_samples: np.ndarray
    note: str = ""

    @property
    def delta_h(self) -> np.ndarray:
        return self.delta_samples.mean(axis=0)

    @property
    def gamma_h(self) -> np.ndarray:
        return self.gamma_samples.mean(axis=0)

    @property
    def sigma_delta(self) -> np.ndarray:
        return _sd(self.delta_samples)

    @property
    def sigma_gamma(self) -> np.ndarray:
        return _sd(self.gamma_samples)

    @property
    def sigma_price(self) -> np.ndarray:
        return _sd(self.price_samples)

    def stderr(self, which="delta") -> np.ndarray:
        s = self.sigma_delta if which == "delta" else self.sigma_gamma
        return s / math.sqrt(self.delta_samples.shape[0])


@dataclass(eq=False)
class VarianceReport:
    x: np.ndarray
    sigma_mc_price: np.ndarray
    sigma_rpde_price: np.ndarray
    sigma_mc_delta: np.ndarray
    sigma_rpde_delta: np.ndarray
    sigma_mc_gamma: np.ndarray
    sigma_rpde_gamma: np.ndarray
    ratio_price: float
    ratio_delta: float
    ratio_gamma: float
    infinite: dict


def _sd(a):
    a = np.asarray(a, float)
    if a.shape[0] < 2:
        return np.zeros(a.shape[1:])
    return a.std(axis=0, ddof=1)


# ------------------------------------------------------------ block plumbing


def _n_blocks(m):
    return -(-int(m) // BLOCK)


def _map_blocks(fn, cfg: RunConfig):
    """Run ``fn(block)`` over all blocks and stack the rows, truncated to M."""
    blocks = range(_n_blocks(cfg.m_samples))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(fn, blocks))
    else:
        parts = [fn(b) for b in blocks]
    return np.concatenate(parts, axis=0)[: cfg.m_samples]


def _auto_boundary(model, boundary: str) -> BoundarySpec:
    if boundary != "auto":
        return BoundarySpec(boundary)
    if isinstance(model, (BachelierSV, BlackScholesSV)) or (isinstance(model, SABR) and model.beta == 1.0):
        return BoundarySpec("closed_form")
    return BoundarySpec("cond_mean")


def pde_setup(model, volspec, cfg: RunConfig, K=None):
    """(PDE time grid, space grid, boundary spec) for a configuration."""
    tgrid = cfg.fine_grid.snapped(cfg.j_steps)
    if cfg.domain is None:
        a, b = default_domain(model, cfg.x0, volspec.vol_scale, cfg.T, K)
    else:
        a, b = (float(v) for v in cfg.domain)
    return tgrid, SpaceGrid(a, b, cfg.n_space), _auto_boundary(model, cfg.boundary)


class _GridInterp:
    """Linear interpolation weights from a uniform space grid to points."""

    def __init__(self, sgrid: SpaceGrid, xs):
        xs = np.asarray(xs, float)
        if np.any(xs < sgrid.a - 1e-12) or np.any(xs > sgrid.b + 1e-12):
            raise ValueError("evaluation points leave the PDE domain")
        pos = (xs - sgrid.a) / sgrid.dx
        near = np.rint(pos)
        pos = np.where(np.abs(pos - near) < 1e-9, near, pos)
        i = np.clip(np.floor(pos).astype(int), 0, sgrid.n - 1)
        self.i = i
        self.w = pos - i

    def __call__(self, u):
        return u[:, self.i] * (1.0 - self.w) + u[:, self.i + 1] * self.w


# ------------------------------------------------------------ estimators


def full_mc_samples(model, payoff, volspec, cfg: RunConfig, xs) -> np.ndarray:
    """Per-sample payoffs phi(X_T(x)) of shape (M, len(xs)).

    Euler steps X += f(X) dI + g(X) v dB on the fine grid; the same (W, B)
    draws drive every starting point.
    """
    xs = np.asarray(xs, float)
    grid = cfg.fine_grid
    n = grid.n_steps
    sq = np.sqrt(grid.dt)

    def run(block):
        samples = simulate_block(volspec, grid, cfg.seed, block, cfg.v_cap)
        dB = sample_rng(cfg.seed, block, STREAM_PRICE).standard_normal((BLOCK, n)) * sq
        v = np.stack([s.v for s in samples])
        dI = np.stack([np.diff(s.I) for s in samples])
        X = np.repeat(xs[None, :], BLOCK, axis=0)
        for k in range(n):
            c = coeffs(model, grid.times[k], X)
            X = X + c.f * dI[:, k : k + 1] + c.g * (v[:, k : k + 1] * dB[:, k : k + 1])
        bad = ~np.all(np.isfinite(X), axis=1)
        if np.any(bad):
            raise MCError("non-finite price path", sample=block * BLOCK + int(np.argmax(bad)))
        return payoff_eval(payoff, X)

    return _map_blocks(run, cfg)


def partial_mc_samples(model, payoff, volspec, cfg: RunConfig, xs=None, K=None):
    """Per-sample RPDE values u(0, .) of shape (M, len(xs)) (or all nodes).

    Returns ``(values, sgrid)``.
    """
    tgrid, sgrid, bnd = pde_setup(model, volspec, cfg, K)
    fine = cfg.fine_grid
    interp = None if xs is None else _GridInterp(sgrid, xs)

    def run(block):
        samples = simulate_block(volspec, fine, cfg.seed, block, cfg.v_cap)
        drivers = [coarsen(integrate_vol(s), tgrid) for s in samples]
        try:
            u0 = solve_rpde_batch(model, payoff, drivers, sgrid, cfg.scheme, bnd, cfg.stencil)
        except ArithmeticError as exc:
            idx = getattr(exc, "sample", None)
            raise MCError(f"RPDE solve failed: {exc}",
                          sample=None if idx is None else block * BLOCK + idx) from exc
        return u0 if interp is None else interp(u0)

    return _map_blocks(run, cfg), sgrid


def full_mc_price(model, payoff, volspec, cfg: RunConfig, xs) -> PriceReport:
    return PriceReport(xs, full_mc_samples(model, payoff, volspec, cfg, xs))


def partial_mc_price(model, payoff, volspec, cfg: RunConfig, xs, K=None) -> PriceReport:
    vals, _ = partial_mc_samples(model, payoff, volspec, cfg, xs, K)
    return PriceReport(xs, vals)


def conditional_sde_price(model, payoff, frozen: LiftedPath, xs, inner_m=20000, seed=0, index=0):
    """E[phi(X_T(x)) | driver] by simulation; returns ``(mean, stderr)`` arrays.

    Per fine step, X += f0 V dt + f dY + f df/dx dY**2 / 2 + g v dB, i.e. an
    Euler step on the drift-corrected equation plus the second-order term the
    rough transport needs on a coarse step.  Inner draws use a dedicated stream
    addressed by (seed, index) and are shared by all starting points.
    """
    if inner_m < 100:
        raise ValueError("inner_m must be at least 100")
    xs = np.atleast_1d(np.asarray(xs, float))
    dY = frozen.rp.increments
    dbr = frozen.br.increments
    root = frozen.br.root
    dt = frozen.grid.dt
    times = frozen.grid.times
    rng = sample_rng(seed, index, STREAM_INNER)
    X = np.repeat(xs[None, :], inner_m, axis=0)
    for k in range(dY.size):
        c = coeffs(model, times[k], X)
        dB = rng.standard_normal(inner_m)[:, None] * math.sqrt(dt[k])
        X = X + c.f0 * dbr[k] + c.f * dY[k] + 0.5 * c.f * c.dxf * dY[k] ** 2 + c.g * root[k] * dB
        if not np.all(np.isfinite(X)):
            raise MCError("non-finite inner path", sample=index)
    vals = payoff_eval(payoff, X)
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(inner_m)


# ------------------------------------------------------------ greeks and stats


def snap_bump(h: float, dx: Optional[float]):
    """Nearest positive multiple of ``dx`` (or ``h`` itself when dx is None)."""
    if dx is None:
        return h, ""
    k = max(1, int(round(h / dx)))
    hs = k * dx
    if abs(hs - h) > 1e-12 * max(1.0, h):
        return hs, f"bump snapped from {h!r} to {hs!r} (dx = {dx!r})"
    return hs, ""


def greeks_fd(pricer: Callable, xs, h: float, dx: Optional[float] = None) -> GreeksReport:
    """Difference quotients from per-sample price curves.

    ``pricer(points)`` must return an (M, len(points)) array in which column j
    depends only on points[j] and the common random numbers.  All three
    bumped curves come from a single call.
    """
    xs = np.asarray(xs, float)
    h, note = snap_bump(h, dx)
    n = xs.size
    vals = pricer(np.concatenate((xs - h, xs, xs + h)))
    lo, mid, hi = vals[:, :n], vals[:, n : 2 * n], vals[:, 2 * n :]
    delta = (hi - mid) / h
    gamma = (hi - 2.0 * mid + lo) / (h * h)
    return GreeksReport(xs, h, delta, gamma, mid, note)


def _max_ratio(num, den):
    num = np.asarray(num, float)
    den = np.asarray(den, float)
    zero = den == 0
    if np.any(zero & (num > 0)):
        return math.inf, True
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(zero, 0.0, num / np.where(zero, 1.0, den))
    return float(np.max(np.abs(r))), False


def variance_ratios(full: GreeksReport, partial: GreeksReport) -> VarianceReport:
    """Pointwise sample standard deviations and their max-norm ratios."""
    if full.x.shape != partial.x.shape or np.any(full.x != partial.x):
        raise ValueError("reports must share the x grid")
    if full.price_samples.shape[0] != partial.price_samples.shape[0]:
        raise ValueError("reports must have the same number of samples")
    sp = (full.sigma_price, partial.sigma_price)
    sd = (full.sigma_delta, partial.sigma_delta)
    sg = (full.sigma_gamma, partial.sigma_gamma)
    rp, ip = _max_ratio(*sp)
    rd, idl = _max_ratio(*sd)
    rg, ig = _max_ratio(*sg)
    return VarianceReport(full.x, *sp, *sd, *sg, rp, rd, rg,
                          {"price": ip, "delta": idl, "gamma": ig})


def strong_relative_error(u_fd, u_ref) -> float:
    """Sample average of ||u_fd - u_ref||_2 / ||u_ref||_2 over rows."""
    u_fd = np.atleast_2d(np.asarray(u_fd, float))
    u_ref = np.atleast_2d(np.asarray(u_ref, float))
    if u_fd.shape != u_ref.shape:
        raise ValueError("fields must have matching shapes")
    norms = np.linalg.norm(u_ref, axis=1)
    if np.any(norms == 0):
        raise ValueError("reference field has zero norm")
    return float(np.mean(np.linalg.norm(u_fd - u_ref, axis=1) / norms))


def reference_curves(model, payoff, drivers: Sequence[LiftedPath], x, inner_m=20000, seed=0,
                     fine_drivers=None):
    """Per-sample reference values u(0, x): closed form when available,
    otherwise the conditional-SDE oracle on the fine drivers."""
    if isinstance(model, BachelierSV):
        fn = closed_form.rt_bachelier
    elif isinstance(model, BlackScholesSV) or (isinstance(model, SABR) and model.beta == 1.0):
        fn = closed_form.rt_blackscholes
    else:
        fn = None
    if fn is not None:
        return np.array([fn(payoff, 0.0, x, model.rho, d.rp.y[-1] - d.rp.y[0], d.br.bracket[-1])
                         for d in drivers])
    src = fine_drivers if fine_drivers is not None else drivers
    return np.array([conditional_sde_price(model, payoff, d, x, inner_m, seed, i)[0]
                     for i, d in enumerate(src)])


def convergence_study(model, payoff, volspec, cfg: RunConfig, n_spaces=(30, 60, 90),
                      schemes=("order1", "order2"), K=None):
    """Strong relative errors per (n_space, scheme) on the first M samples.

    Returns a list of dicts with keys n_space and eps_<scheme>.  The domain is
    fixed by the first configuration so every row shares [a, b].
    """
    fine = cfg.fine_grid
    tgrid, sgrid0, bnd = pde_setup(model, volspec, cfg, K)
    samples = []
    for b in range(_n_blocks(cfg.m_samples)):
        samples.extend(simulate_block(volspec, fine, cfg.seed, b, cfg.v_cap))
    samples = samples[: cfg.m_samples]
    fine_lifts = [integrate_vol(s) for s in samples]
    drivers = [coarsen(lp, tgrid) for lp in fine_lifts]
    rows = []
    for ns in n_spaces:
        sg = SpaceGrid(sgrid0.a, sgrid0.b, int(ns))
        # reference on every node, boundary rows included
        xs = sg.x
        ref = reference_curves(model, payoff, drivers, xs, cfg.inner_m, cfg.seed, fine_lifts)
        row = {"n_space": int(ns)}
        for sch in schemes:
            u = solve_rpde_batch(model, payoff, drivers, sg, sch, bnd, cfg.stencil)
            row[f"eps_{sch}"] = strong_relative_error(u, ref)
        rows.append(row)
    return rows
