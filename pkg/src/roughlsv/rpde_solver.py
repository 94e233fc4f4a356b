"""
Backward implicit-explicit finite differences for the pathwise pricing RPDE

    -d_t u = L_t[u] d[Y]_t + Gamma_t[u] dY^g_t,   u(T, .) = payoff,

with L = g**2/2 d_xx + f0 d_x and Gamma = f d_x, on [a, b] with Dirichlet data.

One backward step over [t_j, t_{j+1}] reads

    (Id - d[Y]_j L_j) u_j = u_{j+1} + Gamma_{j+1} u_{j+1} dY_j
                            (+ 1/2 Gamma'_{j+1} u_{j+1} dY_j**2   second order)

where Gamma' = Gamma[Gamma[.]] = -2 f0 d_x + f**2 d_xx.  Second derivatives are
central differences.  First derivatives are central by default, which makes the
explicit Gamma/Gamma' pair a Lax-Wendroff step of second order in dx; the
one-sided forward stencil (first order in dx) and an upwind variant are
available through ``stencil``.  The first-order scheme
drives the transport term with the piecewise-linear interpolation of Y on the PDE
time grid, whose increments coincide with those of Y.

The sweep is vectorised over a batch of drivers: the tridiagonal systems of all
samples are eliminated together, node by node.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import closed_form
from .lsv_models import SABR, BachelierSV, BlackScholesSV, coeffs, gamma_prime_coeffs, payoff_eval
from .rough_core import LiftedPath, TimeGrid

__all__ = [
    "SolverError",
    "SpaceGrid",
    "BoundarySpec",
    "RPDEField",
    "StepOperators",
    "tridiagonal_solve",
    "assemble_step_operators",
    "resolve_boundary",
    "solve_rpde",
    "solve_rpde_batch",
    "conditional_mean_flow",
    "default_domain",
]

SCHEMES = ("order1", "order2")
STENCILS = ("central", "forward", "upwind")
DEFAULT_STENCIL = "central"
BOUNDARY_KINDS = ("closed_form", "cond_mean", "frozen")


class SolverError(ArithmeticError):
    """Numerical failure inside a backward sweep."""

    def __init__(self, msg, step=None, sample=None):
        super().__init__(msg)
        self.step = step
        self.sample = sample


@dataclass(frozen=True)
class SpaceGrid:
    a: float
    b: float
    n: int  # number of space steps; nodes x_0 .. x_n

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
            raise ValueError("space grid needs finite a < b")
        if self.n < 3:
            raise ValueError("space grid needs at least 3 steps")

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n + 1)


@dataclass(frozen=True)
class BoundarySpec:
    kind: str = "closed_form"

    def __post_init__(self):
        if self.kind not in BOUNDARY_KINDS:
            raise ValueError(f"boundary kind must be one of {BOUNDARY_KINDS}")


@dataclass(eq=False)
class RPDEField:
    """Space-time solution; row j holds u(t_j, x_0..x_N)."""

    tgrid: TimeGrid
    sgrid: SpaceGrid
    u: np.ndarray
    scheme: str
    dominance_violation: float = 0.0
    max_abs: float = 0.0

    @property
    def u0(self) -> np.ndarray:
        return self.u[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"{x:.17g}" for x in self.sgrid.x])
            for t, row in zip(self.tgrid.times, self.u):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def default_domain(model, x0: float, vol_scale: float, T: float, K: Optional[float] = None):
    """[a, b] used when the configuration asks for an automatic domain."""
    if isinstance(model, BachelierSV):
        half = 6.0 * vol_scale * math.sqrt(T)
        return x0 - half, x0 + half
    floor = 1e-8 * (K if K is not None else x0)
    return max(floor, x0 / 4.0), 2.5 * x0


# ------------------------------------------------------------ linear algebra


def tridiagonal_solve(sub, diag, sup, rhs):
    """Solve a tridiagonal system by forward elimination and back substitution.

    Row i reads ``sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]``;
    ``sub[0]`` and ``sup[-1]`` are ignored.  Trailing axes are batch axes.
    """
    sub = np.asarray(sub, float)
    diag = np.asarray(diag, float)
    sup = np.asarray(sup, float)
    rhs = np.asarray(rhs, float)
    n = rhs.shape[0]
    shape = np.broadcast_shapes(sub.shape, diag.shape, sup.shape, rhs.shape)
    sub, diag, sup, rhs = (np.broadcast_to(a, shape) for a in (sub, diag, sup, rhs))
    cp = np.empty(shape)
    dp = np.empty(shape)
    piv = diag[0]
    if np.any(piv == 0):
        raise SolverError("zero pivot in row 0")
    cp[0] = sup[0] / piv
    dp[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - sub[i] * cp[i - 1]
        if np.any(piv == 0):
            raise SolverError(f"zero pivot in row {i}")
        cp[i] = sup[i] / piv
        dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / piv
    x = np.empty(shape)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


# ------------------------------------------------------------ stencils


@dataclass(frozen=True, eq=False)
class StepOperators:
    """Implicit tridiagonal rows and explicit row weights of one step.

    The explicit part maps u_{j+1} to
    ``u + w_minus*u[n-1] + w_zero*u[n] + w_plus*u[n+1]`` on interior rows.
    Rows 0 and N are Dirichlet rows (identity, no explicit weights).
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    w_minus: np.ndarray
    w_zero: np.ndarray
    w_plus: np.ndarray

    def dominance_violation(self) -> float:
        slack = np.abs(self.diag) - np.abs(self.sub) - np.abs(self.sup)
        return float(max(0.0, -np.min(slack)))


def _pin_dirichlet(*arrs):
    for a in arrs:
        a[0] = 0.0
        a[-1] = 0.0


def assemble_step_operators(model, t_j, t_next, sgrid: SpaceGrid, dY, dbr, scheme="order2",
                            stencil=DEFAULT_STENCIL) -> StepOperators:
    """Stencil coefficients for the step [t_j, t_next].

    ``dY`` and ``dbr`` may be scalars or arrays over a batch (trailing axis).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    if stencil not in STENCILS:
        raise ValueError(f"stencil must be one of {STENCILS}")
    x = sgrid.x
    dx = sgrid.dx
    dY = np.asarray(dY, float)
    dbr = np.asarray(dbr, float)
    if np.any(dbr < 0):
        raise SolverError("negative bracket increment")
    bshape = (x.size,) + dY.shape

    col = (-1,) + (1,) * dY.ndim
    cj = coeffs(model, t_j, x)
    lam = 0.5 * (cj.g * cj.g).reshape(col) / dx**2 * dbr
    dm, d0, dp = _first_diff(cj.f0.reshape(col) / dx * dbr, stencil)
    # rows of Id - d[Y] L
    sub = np.broadcast_to(-lam - dm, bshape).copy()
    diag = np.broadcast_to(1.0 + 2.0 * lam - d0, bshape).copy()
    sup = np.broadcast_to(-lam - dp, bshape).copy()
    sub[0] = sub[-1] = 0.0
    sup[0] = sup[-1] = 0.0
    diag[0] = diag[-1] = 1.0

    cn = coeffs(model, t_next, x)
    wm, w0, wp = _first_diff(cn.f.reshape(col) * dY / dx, stencil)
    if scheme == "order2":
        c1, c2 = gamma_prime_coeffs(model, t_next, x)
        half = 0.5 * dY * dY
        em, e0, ep = _first_diff(c1.reshape(col) * half / dx, stencil)
        d2 = c2.reshape(col) * half / dx**2
        wm, w0, wp = wm + em + d2, w0 + e0 - 2.0 * d2, wp + ep + d2
    w_minus, w_zero, w_plus = (np.broadcast_to(w, bshape).copy() for w in (wm, w0, wp))
    _pin_dirichlet(w_minus, w_zero, w_plus)
    return StepOperators(sub, diag, sup, w_minus, w_zero, w_plus)


def _first_diff(c, stencil):
    """Weights on (u[n-1], u[n], u[n+1]) of c * du/dx times dx."""
    zero = np.zeros_like(c)
    if stencil == "central":
        return -0.5 * c, zero, 0.5 * c
    if stencil == "forward":
        return zero, -c, c
    # upwind: forward where c >= 0, backward where c < 0
    fwd = c >= 0
    return np.where(fwd, zero, -c), np.where(fwd, -c, c), np.where(fwd, c, zero)


# ------------------------------------------------------------ boundaries


def conditional_mean_flow(model, x_start, dY, dbr):
    """Deterministic flow m(t_j -> T) of dm = f0(m) d[Y] + f(m) dY^g.

    Returns an array of shape (J+1,) + x_start.shape with entry j the flow from
    t_j to T started at ``x_start``.  Bachelier and Black-Scholes forms use the
    exact flows; SABR integrates step by step with a second-order expansion.
    """
    dY = np.asarray(dY, float)
    dbr = np.asarray(dbr, float)
    J = dY.size
    x_start = np.asarray(x_start, float)
    Y_tail = np.concatenate((np.cumsum(dY[::-1])[::-1], [0.0]))
    B_tail = np.concatenate((np.cumsum(dbr[::-1])[::-1], [0.0]))
    rho = model.rho
    if isinstance(model, BachelierSV):
        return x_start[None, ...] + rho * Y_tail.reshape((-1,) + (1,) * x_start.ndim)
    if isinstance(model, BlackScholesSV) or (isinstance(model, SABR) and model.beta == 1.0):
        e = np.exp(rho * Y_tail - 0.5 * rho * rho * B_tail)
        return x_start[None, ...] * e.reshape((-1,) + (1,) * x_start.ndim)
    # all start times at once: state[j] evolves from t_j
    state = np.broadcast_to(x_start, (J + 1,) + x_start.shape).astype(float).copy()
    for k in range(J):
        live = slice(0, k + 1)
        c = coeffs(model, 0.0, state[live])
        xe = np.maximum(state[live], model.x_floor)
        state[live] = xe + c.f0 * dbr[k] + c.f * dY[k] + 0.5 * c.f * c.dxf * dY[k] ** 2
    return np.maximum(state, model.x_floor)


def resolve_boundary(boundary: BoundarySpec, model, payoff, driver: LiftedPath, a: float, b: float):
    """Dirichlet data (psi_a, psi_b) on the driver's time grid."""
    kind = boundary.kind if isinstance(boundary, BoundarySpec) else str(boundary)
    times = driver.grid.times
    J = times.size - 1
    if kind == "frozen":
        pa, pb = payoff_eval(payoff, np.array([a, b]))
        return np.full(J + 1, pa), np.full(J + 1, pb)
    y = driver.rp.y
    br = driver.br.bracket
    y_tail = y[-1] - y
    b_tail = br[-1] - br
    if kind == "closed_form":
        if isinstance(model, BachelierSV):
            fn = closed_form.rt_bachelier
        elif isinstance(model, BlackScholesSV) or (isinstance(model, SABR) and model.beta == 1.0):
            fn = closed_form.rt_blackscholes
        else:
            raise ValueError("closed-form boundaries need the Bachelier or Black-Scholes family")
        pa = np.asarray(fn(payoff, times, a, model.rho, y_tail, b_tail), float)
        pb = np.asarray(fn(payoff, times, b, model.rho, y_tail, b_tail), float)
        return pa, pb
    if kind == "cond_mean":
        flow = conditional_mean_flow(model, np.array([a, b]), np.diff(y), np.diff(br))
        vals = payoff_eval(payoff, flow)
        return vals[:, 0], vals[:, 1]
    raise ValueError(f"unknown boundary kind {kind!r}")


# ------------------------------------------------------------ sweep


def _apply_explicit(ops: StepOperators, u):
    out = u + ops.w_zero * u
    out[1:-1] += ops.w_minus[1:-1] * u[:-2] + ops.w_plus[1:-1] * u[2:]
    return out


def _sweep(model, payoff, tgrid: TimeGrid, sgrid: SpaceGrid, dY, dbr, psi_a, psi_b, scheme,
           stencil=DEFAULT_STENCIL, keep_field=False):
    """Backward sweep for a batch; dY, dbr of shape (J, m), psi of shape (J+1, m)."""
    J, m = dY.shape
    x = sgrid.x
    u = np.repeat(payoff_eval(payoff, x)[:, None], m, axis=1).astype(float)
    if not np.all(np.isfinite(u)):
        raise SolverError("payoff is not finite on the space grid")
    times = tgrid.times
    field_ = np.empty((J + 1, x.size, m)) if keep_field else None
    if keep_field:
        field_[J] = u
    worst = 0.0
    for j in range(J - 1, -1, -1):
        ops = assemble_step_operators(model, times[j], times[j + 1], sgrid, dY[j], dbr[j], scheme, stencil)
        worst = max(worst, ops.dominance_violation())
        # both operators annihilate constants; working with u - c keeps a
        # constant field exactly constant despite rounding in the row sums
        c = u[0].copy()
        rhs = _apply_explicit(ops, u - c)
        rhs[0] = psi_a[j] - c
        rhs[-1] = psi_b[j] - c
        u = tridiagonal_solve(ops.sub, ops.diag, ops.sup, rhs) + c
        if not np.all(np.isfinite(u)):
            bad = int(np.nonzero(~np.all(np.isfinite(u), axis=0))[0][0])
            raise SolverError(f"non-finite values at time step {j}", step=j, sample=bad)
        if keep_field:
            field_[j] = u
    return u, field_, worst


def _driver_steps(driver: LiftedPath):
    dY = np.diff(driver.rp.y)
    dbr = np.diff(driver.br.bracket)
    if np.any(dbr < 0):
        raise SolverError("negative bracket increment")
    return dY, dbr


def solve_rpde(model, payoff, driver: LiftedPath, sgrid: SpaceGrid, scheme="order2",
               boundary=BoundarySpec("closed_form"), stencil=DEFAULT_STENCIL) -> RPDEField:
    """Solve the RPDE along one driver given on the PDE time grid."""
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    dY, dbr = _driver_steps(driver)
    pa, pb = resolve_boundary(boundary, model, payoff, driver, sgrid.a, sgrid.b)
    _, fld, worst = _sweep(model, payoff, driver.grid, sgrid, dY[:, None], dbr[:, None],
                           pa[:, None], pb[:, None], scheme, stencil, keep_field=True)
    u = fld[..., 0]
    # terminal and boundary pinning
    u[-1] = payoff_eval(payoff, sgrid.x)
    u[:, 0] = pa
    u[:, -1] = pb
    return RPDEField(driver.grid, sgrid, u, scheme, worst, float(np.max(np.abs(u))))


def solve_rpde_batch(model, payoff, drivers: Sequence[LiftedPath], sgrid: SpaceGrid,
                     scheme="order2", boundary=BoundarySpec("closed_form"), stencil=DEFAULT_STENCIL):
    """u(t_0, .) for each driver; returns an array of shape (m, N+1).

    All drivers must share one time grid.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    grid = drivers[0].grid
    if any(d.grid != grid for d in drivers):
        raise ValueError("drivers in a batch must share the PDE time grid")
    steps = [_driver_steps(d) for d in drivers]
    dY = np.stack([s[0] for s in steps], axis=1)
    dbr = np.stack([s[1] for s in steps], axis=1)
    bnd = [resolve_boundary(boundary, model, payoff, d, sgrid.a, sgrid.b) for d in drivers]
    pa = np.stack([p[0] for p in bnd], axis=1)
    pb = np.stack([p[1] for p in bnd], axis=1)
    u, _, _ = _sweep(model, payoff, grid, sgrid, dY, dbr, pa, pb, scheme, stencil)
    u = u.T.copy()
    u[:, 0] = pa[0]
    u[:, -1] = pb[0]
    return u
