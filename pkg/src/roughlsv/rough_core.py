"""
One-dimensional discrete rough paths with non-decreasing Lipschitz brackets.

A rough path is stored by its level-1 values ``y[i] = Y_{t_i}`` and its anchored
level-2 values ``yy0[i] = YY_{0,t_i}``.  Any window value is rebuilt from the
anchored values with Chen's relation,

    YY_{s,t} = YY_{0,t} - YY_{0,s} - Y_{0,s} * Y_{s,t},

so additivity holds by construction for every grid triple.  Brackets are kept
alongside as ``[Y]_{t_i}`` together with the per-step rate ``V = d[Y]/dt`` and
its root ``v = sqrt(V)``.

In one dimension the antisymmetric part of the second level vanishes, so the
geometric second level of any window is ``0.5 * Y_{s,t}**2``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "RoughPathError",
    "TimeGrid",
    "DiscreteRoughPath",
    "BracketPath",
    "LiftedPath",
    "ito_lift",
    "canonical_lift",
    "bracket_from_levels",
    "bracket_from_rate",
    "geometrify",
    "degeometrify",
    "coarsen",
    "chen_defect",
    "holder_estimate",
    "MONO_RTOL",
]

# relative tolerance (w.r.t. the terminal bracket) for bracket non-decrease
MONO_RTOL = 1e-12


class RoughPathError(ValueError):
    """Raised when a discrete rough path violates its structural contract."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes."""

    times: np.ndarray

    def __post_init__(self):
        t = _frozen(self.times)
        if t.ndim != 1 or t.size < 2:
            raise RoughPathError("a time grid needs at least two nodes")
        if not np.all(np.isfinite(t)):
            raise RoughPathError("time grid contains non-finite nodes")
        if not np.all(np.diff(t) > 0):
            raise RoughPathError("time grid must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, n_steps: int, T: float = 1.0, t0: float = 0.0) -> "TimeGrid":
        if n_steps < 1:
            raise RoughPathError("n_steps must be >= 1")
        return cls(np.linspace(t0, T, int(n_steps) + 1))

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.times.size

    def is_uniform(self, rtol: float = 1e-10) -> bool:
        dt = self.dt
        return bool(np.allclose(dt, dt[0], rtol=rtol, atol=0.0))

    def snapped(self, n_steps: int) -> "TimeGrid":
        """Sub-grid of ``n_steps`` steps whose nodes are the fine nodes nearest
        to a uniform partition of the same interval."""
        if n_steps < 1 or n_steps > self.n_steps:
            raise RoughPathError("cannot snap to more steps than the fine grid has")
        idx = np.rint(np.linspace(0, self.n_steps, n_steps + 1)).astype(int)
        return TimeGrid(self.times[idx])

    def indices_of(self, coarse: "TimeGrid", atol: float = 1e-12) -> np.ndarray:
        """Indices of the nodes of ``coarse`` inside this grid."""
        idx = np.searchsorted(self.times, coarse.times)
        idx = np.clip(idx, 0, self.times.size - 1)
        # nearest neighbour on either side
        left = np.clip(idx - 1, 0, self.times.size - 1)
        pick = np.where(
            np.abs(self.times[left] - coarse.times) < np.abs(self.times[idx] - coarse.times),
            left,
            idx,
        )
        scale = atol * max(1.0, abs(self.T))
        if np.any(np.abs(self.times[pick] - coarse.times) > scale):
            raise RoughPathError("coarse grid node is not a node of the fine grid")
        return pick

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.times.shape == other.times.shape and bool(np.all(self.times == other.times))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DiscreteRoughPath:
    """Level-1 values and anchored level-2 values on a grid.

    ``yy0_lo`` optionally holds the rounding error of ``yy0`` (the exact level
    is ``yy0 + yy0_lo``); :func:`geometrify` sets it so that the shift by the
    bracket can be undone bit for bit.
    """

    grid: TimeGrid
    y: np.ndarray
    yy0: np.ndarray
    yy0_lo: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _frozen(self.y)
        yy0 = _frozen(self.yy0)
        n = len(self.grid)
        if y.shape != (n,) or yy0.shape != (n,):
            raise RoughPathError(f"level arrays must have length {n}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yy0))):
            raise RoughPathError("rough path contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "yy0", yy0)
        if self.yy0_lo is not None:
            lo = _frozen(self.yy0_lo)
            if lo.shape != (n,) or not np.all(np.isfinite(lo)):
                raise RoughPathError("yy0_lo must be a finite array matching yy0")
            object.__setattr__(self, "yy0_lo", lo)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.y)

    def inc(self, s: int, t: int) -> float:
        return float(self.y[t] - self.y[s])

    def window(self, s: int, t: int) -> float:
        """Second level YY_{s,t} rebuilt by Chen's relation."""
        y0s = self.y[s] - self.y[0]
        return float(self.yy0[t] - self.yy0[s] - y0s * (self.y[t] - self.y[s]))

    def windows(self, s, t) -> np.ndarray:
        s = np.asarray(s)
        t = np.asarray(t)
        y0s = self.y[s] - self.y[0]
        return self.yy0[t] - self.yy0[s] - y0s * (self.y[t] - self.y[s])

    def step_windows(self) -> np.ndarray:
        """YY_{t_i, t_{i+1}} for every grid step."""
        idx = np.arange(len(self.grid) - 1)
        return self.windows(idx, idx + 1)


@dataclass(frozen=True, eq=False)
class BracketPath:
    """Bracket values with per-step rate and root."""

    grid: TimeGrid
    bracket: np.ndarray
    rate: np.ndarray
    root: np.ndarray
    n_clamped: int = 0

    def __post_init__(self):
        n = len(self.grid)
        b = _frozen(self.bracket)
        r = _frozen(self.rate)
        v = _frozen(self.root)
        if b.shape != (n,) or r.shape != (n - 1,) or v.shape != (n - 1,):
            raise RoughPathError("bracket arrays have inconsistent lengths")
        if b[0] != 0.0:
            raise RoughPathError("bracket must start at zero")
        if np.any(r < 0) or not np.all(np.isfinite(b)):
            raise RoughPathError("bracket rate must be finite and nonnegative")
        object.__setattr__(self, "bracket", b)
        object.__setattr__(self, "rate", r)
        object.__setattr__(self, "root", v)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.bracket)

    @classmethod
    def from_values(cls, grid: TimeGrid, bracket: np.ndarray) -> "BracketPath":
        """Build rate and root from bracket values, clamping tiny negative
        increments (within the monotonicity tolerance) to zero."""
        b = np.asarray(bracket, dtype=float)
        if b.shape != (len(grid),):
            raise RoughPathError("bracket length does not match grid")
        if not np.all(np.isfinite(b)):
            raise RoughPathError("bracket contains non-finite values")
        b = b - b[0]
        db = np.diff(b)
        tau = MONO_RTOL * max(abs(b[-1]), np.max(np.abs(b)), np.finfo(float).tiny)
        if np.any(db < -tau):
            k = int(np.argmin(db))
            raise RoughPathError(
                f"bracket decreases by {-db[k]:.3e} at step {k} (tolerance {tau:.3e})"
            )
        neg = db < 0
        n_clamped = int(np.count_nonzero(neg))
        if n_clamped:
            db = np.where(neg, 0.0, db)
            b = np.concatenate(([0.0], np.cumsum(db)))
        rate = db / grid.dt
        return cls(grid, b, rate, np.sqrt(rate), n_clamped)


@dataclass(frozen=True, eq=False)
class LiftedPath:
    """A rough path paired with its Lipschitz bracket on a shared grid."""

    rp: DiscreteRoughPath
    br: BracketPath

    def __post_init__(self):
        if self.rp.grid != self.br.grid:
            raise RoughPathError("rough path and bracket must share a grid")

    @property
    def grid(self) -> TimeGrid:
        return self.rp.grid

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Y", "YY0", "bracket"])
            for row in zip(self.grid.times, self.rp.y, self.rp.yy0, self.br.bracket):
                w.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path) -> "LiftedPath":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        grid = TimeGrid(data[:, 0])
        rp = DiscreteRoughPath(grid, data[:, 1], data[:, 2])
        return cls(rp, BracketPath.from_values(grid, data[:, 3]))


def _check_increments(increments, grid: TimeGrid) -> np.ndarray:
    dy = np.asarray(increments, dtype=float)
    if dy.ndim != 1 or dy.size != grid.n_steps:
        raise RoughPathError(
            f"expected {grid.n_steps} increments, got shape {dy.shape}"
        )
    if not np.all(np.isfinite(dy)):
        raise RoughPathError("increments must be finite")
    return dy


def ito_lift(increments: Sequence[float], grid: TimeGrid) -> DiscreteRoughPath:
    """Itô lift of a path given by its increments (left-point Riemann sums)."""
    dy = _check_increments(increments, grid)
    y = np.concatenate(([0.0], np.cumsum(dy)))
    yy0 = np.concatenate(([0.0], np.cumsum(y[:-1] * dy)))
    return DiscreteRoughPath(grid, y, yy0)


def canonical_lift(increments: Sequence[float], grid: TimeGrid) -> DiscreteRoughPath:
    """Lift of the piecewise-linear interpolation: YY_{0,t} = Y_{0,t}**2 / 2."""
    dy = _check_increments(increments, grid)
    y = np.concatenate(([0.0], np.cumsum(dy)))
    return DiscreteRoughPath(grid, y, 0.5 * y * y)


def bracket_from_levels(rp: DiscreteRoughPath) -> BracketPath:
    """[Y]_t = Y_{0,t}**2 - 2 YY_{0,t}.

    For an Itô lift this telescopes to the running sum of squared increments.
    """
    y0t = rp.y - rp.y[0]
    from_levels = y0t * y0t - 2.0 * rp.yy0
    try:
        return BracketPath.from_values(rp.grid, from_levels)
    except RoughPathError as exc:
        raise RoughPathError(f"lift is not Itô-like: {exc}") from None


def bracket_from_rate(V: Sequence[float], grid: TimeGrid) -> BracketPath:
    """Bracket of a path with left-point rate ``V`` per step."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 1 or V.size not in (grid.n_steps, len(grid)):
        raise RoughPathError("rate must have one value per step (or per node)")
    V = V[: grid.n_steps]
    if not np.all(np.isfinite(V)):
        raise RoughPathError("rate must be finite")
    if np.any(V < 0):
        raise RoughPathError("rate must be nonnegative")
    b = np.concatenate(([0.0], np.cumsum(V * grid.dt)))
    return BracketPath(grid, b, V, np.sqrt(V))


def _two_sum(a, b):
    """s = fl(a + b) and the exact error e with s + e = a + b."""
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def geometrify(lp: LiftedPath) -> DiscreteRoughPath:
    """Geometric rough path YY^g = YY + 0.5 * delta[Y].

    The rounding error of the shift is kept in ``yy0_lo``.
    """
    rp, br = lp.rp, lp.br
    if rp.grid != br.grid:
        raise RoughPathError("grid mismatch")
    hi, lo = _two_sum(rp.yy0, 0.5 * br.bracket)
    if rp.yy0_lo is not None:
        lo = lo + rp.yy0_lo
    return DiscreteRoughPath(rp.grid, rp.y, hi, lo)


def degeometrify(rpg: DiscreteRoughPath, br: BracketPath) -> DiscreteRoughPath:
    """Inverse of :func:`geometrify` for a given bracket.

    With the error term carried by ``geometrify`` the round trip returns the
    original second level exactly.
    """
    if rpg.grid != br.grid:
        raise RoughPathError("grid mismatch")
    s, t = _two_sum(rpg.yy0, -0.5 * br.bracket)
    lo = 0.0 if rpg.yy0_lo is None else rpg.yy0_lo
    return DiscreteRoughPath(rpg.grid, rpg.y, s + (t + lo))


def coarsen(lp: LiftedPath, coarse: TimeGrid) -> LiftedPath:
    """Restrict a lifted path to a sub-grid.

    Level 1 and the bracket are subsampled.  On each coarse step the geometric
    second level is that of the linear interpolation, and the result is
    de-geometrified with the subsampled bracket.
    """
    idx = lp.grid.indices_of(coarse)
    grid = TimeGrid(lp.grid.times[idx])
    y = lp.rp.y[idx]
    y0t = y - y[0]
    yyg = 0.5 * y0t * y0t
    b = lp.br.bracket[idx]
    br = BracketPath.from_values(grid, b - b[0])
    rp = DiscreteRoughPath(grid, y, yyg - 0.5 * br.bracket)
    return LiftedPath(rp, br)


def chen_defect(rp: DiscreteRoughPath, s: int, u: int, t: int, window=None) -> float:
    """|YY_{s,t} - YY_{s,u} - YY_{u,t} - Y_{s,u} Y_{u,t}|.

    Window values come from ``rp`` (where the relation holds by construction)
    unless a callable ``window(s, t)`` supplies them, e.g. from a table of
    second-level values produced elsewhere.
    """
    n = len(rp.grid)
    for k in (s, u, t):
        if not 0 <= k < n:
            raise IndexError(f"grid index {k} out of range [0, {n})")
    if not s <= u <= t:
        raise ValueError("need s <= u <= t")
    w = rp.window if window is None else window
    return abs(w(s, t) - w(s, u) - w(u, t) - rp.inc(s, u) * rp.inc(u, t))


def holder_estimate(rp: DiscreteRoughPath, alpha: float) -> tuple[float, float]:
    """Grid-restricted Hölder seminorms (||Y||_alpha, ||YY||_{2 alpha}).

    The suprema run over grid windows only, so these are lower bounds of the
    continuum norms.
    """
    if not 0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 1/2]")
    t = rp.grid.times
    n = t.size
    best1 = 0.0
    best2 = 0.0
    for s in range(n - 1):
        tt = np.arange(s + 1, n)
        h = t[tt] - t[s]
        d1 = np.abs(rp.y[tt] - rp.y[s]) / h**alpha
        d2 = np.abs(rp.windows(np.full_like(tt, s), tt)) / h ** (2 * alpha)
        best1 = max(best1, float(d1.max()))
        best2 = max(best2, float(d2.max()))
    return best1, best2
