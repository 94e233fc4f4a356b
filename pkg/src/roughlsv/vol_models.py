"""
Volatility backbones and their integrated martingale I = int v dW.

Two backbones are provided: a constant volatility and the rough Bergomi model

    v_t = xi0 * exp(eta * X_t - eta**2 / 2 * Var(X_t)),
    X_t = int_0^t (t - s)**(H - 1/2) dW_s.

``RoughBergomi(convention="variance")`` selects the more common reading in which
``xi0`` is a forward variance and the kernel is normalised by sqrt(2H):

    v_t = sqrt(xi0 * exp(eta * sqrt(2H) X_t - eta**2 / 2 * t**(2H))).

The Volterra process is simulated exactly together with the Brownian increments
by a Cholesky factorisation of their joint covariance.  Samples are generated in
fixed blocks of ``BLOCK`` consecutive sample indices, each block drawing its
normals from its own ``SeedSequence`` child, so a sample never depends on which
other samples are requested or on the number of workers.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import hyp2f1

from .rough_core import LiftedPath, TimeGrid, bracket_from_rate, ito_lift

__all__ = [
    "Constant",
    "RoughBergomi",
    "VolModelSpec",
    "VolSample",
    "VolSimulationError",
    "BLOCK",
    "N_MAX",
    "volterra_covariance",
    "volterra_factor",
    "simulate_backbone",
    "simulate_block",
    "integrate_vol",
    "sample_rng",
]

N_MAX = 2000
BLOCK = 32

# stream ids for SeedSequence spawn keys
STREAM_BACKBONE = 0
STREAM_PRICE = 1
STREAM_INNER = 2


class VolSimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Constant:
    vbar: float

    def __post_init__(self):
        if not (math.isfinite(self.vbar) and self.vbar >= 0):
            raise ValueError("vbar must be finite and nonnegative")

    @property
    def vol_scale(self) -> float:
        return float(self.vbar)


@dataclass(frozen=True)
class RoughBergomi:
    xi0: float = 0.235**2
    eta: float = 1.9
    hurst: float = 0.07
    convention: str = "variance"

    def __post_init__(self):
        if not self.xi0 > 0:
            raise ValueError("xi0 must be positive")
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        if not 0 < self.hurst < 1:
            raise ValueError("hurst must lie in (0, 1)")
        if self.convention not in ("literal", "variance"):
            raise ValueError("convention must be 'literal' or 'variance'")

    @property
    def vol_scale(self) -> float:
        """Typical size of v (its mean under the literal reading)."""
        return self.xi0 if self.convention == "literal" else math.sqrt(self.xi0)


VolModelSpec = Union[Constant, RoughBergomi]


@dataclass(frozen=True, eq=False)
class VolSample:
    """One backbone path on the fine grid.

    ``v`` and ``V`` live on the nodes, ``dW`` on the steps, and ``I`` is the
    left-point Itô sum of ``v * dW``.
    """

    grid: TimeGrid
    v: np.ndarray
    V: np.ndarray
    dW: np.ndarray
    I: np.ndarray
    v_max: float
    n_truncated: int = 0

    def to_csv(self, path) -> None:
        lp = integrate_vol(self)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "v", "V", "I", "bracket"])
            for row in zip(self.grid.times, self.v, self.V, self.I, lp.br.bracket):
                w.writerow([f"{x:.17g}" for x in row])


def sample_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    """Generator for sample/block ``index`` of a given stream.

    The spawn key ``(stream, index)`` makes every stream addressable directly,
    independent of generation order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def _check_uniform(grid: TimeGrid) -> float:
    if not grid.is_uniform():
        raise ValueError("backbone simulation needs a uniform grid")
    if grid.times[0] != 0.0:
        raise ValueError("backbone grids start at t = 0")
    return float(grid.dt[0])


def _rl_cov(s: np.ndarray, t: np.ndarray, H: float) -> np.ndarray:
    """Cov(X_s, X_t) for the Riemann-Liouville process, s, t > 0."""
    g = 0.5 - H
    lo = np.minimum(s, t)
    hi = np.maximum(s, t)
    x = lo / hi
    return lo ** (1.0 - g) * hi ** (-g) * hyp2f1(g, 1.0, 2.0 - g, x) / (1.0 - g)


def volterra_covariance(grid: TimeGrid, H: float) -> np.ndarray:
    """Joint covariance of (X_{t_1..t_N}, dW_{1..N}) on a uniform grid.

    Cov(X_s, X_t) = int_0^{s^t} (t-u)^{H-1/2} (s-u)^{H-1/2} du is evaluated
    through the Euler integral representation of 2F1, and
    Cov(X_t, dW_k) = int over the k-th step (below t) of the kernel.
    """
    if not 0 < H < 1:
        raise ValueError("H must lie in (0, 1)")
    dt = _check_uniform(grid)
    t = grid.times[1:]
    n = t.size
    a1 = H + 0.5
    cov = np.empty((2 * n, 2 * n))
    if H == 0.5:
        cov[:n, :n] = np.minimum.outer(t, t)
    else:
        cov[:n, :n] = _rl_cov(t[:, None], t[None, :], H)
    left = grid.times[:-1]
    right = grid.times[1:]
    tt = t[:, None]
    upper = np.minimum(right[None, :], tt)
    xw = np.where(
        tt > left[None, :],
        (np.clip(tt - left[None, :], 0, None) ** a1 - np.clip(tt - upper, 0, None) ** a1) / a1,
        0.0,
    )
    cov[:n, n:] = xw
    cov[n:, :n] = xw.T
    cov[n:, n:] = np.eye(n) * dt
    if not np.all(np.isfinite(cov)):
        raise VolSimulationError("covariance evaluation produced non-finite entries")
    return cov


@functools.lru_cache(maxsize=2)
def _factor_cached(n_steps: int, T: float, H: float) -> np.ndarray:
    grid = TimeGrid.uniform(n_steps, T)
    cov = volterra_covariance(grid, H)
    jitter = 1e-12 * np.trace(cov) / cov.shape[0]
    for attempt in range(4):
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            if attempt == 3:
                break
            cov[np.diag_indices_from(cov)] += jitter
            continue
        L.setflags(write=False)
        return L
    raise VolSimulationError(
        f"covariance for N={n_steps}, H={H} is not positive definite after jitter"
    )


def volterra_factor(grid: TimeGrid, H: float) -> np.ndarray:
    """Cached lower Cholesky factor of :func:`volterra_covariance`."""
    _check_uniform(grid)
    if grid.n_steps > N_MAX:
        raise ValueError(f"exact simulation supports at most N_MAX={N_MAX} steps")
    return _factor_cached(grid.n_steps, grid.T, float(H))


def _block_paths(spec: VolModelSpec, grid: TimeGrid, seed: int, block: int):
    """(v, dW) arrays of shape (BLOCK, N+1) and (BLOCK, N) for one block."""
    dt = _check_uniform(grid)
    n = grid.n_steps
    rng = sample_rng(seed, block, STREAM_BACKBONE)
    if isinstance(spec, Constant):
        dW = rng.standard_normal((BLOCK, n)) * math.sqrt(dt)
        v = np.full((BLOCK, n + 1), float(spec.vbar))
        return v, dW
    z = rng.standard_normal((BLOCK, 2 * n))
    L = volterra_factor(grid, spec.hurst)
    g = z @ L.T
    X = g[:, :n]
    dW = g[:, n:]
    t = grid.times[1:]
    H = spec.hurst
    if spec.convention == "literal":
        var = t ** (2 * H) / (2 * H)
        logv = spec.eta * X - 0.5 * spec.eta**2 * var
        v = np.empty((BLOCK, n + 1))
        v[:, 0] = spec.xi0
        v[:, 1:] = spec.xi0 * np.exp(logv)
    else:
        logV = spec.eta * math.sqrt(2 * H) * X - 0.5 * spec.eta**2 * t ** (2 * H)
        v = np.empty((BLOCK, n + 1))
        v[:, 0] = math.sqrt(spec.xi0)
        v[:, 1:] = np.sqrt(spec.xi0 * np.exp(logV))
    return v, dW


def _to_sample(grid: TimeGrid, v: np.ndarray, dW: np.ndarray, v_cap) -> VolSample:
    n_trunc = 0
    if v_cap is not None:
        over = v > v_cap
        n_trunc = int(np.count_nonzero(over))
        v = np.where(over, v_cap, v)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(dW))):
        raise VolSimulationError("backbone sample has non-finite values")
    I = np.concatenate(([0.0], np.cumsum(v[:-1] * dW)))
    return VolSample(grid, v, v * v, dW, I, float(np.max(v)), n_trunc)


def simulate_block(spec: VolModelSpec, grid: TimeGrid, seed: int, block: int, v_cap=None):
    """All ``BLOCK`` samples with indices ``block*BLOCK ... block*BLOCK+BLOCK-1``."""
    v, dW = _block_paths(spec, grid, seed, block)
    return [_to_sample(grid, v[k], dW[k], v_cap) for k in range(BLOCK)]


def simulate_backbone(spec: VolModelSpec, grid: TimeGrid, seed: int, index: int = 0, v_cap=None) -> VolSample:
    """Backbone sample number ``index`` for a root ``seed``."""
    block, k = divmod(int(index), BLOCK)
    v, dW = _block_paths(spec, grid, seed, block)
    return _to_sample(grid, v[k], dW[k], v_cap)


def integrate_vol(sample: VolSample) -> LiftedPath:
    """Itô lift of I with bracket int V dt (left-point)."""
    rp = ito_lift(sample.v[:-1] * sample.dW, sample.grid)
    br = bracket_from_rate(sample.V[:-1], sample.grid)
    return LiftedPath(rp, br)
