"""
Local stochastic volatility coefficient families and payoffs.

The price dynamics are dX = f(t, X) dI + g(t, X) v dB with I = int v dW.  With
sigma_loc the local volatility shape,

    f = rho * sigma_loc,  g = sqrt(1 - rho**2) * sigma_loc,  f0 = -f * df/dx / 2.

Coefficients are time-homogeneous for all three families; the ``t`` argument is
kept so that callers stay agnostic of that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "BachelierSV",
    "BlackScholesSV",
    "SABR",
    "LSVModel",
    "Coeffs",
    "coeffs",
    "gamma_prime_coeffs",
    "Put",
    "Call",
    "Sampled",
    "Payoff",
    "payoff_eval",
    "payoff_derivative",
]


def _check_rho(rho: float) -> None:
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")


@dataclass(frozen=True)
class BachelierSV:
    rho: float

    def __post_init__(self):
        _check_rho(self.rho)

    kind = "bachelier"


@dataclass(frozen=True)
class BlackScholesSV:
    rho: float

    def __post_init__(self):
        _check_rho(self.rho)

    kind = "blackscholes"


@dataclass(frozen=True)
class SABR:
    rho: float
    beta: float
    # coefficients are evaluated at max(x, x_floor)
    x_floor: float = 1e-8

    def __post_init__(self):
        _check_rho(self.rho)
        if not 0.5 < self.beta <= 1.0:
            raise ValueError("beta must lie in (1/2, 1]")
        if not self.x_floor > 0:
            raise ValueError("x_floor must be positive")

    kind = "sabr"


LSVModel = Union[BachelierSV, BlackScholesSV, SABR]


@dataclass(frozen=True)
class Coeffs:
    """Coefficient arrays at a set of states; ``clamped`` flags SABR floors."""

    f: np.ndarray
    g: np.ndarray
    dxf: np.ndarray
    f0: np.ndarray
    clamped: np.ndarray


def coeffs(model, t, x) -> Coeffs:
    """(f, g, df/dx, f0) at states ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=float)
    rho = model.rho
    rbar = math.sqrt(max(0.0, 1.0 - rho * rho))
    if isinstance(model, BachelierSV):
        one = np.ones_like(x)
        return Coeffs(rho * one, rbar * one, 0.0 * one, 0.0 * one, np.zeros(x.shape, bool))
    if isinstance(model, BlackScholesSV):
        return Coeffs(rho * x, rbar * x, rho * np.ones_like(x), -0.5 * rho * rho * x,
                      np.zeros(x.shape, bool))
    if isinstance(model, SABR):
        b = model.beta
        clamped = x < model.x_floor
        xe = np.maximum(x, model.x_floor)
        xb = xe**b
        return Coeffs(
            rho * xb,
            rbar * xb,
            rho * b * xe ** (b - 1.0),
            -0.5 * rho * rho * b * xe ** (2.0 * b - 1.0),
            clamped,
        )
    raise TypeError(f"unknown LSV model {model!r}")


def gamma_prime_coeffs(model, t, x) -> tuple[np.ndarray, np.ndarray]:
    """Weights (c1, c2) of (du/dx, d2u/dx2) in Gamma[Gamma[u]] = c1 u' + c2 u''."""
    c = coeffs(model, t, x)
    return -2.0 * c.f0, c.f * c.f


def local_vol(model, x) -> np.ndarray:
    """sigma_loc(x) with f**2 + g**2 = sigma_loc**2."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, BachelierSV):
        return np.ones_like(x)
    if isinstance(model, BlackScholesSV):
        return x
    return np.maximum(x, model.x_floor) ** model.beta


# ---------------------------------------------------------------- payoffs


@dataclass(frozen=True)
class Put:
    K: float
    smoothing: float = 0.0

    def __post_init__(self):
        if self.smoothing < 0:
            raise ValueError("smoothing width must be nonnegative")
        if self.smoothing > 0 and self.smoothing >= self.K:
            raise ValueError("smoothing width must be smaller than the strike")


@dataclass(frozen=True)
class Call:
    K: float

    # calls are unbounded: outside the bounded-payoff hypothesis of the pricer
    bounded = False


@dataclass(frozen=True, eq=False)
class Sampled:
    """Piecewise-linear payoff through (x, value) nodes, flat outside."""

    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("sampled payoff needs increasing nodes and matching values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", y)


Payoff = Union[Put, Call, Sampled]


def payoff_eval(p, x) -> np.ndarray:
    """Payoff values.

    A put with smoothing width ``w > 0`` follows the quadratic
    ``K - (x + w)**2 / (4 w)`` on ``[-w, w]`` and equals ``K`` below ``-w``; it is
    C^1, bounded by ``K`` and unchanged for ``x >= w``.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(p, Put):
        out = np.maximum(p.K - x, 0.0)
        w = p.smoothing
        if w > 0:
            blend = p.K - (x + w) ** 2 / (4.0 * w)
            out = np.where(x < -w, p.K, np.where(x < w, blend, out))
        return out
    if isinstance(p, Call):
        return np.maximum(x - p.K, 0.0)
    if isinstance(p, Sampled):
        return np.interp(x, p.x, p.values)
    if callable(p):
        return np.asarray(p(x), dtype=float) * np.ones_like(x)
    raise TypeError(f"unknown payoff {p!r}")


def payoff_derivative(p, x) -> np.ndarray:
    """First derivative (one-sided from the right at kinks)."""
    x = np.asarray(x, dtype=float)
    if isinstance(p, Put):
        out = np.where(x < p.K, -1.0, 0.0)
        w = p.smoothing
        if w > 0:
            out = np.where(x < -w, 0.0, np.where(x < w, -(x + w) / (2.0 * w), out))
        return out
    if isinstance(p, Call):
        return np.where(x >= p.K, 1.0, 0.0)
    raise TypeError(f"no derivative for payoff {p!r}")
