"""
Analytic conditional prices for the pure stochastic-volatility families.

Given the driver increments over [t, T] (``y_tT`` for the path, ``br_tT`` for its
bracket), the conditional law of the terminal price is

* Bachelier form:      X_T ~ N(x + rho*y_tT, (1 - rho**2) * br_tT)
* Black-Scholes form:  ln(X_T / x) ~ N(rho*y_tT - br_tT/2, (1 - rho**2) * br_tT)

The lognormal parameters are read off the printed transition density; they give
the conditional forward x*exp(rho*y_tT - rho**2*br_tT/2).  Puts and calls have
closed forms, other payoffs are integrated by Gauss-Hermite quadrature with order
doubling.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr

from .lsv_models import Call, Put, Sampled, payoff_eval

__all__ = [
    "gaussian_expectation",
    "lognormal_expectation",
    "rt_bachelier",
    "rt_blackscholes",
    "heat_solution",
    "bachelier_price",
    "black_scholes_price",
    "black_scholes_delta",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)
GH_RTOL = 1e-10


def _npdf(z):
    return np.exp(-0.5 * z * z) / _SQRT2PI


def _gh(fun, n_min: int = 16, n_max: int = 256):
    """E[fun(Z)], Z standard normal, doubling the node count until converged."""
    prev = None
    n = n_min
    while n <= n_max:
        z, w = hermegauss(n)
        val = np.tensordot(w / _SQRT2PI, fun(z), axes=(0, 0))
        if prev is not None and np.all(np.abs(val - prev) <= GH_RTOL * np.maximum(np.abs(val), 1e-300)):
            return val
        prev = val
        n *= 2
    warnings.warn("Gauss-Hermite quadrature did not reach its tolerance", RuntimeWarning)
    return prev


def _bachelier_put(m, s, K):
    d = (K - m) / s
    return (K - m) * ndtr(d) + s * _npdf(d)


def _smoothed_put_correction(m, s, w):
    """E[c(X)] for X ~ N(m, s^2), where put - smoothed put = c."""
    # c(x) = (x - w)^2 / (4 w) on [-w, w], -x below -w
    a = (-w - m) / s
    b = (w - m) / s
    Pa, Pb = ndtr(a), ndtr(b)
    pa, pb = _npdf(a), _npdf(b)
    mass = Pb - Pa
    m1 = s * (pa - pb)
    m2 = s * s * (mass + a * pa - b * pb)
    d = m - w
    quad = (m2 + 2.0 * d * m1 + d * d * mass) / (4.0 * w)
    tail = -(m * Pa - s * pa)
    return quad + tail


def _hinges(p: Sampled):
    """Constant plus hinge weights: value(x) = c + sum a_k (x - x_k)^+ on the flat-extended curve."""
    slopes = np.diff(p.values) / np.diff(p.x)
    a = np.diff(np.concatenate(([0.0], slopes, [0.0])))
    return float(p.values[0]), p.x, a


def gaussian_expectation(payoff, mean, std):
    """E[payoff(mean + std * Z)] elementwise over broadcast ``mean``/``std``."""
    mean, std = np.broadcast_arrays(np.asarray(mean, float), np.asarray(std, float))
    if np.any(std < 0):
        raise ValueError("standard deviation must be nonnegative")
    out = np.empty(mean.shape)
    degen = std == 0
    if np.any(degen):
        out[degen] = payoff_eval(payoff, mean[degen])
    live = ~degen
    if np.any(live):
        m, s = mean[live], std[live]
        if isinstance(payoff, Put):
            val = _bachelier_put(m, s, payoff.K)
            if payoff.smoothing > 0:
                val = val - _smoothed_put_correction(m, s, payoff.smoothing)
        elif isinstance(payoff, Call):
            d = (payoff.K - m) / s
            val = (m - payoff.K) * ndtr(-d) + s * _npdf(d)
        elif isinstance(payoff, Sampled):
            c, knots, a = _hinges(payoff)
            d = (knots[:, None] - m[None, :]) / s[None, :]
            calls = (m[None, :] - knots[:, None]) * ndtr(-d) + s[None, :] * _npdf(d)
            val = c + a @ calls
        else:
            val = _gh(lambda z: payoff_eval(payoff, m[None, :] + s[None, :] * z[:, None]))
        out[live] = val
    return out if out.ndim else float(out)


def lognormal_expectation(payoff, log_mean, log_std):
    """E[payoff(exp(log_mean + log_std * Z))]."""
    lm, ls = np.broadcast_arrays(np.asarray(log_mean, float), np.asarray(log_std, float))
    if np.any(ls < 0):
        raise ValueError("log standard deviation must be nonnegative")
    out = np.empty(lm.shape)
    degen = ls == 0
    if np.any(degen):
        out[degen] = payoff_eval(payoff, np.exp(lm[degen]))
    live = ~degen
    if np.any(live):
        mu, s = lm[live], ls[live]
        if isinstance(payoff, (Put, Call)):
            K = payoff.K
            F = np.exp(mu + 0.5 * s * s)
            d1 = (mu + s * s - math.log(K)) / s
            d2 = d1 - s
            if isinstance(payoff, Put):
                val = K * ndtr(-d2) - F * ndtr(-d1)
            else:
                val = F * ndtr(d1) - K * ndtr(d2)
        elif isinstance(payoff, Sampled):
            c, knots, a = _hinges(payoff)
            val = np.full(mu.shape, c)
            F = np.exp(mu + 0.5 * s * s)
            for k, ak in zip(knots, a):
                if k <= 0:
                    # (X - k)^+ = X - k for a positive X
                    val = val + ak * (F - k)
                    continue
                d1 = (mu + s * s - math.log(k)) / s
                val = val + ak * (F * ndtr(d1) - k * ndtr(d1 - s))
        else:
            val = _gh(lambda z: payoff_eval(payoff, np.exp(mu[None, :] + s[None, :] * z[:, None])))
        out[live] = val
    return out if out.ndim else float(out)


def _check_driver(rho, br_tT):
    if not -1.0 <= rho <= 1.0:
        raise ValueError("|rho| must not exceed 1")
    if np.any(np.asarray(br_tT) < 0):
        raise ValueError("bracket increment must be nonnegative")


def rt_bachelier(payoff, t, x, rho, y_tT, br_tT):
    """Conditional price in the Bachelier SV family."""
    _check_driver(rho, br_tT)
    mean = np.asarray(x, float) + rho * np.asarray(y_tT, float)
    std = np.sqrt(max(0.0, 1.0 - rho * rho) * np.asarray(br_tT, float))
    return gaussian_expectation(payoff, mean, std)


def rt_blackscholes(payoff, t, x, rho, y_tT, br_tT):
    """Conditional price in the Black-Scholes SV family."""
    _check_driver(rho, br_tT)
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise ValueError("Black-Scholes form needs x > 0")
    br = np.asarray(br_tT, float)
    log_mean = np.log(x) + rho * np.asarray(y_tT, float) - 0.5 * br
    log_std = np.sqrt(max(0.0, 1.0 - rho * rho) * br)
    return lognormal_expectation(payoff, log_mean, log_std)


def heat_solution(payoff, t, x, var_tT):
    """Gaussian convolution of the payoff with variance ``var_tT``."""
    var = np.asarray(var_tT, float)
    if np.any(var < 0):
        raise ValueError("variance must be nonnegative")
    return gaussian_expectation(payoff, x, np.sqrt(var))


def bachelier_price(payoff, spot, vol, T):
    """Undiscounted Bachelier price with normal volatility ``vol``."""
    return gaussian_expectation(payoff, spot, vol * math.sqrt(T))


def black_scholes_price(payoff, spot, vol, T):
    """Undiscounted Black-Scholes price (zero rates)."""
    s = vol * math.sqrt(T)
    return lognormal_expectation(payoff, np.log(spot) - 0.5 * s * s, s)


def black_scholes_delta(payoff, spot, vol, T):
    s = vol * math.sqrt(T)
    d1 = (np.log(np.asarray(spot, float) / payoff.K) + 0.5 * s * s) / s
    if isinstance(payoff, Put):
        return ndtr(d1) - 1.0
    return ndtr(d1)
