"""
Flat dotted-key configuration files.

One ``key = value`` pair per line; ``#`` starts a comment.  Values are JSON
literals (numbers, ``true``/``false``/``null``, quoted strings, lists); a bare
word is read as a string.  Unknown keys are rejected.  :func:`dump` writes the
fully resolved configuration in the same format, and re-parsing that text gives
back an identical dictionary.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .lsv_models import SABR, BachelierSV, BlackScholesSV, Call, Put
from .mc_engine import RunConfig
from .rpde_solver import BOUNDARY_KINDS, SCHEMES, STENCILS
from .vol_models import Constant, RoughBergomi

SEED_ENV = "RVP_SEED"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model.kind": "sabr",
    "model.rho": -0.4,
    "model.beta": 0.6,
    "model.vol": "rough_bergomi",
    "vol.xi0": 0.055225,
    "vol.eta": 1.9,
    "vol.hurst": 0.07,
    "vol.vbar": 0.235,
    "vol.convention": "variance",
    "vol.v_cap": None,
    "payoff.kind": "put",
    "payoff.strike": 5.0,
    "payoff.smoothing": 0.0,
    "pde.scheme": "order2",
    "pde.stencil": "central",
    "pde.j_steps": 120,
    "pde.n_space": 90,
    "pde.domain": "auto",
    "pde.boundary": "auto",
    "sim.T": 1.0,
    "sim.x0": 5.0,
    "sim.n_fine": 2000,
    "sim.m_samples": 1000,
    "sim.seed": 0,
    "sim.inner_m": 20000,
    "sim.method": "both",
    "grid.x_min": 4.0,
    "grid.x_max": 6.0,
    "grid.x_step": 0.5,
    "greeks.h": 0.05,
    "convergence.n_spaces": [30, 60, 90],
    "convergence.schemes": ["order1", "order2"],
    "roughcheck.n_samples": 100,
    "roughcheck.n_triples": 1000,
    "roughcheck.fault_injection": False,
    "output.dir": "out",
}

_CHOICES = {
    "model.kind": ("bachelier", "blackscholes", "sabr"),
    "model.vol": ("constant", "rough_bergomi"),
    "vol.convention": ("literal", "variance"),
    "payoff.kind": ("put", "call", "linear", "constant"),
    "pde.scheme": SCHEMES,
    "pde.stencil": STENCILS,
    "pde.boundary": ("auto",) + BOUNDARY_KINDS,
    "sim.method": ("both", "full", "partial"),
}


def _value(text: str, key: str, lineno: int):
    text = text.strip()
    if not text:
        raise ConfigError(f"line {lineno}: empty value for {key!r}")
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if any(c in text for c in "[]{}\",") or " " in text:
            raise ConfigError(f"line {lineno}: cannot parse value for {key!r}: {text}") from None
        return text


def parse(text: str) -> dict:
    """Parse configuration text into a dict of explicitly set keys."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _value(val, key, lineno)
    return out


def resolve(explicit: dict, seed=None, env=None) -> dict:
    """Defaults, then file values, then RVP_SEED, then an explicit seed."""
    cfg = dict(DEFAULTS)
    for k, v in explicit.items():
        if k not in DEFAULTS:
            raise ConfigError(f"unknown key {k!r}")
        cfg[k] = v
    env = os.environ if env is None else env
    if env.get(SEED_ENV) not in (None, ""):
        try:
            cfg["sim.seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if seed is not None:
        cfg["sim.seed"] = int(seed)
    validate(cfg)
    return cfg


def load(path, seed=None, env=None) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return resolve(parse(text), seed, env)


def dump(cfg: dict) -> str:
    return "".join(f"{k} = {json.dumps(cfg[k])}\n" for k in sorted(cfg))


def _num(cfg, key, kind=float, positive=False, nonneg=False):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number")
    if kind is int and v != int(v):
        raise ConfigError(f"{key} must be an integer")
    if not np.isfinite(v):
        raise ConfigError(f"{key} must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{key} must be positive")
    if nonneg and v < 0:
        raise ConfigError(f"{key} must be nonnegative")
    return kind(v)


def validate(cfg: dict) -> None:
    for key, choices in _CHOICES.items():
        if cfg[key] not in choices:
            raise ConfigError(f"{key} must be one of {list(choices)}")
    for key in ("pde.j_steps", "pde.n_space", "sim.n_fine", "sim.m_samples", "sim.inner_m",
                "roughcheck.n_samples", "roughcheck.n_triples"):
        _num(cfg, key, int, positive=True)
    for key in ("sim.T", "greeks.h", "grid.x_step", "vol.xi0"):
        _num(cfg, key, positive=True)
    for key in ("vol.eta", "vol.vbar", "payoff.smoothing"):
        _num(cfg, key, nonneg=True)
    for key in ("model.rho", "model.beta", "vol.hurst", "payoff.strike", "sim.x0",
                "grid.x_min", "grid.x_max"):
        _num(cfg, key)
    _num(cfg, "sim.seed", int, nonneg=True)
    if cfg["grid.x_max"] < cfg["grid.x_min"]:
        raise ConfigError("grid.x_max must not be below grid.x_min")
    dom = cfg["pde.domain"]
    if dom != "auto" and not (isinstance(dom, list) and len(dom) == 2
                              and all(isinstance(v, (int, float)) for v in dom) and dom[0] < dom[1]):
        raise ConfigError("pde.domain must be \"auto\" or [a, b] with a < b")
    if cfg["vol.v_cap"] is not None:
        _num(cfg, "vol.v_cap", positive=True)
    if not isinstance(cfg["roughcheck.fault_injection"], bool):
        raise ConfigError("roughcheck.fault_injection must be true or false")
    for key, allowed in (("convergence.n_spaces", None), ("convergence.schemes", SCHEMES)):
        val = cfg[key]
        if not isinstance(val, list) or not val:
            raise ConfigError(f"{key} must be a non-empty list")
        if allowed is None and not all(isinstance(v, int) and v >= 3 for v in val):
            raise ConfigError(f"{key} entries must be integers >= 3")
        if allowed is not None and not all(v in allowed for v in val):
            raise ConfigError(f"{key} entries must be in {list(allowed)}")
    try:
        build_model(cfg)
        build_vol(cfg)
        build_payoff(cfg)
        run_config(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def build_model(cfg):
    kind = cfg["model.kind"]
    if kind == "bachelier":
        return BachelierSV(float(cfg["model.rho"]))
    if kind == "blackscholes":
        return BlackScholesSV(float(cfg["model.rho"]))
    return SABR(float(cfg["model.rho"]), float(cfg["model.beta"]),
                x_floor=1e-8 * float(cfg["payoff.strike"]))


def build_vol(cfg):
    if cfg["model.vol"] == "constant":
        return Constant(float(cfg["vol.vbar"]))
    return RoughBergomi(float(cfg["vol.xi0"]), float(cfg["vol.eta"]), float(cfg["vol.hurst"]),
                        cfg["vol.convention"])


def _linear(x):
    return x


def build_payoff(cfg):
    kind = cfg["payoff.kind"]
    if kind == "put":
        return Put(float(cfg["payoff.strike"]), float(cfg["payoff.smoothing"]))
    if kind == "call":
        return Call(float(cfg["payoff.strike"]))
    if kind == "linear":
        return _linear
    K = float(cfg["payoff.strike"])
    return lambda x: np.full(np.shape(x), K)


def run_config(cfg, workers=1) -> RunConfig:
    dom = None if cfg["pde.domain"] == "auto" else tuple(float(v) for v in cfg["pde.domain"])
    return RunConfig(
        m_samples=int(cfg["sim.m_samples"]),
        n_fine=int(cfg["sim.n_fine"]),
        T=float(cfg["sim.T"]),
        j_steps=int(cfg["pde.j_steps"]),
        n_space=int(cfg["pde.n_space"]),
        domain=dom,
        scheme=cfg["pde.scheme"],
        stencil=cfg["pde.stencil"],
        boundary=cfg["pde.boundary"],
        seed=int(cfg["sim.seed"]),
        inner_m=int(cfg["sim.inner_m"]),
        h=float(cfg["greeks.h"]),
        x0=float(cfg["sim.x0"]),
        workers=int(workers),
        v_cap=None if cfg["vol.v_cap"] is None else float(cfg["vol.v_cap"]),
    )


def x_grid(cfg) -> np.ndarray:
    lo, hi, step = float(cfg["grid.x_min"]), float(cfg["grid.x_max"]), float(cfg["grid.x_step"])
    n = int(np.floor((hi - lo) / step + 1e-9))
    xs = lo + step * np.arange(n + 1)
    return np.round(xs, 12)
