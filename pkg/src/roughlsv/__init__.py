"""Pathwise pricing of local stochastic volatility models through rough PDEs."""

from .closed_form import rt_bachelier, rt_blackscholes
from .lsv_models import SABR, BachelierSV, BlackScholesSV, Call, Put, Sampled
from .mc_engine import RunConfig, full_mc_price, partial_mc_price
from .rough_core import LiftedPath, TimeGrid
from .rpde_solver import BoundarySpec, SpaceGrid, solve_rpde
from .vol_models import Constant, RoughBergomi

__version__ = "0.1.0"
