"""Modified Godunov solver for 1D isentropic gas dynamics with reflecting walls."""

from .gas_model import GasState, ModelParams, RiemannPair, derive_params
from .scheme import Grid, SchemeOptions, make_grid, run

__all__ = ["GasState", "ModelParams", "RiemannPair", "derive_params", "Grid",
           "SchemeOptions", "make_grid", "run"]
__version__ = "0.1.0"
