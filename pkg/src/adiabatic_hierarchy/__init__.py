"""Order-by-order adiabatic deviation hierarchy for driven quantum systems.

The projective state space of an n-level system is charted by relative
phases and populations, in which the Schrodinger equation becomes a
classical Hamiltonian flow.  Slow driving shifts the tracked fixed point by a
graded series of corrections ``S_1, S_2, ...``; the residual orbit about the
shifted point carries an adiabatic action.
"""
from .chart import ChartState, chart_coordinates, chart_distance, choose_pivot, repivot, to_chart, to_wavefunction
from .classical import FixedPoint, ParametricHamiltonian, find_fixed_points, track_fixed_point
from .errors import AdiabaticError
from .hierarchy import (DeviationHamiltonian, OrderShift, ShiftEngine, delta_gamma, first_order_shift,
                        grade_select, kth_order_shift, second_order_shift, shift_series)
from .models import LandauZener, SpinRotatingField, TwoLevelModel

__version__ = "0.1.0"

__all__ = [
    "AdiabaticError", "ChartState", "DeviationHamiltonian", "FixedPoint", "LandauZener", "OrderShift",
    "ParametricHamiltonian", "ShiftEngine", "SpinRotatingField", "TwoLevelModel", "chart_coordinates",
    "chart_distance", "choose_pivot", "delta_gamma", "find_fixed_points", "first_order_shift",
    "grade_select", "kth_order_shift", "repivot", "second_order_shift", "shift_series", "to_chart",
    "to_wavefunction", "track_fixed_point",
]
