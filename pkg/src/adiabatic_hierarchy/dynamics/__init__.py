"""Driving protocols, Schrodinger and Hamilton integrators, and residual analysis."""
from .analysis import (CycleActions, HierarchyTrack, adiabatic_error, adiabatic_initial_state,
                       branch_of_state, center_agreement, cycle_actions, extract_deviations,
                       hierarchy_along, measured_centers, moving_center, orbit_actions)
from .integrate import (Trajectory, chart_distance_series, hysteresis_pivots, integrate_hamilton,
                        integrate_schrodinger, sample_times)
from .protocol import Protocol

__all__ = [
    "CycleActions", "HierarchyTrack", "Protocol", "Trajectory", "adiabatic_error",
    "adiabatic_initial_state", "branch_of_state", "center_agreement", "chart_distance_series",
    "cycle_actions", "extract_deviations", "hierarchy_along", "hysteresis_pivots",
    "integrate_hamilton", "integrate_schrodinger", "measured_centers", "moving_center",
    "orbit_actions", "sample_times",
]
