"""Convection-diffusion solver and sensor-placement problems."""

from .sensors import (
    Concentration,
    ConcentrationPlusFlux,
    Flux,
    Parameters,
    QoiSpec,
    SurrogateSpec,
    build_sensor_problem,
    direct_concentration,
    tabulate_surrogate,
)
from .solver import (
    DESK_GRID,
    DESK_SOLVER,
    FINE_GRID,
    FINE_SOLVER,
    CflWarning,
    Field,
    Grid2D,
    SolverConfig,
    SolverError,
    SourceParams,
    export_field,
    read_field,
    right_boundary_flux,
    sample_concentration,
    solve,
)

__all__ = [name for name in dir() if not name.startswith("_")]
