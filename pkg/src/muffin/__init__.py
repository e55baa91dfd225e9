"""Multi-frequency image deconvolution with a primal-dual solver and PSURE self-tuning."""
from .cube import (
    CubeError, CubeHeaderError, CubeSizeError, CubeValueError, ImageCube, NoiseModel, cube_from_bytes,
    cube_read, cube_to_bytes, cube_write,
)
from .operators import BandOperator, PsfSet
from .psure import ProbeVector, PsureError, RiskReport, init_shadow, psure_evaluate, tracked_iterate
from .solver import BandPool, Problem, SolverParams, SolverState, cost, init_state, muffin_iterate, run
from .transforms import SpatialAnalysis, SpectralAnalysis
from .tuner import (
    PAPER_INTERVALS, SearchInterval, TuneSchedule, golden_oracle, golden_section, grid_oracle,
    greedy_step, self_tuned_run,
)

__version__ = "0.1.0"

__all__ = [
    "BandOperator", "BandPool", "CubeError", "CubeHeaderError", "CubeSizeError", "CubeValueError",
    "ImageCube", "NoiseModel", "PAPER_INTERVALS", "ProbeVector", "Problem", "PsfSet", "PsureError",
    "RiskReport", "SearchInterval", "SolverParams", "SolverState", "SpatialAnalysis", "SpectralAnalysis",
    "TuneSchedule", "cost", "cube_from_bytes", "cube_read", "cube_to_bytes", "cube_write", "golden_oracle",
    "golden_section", "greedy_step", "grid_oracle", "init_shadow", "init_state", "muffin_iterate",
    "psure_evaluate", "run", "self_tuned_run", "tracked_iterate",
]
