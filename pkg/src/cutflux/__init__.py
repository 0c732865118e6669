"""CutFEM for elliptic interface problems with an equilibrated immersed-flux error estimator."""
from .amr import AMRConfig, ConvergenceRecord, mark, run_amr, solve_step
from .assembly import Coefficients, ProblemData, assemble, solve_cutfem
from .benchmarks import Benchmark, example_ellipse, example_lshape, example_patch, example_sinusoidal, make_benchmark
from .cut import LevelSet, build_quadrature, classify, make_levelset, resolve_geometry
from .estimators import EstimatorReport, estimate, interpolate_Ih
from .flux import FluxField, decompose_flux_correction, reconstruct_sigma, standard_rt0
from .mesh import Mesh, generate_mesh, lshape, refine, square, uniform_refine
from .multiplier import solve_multiplier

__version__ = "0.1.0"

__all__ = [
    "AMRConfig",
    "Benchmark",
    "Coefficients",
    "ConvergenceRecord",
    "EstimatorReport",
    "FluxField",
    "LevelSet",
    "Mesh",
    "ProblemData",
    "assemble",
    "build_quadrature",
    "classify",
    "decompose_flux_correction",
    "estimate",
    "example_ellipse",
    "example_lshape",
    "example_patch",
    "example_sinusoidal",
    "generate_mesh",
    "interpolate_Ih",
    "lshape",
    "make_benchmark",
    "make_levelset",
    "mark",
    "reconstruct_sigma",
    "refine",
    "resolve_geometry",
    "run_amr",
    "solve_cutfem",
    "solve_multiplier",
    "solve_step",
    "square",
    "standard_rt0",
    "uniform_refine",
]
