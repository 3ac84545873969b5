"""Solvers for type-I BSVIEs whose generators depend on diagonal processes."""
from ._kernels import BACKEND
from .bsde import RegressionBasis, backward_step, regress, solve_slice
from .config import RunConfig, parse_config
from .core import (
    BsvieSolution,
    FieldSolution,
    Lipschitz,
    NormReport,
    ParamGrid,
    PathEnsemble,
    PdeSolution,
    ProblemSpec,
    TimeGrid,
    assemble_nabla_f,
)
from .expr import Expression
from .forward import quadratic_variation_check, simulate_paths
from .metrics import apriori_report, compute_norms, field_norms, stability_experiment
from .pde import (
    ControlSet,
    HjbSpec,
    check_equivalence,
    feynman_kac_check,
    hamiltonian_argmax,
    solve_hjb_bkm,
    solve_hjb_wy,
    solve_representation_pde,
)
from .problems import PRESETS, ScalarProblem
from .runner import convergence_study, run
from .system import (
    PicardOptions,
    check_constraint_D,
    check_diagonal_dynamics,
    check_M_property,
    extract_bsvie,
    picard_step,
    reconstruct_diagonal_V,
    solve_system,
    solve_system_simplified,
)

__version__ = "0.1.0"
