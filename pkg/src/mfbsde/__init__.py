"""Mean-field BSDEs driven by a finite-state continuous-time Markov chain."""

from .bsde import (
    Driver,
    MarkovianSolution,
    MeanFieldProblem,
    PicardDiagnostics,
    TerminalCondition,
    compare_solutions,
    factorial_bound,
    picard_solve,
    residual_check,
    solve_markovian,
)
from .chain import (
    Generator,
    evolve_law,
    phi,
    sample_path,
    sample_paths,
    seminorm,
    transition_matrix,
    validate_generator,
)
from .dsl import DriverExpr, parse_driver
from .oracles import closed_form, discretize, tree_solve

__version__ = "0.1.0"

__all__ = [
    "Driver", "DriverExpr", "Generator", "MarkovianSolution", "MeanFieldProblem",
    "PicardDiagnostics", "TerminalCondition", "closed_form", "compare_solutions",
    "discretize", "evolve_law", "factorial_bound", "parse_driver", "phi", "picard_solve",
    "residual_check", "sample_path", "sample_paths", "seminorm", "solve_markovian",
    "transition_matrix", "tree_solve", "validate_generator",
]
