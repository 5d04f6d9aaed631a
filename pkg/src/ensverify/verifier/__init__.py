"""Complete verification of epsilon-ball queries on ReLU networks."""
from .bab import DEFAULT_TIMEOUT, solve
from .bounds import Box, interval_bounds, symbolic_bounds
from .oracle import ReluBudgetExceeded, oracle_solve
from .query import (
    FULL,
    RUNNER_UP,
    Postcondition,
    Verdict,
    encode_mutual_error_query,
    encode_robustness_query,
    runner_up,
    validate_witness,
)
from .simplex import DegenerateLP, LPResult, lp_solve

__all__ = [
    "Box", "DEFAULT_TIMEOUT", "DegenerateLP", "FULL", "LPResult", "Postcondition", "RUNNER_UP",
    "ReluBudgetExceeded", "Verdict", "encode_mutual_error_query", "encode_robustness_query",
    "interval_bounds", "lp_solve", "oracle_solve", "runner_up", "solve", "symbolic_bounds",
    "validate_witness",
]
