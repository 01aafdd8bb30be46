"""Lot selection under budget and CVaR limits with price sensitivity."""

from .instance import Evaluation, PortfolioInstance, evaluate, expected_bid_profit, loss_samples
from .problem import MiqcpProblem, build_problem, complete_decision
from .risk import cvar_rows, empirical_cvar, empirical_var, f_beta, min_f_beta
from .solvers import (SolutionReport, realized_cvar_check, solve_branch_and_bound,
                      solve_enumeration)

__all__ = [
    "Evaluation", "PortfolioInstance", "evaluate", "expected_bid_profit", "loss_samples",
    "MiqcpProblem", "build_problem", "complete_decision",
    "cvar_rows", "empirical_cvar", "empirical_var", "f_beta", "min_f_beta",
    "SolutionReport", "realized_cvar_check", "solve_branch_and_bound", "solve_enumeration",
]
