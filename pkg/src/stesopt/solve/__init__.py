from .ipm import SolveResult, SolverOptions, solve
from .kkt import kkt_report

__all__ = ["solve", "SolverOptions", "SolveResult", "kkt_report"]
