"""Direct transcription of linear-quadratic optimal control to sparse QPs."""

from lpvccd.dtqp.qp import QpProblem, QpSolution, solve_qp, measure_min_violation, kkt_residuals

__all__ = ["QpProblem", "QpSolution", "solve_qp", "measure_min_violation", "kkt_residuals"]
