"""The open-loop power-maximization subproblem over one wind load case.

For a given plant design and wind trajectory, maximize average generator
power subject to the wind-scheduled linear dynamics, generator speed and
platform pitch ceilings, actuator ranges, and tower load limits.  The
integrand couples the torque and speed perturbations bilinearly (power is
their product), carries a small quadratic actuator penalty to suppress
singular arcs, and penalizes platform pitch excursions.

Everything is posed in perturbation variables about the moving operating
point; the transcribed QP is handed to the interior-point solver with
operating-point-magnitude scaling so torque (1e7 Nm) and pitch (1e-1 rad)
variables condition equally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from lpvccd.dtqp import transcribe as tr
from lpvccd.dtqp.qp import (
    INFEASIBLE_SUSPECTED,
    OPTIMAL,
    QpProblem,
    QpSolution,
    measure_min_violation,
    solve_qp,
)
from lpvccd.statespace import Trajectory

#: generator speed ceilings [rad/s]: rated, and rated relaxed by 20 %
OMEGA_MAX_RATED = 0.7850
OMEGA_MAX_RELAXED = 0.9424

FEASIBILITY_TOL = 1e-6

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITER = "max_iter"


class UndefinedPowerError(RuntimeError):
    """Average power requested from a solution that is not optimal."""


@dataclass(frozen=True)
class OcLimits:
    """Path-constraint levels; defaults follow the study parameter set."""

    omega_g_max: float = OMEGA_MAX_RATED          # [rad/s]
    theta_p_max: float = math.radians(6.0)        # [rad]
    tau_g_max: float = 19.8e6                     # [Nm]
    beta_max: float = 0.3948                      # [rad]
    f_s_max: float = 5000.0                       # [kN]
    m_s_max: float = 32000.0                      # [kNm]

    def __post_init__(self):
        for name in ("omega_g_max", "theta_p_max", "tau_g_max", "beta_max",
                     "f_s_max", "m_s_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class OcWeights:
    """Objective weights: power reward, actuator penalty diag, pitch penalty."""

    power: float = 1e-8
    control_penalty: tuple = (1e-16, 10.0)
    pitch_penalty: float = 1.0


@dataclass
class OcProblem:
    """One inner-loop subproblem: an LPV source, a wind case, and limits."""

    lpv: object                      # LpvModel or FrozenPlantLpv
    wind: Trajectory
    t_f: float = 600.0
    n_mesh: int = 2500
    limits: OcLimits = field(default_factory=OcLimits)
    weights: OcWeights = field(default_factory=OcWeights)
    eta_g: float = 0.965

    def __post_init__(self):
        if self.t_f <= 0:
            raise ValueError("t_f must be positive")
        if self.n_mesh < 2:
            raise ValueError("need at least 2 mesh points")
        if self.wind.t[-1] < self.t_f - 1e-9:
            raise ValueError("wind trajectory does not cover [0, t_f]")


@dataclass
class TranscribedQP:
    """Sparse QP plus the mesh metadata needed to map solutions back."""

    qp: QpProblem
    layout: tr.Layout
    t: np.ndarray
    w: np.ndarray                    # wind at mesh points
    xi_o: np.ndarray                 # (N, n) operating-point states
    u_o: np.ndarray                  # (N, m) operating-point inputs
    C: np.ndarray                    # (N, p, n) output matrices
    D: np.ndarray
    g: np.ndarray                    # (N, p) output offsets
    col_scale: np.ndarray
    eq_row_scale: np.ndarray
    ineq_row_scale: np.ndarray
    n_defect_rows: int
    n_initial_rows: int
    problem: OcProblem


#: per-variable scaling floors: [rad/s, rad, m/s, m, rad/s, Nm, rad]
_SCALE_FLOORS_X = np.array([1e-2, 5e-2, 1e-1, 1e-1, 0.5])
_SCALE_FLOORS_U = np.array([1e6, 5e-2])


def _state_index(lpv, label: str) -> int:
    return lpv.state_labels.index(label)


def _output_index(lpv, label: str) -> int:
    return lpv.output_labels.index(label)


def transcribe(p: OcProblem) -> TranscribedQP:
    """Build the sparse QP for the subproblem.

    Trapezoidal defects enforce the wind-scheduled dynamics including the
    operating-point drift term; the initial state sits on the operating
    point.  Speed/pitch/actuator limits become variable bounds (shifted by
    the operating point), tower loads become per-point output rows.
    """
    t = tr.mesh(p.t_f, p.n_mesh)
    q = tr.trapezoid_weights(t)
    w = p.wind(t)[:, 0]
    dwdt = p.wind.derivative()(t)[:, 0]
    if not np.all(np.isfinite(dwdt)):
        raise ValueError("wind derivative is not finite")
    data = p.lpv.eval_batch(w, extrapolate=True)
    drift = -data["dxi_o_dw"] * dwdt[:, None]

    A_def, b_def, lay = tr.defect_system(t, data["A"], data["B"], drift)
    E0, b0 = tr.initial_condition_rows(lay, np.zeros(lay.n_states))
    A_eq = sp.vstack([A_def, E0], format="csc")
    b_eq = np.concatenate([b_def, b0])

    xi_o, u_o = data["xi_o"], data["u_o"]
    i_th = _state_index(p.lpv, "theta_p")
    i_om = _state_index(p.lpv, "omega_g")
    j_tau, j_beta = 0, 1
    N = lay.n_points

    # objective: integral of -k*eta*tau*omega + u'Ru + w_p*theta^2, expanded
    # about the operating point into 0.5 z'Hz + c'z + const
    k_eta = p.weights.power * p.eta_g
    r_tau, r_beta = p.weights.control_penalty
    w_pitch = p.weights.pitch_penalty
    tau_o = u_o[:, j_tau]
    beta_o = u_o[:, j_beta]
    om_o = xi_o[:, i_om]
    th_o = xi_o[:, i_th]

    sc = lay.state_cols()
    ic = lay.input_cols()
    idx_th = sc[:, i_th]
    idx_om = sc[:, i_om]
    idx_tau = ic[:, j_tau]
    idx_beta = ic[:, j_beta]

    h_rows = np.concatenate([idx_th, idx_tau, idx_beta, idx_tau, idx_om])
    h_cols = np.concatenate([idx_th, idx_tau, idx_beta, idx_om, idx_tau])
    h_vals = np.concatenate([2.0 * q * w_pitch, 2.0 * q * r_tau, 2.0 * q * r_beta,
                             -q * k_eta, -q * k_eta])
    H = sp.coo_matrix((h_vals, (h_rows, h_cols)), shape=(lay.size, lay.size)).tocsc()

    c = np.zeros(lay.size)
    np.add.at(c, idx_th, 2.0 * q * w_pitch * th_o)
    np.add.at(c, idx_tau, 2.0 * q * r_tau * tau_o - q * k_eta * om_o)
    np.add.at(c, idx_beta, 2.0 * q * r_beta * beta_o)
    np.add.at(c, idx_om, -q * k_eta * tau_o)
    const = float(q @ (-k_eta * tau_o * om_o + r_tau * tau_o**2
                       + r_beta * beta_o**2 + w_pitch * th_o**2))

    lb = np.full(lay.size, -np.inf)
    ub = np.full(lay.size, np.inf)
    lb[idx_om] = -om_o                          # omega_g >= 0
    ub[idx_om] = p.limits.omega_g_max - om_o
    ub[idx_th] = p.limits.theta_p_max - th_o
    lb[idx_tau] = -tau_o                        # tau_g >= 0
    ub[idx_tau] = p.limits.tau_g_max - tau_o
    lb[idx_beta] = -beta_o                      # beta >= 0
    ub[idx_beta] = p.limits.beta_max - beta_o

    # tower-base load rows: one F_s and one M_s inequality per mesh point
    r_fs = _output_index(p.lpv, "f_s_kn")
    r_ms = _output_index(p.lpv, "m_s_knm")
    G_fs = tr.point_rows(lay, data["C"][:, r_fs, :], data["D"][:, r_fs, :])
    G_ms = tr.point_rows(lay, data["C"][:, r_ms, :], data["D"][:, r_ms, :])
    G = sp.vstack([G_fs, G_ms], format="csc")
    h_vec = np.concatenate([p.limits.f_s_max - data["g"][:, r_fs],
                            p.limits.m_s_max - data["g"][:, r_ms]])

    qp = QpProblem(H=H, c=c, A=A_eq, b=b_eq, G=G, h=h_vec, lb=lb, ub=ub, const=const)

    s_x = np.maximum(np.max(np.abs(xi_o), axis=0), _SCALE_FLOORS_X)
    s_u = np.maximum(np.max(np.abs(u_o), axis=0), _SCALE_FLOORS_U)
    col_scale = np.tile(np.concatenate([s_x, s_u]), N)
    eq_row_scale = np.concatenate([np.tile(1.0 / s_x, N - 1), 1.0 / s_x])
    ineq_row_scale = np.concatenate([np.full(N, 1.0 / p.limits.f_s_max),
                                     np.full(N, 1.0 / p.limits.m_s_max)])

    return TranscribedQP(qp=qp, layout=lay, t=t, w=w, xi_o=xi_o, u_o=u_o,
                         C=data["C"], D=data["D"], g=data["g"],
                         col_scale=col_scale, eq_row_scale=eq_row_scale,
                         ineq_row_scale=ineq_row_scale,
                         n_defect_rows=A_def.shape[0], n_initial_rows=lay.n_states,
                         problem=p)


@dataclass
class OcSolution:
    """Solved subproblem mapped back to absolute trajectories."""

    status: str
    t: np.ndarray
    xi: np.ndarray                   # (N, n) absolute states
    u: np.ndarray                    # (N, m) absolute inputs
    y: np.ndarray                    # (N, p) absolute outputs
    objective: float
    avg_power: float | None
    activity: dict
    iterations: int
    max_violation: float
    state_labels: tuple = ()
    input_labels: tuple = ()
    output_labels: tuple = ()

    def summary_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "avg_power_w": self.avg_power,
            "iterations": self.iterations,
            "max_violation": self.max_violation,
            "activity": self.activity,
        }

    def write_csv(self, path) -> None:
        header = (["t"] + [f"xi_{l}" for l in self.state_labels]
                  + [f"u_{l}" for l in self.input_labels]
                  + [f"y_{l}" for l in self.output_labels])
        table = np.column_stack([self.t, self.xi, self.u, self.y])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in table:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary_dict(), fh, indent=1)


def _activity_flags(ts: TranscribedQP, xi: np.ndarray, u: np.ndarray,
                    y: np.ndarray) -> dict:
    """Fraction of mesh points at which each path constraint is active."""
    lim = ts.problem.limits
    lpv = ts.problem.lpv
    i_th = _state_index(lpv, "theta_p")
    i_om = _state_index(lpv, "omega_g")
    r_fs = _output_index(lpv, "f_s_kn")
    r_ms = _output_index(lpv, "m_s_knm")
    n = ts.t.size

    def frac(values, bound):
        tol = 1e-6 * max(1.0, abs(bound))
        return float(np.count_nonzero(np.abs(values - bound) <= tol) / n)

    return {
        "omega_g_max": frac(xi[:, i_om], lim.omega_g_max),
        "omega_g_min": frac(xi[:, i_om], 0.0),
        "theta_p_max": frac(xi[:, i_th], lim.theta_p_max),
        "tau_g_max": frac(u[:, 0], lim.tau_g_max),
        "tau_g_min": frac(u[:, 0], 0.0),
        "beta_max": frac(u[:, 1], lim.beta_max),
        "beta_min": frac(u[:, 1], 0.0),
        "f_s_max": frac(y[:, r_fs], lim.f_s_max),
        "m_s_max": frac(y[:, r_ms], lim.m_s_max),
    }


def _max_constraint_violation(ts: TranscribedQP, z: np.ndarray) -> float:
    """Worst relative violation of bounds/inequalities/defects at a candidate."""
    qp = ts.qp
    viol = float(np.max(np.abs(qp.A @ z - qp.b) * ts.eq_row_scale))
    slack = qp.h - qp.G @ z
    viol = max(viol, float(np.max(-slack * ts.ineq_row_scale, initial=0.0)))
    finite_l = np.isfinite(qp.lb)
    finite_u = np.isfinite(qp.ub)
    scale = ts.col_scale
    if np.any(finite_l):
        viol = max(viol, float(np.max((qp.lb[finite_l] - z[finite_l]) / scale[finite_l],
                                      initial=0.0)))
    if np.any(finite_u):
        viol = max(viol, float(np.max((z[finite_u] - qp.ub[finite_u]) / scale[finite_u],
                                      initial=0.0)))
    return viol


def solve_ocp(p: OcProblem, tol: float = 1e-8) -> OcSolution:
    """Transcribe and solve one subproblem; infeasibility is a result, not an error.

    A solver exit suggesting infeasibility is certified by an elastic
    minimum-violation solve before the subproblem is reported infeasible.
    """
    ts = transcribe(p)
    sol = solve_qp(ts.qp, tol=tol, scaling=ts.col_scale,
                   eq_row_scale=ts.eq_row_scale, ineq_row_scale=ts.ineq_row_scale)
    xi_d, u_d = ts.layout.unstack(sol.x)
    xi = xi_d + ts.xi_o
    u = u_d + ts.u_o
    y = np.einsum("npq,nq->np", ts.C, xi_d) + np.einsum("npq,nq->np", ts.D, u_d) + ts.g

    status = STATUS_MAX_ITER
    avg_power = None
    viol = _max_constraint_violation(ts, sol.x)
    if sol.status == OPTIMAL and viol <= FEASIBILITY_TOL:
        status = STATUS_OPTIMAL
    else:
        min_viol = measure_min_violation(
            ts.qp.scaled(ts.col_scale, ts.eq_row_scale, ts.ineq_row_scale))
        if min_viol > FEASIBILITY_TOL:
            status = STATUS_INFEASIBLE
        elif sol.status == OPTIMAL:
            status = STATUS_OPTIMAL  # feasible and converged, violation marginal

    if status == STATUS_OPTIMAL:
        i_om = _state_index(p.lpv, "omega_g")
        power = p.eta_g * u[:, 0] * xi[:, i_om]
        avg_power = float(np.trapezoid(power, ts.t) / p.t_f)

    lpv = p.lpv
    return OcSolution(
        status=status, t=ts.t, xi=xi, u=u, y=y,
        objective=sol.objective, avg_power=avg_power,
        activity=_activity_flags(ts, xi, u, y),
        iterations=sol.iterations, max_violation=viol,
        state_labels=lpv.state_labels, input_labels=lpv.input_labels,
        output_labels=lpv.output_labels)


def average_power(sol: OcSolution) -> float:
    """Time-averaged electrical power of an optimal solution [W]."""
    if sol.status != STATUS_OPTIMAL or sol.avg_power is None:
        raise UndefinedPowerError(f"average power undefined for status '{sol.status}'")
    return sol.avg_power
