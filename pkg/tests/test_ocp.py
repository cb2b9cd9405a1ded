import math

import numpy as np
import numpy.testing as npt
import pytest

from lpvccd import lpv as L
from lpvccd import surrogate as sg
from lpvccd.dtqp.ocp import (
    OcLimits,
    OcProblem,
    OcSolution,
    OcWeights,
    UndefinedPowerError,
    average_power,
    solve_ocp,
    transcribe,
)
from lpvccd.statespace import Trajectory


@pytest.fixture(scope="module")
def nominal_lpv():
    return L.build_lpv_from_surrogate(sg.PLANT_NOMINAL)


def sine_wind(mean, t_f=600.0, swing=0.10):
    t = np.arange(0.0, t_f + 0.25, 0.25)
    w = mean * (1.0 + swing * np.sin(2 * np.pi * t / 150.0)
                + 0.05 * np.sin(2 * np.pi * t / 400.0 + 1.0))
    return Trajectory(t, w, ("wind",))


def constant_wind(mean, t_f=600.0):
    t = np.array([0.0, t_f])
    return Trajectory(t, np.full((2, 1), float(mean)), ("wind",))


class TestLimits:
    def test_defaults_are_study_parameters(self):
        lim = OcLimits()
        assert lim.omega_g_max == 0.7850
        assert abs(lim.theta_p_max - math.radians(6.0)) < 1e-12
        assert lim.tau_g_max == 19.8e6
        assert lim.beta_max == 0.3948
        assert lim.f_s_max == 5000.0
        assert lim.m_s_max == 32000.0

    def test_positive_required(self):
        with pytest.raises(ValueError):
            OcLimits(theta_p_max=-1.0)


class TestTranscription:
    def test_row_counts_full_mesh(self, nominal_lpv):
        p = OcProblem(lpv=nominal_lpv, wind=constant_wind(14.0), n_mesh=2500)
        ts = transcribe(p)
        assert ts.n_defect_rows == 5 * 2499
        assert ts.n_initial_rows == 5
        assert ts.qp.n_eq == 5 * 2499 + 5
        assert ts.qp.n_ineq == 2 * 2500
        assert ts.qp.n == 7 * 2500

    def test_power_cross_term_blocks(self, nominal_lpv):
        from lpvccd.dtqp.transcribe import trapezoid_weights
        p = OcProblem(lpv=nominal_lpv, wind=constant_wind(14.0), n_mesh=50)
        ts = transcribe(p)
        q = trapezoid_weights(ts.t)
        H = ts.qp.H.tocsr()
        lay = ts.layout
        k_eta = p.weights.power * p.eta_g
        for i in (0, 20, 49):
            tau_idx = lay.input(i, 0)
            om_idx = lay.state(i, 4)
            npt.assert_allclose(H[tau_idx, om_idx], -k_eta * q[i], rtol=1e-12)
            npt.assert_allclose(H[om_idx, tau_idx], -k_eta * q[i], rtol=1e-12)

    def test_bounds_shifted_by_operating_point(self, nominal_lpv):
        p = OcProblem(lpv=nominal_lpv, wind=constant_wind(14.0), n_mesh=10)
        ts = transcribe(p)
        lay = ts.layout
        for i in (0, 5):
            om_o = ts.xi_o[i, 4]
            npt.assert_allclose(ts.qp.lb[lay.state(i, 4)], -om_o)
            npt.assert_allclose(ts.qp.ub[lay.state(i, 4)], p.limits.omega_g_max - om_o)
            tau_o = ts.u_o[i, 0]
            npt.assert_allclose(ts.qp.ub[lay.input(i, 0)], p.limits.tau_g_max - tau_o)
            npt.assert_allclose(ts.qp.ub[lay.state(i, 1)],
                                p.limits.theta_p_max - ts.xi_o[i, 1])

    def test_constant_wind_has_zero_drift(self, nominal_lpv):
        p = OcProblem(lpv=nominal_lpv, wind=constant_wind(12.0), n_mesh=40)
        ts = transcribe(p)
        npt.assert_allclose(ts.qp.b[:ts.n_defect_rows], 0.0, atol=1e-15)

    def test_trivial_two_point_problem(self):
        # frozen dynamics: defects + initial rows pin the relative states to zero
        samples = []
        for w in (5.0, 10.0, 15.0, 20.0):
            model, op = sg.linearize(w, sg.PLANT_NOMINAL)
            A0 = np.zeros_like(model.A)
            B0 = np.zeros_like(model.B)
            frozen = type(model)(A=A0, B=B0, C=model.C, D=model.D, g=model.g,
                                 state_labels=model.state_labels,
                                 input_labels=model.input_labels,
                                 output_labels=model.output_labels)
            samples.append((frozen, op))
        lpv = L.build_lpv(samples)
        p = OcProblem(lpv=lpv, wind=constant_wind(12.0, t_f=10.0), t_f=10.0, n_mesh=2)
        sol = solve_ocp(p)
        assert sol.status == "optimal"
        xi_o, _ = lpv.operating_point(12.0)
        npt.assert_allclose(sol.xi, np.tile(xi_o, (2, 1)), atol=1e-7)


class TestSolve:
    def test_rated_case_constraint_physics(self, nominal_lpv):
        wind = sine_wind(14.0)
        tight = OcProblem(lpv=nominal_lpv, wind=wind, n_mesh=400,
                          limits=OcLimits(theta_p_max=math.radians(4.0)))
        sol4 = solve_ocp(tight)
        assert sol4.status == "optimal"
        assert sol4.max_violation <= 1e-6
        # pitch ceiling touched but never crossed
        th = sol4.xi[:, 1]
        assert np.max(th) <= math.radians(4.0) + 1e-6
        assert sol4.activity["theta_p_max"] > 0.0
        loose = OcProblem(lpv=nominal_lpv, wind=wind, n_mesh=400,
                          limits=OcLimits(theta_p_max=math.radians(6.0)))
        sol6 = solve_ocp(loose)
        assert sol6.avg_power > sol4.avg_power

    def test_rated_case_torque_near_max_and_pitch_active(self, nominal_lpv):
        sol = solve_ocp(OcProblem(lpv=nominal_lpv, wind=sine_wind(14.0), n_mesh=400))
        tau_mean = np.mean(sol.u[:, 0])
        assert abs(tau_mean - 19.8e6) < 0.05 * 19.8e6
        assert np.std(sol.u[:, 1]) > 0.005  # blade pitch actively varying

    def test_relaxed_speed_limit_gains_power(self, nominal_lpv):
        wind = sine_wind(14.0)
        base = solve_ocp(OcProblem(lpv=nominal_lpv, wind=wind, n_mesh=300))
        relaxed = solve_ocp(OcProblem(lpv=nominal_lpv, wind=wind, n_mesh=300,
                                      limits=OcLimits(omega_g_max=0.9424)))
        assert relaxed.avg_power >= base.avg_power - 1e-5 * abs(base.avg_power)

    def test_small_plant_tight_pitch_infeasible(self):
        small = L.build_lpv_from_surrogate([36.0, 6.0])
        p = OcProblem(lpv=small, wind=sine_wind(10.0), n_mesh=200,
                      limits=OcLimits(theta_p_max=math.radians(3.0)))
        sol = solve_ocp(p)
        assert sol.status == "infeasible"
        with pytest.raises(UndefinedPowerError):
            average_power(sol)

    def test_outputs_respect_load_limits(self, nominal_lpv):
        sol = solve_ocp(OcProblem(lpv=nominal_lpv, wind=sine_wind(14.0), n_mesh=300))
        r_fs = sol.output_labels.index("f_s_kn")
        r_ms = sol.output_labels.index("m_s_knm")
        assert np.max(sol.y[:, r_fs]) <= 5000.0 + 1e-3
        assert np.max(sol.y[:, r_ms]) <= 32000.0 + 1e-3

    def test_io_round_trip(self, tmp_path, nominal_lpv):
        sol = solve_ocp(OcProblem(lpv=nominal_lpv, wind=constant_wind(12.0), n_mesh=50))
        csv = tmp_path / "traj.csv"
        summary = tmp_path / "summary.json"
        sol.write_csv(csv)
        sol.write_summary(summary)
        header = csv.read_text().splitlines()[0].split(",")
        assert header[0] == "t" and "u_tau_g" in header
        import json
        doc = json.loads(summary.read_text())
        assert doc["status"] == "optimal"
        assert doc["avg_power_w"] > 0


class TestAveragePower:
    def _make_solution(self, t, tau, omega, status="optimal"):
        n = t.size
        xi = np.zeros((n, 5))
        xi[:, 4] = omega
        u = np.zeros((n, 2))
        u[:, 0] = tau
        power = 0.965 * u[:, 0] * xi[:, 4]
        avg = float(np.trapezoid(power, t) / (t[-1] - t[0])) if status == "optimal" else None
        return OcSolution(status=status, t=t, xi=xi, u=u, y=np.zeros((n, 5)),
                          objective=0.0, avg_power=avg, activity={}, iterations=1,
                          max_violation=0.0,
                          state_labels=("theta_p_dot", "theta_p", "delta_t_dot",
                                        "delta_t", "omega_g"),
                          input_labels=("tau_g", "beta"),
                          output_labels=("power_w", "f_s_kn", "m_s_knm", "omega_g",
                                         "theta_p"))

    def test_rated_constant_gives_machine_rating(self):
        t = np.linspace(0.0, 600.0, 101)
        sol = self._make_solution(t, 19.8e6, 0.7850)
        assert abs(average_power(sol) - 15e6) < 0.01e6

    def test_zero_torque_zero_power(self):
        t = np.linspace(0.0, 600.0, 11)
        sol = self._make_solution(t, 0.0, 0.7850)
        assert average_power(sol) == 0.0

    def test_ramp_gives_half_peak(self):
        t = np.linspace(0.0, 600.0, 241)
        tau = 19.8e6 * t / 600.0
        sol = self._make_solution(t, tau, 0.7850)
        peak = 0.965 * 19.8e6 * 0.7850
        npt.assert_allclose(average_power(sol), peak / 2.0, rtol=1e-9)

    def test_non_optimal_raises(self):
        t = np.linspace(0.0, 10.0, 5)
        sol = self._make_solution(t, 1.0, 1.0, status="infeasible")
        with pytest.raises(UndefinedPowerError):
            average_power(sol)
