"""Nonlinear 5-state floating wind turbine surrogate.

The model couples platform pitch, the first tower fore-aft mode, and the
drivetrain through quasi-steady rotor aerodynamics:

* relative wind  ``v = w - L_t*theta_p_dot - delta_t_dot``
* thrust ``F_t = q v^2 C_t`` and aero torque ``tau_a = q v^3 C_p / omega_g``
  with ``q = 0.5 rho pi R^2`` and both coefficients functions of the
  tip-speed ratio ``lambda = omega_g R / v`` and blade pitch ``beta``
* platform pitch:  ``I_p(x_p) theta_p_dd = F_t L_t - K_h(x_p) theta_p - B_p theta_p_dot``
* tower mode:      ``m_t delta_t_dd = F_t - k_t delta_t - c_t delta_t_dot``
* drivetrain:      ``J_r omega_g_dot = tau_a - tau_g``

Plant geometry enters through the platform pitch inertia and the
hydrostatic+mooring pitch stiffness, both scaling with the waterplane
moment term ``c_d^2 c_s^2`` of a three-column semisubmersible.

The thrust coefficient is recovered from the power coefficient through the
axial-induction relation ``C_p = 4a(1-a)^2``, ``C_t = 4a(1-a)``, which keeps
the two surfaces consistent and smooth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from lpvccd.statespace import (
    INPUT_LABELS,
    OUTPUT_LABELS,
    STATE_LABELS,
    OperatingPoint,
    StateSpaceModel,
    Trajectory,
    _rk4,
)

PLANT_LOWER = np.array([36.0, 6.0])
PLANT_UPPER = np.array([78.0, 24.0])
PLANT_NOMINAL = np.array([51.75, 12.50])

TRIM_TOL = 1e-9
TRIM_MAX_ITER = 100


class DomainError(ValueError):
    """State/input outside the modeled envelope (stalled rotor, reversed flow)."""


class TrimError(RuntimeError):
    """Newton trim solve failed to converge."""

    def __init__(self, w: float, residual: float):
        super().__init__(f"trim failed at w={w:.3f} m/s (last residual {residual:.3e})")
        self.w = w
        self.residual = residual


@dataclass(frozen=True)
class PlantDesign:
    """Semisubmersible geometry: column spacing and outer-column diameter [m]."""

    c_s: float
    c_d: float

    def __post_init__(self):
        x = self.as_array()
        if np.any(x < PLANT_LOWER - 1e-9) or np.any(x > PLANT_UPPER + 1e-9):
            raise ValueError(
                f"plant design {x.tolist()} outside bounds "
                f"{PLANT_LOWER.tolist()}..{PLANT_UPPER.tolist()}"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.c_s, self.c_d], dtype=float)


def _as_plant(x_p) -> PlantDesign:
    if isinstance(x_p, PlantDesign):
        return x_p
    arr = np.asarray(x_p, dtype=float)
    return PlantDesign(float(arr[0]), float(arr[1]))


class SurrogateParams:
    """Physical constants of the surrogate, loaded from a JSON calibration file.

    The power-coefficient surface is stored as shape coefficients plus two
    derived factors (computed here, not committed): a tip-speed-ratio scale
    placing the beta=0 peak at the rated tip-speed ratio, and an amplitude
    scale so the peak value matches the power coefficient implied by rated
    torque, rated speed, and rated wind.  With those in place the below-rated
    optimal-tracking schedule meets the rated schedule continuously.
    """

    def __init__(self, doc: dict):
        self.rotor_radius = float(doc["rotor_radius_m"])
        self.air_density = float(doc["air_density_kgpm3"])
        self.drivetrain_inertia = float(doc["drivetrain_inertia_kgm2"])
        plat = doc["platform"]
        self.pitch_inertia_base = float(plat["pitch_inertia_base_kgm2"])
        self.pitch_inertia_scale = float(plat["pitch_inertia_scale_kgm2_per_m4"])
        self.pitch_stiffness_base = float(plat["pitch_stiffness_base_nm_per_rad"])
        self.pitch_stiffness_scale = float(plat["pitch_stiffness_scale_nm_per_rad_per_m4"])
        self.pitch_damping = float(plat["pitch_damping_nms_per_rad"])
        tower = doc["tower"]
        self.tower_mass = float(tower["modal_mass_kg"])
        self.tower_stiffness = float(tower["stiffness_n_per_m"])
        self.tower_damping = float(tower["damping_ns_per_m"])
        self.hub_lever_arm = float(doc["hub_lever_arm_m"])
        self.generator_efficiency = float(doc["generator_efficiency"])
        rated = doc["rated"]
        self.rated_wind = float(rated["wind_mps"])
        self.rated_omega = float(rated["omega_g_radps"])
        self.rated_tau = float(rated["tau_g_nm"])
        cp = doc["cp_surface"]
        self.cp_base = float(cp["base"])
        self.cp_b1 = float(cp["b1"])
        self.cp_b2 = float(cp["b2"])
        self.cp_b3 = float(cp["b3"])
        self.cp_b4 = float(cp["b4"])
        self.cp_lin = float(cp["lin"])
        self.cp_li_beta = float(cp["li_beta"])
        self.cp_li_cube = float(cp["li_cube"])
        self.ct_factor = float(doc["ct_factor"])
        self.wind_range = tuple(float(v) for v in doc["wind_range_mps"])
        self.dyn_pressure_area = 0.5 * self.air_density * math.pi * self.rotor_radius**2
        self._calibrate_cp()

    def _raw_cp(self, lam_s: float, beta_deg: float) -> float:
        """Unscaled family value; lam_s is the already-scaled tip-speed ratio."""
        ii = 1.0 / (lam_s + self.cp_li_beta * beta_deg) - self.cp_li_cube / (1.0 + beta_deg**3)
        bracket = self.cp_b1 * ii - self.cp_b2 * beta_deg - self.cp_b3
        return self.cp_base * bracket * math.exp(-self.cp_b4 * ii) + self.cp_lin * lam_s

    def _calibrate_cp(self) -> None:
        lam_target = self.rated_omega * self.rotor_radius / self.rated_wind
        cp_target = self.rated_tau * self.rated_omega / (
            self.dyn_pressure_area * self.rated_wind**3
        )
        # golden-section peak of the raw family at beta = 0
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = 3.0, 16.0
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = self._raw_cp(c, 0.0), self._raw_cp(d, 0.0)
        while b - a > 1e-12:
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = self._raw_cp(c, 0.0)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = self._raw_cp(d, 0.0)
        lam_peak_raw = 0.5 * (a + b)
        self.tsr_scale = lam_peak_raw / lam_target
        self.cp_scale = cp_target / self._raw_cp(lam_peak_raw, 0.0)
        self.tsr_opt = lam_target
        self.cp_opt = cp_target

    def cp(self, lam: float, beta: float) -> float:
        """Power coefficient at tip-speed ratio lam and blade pitch beta [rad]."""
        return self.cp_scale * self._raw_cp(self.tsr_scale * lam, math.degrees(beta))

    def ct(self, lam: float, beta: float) -> float:
        """Thrust coefficient from the axial-induction inversion of cp."""
        a = _induction_from_cp(self.cp(lam, beta))
        return self.ct_factor * 4.0 * a * (1.0 - a)

    def pitch_inertia(self, x_p) -> float:
        c_s, c_d = _as_plant(x_p).c_s, _as_plant(x_p).c_d
        return self.pitch_inertia_base + self.pitch_inertia_scale * (c_d * c_s) ** 2

    def pitch_stiffness(self, x_p) -> float:
        c_s, c_d = _as_plant(x_p).c_s, _as_plant(x_p).c_d
        return self.pitch_stiffness_base + self.pitch_stiffness_scale * (c_d * c_s) ** 2

    @classmethod
    def from_file(cls, path=None) -> "SurrogateParams":
        if path is None:
            text = resources.files("lpvccd.data").joinpath("iea15mw_surrogate.json").read_text()
            return cls(json.loads(text))
        with open(path) as fh:
            return cls(json.load(fh))


_DEFAULT_PARAMS: SurrogateParams | None = None


def default_params() -> SurrogateParams:
    global _DEFAULT_PARAMS
    if _DEFAULT_PARAMS is None:
        _DEFAULT_PARAMS = SurrogateParams.from_file()
    return _DEFAULT_PARAMS


def _induction_from_cp(cp: float) -> float:
    """Solve 4a(1-a)^2 = cp for the axial induction factor a < 1/3.

    The map is strictly increasing on (-inf, 1/3], so the root is unique;
    Newton from a = cp/4 converges in a handful of iterations.  cp is capped
    just below the Betz value where the branch folds.
    """
    cp = min(cp, 0.59)
    a = cp / 4.0
    for _ in range(40):
        one = 1.0 - a
        f = 4.0 * a * one * one - cp
        if abs(f) < 1e-14:
            break
        fp = 4.0 * one * (1.0 - 3.0 * a)
        a -= f / fp
        if a > 0.3333:
            a = 0.3333
    return a


def dynamics(xi, u, w: float, x_p, params: SurrogateParams | None = None) -> np.ndarray:
    """State derivative [theta_p_dd, theta_p_dot, delta_t_dd, delta_t_dot, omega_g_dot]."""
    p = params or default_params()
    th_dot, th, dt_dot, dt_ = float(xi[0]), float(xi[1]), float(xi[2]), float(xi[3])
    om = float(xi[4])
    tau_g, beta = float(u[0]), float(u[1])
    if om <= 0.0:
        raise DomainError(f"generator speed {om:.4g} rad/s outside modeled envelope")
    v = w - p.hub_lever_arm * th_dot - dt_dot
    if v <= 0.0:
        raise DomainError(f"relative wind {v:.4g} m/s outside modeled envelope")
    lam = om * p.rotor_radius / v
    cp = p.cp(lam, beta)
    ct = p.ct(lam, beta)
    f_t = p.dyn_pressure_area * v * v * ct
    tau_a = p.dyn_pressure_area * v * v * v * cp / om
    i_p = p.pitch_inertia(x_p)
    k_h = p.pitch_stiffness(x_p)
    th_dd = (f_t * p.hub_lever_arm - k_h * th - p.pitch_damping * th_dot) / i_p
    dt_dd = (f_t - p.tower_stiffness * dt_ - p.tower_damping * dt_dot) / p.tower_mass
    om_dot = (tau_a - tau_g) / p.drivetrain_inertia
    return np.array([th_dd, th_dot, dt_dd, dt_dot, om_dot])


def outputs(xi, u, w: float, x_p, params: SurrogateParams | None = None) -> np.ndarray:
    """Plant outputs [P W, F_s kN, M_s kNm, omega_g rad/s, theta_p rad].

    F_s is the tower-base fore-aft shear reaction; M_s uses the generator
    torque reaction as a side-to-side moment proxy (the surrogate carries no
    lateral states).
    """
    p = params or default_params()
    tau_g = float(u[0])
    power = p.generator_efficiency * tau_g * float(xi[4])
    f_s = (p.tower_stiffness * float(xi[3]) + p.tower_damping * float(xi[2])) / 1e3
    m_s = tau_g / 1e3
    return np.array([power, f_s, m_s, float(xi[4]), float(xi[1])])


def _trim_guess(w: float, x_p, p: SurrogateParams, beta: float, omega: float):
    """Stationary states implied by zero pitch/tower rates at the given (beta, omega)."""
    lam = omega * p.rotor_radius / w
    f_t = p.dyn_pressure_area * w * w * p.ct(lam, beta)
    th = f_t * p.hub_lever_arm / p.pitch_stiffness(x_p)
    dt_ = f_t / p.tower_stiffness
    return np.array([0.0, th, 0.0, dt_, omega])


def _damped_newton(res, z0: np.ndarray, w: float) -> np.ndarray:
    """Newton with backtracking line search on the residual infinity norm."""
    z = z0.copy()
    f = res(z)
    norm = float(np.max(np.abs(f)))
    for _ in range(TRIM_MAX_ITER):
        if norm <= TRIM_TOL:
            return z
        jac = np.empty((f.size, z.size))
        for j in range(z.size):
            h = 1e-7 * max(abs(z[j]), 1.0)
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            jac[:, j] = (res(zp) - res(zm)) / (2.0 * h)
        try:
            dz = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise TrimError(w, norm)
        alpha = 1.0
        while alpha >= 1e-4:
            z_new = z + alpha * dz
            try:
                f_new = res(z_new)
            except DomainError:
                alpha *= 0.5
                continue
            norm_new = float(np.max(np.abs(f_new)))
            if norm_new < (1.0 - 1e-4 * alpha) * norm or norm_new <= TRIM_TOL:
                z, f, norm = z_new, f_new, norm_new
                break
            alpha *= 0.5
        else:
            raise TrimError(w, norm)
    if norm <= TRIM_TOL:
        return z
    raise TrimError(w, norm)


def trim(w: float, x_p, params: SurrogateParams | None = None) -> OperatingPoint:
    """Stationary operating point at wind speed w [m/s].

    Below rated wind the blade pitch is held at zero and the generator torque
    follows the optimal tip-speed-ratio schedule; at and above rated wind the
    torque and generator speed are pinned to their rated values and the blade
    pitch absorbs the excess aerodynamic power.  The remaining states are
    polished with a damped Newton solve down to a 1e-9 residual.
    """
    p = params or default_params()
    lo, hi = p.wind_range
    if not (lo - 1e-9 <= w <= hi + 1e-9):
        raise ValueError(f"wind speed {w} m/s outside trim range [{lo}, {hi}]")
    plant = _as_plant(x_p)

    if w < p.rated_wind:
        omega = p.tsr_opt * w / p.rotor_radius
        tau_g = p.dyn_pressure_area * w**3 * p.cp_opt / omega
        u = np.array([tau_g, 0.0])
        z0 = _trim_guess(w, plant, p, 0.0, omega)
        xi = _damped_newton(lambda z: dynamics(z, u, w, plant, p), z0, w)
    else:
        tau_g = p.rated_tau
        lam = p.rated_omega * p.rotor_radius / w
        cp_needed = tau_g * p.rated_omega / (p.dyn_pressure_area * w**3)
        beta = _bisect_pitch(p, lam, cp_needed)

        def res(z):
            xi_full = np.array([z[0], z[1], z[2], z[3], p.rated_omega])
            return dynamics(xi_full, np.array([tau_g, z[4]]), w, plant, p)

        guess = _trim_guess(w, plant, p, beta, p.rated_omega)
        z0 = np.array([guess[0], guess[1], guess[2], guess[3], beta])
        z = _damped_newton(res, z0, w)
        xi = np.array([z[0], z[1], z[2], z[3], p.rated_omega])
        u = np.array([tau_g, z[4]])

    return OperatingPoint(w=float(w), xi_o=xi, u_o=u, x_p=plant.as_array())


def _bisect_pitch(p: SurrogateParams, lam: float, cp_needed: float) -> float:
    """Locate the feathering pitch with cp(lam, beta) = cp_needed, beta in [0, 0.6] rad."""
    lo, hi = 0.0, 0.6
    f_lo = p.cp(lam, lo) - cp_needed
    if f_lo <= 0.0:
        return 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if p.cp(lam, mid) - cp_needed > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def linearize(w: float, x_p, params: SurrogateParams | None = None):
    """Central-difference linearization about the trim point at (w, x_p).

    Returns the (model, operating point) pair; the model's ``g`` vector holds
    the outputs at trim.  Steps are 1e-6 relative with a 1e-8 absolute floor.
    """
    p = params or default_params()
    op = trim(w, x_p, p)
    xi, u = op.xi_o.copy(), op.u_o.copy()

    def step(val):
        return max(1e-6 * abs(val), 1e-8)

    n, m = xi.size, u.size
    A = np.empty((n, n))
    C_rows = outputs(xi, u, w, x_p, p).size
    C = np.empty((C_rows, n))
    for j in range(n):
        h = step(xi[j])
        xp_, xm_ = xi.copy(), xi.copy()
        xp_[j] += h
        xm_[j] -= h
        A[:, j] = (dynamics(xp_, u, w, x_p, p) - dynamics(xm_, u, w, x_p, p)) / (2 * h)
        C[:, j] = (outputs(xp_, u, w, x_p, p) - outputs(xm_, u, w, x_p, p)) / (2 * h)
    B = np.empty((n, m))
    D = np.empty((C_rows, m))
    for j in range(m):
        h = step(u[j])
        up_, um_ = u.copy(), u.copy()
        up_[j] += h
        um_[j] -= h
        B[:, j] = (dynamics(xi, up_, w, x_p, p) - dynamics(xi, um_, w, x_p, p)) / (2 * h)
        D[:, j] = (outputs(xi, up_, w, x_p, p) - outputs(xi, um_, w, x_p, p)) / (2 * h)
    g = outputs(xi, u, w, x_p, p)
    model = StateSpaceModel(A=A, B=B, C=C, D=D, g=g,
                            state_labels=STATE_LABELS, input_labels=INPUT_LABELS,
                            output_labels=OUTPUT_LABELS)
    return model, op


def simulate_nonlinear(wind: Trajectory, u: Trajectory, xi0, x_p,
                       grid: np.ndarray | None = None,
                       params: SurrogateParams | None = None) -> Trajectory:
    """RK4 integration of the full nonlinear surrogate under absolute inputs.

    ``wind`` and ``u`` are sampled trajectories (piecewise linear between
    samples); the output grid defaults to the wind grid.  This is the ground
    truth for every model-validation comparison.
    """
    p = params or default_params()
    grid = wind.t if grid is None else np.asarray(grid, dtype=float)

    def f(t, x):
        return dynamics(x, u(t), float(wind(t)[0]), x_p, p)

    values = _rk4(f, grid, np.asarray(xi0, dtype=float))
    return Trajectory(grid, values, STATE_LABELS)
