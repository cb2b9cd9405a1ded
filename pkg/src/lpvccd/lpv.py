"""Continuous linear parameter-varying models built from sampled linearizations.

A finite family of linearized models, one per sampled wind speed, is turned
into a model with continuous wind dependence by shape-preserving piecewise
cubic Hermite (PCHIP) interpolation of every nonzero matrix entry and of the
operating-point components.  The operating-point derivative d(xi_o)/dw needed
by the moving-operating-point drift term comes straight from the interpolant's
analytic derivative.

A second interpolation layer handles plant geometry: a full-factorial grid of
wind-direction models is combined by bilinear interpolation over (column
spacing, column diameter), composed with the wind interpolation at each node.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from lpvccd import surrogate as sg
from lpvccd.statespace import (
    OperatingPoint,
    StateSpaceModel,
    Trajectory,
    hinf_error,
    load_model,
    save_model,
    time_grid,
)

SPARSITY_THRESHOLD = 1e-12
#: furthest the wind interpolants may be evaluated beyond the sample span [m/s]
EXTRAPOLATION_MARGIN = 2.0
#: transfer-function channels used for gain-error scoring: the two key states
#: driven by both inputs
KEY_OUTPUTS = ("omega_g", "theta_p")
SCHEMA_VERSION = 1


class LpvStructureError(ValueError):
    """Samples disagree in dimensions, labels, or ordering."""


class ExtrapolationError(ValueError):
    """Requested evaluation outside the trusted extrapolation band."""


def _pack_masks(models: list[StateSpaceModel]) -> tuple[dict, int]:
    """Union nonzero masks for A, B, C, D plus the count of mask disagreements."""
    masks, mismatches = {}, 0
    for name in ("A", "B", "C", "D"):
        stack = np.array([np.abs(getattr(m, name)) >= SPARSITY_THRESHOLD for m in models])
        union = np.any(stack, axis=0)
        every = np.all(stack, axis=0)
        mismatches += int(np.count_nonzero(union & ~every))
        masks[name] = union
    return masks, mismatches


class LpvModel:
    """Wind-parameterized state-space family, continuous via PCHIP interpolation.

    Use :func:`build_lpv` to construct one.  ``W`` is the sorted sample grid,
    ``models``/``ops`` the stored samples; evaluation at any sample wind speed
    reproduces the stored data exactly.
    """

    def __init__(self, W, models, ops, masks, sparsity_mismatches):
        self.W = np.asarray(W, dtype=float)
        self.models = list(models)
        self.ops = list(ops)
        self.masks = masks
        self.sparsity_mismatches = int(sparsity_mismatches)
        self.x_p = ops[0].x_p
        ref = models[0]
        self.n, self.m, self.p = ref.n_states, ref.n_inputs, ref.n_outputs
        self.state_labels = ref.state_labels
        self.input_labels = ref.input_labels
        self.output_labels = ref.output_labels
        self._idx = {k: np.argwhere(masks[k]) for k in ("A", "B", "C", "D")}
        entry_rows = []
        for model in models:
            parts = [getattr(model, k)[masks[k]] for k in ("A", "B", "C", "D")]
            parts.append(model.g)
            entry_rows.append(np.concatenate(parts))
        self._entry_interp = PchipInterpolator(self.W, np.array(entry_rows), axis=0,
                                               extrapolate=True)
        op_rows = np.array([np.concatenate([op.xi_o, op.u_o]) for op in ops])
        self._op_interp = PchipInterpolator(self.W, op_rows, axis=0, extrapolate=True)
        self._op_deriv = self._op_interp.derivative()

    # -- evaluation ---------------------------------------------------------

    def _check_range(self, w, extrapolate: bool):
        w = np.asarray(w, dtype=float)
        lo, hi = self.W[0], self.W[-1]
        if np.any(w < lo - EXTRAPOLATION_MARGIN) or np.any(w > hi + EXTRAPOLATION_MARGIN):
            raise ExtrapolationError(
                f"wind speed outside [{lo - EXTRAPOLATION_MARGIN}, {hi + EXTRAPOLATION_MARGIN}] "
                "m/s; cubic extrapolation is not trusted that far out")
        if not extrapolate and (np.any(w < lo) or np.any(w > hi)):
            raise ExtrapolationError(
                f"wind speed outside samples [{lo}, {hi}] m/s and extrapolation not enabled")

    def _unpack(self, entries: np.ndarray):
        A = np.zeros((self.n, self.n))
        B = np.zeros((self.n, self.m))
        C = np.zeros((self.p, self.n))
        D = np.zeros((self.p, self.m))
        k = 0
        for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
            idx = self._idx[name]
            M[tuple(idx.T)] = entries[k:k + len(idx)]
            k += len(idx)
        g = entries[k:k + self.p]
        return A, B, C, D, g

    def eval(self, w: float, extrapolate: bool = False):
        """Evaluate at wind speed w.

        Returns ``(model, op, dxi_o_dw)`` where the last element is the
        analytic derivative of the stationary states with respect to wind.
        """
        self._check_range(w, extrapolate)
        A, B, C, D, g = self._unpack(self._entry_interp(w))
        vec = self._op_interp(w)
        dvec = self._op_deriv(w)
        model = StateSpaceModel(A=A, B=B, C=C, D=D, g=g,
                                state_labels=self.state_labels,
                                input_labels=self.input_labels,
                                output_labels=self.output_labels)
        op = OperatingPoint(w=float(w), xi_o=vec[:self.n], u_o=vec[self.n:], x_p=self.x_p)
        return model, op, dvec[:self.n]

    def eval_batch(self, w: np.ndarray, extrapolate: bool = False) -> dict:
        """Vectorized evaluation: stacked raw arrays keyed A, B, C, D, g, xi_o, u_o, dxi_o_dw."""
        w = np.asarray(w, dtype=float)
        self._check_range(w, extrapolate)
        entries = self._entry_interp(w)
        ops = self._op_interp(w)
        dops = self._op_deriv(w)
        return self._batch_unpack(entries, ops, dops, w.size)

    def _batch_unpack(self, entries, ops, dops, nw):
        out = {
            "A": np.zeros((nw, self.n, self.n)), "B": np.zeros((nw, self.n, self.m)),
            "C": np.zeros((nw, self.p, self.n)), "D": np.zeros((nw, self.p, self.m)),
        }
        k = 0
        for name in ("A", "B", "C", "D"):
            idx = self._idx[name]
            out[name][(slice(None), *idx.T)] = entries[:, k:k + len(idx)]
            k += len(idx)
        out["g"] = entries[:, k:k + self.p]
        out["xi_o"] = ops[:, :self.n]
        out["u_o"] = ops[:, self.n:]
        out["dxi_o_dw"] = dops[:, :self.n]
        return out

    def operating_point(self, w, extrapolate: bool = True):
        """Interpolated (xi_o, u_o) rows at wind speed(s) w."""
        self._check_range(w, extrapolate)
        vec = self._op_interp(w)
        return vec[..., :self.n], vec[..., self.n:]


def _check_structure(samples) -> None:
    ref_model, ref_op = samples[0]
    for i, (model, op) in enumerate(samples):
        same = (model.state_labels == ref_model.state_labels
                and model.input_labels == ref_model.input_labels
                and model.output_labels == ref_model.output_labels
                and model.A.shape == ref_model.A.shape
                and model.C.shape == ref_model.C.shape)
        if not same:
            raise LpvStructureError(f"sample {i} (w={op.w}) does not share the reference structure")
        if np.max(np.abs(op.x_p - ref_op.x_p)) > 1e-9:
            raise LpvStructureError(f"sample {i} (w={op.w}) has a different plant design")


def build_lpv(samples: list, mask_override: dict | None = None) -> LpvModel:
    """Fit the wind-direction LPV model from (model, operating point) samples.

    Requires at least 4 samples at strictly increasing wind speeds with a
    shared state/input/output structure.  Sparsity masks are unioned across
    samples; disagreements are counted, not fatal.
    """
    if len(samples) < 4:
        raise ValueError("need at least 4 samples for cubic Hermite interpolation")
    samples = sorted(samples, key=lambda s: s[1].w)
    W = np.array([op.w for _, op in samples])
    if np.any(np.diff(W) <= 0):
        raise ValueError("sample wind speeds must be strictly increasing")
    _check_structure(samples)
    models = [s[0] for s in samples]
    ops = [s[1] for s in samples]
    masks, mismatches = _pack_masks(models)
    if mask_override is not None:
        for k in masks:
            masks[k] = masks[k] | mask_override[k]
    return LpvModel(W, models, ops, masks, mismatches)


def default_wind_samples() -> np.ndarray:
    """The 23 standard sample wind speeds: integers 3..25 m/s."""
    return np.arange(3.0, 26.0)


def build_lpv_from_surrogate(x_p, W=None, params=None) -> LpvModel:
    """Trim + linearize the surrogate over W and fit the LPV model."""
    W = default_wind_samples() if W is None else np.asarray(W, dtype=float)
    samples = [sg.linearize(float(w), x_p, params) for w in W]
    return build_lpv(samples)


# ---------------------------------------------------------------------------
# Simulation with the moving operating point
# ---------------------------------------------------------------------------

def simulate_lpv(lpv: LpvModel, wind: Trajectory, u_delta: Trajectory, xi_delta0,
                 grid: np.ndarray | None = None, extrapolate: bool = True) -> Trajectory:
    """RK4 integration of the wind-scheduled linear model.

    Integrates ``dxi/dt = A(w) xi + B(w) u_delta - dxi_o/dw * dw/dt`` where
    ``w`` follows the wind trajectory and its rate comes from central
    differences on the wind's own grid.  Returns relative states; absolute
    states are ``xi + xi_o(w(t))``.
    """
    grid = wind.t if grid is None else np.asarray(grid, dtype=float)
    dwdt = wind.derivative()
    mids = 0.5 * (grid[:-1] + grid[1:])
    stages = {}
    for key, times in (("lo", grid), ("mid", mids)):
        w_vals = wind(times)[:, 0]
        data = lpv.eval_batch(w_vals, extrapolate=extrapolate)
        stages[key] = (data["A"], data["B"],
                       -data["dxi_o_dw"] * dwdt(times), u_delta(times))

    A_lo, B_lo, d_lo, u_lo = stages["lo"]
    A_mid, B_mid, d_mid, u_mid = stages["mid"]
    x = np.asarray(xi_delta0, dtype=float).copy()
    out = np.empty((grid.size, x.size))
    out[0] = x
    for i in range(grid.size - 1):
        h = grid[i + 1] - grid[i]
        k1 = A_lo[i] @ x + B_lo[i] @ u_lo[i] + d_lo[i]
        x2 = x + 0.5 * h * k1
        k2 = A_mid[i] @ x2 + B_mid[i] @ u_mid[i] + d_mid[i]
        x3 = x + 0.5 * h * k2
        k3 = A_mid[i] @ x3 + B_mid[i] @ u_mid[i] + d_mid[i]
        x4 = x + h * k3
        k4 = A_lo[i + 1] @ x4 + B_lo[i + 1] @ u_lo[i + 1] + d_lo[i + 1]
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            from lpvccd.statespace import SimulationDiverged
            raise SimulationDiverged(grid[i + 1])
        out[i + 1] = x
    return Trajectory(grid, out, lpv.state_labels)


def standard_step_wind(t_f: float = 600.0, dt: float = 0.25,
                       levels=(8.0, 10.4, 12.8, 15.2, 17.6), ramp: float = 20.0) -> Trajectory:
    """Piecewise-constant wind staircase with smooth ramps, mean 12.8 m/s."""
    t = np.arange(0.0, t_f + 0.5 * dt, dt)
    seg = t_f / len(levels)
    w = np.empty_like(t)
    for i, ti in enumerate(t):
        k = min(int(ti // seg), len(levels) - 1)
        w_k = levels[k]
        into = ti - k * seg
        if k > 0 and into < ramp:
            w_prev = levels[k - 1]
            frac = 0.5 * (1.0 - math.cos(math.pi * into / ramp))
            w[i] = w_prev + (w_k - w_prev) * frac
        else:
            w[i] = w_k
    return Trajectory(t, w, ("wind",))


def scheduled_inputs(lpv: LpvModel, wind: Trajectory) -> Trajectory:
    """Absolute inputs following the interpolated operating-point schedule u_o(w(t))."""
    _, u_o = lpv.operating_point(wind.values[:, 0], extrapolate=True)
    return Trajectory(wind.t, u_o, lpv.input_labels)


# ---------------------------------------------------------------------------
# Validation battery
# ---------------------------------------------------------------------------

@dataclass
class ValidationTolerances:
    """Pass thresholds for the model-fidelity report."""

    hinf_rel: float = 0.05          # gain error relative to the held-out model's own norm
    stationarity: float = 1e-6      # |f(xi_o(w), u_o(w), w)| at interpolated points
    sparsity_mismatch_max: int = 0


@dataclass
class ValidationReport:
    """Outcome of the interpolation fidelity checks against held-out models."""

    structure_ok: bool
    sparsity_mismatches: int
    heldout_w: np.ndarray
    stationarity_residuals: np.ndarray | None
    matrix_rel_errors: np.ndarray
    hinf_errors: np.ndarray
    hinf_norms: np.ndarray
    eig_errors: np.ndarray
    rms_lpv: dict | None
    rms_lti: dict | None
    transition_region_dominates: bool
    passed: bool
    tolerances: ValidationTolerances

    def to_json_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "structure_ok": self.structure_ok,
            "sparsity_mismatches": self.sparsity_mismatches,
            "heldout_w": arr(self.heldout_w),
            "stationarity_residuals": arr(self.stationarity_residuals),
            "matrix_rel_errors": arr(self.matrix_rel_errors),
            "hinf_errors": arr(self.hinf_errors),
            "hinf_norms": arr(self.hinf_norms),
            "eig_errors": arr(self.eig_errors),
            "rms_lpv": self.rms_lpv,
            "rms_lti": self.rms_lti,
            "transition_region_dominates": self.transition_region_dominates,
            "passed": self.passed,
            "tolerances": {
                "hinf_rel": self.tolerances.hinf_rel,
                "stationarity": self.tolerances.stationarity,
                "sparsity_mismatch_max": self.tolerances.sparsity_mismatch_max,
            },
        }

    def per_w_rows(self) -> list[dict]:
        rows = []
        for i, w in enumerate(self.heldout_w):
            rows.append({
                "w": float(w),
                "hinf_error": float(self.hinf_errors[i]),
                "hinf_norm": float(self.hinf_norms[i]),
                "matrix_rel_error": float(self.matrix_rel_errors[i]),
                "eig_error": float(self.eig_errors[i]),
                "stationarity": (float(self.stationarity_residuals[i])
                                 if self.stationarity_residuals is not None else float("nan")),
            })
        return rows


def _key_channels(model: StateSpaceModel):
    """The key-state output rows if this is a turbine model, else all outputs."""
    if all(k in model.output_labels for k in KEY_OUTPUTS):
        return list(KEY_OUTPUTS)
    return None


def _zero_model_norm(model: StateSpaceModel) -> float:
    """Gain of the model itself over the key channels (for relative tolerances)."""
    zero = StateSpaceModel(A=model.A, B=np.zeros_like(model.B), C=np.zeros_like(model.C),
                           D=np.zeros_like(model.D), g=np.zeros_like(model.g),
                           state_labels=model.state_labels, input_labels=model.input_labels,
                           output_labels=model.output_labels)
    return hinf_error(model, zero, outputs=_key_channels(model))


def validate(lpv: LpvModel, heldout: list, tolerances: ValidationTolerances | None = None,
             surrogate_params=None, scenario: Trajectory | None = None) -> ValidationReport:
    """Score the interpolated model against held-out linearizations.

    Checks, in order: shared structure, sparsity-mask agreement, stationarity
    of the interpolated operating points (when surrogate physics are supplied),
    entry-wise matrix errors, per-wind-speed worst-case gain errors on the key
    channels, eigenvalue deviations, and time-domain RMS errors against the
    nonlinear response on a step-wind scenario.  Failures land in the report;
    nothing raises.
    """
    tol = tolerances or ValidationTolerances()
    structure_ok = True
    try:
        _check_structure([(m, o) for m, o in heldout] + [(lpv.models[0], lpv.ops[0])])
    except LpvStructureError:
        structure_ok = False

    heldout = sorted(heldout, key=lambda s: s[1].w)
    ws = np.array([op.w for _, op in heldout])
    mismatches = lpv.sparsity_mismatches
    mat_err = np.empty(len(heldout))
    hinf_err = np.empty(len(heldout))
    hinf_norm = np.empty(len(heldout))
    eig_err = np.empty(len(heldout))
    stat_res = np.empty(len(heldout)) if surrogate_params is not None else None

    for i, (true_model, op) in enumerate(heldout):
        interp_model, interp_op, _ = lpv.eval(op.w, extrapolate=True)
        for name in ("A", "B", "C", "D"):
            true_nz = np.abs(getattr(true_model, name)) >= SPARSITY_THRESHOLD
            mismatches += int(np.count_nonzero(true_nz & ~lpv.masks[name]))
        errs = []
        for name in ("A", "B", "C", "D"):
            T, I = getattr(true_model, name), getattr(interp_model, name)
            denom = np.max(np.abs(T)) + 1e-30
            errs.append(np.max(np.abs(T - I)) / denom)
        mat_err[i] = max(errs)
        hinf_err[i] = hinf_error(true_model, interp_model, outputs=_key_channels(true_model))
        hinf_norm[i] = _zero_model_norm(true_model)
        e_true = np.sort_complex(np.linalg.eigvals(true_model.A))
        e_int = np.sort_complex(np.linalg.eigvals(interp_model.A))
        eig_err[i] = float(np.max(np.abs(e_true - e_int)))
        if stat_res is not None:
            stat_res[i] = float(np.max(np.abs(
                sg.dynamics(interp_op.xi_o, interp_op.u_o, op.w, lpv.x_p, surrogate_params))))

    rms_lpv = rms_lti = None
    if surrogate_params is not None:
        wind = scenario or standard_step_wind()
        rms_lpv, rms_lti = _step_scenario_rms(lpv, wind, surrogate_params)

    k_max = int(np.argmax(hinf_err)) if len(heldout) else 0
    transition = bool(len(heldout) and 8.0 <= ws[k_max] <= 12.0)
    passed = structure_ok and mismatches <= tol.sparsity_mismatch_max
    if len(heldout):
        passed = passed and bool(np.all(hinf_err <= tol.hinf_rel * hinf_norm))
    if stat_res is not None:
        passed = passed and bool(np.max(stat_res) <= tol.stationarity)

    return ValidationReport(
        structure_ok=structure_ok, sparsity_mismatches=mismatches, heldout_w=ws,
        stationarity_residuals=stat_res, matrix_rel_errors=mat_err,
        hinf_errors=hinf_err, hinf_norms=hinf_norm, eig_errors=eig_err,
        rms_lpv=rms_lpv, rms_lti=rms_lti,
        transition_region_dominates=transition, passed=passed, tolerances=tol)


def _step_scenario_rms(lpv: LpvModel, wind: Trajectory, params):
    """Per-state RMS error of the LPV and frozen-LTI predictions vs the nonlinear response."""
    grid = time_grid(wind.t[-1])
    u_abs = scheduled_inputs(lpv, wind)
    xi0, _ = lpv.operating_point(wind.values[0, 0])
    truth = sg.simulate_nonlinear(wind, u_abs, xi0, lpv.x_p, grid=grid, params=params)

    rel = simulate_lpv(lpv, wind, Trajectory(wind.t, np.zeros((wind.t.size, lpv.m))),
                       np.zeros(lpv.n), grid=grid)
    xi_sched, _ = lpv.operating_point(wind(grid)[:, 0])
    lpv_abs = rel.values + xi_sched

    w_avg = float(np.mean(wind(grid)[:, 0]))
    from lpvccd.statespace import simulate_lti
    model_avg, op_avg, _ = lpv.eval(w_avg, extrapolate=True)
    u_delta_avg = Trajectory(u_abs.t, u_abs.values - op_avg.u_o)
    lti_rel = simulate_lti(model_avg, op_avg, u_delta_avg,
                           xi0 - op_avg.xi_o, grid)
    lti_abs = lti_rel.values + op_avg.xi_o

    rms_lpv, rms_lti = {}, {}
    for j, label in enumerate(lpv.state_labels):
        rms_lpv[label] = float(np.sqrt(np.mean((lpv_abs[:, j] - truth.values[:, j]) ** 2)))
        rms_lti[label] = float(np.sqrt(np.mean((lti_abs[:, j] - truth.values[:, j]) ** 2)))
    return rms_lpv, rms_lti


def alternate_split(samples: list) -> tuple[list, list]:
    """Every other sample (starting with the first) for training, the rest held out."""
    ordered = sorted(samples, key=lambda s: s[1].w)
    return ordered[0::2], ordered[1::2]


# ---------------------------------------------------------------------------
# Plant-geometry interpolation layer
# ---------------------------------------------------------------------------

class PlantLpvFamily:
    """Full-factorial (c_s x c_d) grid of wind-direction LPV models.

    Every node shares the wind sample grid and the (unioned) sparsity masks so
    evaluation can blend the nodes' packed entry vectors directly.
    """

    def __init__(self, cs_axis, cd_axis, nodes):
        self.cs_axis = np.asarray(cs_axis, dtype=float)
        self.cd_axis = np.asarray(cd_axis, dtype=float)
        if np.any(np.diff(self.cs_axis) <= 0) or np.any(np.diff(self.cd_axis) <= 0):
            raise ValueError("plant grid axes must be strictly increasing")
        self.nodes = nodes
        ref = nodes[0][0]
        self.W = ref.W
        for row in nodes:
            for node in row:
                if not np.array_equal(node.W, self.W):
                    raise LpvStructureError("family nodes must share the wind sample grid")

    def _cell(self, x_p):
        x = np.asarray(x_p, dtype=float)
        if (x[0] < self.cs_axis[0] - 1e-12 or x[0] > self.cs_axis[-1] + 1e-12
                or x[1] < self.cd_axis[0] - 1e-12 or x[1] > self.cd_axis[-1] + 1e-12):
            raise ValueError(f"plant design {x.tolist()} outside the family hull")
        i = min(max(int(np.searchsorted(self.cs_axis, x[0]) - 1), 0), self.cs_axis.size - 2)
        j = min(max(int(np.searchsorted(self.cd_axis, x[1]) - 1), 0), self.cd_axis.size - 2)
        ts = (x[0] - self.cs_axis[i]) / (self.cs_axis[i + 1] - self.cs_axis[i])
        td = (x[1] - self.cd_axis[j]) / (self.cd_axis[j + 1] - self.cd_axis[j])
        corners = [(i, j, (1 - ts) * (1 - td)), (i + 1, j, ts * (1 - td)),
                   (i, j + 1, (1 - ts) * td), (i + 1, j + 1, ts * td)]
        return [(self.nodes[a][b], wgt) for a, b, wgt in corners]

    def eval(self, x_p, w: float, extrapolate: bool = False):
        """Bilinear blend over plant geometry of the per-node wind evaluations."""
        corners = self._cell(x_p)
        ref = corners[0][0]
        ref._check_range(w, extrapolate)
        entries = sum(wgt * node._entry_interp(w) for node, wgt in corners)
        vec = sum(wgt * node._op_interp(w) for node, wgt in corners)
        dvec = sum(wgt * node._op_deriv(w) for node, wgt in corners)
        A, B, C, D, g = ref._unpack(entries)
        model = StateSpaceModel(A=A, B=B, C=C, D=D, g=g,
                                state_labels=ref.state_labels,
                                input_labels=ref.input_labels,
                                output_labels=ref.output_labels)
        op = OperatingPoint(w=float(w), xi_o=vec[:ref.n], u_o=vec[ref.n:],
                            x_p=np.asarray(x_p, dtype=float))
        return model, op, dvec[:ref.n]

    def eval_batch(self, x_p, w: np.ndarray, extrapolate: bool = False) -> dict:
        corners = self._cell(x_p)
        ref = corners[0][0]
        w = np.asarray(w, dtype=float)
        ref._check_range(w, extrapolate)
        entries = sum(wgt * node._entry_interp(w) for node, wgt in corners)
        ops = sum(wgt * node._op_interp(w) for node, wgt in corners)
        dops = sum(wgt * node._op_deriv(w) for node, wgt in corners)
        return ref._batch_unpack(entries, ops, dops, w.size)

    def at_plant(self, x_p) -> "FrozenPlantLpv":
        """Freeze the plant coordinate, exposing the LpvModel evaluation surface."""
        return FrozenPlantLpv(self, np.asarray(x_p, dtype=float))


class FrozenPlantLpv:
    """Adapter: a PlantLpvFamily pinned at one plant design behaves like an LpvModel."""

    def __init__(self, family: PlantLpvFamily, x_p: np.ndarray):
        self.family = family
        self.x_p = x_p
        ref = family.nodes[0][0]
        self.W = family.W
        self.n, self.m, self.p = ref.n, ref.m, ref.p
        self.state_labels = ref.state_labels
        self.input_labels = ref.input_labels
        self.output_labels = ref.output_labels

    def eval(self, w: float, extrapolate: bool = False):
        return self.family.eval(self.x_p, w, extrapolate)

    def eval_batch(self, w, extrapolate: bool = False) -> dict:
        return self.family.eval_batch(self.x_p, w, extrapolate)

    def operating_point(self, w, extrapolate: bool = True):
        data = self.family.eval_batch(self.x_p, np.atleast_1d(np.asarray(w, dtype=float)),
                                      extrapolate)
        xi, u = data["xi_o"], data["u_o"]
        if np.isscalar(w) or np.asarray(w).ndim == 0:
            return xi[0], u[0]
        return xi, u


def build_plant_family(cs_axis, cd_axis, sample_grid) -> PlantLpvFamily:
    """Assemble the family from per-node sample lists (indexed [i_cs][j_cd]).

    Sparsity masks are unioned across all nodes so every node shares the same
    packed-entry layout.
    """
    all_models = [m for row in sample_grid for samples in row for m, _ in samples]
    masks, _ = _pack_masks(all_models)
    nodes = [[build_lpv(samples, mask_override=masks) for samples in row]
             for row in sample_grid]
    return PlantLpvFamily(cs_axis, cd_axis, nodes)


def build_family_from_surrogate(cs_axis=None, cd_axis=None, W=None,
                                params=None) -> PlantLpvFamily:
    """Trim + linearize the surrogate on the full-factorial plant grid (7x7 default)."""
    cs_axis = np.linspace(36.0, 78.0, 7) if cs_axis is None else np.asarray(cs_axis, float)
    cd_axis = np.linspace(6.0, 24.0, 7) if cd_axis is None else np.asarray(cd_axis, float)
    W = default_wind_samples() if W is None else np.asarray(W, dtype=float)
    grid = []
    for cs in cs_axis:
        row = []
        for cd in cd_axis:
            row.append([sg.linearize(float(w), [cs, cd], params) for w in W])
        grid.append(row)
    return build_plant_family(cs_axis, cd_axis, grid)


# ---------------------------------------------------------------------------
# Persistence: per-sample JSON files plus a manifest
# ---------------------------------------------------------------------------

def save_lpv(directory, lpv: LpvModel) -> None:
    os.makedirs(directory, exist_ok=True)
    files = []
    for model, op in zip(lpv.models, lpv.ops):
        name = f"model_w{op.w:06.2f}.json"
        save_model(os.path.join(directory, name), model, op)
        files.append(name)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "type": "wind_lpv",
        "W": lpv.W.tolist(),
        "x_p": lpv.x_p.tolist(),
        "files": files,
        "masks": {k: lpv.masks[k].astype(int).tolist() for k in lpv.masks},
        "sparsity_mismatches": lpv.sparsity_mismatches,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_lpv(directory) -> LpvModel:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("type") != "wind_lpv":
        raise ValueError(f"{directory} does not hold a wind LPV model")
    samples = [load_model(os.path.join(directory, name)) for name in manifest["files"]]
    masks = {k: np.array(v, dtype=bool) for k, v in manifest["masks"].items()}
    return build_lpv(samples, mask_override=masks)


def save_family(directory, family: PlantLpvFamily) -> None:
    os.makedirs(directory, exist_ok=True)
    node_dirs = []
    for i, row in enumerate(family.nodes):
        dirs_row = []
        for j, node in enumerate(row):
            sub = f"node_{i}_{j}"
            save_lpv(os.path.join(directory, sub), node)
            dirs_row.append(sub)
        node_dirs.append(dirs_row)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "type": "plant_family",
        "cs_axis": family.cs_axis.tolist(),
        "cd_axis": family.cd_axis.tolist(),
        "W": family.W.tolist(),
        "nodes": node_dirs,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_family(directory) -> PlantLpvFamily:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("type") != "plant_family":
        raise ValueError(f"{directory} does not hold a plant LPV family")
    sample_grid = []
    for row in manifest["nodes"]:
        sample_grid.append([])
        for sub in row:
            node = load_lpv(os.path.join(directory, sub))
            sample_grid[-1].append(list(zip(node.models, node.ops)))
    return build_plant_family(manifest["cs_axis"], manifest["cd_axis"], sample_grid)


def content_digest(directory) -> str:
    """Stable sha256 over the manifest and model files of a persisted model."""
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(directory)):
        for name in sorted(files):
            if name.endswith(".json"):
                path = os.path.join(root, name)
                h.update(os.path.relpath(path, directory).encode())
                with open(path, "rb") as fh:
                    h.update(fh.read())
    return h.hexdigest()
