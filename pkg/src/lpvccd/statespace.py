"""Linear state-space models, time/frequency-domain tools, and gain-error metrics.

Conventions used throughout the package:

* models are written in relative (perturbation) coordinates about a stationary
  operating point, ``dxi/dt = A xi + B u``, ``y = C xi + D u + g``
* the floating-turbine state order is ``[theta_p_dot, theta_p, delta_t_dot,
  delta_t, omega_g]`` and the input order is ``[tau_g, beta]``
* all simulation uses fixed-step classical Runge-Kutta (RK4)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

STATE_LABELS = ("theta_p_dot", "theta_p", "delta_t_dot", "delta_t", "omega_g")
INPUT_LABELS = ("tau_g", "beta")
OUTPUT_LABELS = ("power_w", "f_s_kn", "m_s_knm", "omega_g", "theta_p")

#: default RK4 step [s] for all time-domain simulation
DEFAULT_STEP = 0.025

#: default frequency grid for gain-error computations [rad/s]
HINF_GRID = np.logspace(-3.0, 2.0, 400)


class SimulationDiverged(RuntimeError):
    """Raised when an integrated state stops being finite."""

    def __init__(self, t: float):
        super().__init__(f"simulation diverged: non-finite state at t={t:.6g} s")
        self.t = t


class PoleProximityError(ValueError):
    """Raised when the resolvent (jw*I - A) is singular to working precision."""


@dataclass(frozen=True)
class OperatingPoint:
    """Stationary point (xi_o, u_o) of the nonlinear plant at wind speed w.

    Attributes
    ----------
    w : float
        Wind speed [m/s].
    xi_o : ndarray
        Stationary states, units [rad/s, rad, m/s, m, rad/s].
    u_o : ndarray
        Stationary inputs [Nm, rad].
    x_p : ndarray
        Plant design [column spacing m, column diameter m].
    """

    w: float
    xi_o: np.ndarray
    u_o: np.ndarray
    x_p: np.ndarray

    def __post_init__(self):
        for name in ("xi_o", "u_o", "x_p"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (np.all(np.isfinite(self.xi_o)) and np.all(np.isfinite(self.u_o))):
            raise ValueError("operating point contains non-finite entries")


@dataclass(frozen=True)
class StateSpaceModel:
    """One linearization: matrices (A, B, C, D) plus output offset g.

    ``g`` holds the plant outputs at the operating point, so absolute outputs
    are ``y = C xi + D u + g`` with ``(xi, u)`` relative to the operating
    point.  Matrices are stored dense (n=5 here) and read-only.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    g: np.ndarray
    state_labels: tuple = STATE_LABELS
    input_labels: tuple = INPUT_LABELS
    output_labels: tuple = OUTPUT_LABELS

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "g"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if name != "g":
                arr = np.atleast_2d(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n, m, p = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape != (n, m):
            raise ValueError(f"B shape {self.B.shape} inconsistent with A")
        if self.C.shape != (p, n):
            raise ValueError(f"C shape {self.C.shape} inconsistent with A")
        if self.D.shape != (p, m):
            raise ValueError(f"D shape {self.D.shape} inconsistent with B/C")
        if self.g.shape != (p,):
            raise ValueError(f"g shape {self.g.shape} inconsistent with C")
        for name in ("A", "B", "C", "D", "g"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")
        object.__setattr__(self, "state_labels", tuple(self.state_labels))
        object.__setattr__(self, "input_labels", tuple(self.input_labels))
        object.__setattr__(self, "output_labels", tuple(self.output_labels))
        if len(self.state_labels) != n or len(self.input_labels) != m or len(self.output_labels) != p:
            raise ValueError("label lists inconsistent with matrix dimensions")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass
class Trajectory:
    """Sampled signal on a strictly increasing time grid.

    ``values`` has one row per grid point; columns follow ``labels``.
    Evaluation between samples is piecewise linear.
    """

    t: np.ndarray
    values: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.t.ndim != 1 or self.t.size == 0:
            raise ValueError("time grid must be a nonempty 1-D array")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if self.values.shape[0] != self.t.size:
            raise ValueError("value rows must match grid length")
        if not self.labels:
            self.labels = tuple(f"y{i}" for i in range(self.values.shape[1]))
        self.labels = tuple(self.labels)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def __call__(self, t):
        """Piecewise-linear interpolation at time(s) t (clamped at the ends)."""
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape + (self.n_channels,))
        for j in range(self.n_channels):
            out[..., j] = np.interp(t, self.t, self.values[:, j])
        return out

    def derivative(self) -> "Trajectory":
        """Central-difference time derivative on the trajectory's own grid."""
        dv = np.gradient(self.values, self.t, axis=0)
        return Trajectory(self.t, dv, tuple(f"d_{l}" for l in self.labels))

    def channel(self, label: str) -> np.ndarray:
        return self.values[:, self.labels.index(label)]


def time_grid(t_f: float, step: float = DEFAULT_STEP) -> np.ndarray:
    """Uniform grid [0, t_f] with the requested step (t_f always included)."""
    n = int(round(t_f / step))
    return np.linspace(0.0, t_f, n + 1)


def _rk4(f, grid: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Classical fixed-step RK4 for dx/dt = f(t, x) on the given grid."""
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((grid.size, x.size))
    out[0] = x
    for i in range(grid.size - 1):
        t, h = grid[i], grid[i + 1] - grid[i]
        k1 = f(t, x)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = f(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise SimulationDiverged(grid[i + 1])
        out[i + 1] = x
    return out


def simulate_lti(model: StateSpaceModel, op: OperatingPoint, u_delta: Trajectory,
                 xi_delta0, grid: np.ndarray) -> Trajectory:
    """Integrate the frozen linear model in relative coordinates.

    Parameters
    ----------
    u_delta : Trajectory
        Inputs relative to ``op.u_o``, defined over the span of ``grid``.
    xi_delta0 : array_like
        Initial relative state.
    grid : ndarray
        Strictly increasing output time grid; also the RK4 step.

    Returns
    -------
    Trajectory
        Relative states; add ``op.xi_o`` to recover absolute states.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("time grid is empty")
    if u_delta.t[0] > grid[0] + 1e-12 or u_delta.t[-1] < grid[-1] - 1e-12:
        raise ValueError("input signal does not cover the simulation span")
    A, B = model.A, model.B

    def f(t, x):
        return A @ x + B @ u_delta(t)

    values = _rk4(f, grid, np.asarray(xi_delta0, dtype=float))
    return Trajectory(grid, values, model.state_labels)


def frequency_response(model: StateSpaceModel, omega: float) -> np.ndarray:
    """Transfer matrix ``C (jw I - A)^-1 B + D`` at a single frequency [rad/s]."""
    n = model.n_states
    M = 1j * omega * np.eye(n) - model.A
    # a resolvent this close to singular means jw sits on a pole
    if n and np.linalg.cond(M) > 1e13:
        raise PoleProximityError(f"jw with w={omega:.6g} rad/s is too close to a pole of A")
    X = np.linalg.solve(M, model.B.astype(complex))
    return model.C @ X + model.D


def frequency_response_grid(model: StateSpaceModel, omegas: np.ndarray,
                            out_idx=None, in_idx=None) -> np.ndarray:
    """Transfer matrices over an array of frequencies, optionally channel-sliced."""
    oi = list(out_idx) if out_idx is not None else list(range(model.n_outputs))
    ii = list(in_idx) if in_idx is not None else list(range(model.n_inputs))
    C, B, D = model.C[oi, :], model.B[:, ii], model.D[np.ix_(oi, ii)]
    I = np.eye(model.n_states)
    out = np.empty((len(omegas), C.shape[0], B.shape[1]), dtype=complex)
    for k, w in enumerate(omegas):
        X = np.linalg.solve(1j * w * I - model.A, B.astype(complex))
        out[k] = C @ X + D
    return out


def _labels_to_idx(labels, selection):
    if selection is None:
        return None
    return [labels.index(s) if isinstance(s, str) else int(s) for s in selection]


def hinf_error(a: StateSpaceModel, b: StateSpaceModel, omega_grid: np.ndarray | None = None,
               outputs=None, inputs=None, refine: bool = True) -> float:
    """Peak gain (largest singular value over frequency) of G_a - G_b.

    A dense log-spaced grid (default 400 points over [1e-3, 1e2] rad/s) is
    scanned and the peak is sharpened with golden-section refinement between
    the grid neighbours of the maximiser, so the result is a tight lower bound
    on the true worst-case gain difference.

    Parameters
    ----------
    outputs, inputs : sequence of str or int, optional
        Restrict the comparison to these channels (both models must share
        labels); by default all channels are compared.
    """
    if (a.n_outputs, a.n_inputs) != (b.n_outputs, b.n_inputs):
        raise ValueError("models must share output/input dimensions")
    omegas = HINF_GRID if omega_grid is None else np.asarray(omega_grid, dtype=float)
    if omegas.size == 0:
        raise ValueError("frequency grid is empty")
    oi = _labels_to_idx(a.output_labels, outputs)
    ii = _labels_to_idx(a.input_labels, inputs)

    def gain(w: float) -> float:
        Ga = frequency_response(a, w)
        Gb = frequency_response(b, w)
        E = Ga - Gb
        if oi is not None:
            E = E[oi, :]
        if ii is not None:
            E = E[:, ii]
        return float(np.linalg.svd(E, compute_uv=False)[0])

    gains = np.array([gain(w) for w in omegas])
    k = int(np.argmax(gains))
    best = gains[k]
    if refine and omegas.size >= 2:
        lo = omegas[max(k - 1, 0)]
        hi = omegas[min(k + 1, omegas.size - 1)]
        if hi > lo:
            best = max(best, _golden_max(gain, math.log(lo), math.log(hi)))
    return best


def _golden_max(fun, xlo: float, xhi: float, tol: float = 1e-6, max_iter: int = 60) -> float:
    """Golden-section maximisation of fun(exp(x)) on [xlo, xhi] in log-frequency."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = xlo, xhi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(math.exp(c)), fun(math.exp(d))
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(math.exp(d))
    return max(fc, fd)


def eigenvalues(model: StateSpaceModel) -> np.ndarray:
    """Eigenvalues of A, sorted by real part then imaginary part."""
    eig = np.linalg.eigvals(model.A)
    order = np.lexsort((eig.imag, eig.real))
    return eig[order]


def match_eigenvalue_paths(eig_sets: list[np.ndarray]) -> np.ndarray:
    """Track eigenvalues across a parameter sweep by nearest-neighbour matching.

    Takes per-sample sorted eigenvalue arrays (equal lengths) and reorders each
    one so that row k follows the eigenvalue closest to row k of the previous
    sample.  Returns an array of shape (n_samples, n_eigs).
    """
    n = len(eig_sets[0])
    out = np.empty((len(eig_sets), n), dtype=complex)
    out[0] = eig_sets[0]
    for i in range(1, len(eig_sets)):
        prev, cur = out[i - 1], np.array(eig_sets[i], dtype=complex)
        taken = np.zeros(n, dtype=bool)
        row = np.empty(n, dtype=complex)
        for k in range(n):
            dist = np.abs(cur - prev[k])
            dist[taken] = np.inf
            j = int(np.argmin(dist))
            taken[j] = True
            row[k] = cur[j]
        out[i] = row
    return out


# ---------------------------------------------------------------------------
# JSON interchange format (shared by every module and the CLI)
# ---------------------------------------------------------------------------

def model_to_dict(model: StateSpaceModel, op: OperatingPoint) -> dict:
    """Serialize one (model, operating point) pair; matrices are row-major lists."""
    return {
        "w": op.w,
        "x_p": op.x_p.tolist(),
        "xi_o": op.xi_o.tolist(),
        "u_o": op.u_o.tolist(),
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "D": model.D.tolist(),
        "g": model.g.tolist(),
        "labels": {
            "states": list(model.state_labels),
            "inputs": list(model.input_labels),
            "outputs": list(model.output_labels),
        },
    }


def model_from_dict(doc: dict) -> tuple[StateSpaceModel, OperatingPoint]:
    labels = doc.get("labels", {})
    model = StateSpaceModel(
        A=np.array(doc["A"], dtype=float),
        B=np.array(doc["B"], dtype=float),
        C=np.array(doc["C"], dtype=float),
        D=np.array(doc["D"], dtype=float),
        g=np.array(doc["g"], dtype=float),
        state_labels=tuple(labels.get("states", STATE_LABELS)),
        input_labels=tuple(labels.get("inputs", INPUT_LABELS)),
        output_labels=tuple(labels.get("outputs", OUTPUT_LABELS)),
    )
    op = OperatingPoint(
        w=float(doc["w"]),
        xi_o=np.array(doc["xi_o"], dtype=float),
        u_o=np.array(doc["u_o"], dtype=float),
        x_p=np.array(doc["x_p"], dtype=float),
    )
    return model, op


def save_model(path, model: StateSpaceModel, op: OperatingPoint) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, op), fh, indent=1)


def load_model(path) -> tuple[StateSpaceModel, OperatingPoint]:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
