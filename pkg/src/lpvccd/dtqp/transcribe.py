"""Direct transcription machinery: meshes, trapezoidal defects, layouts.

Decision vector layout: states and inputs interleaved per mesh point,
``z = [x_1, u_1, x_2, u_2, ..., x_N, u_N]``, which keeps the KKT system
banded.  Dynamics become trapezoidal defect equalities between neighbouring
points; every path constraint touches a single mesh point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


def mesh(t_f: float, n_points: int) -> np.ndarray:
    """Equidistant mesh on [0, t_f] with n_points nodes."""
    if n_points < 2:
        raise ValueError("mesh needs at least 2 points")
    return np.linspace(0.0, float(t_f), int(n_points))


def trapezoid_weights(t: np.ndarray) -> np.ndarray:
    """Quadrature weights so that q @ f == trapz(f, t)."""
    h = np.diff(t)
    q = np.zeros(t.size)
    q[:-1] += 0.5 * h
    q[1:] += 0.5 * h
    return q


@dataclass(frozen=True)
class Layout:
    """Index bookkeeping for the interleaved decision vector."""

    n_points: int
    n_states: int
    n_inputs: int

    @property
    def stride(self) -> int:
        return self.n_states + self.n_inputs

    @property
    def size(self) -> int:
        return self.n_points * self.stride

    def state(self, i: int, j: int | None = None):
        base = i * self.stride
        return base + j if j is not None else np.arange(base, base + self.n_states)

    def input(self, i: int, j: int | None = None):
        base = i * self.stride + self.n_states
        return base + j if j is not None else np.arange(base, base + self.n_inputs)

    def state_cols(self) -> np.ndarray:
        """(n_points, n_states) column indices of every state variable."""
        return (self.stride * np.arange(self.n_points))[:, None] + np.arange(self.n_states)

    def input_cols(self) -> np.ndarray:
        return (self.stride * np.arange(self.n_points))[:, None] \
            + self.n_states + np.arange(self.n_inputs)

    def unstack(self, z: np.ndarray):
        """Split a decision vector into (states, inputs) arrays of shape (N, n)/(N, m)."""
        zz = z.reshape(self.n_points, self.stride)
        return zz[:, :self.n_states], zz[:, self.n_states:]


def defect_system(t: np.ndarray, A: np.ndarray, B: np.ndarray,
                  drift: np.ndarray) -> tuple[sp.csc_matrix, np.ndarray, Layout]:
    """Trapezoidal defect equalities for dx/dt = A(t) x + B(t) u + drift(t).

    ``A``, ``B``, ``drift`` are stacked per mesh point.  Returns the sparse
    equality matrix (n*(N-1) rows over the interleaved layout), its right-hand
    side, and the layout.
    """
    N, n, _ = A.shape
    m = B.shape[2]
    lay = Layout(N, n, m)
    h = np.diff(t)
    half = 0.5 * h

    rows, cols, vals = [], [], []
    row_base = (n * np.arange(N - 1))[:, None] + np.arange(n)          # (N-1, n)
    sc = lay.state_cols()
    ic = lay.input_cols()

    # identity blocks: -x_i and +x_{i+1}
    rows.append(np.repeat(row_base.ravel(), 1))
    cols.append(sc[:-1].ravel())
    vals.append(np.full((N - 1) * n, -1.0))
    rows.append(row_base.ravel())
    cols.append(sc[1:].ravel())
    vals.append(np.ones((N - 1) * n))

    # -(h/2) A_i on x_i and -(h/2) A_{i+1} on x_{i+1}
    r3 = np.broadcast_to(row_base[:, :, None], (N - 1, n, n))
    for shift in (0, 1):
        c3 = np.broadcast_to(sc[shift:shift + N - 1][:, None, :], (N - 1, n, n))
        v3 = -half[:, None, None] * A[shift:shift + N - 1]
        rows.append(r3.ravel())
        cols.append(c3.ravel())
        vals.append(v3.ravel())
    # -(h/2) B blocks
    r3b = np.broadcast_to(row_base[:, :, None], (N - 1, n, m))
    for shift in (0, 1):
        c3 = np.broadcast_to(ic[shift:shift + N - 1][:, None, :], (N - 1, n, m))
        v3 = -half[:, None, None] * B[shift:shift + N - 1]
        rows.append(r3b.ravel())
        cols.append(c3.ravel())
        vals.append(v3.ravel())

    A_eq = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * (N - 1), lay.size)).tocsc()
    b_eq = (half[:, None] * (drift[:-1] + drift[1:])).ravel()
    return A_eq, b_eq, lay


def initial_condition_rows(lay: Layout, x0: np.ndarray) -> tuple[sp.csc_matrix, np.ndarray]:
    """Pin the first mesh point's states to x0."""
    n = lay.n_states
    E = sp.csc_matrix((np.ones(n), (np.arange(n), lay.state(0))), shape=(n, lay.size))
    return E, np.asarray(x0, dtype=float)


def point_rows(lay: Layout, C: np.ndarray, D: np.ndarray) -> sp.csc_matrix:
    """One inequality row per mesh point: C_i x_i + D_i u_i (single output row).

    ``C`` is (N, n) and ``D`` is (N, m); the result has N rows, each touching
    only variables of its own mesh point.
    """
    N = lay.n_points
    rows = np.repeat(np.arange(N), lay.n_states + lay.n_inputs)
    cols = np.concatenate([np.column_stack([lay.state_cols(), lay.input_cols()]).ravel()])
    vals = np.concatenate([np.column_stack([C, D]).ravel()])
    return sp.coo_matrix((vals, (rows, cols)), shape=(N, lay.size)).tocsc()
