"""Time grids, quadrature, state integration, and linearized dynamics.

Discretisation conventions, used consistently everywhere:

* uniform grid t_i = i/N on [0, 1];
* controls live at nodes and are interpolated linearly inside steps;
* integrals use the composite trapezoid rule on node samples;
* ODEs (state, adjoint, linearized state) use one classical 4th-order
  one-step method per interval, with node quantities averaged at the
  midpoint stage.

All operations are pure functions of immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import Problem, node_values

__all__ = [
    "Grid",
    "Trajectory",
    "Direction",
    "IntegrationError",
    "GridMismatchError",
    "quadrature",
    "quad_weights",
    "max_norm",
    "l2_norm",
    "integrate_state",
    "state_residual",
    "linearized_state",
    "dynamics_jacobians",
    "LinearStateMap",
    "BackwardLinearMap",
    "TrajectoryFields",
    "build_fields",
]


class IntegrationError(ValueError):
    def __init__(self, message: str, node: int):
        super().__init__(f"{message} at node {node}")
        self.node = node


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform grid with N >= 2 intervals on [0, 1]."""

    n_intervals: int

    def __post_init__(self):
        if self.n_intervals < 2:
            raise ValueError("grid needs at least 2 intervals")

    @property
    def h(self) -> float:
        return 1.0 / self.n_intervals

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_intervals + 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State and control samples on a grid; x is (N+1, n), u is (N+1, l)."""

    grid: Grid
    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        k = self.grid.n_intervals + 1
        if self.x.ndim != 2 or self.u.ndim != 2 or len(self.x) != k or len(self.u) != k:
            raise GridMismatchError(
                f"expected {k} node rows, got x: {self.x.shape}, u: {self.u.shape}"
            )

    def to_dict(self) -> dict:
        return {
            "grid_n": self.grid.n_intervals,
            "x": [[float(v) for v in row] for row in self.x],
            "u": [[float(v) for v in row] for row in self.u],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        grid = Grid(int(data["grid_n"]))
        return cls(grid, np.asarray(data["x"], dtype=float), np.asarray(data["u"], dtype=float))


class Direction(Trajectory):
    """Candidate critical direction z = (x, u); same sampling as Trajectory."""


# ---------------------------------------------------------------------------
# Quadrature


def quad_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.n_intervals + 1, grid.h)
    w[0] = w[-1] = grid.h / 2.0
    return w


def quadrature(samples, grid: Grid) -> float:
    """Composite trapezoid value of node samples over [0, 1]."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) != grid.n_intervals + 1:
        raise GridMismatchError(
            f"expected {grid.n_intervals + 1} samples, got {len(samples)}"
        )
    return float(quad_weights(grid) @ samples)


def max_norm(samples) -> float:
    return float(np.max(np.abs(samples)))


def l2_norm(samples, grid: Grid) -> float:
    """Trapezoid L2 norm of per-node (vector) samples."""
    samples = np.asarray(samples, dtype=float)
    sq = samples**2 if samples.ndim == 1 else (samples**2).sum(axis=1)
    return float(np.sqrt(max(quadrature(sq, grid), 0.0)))


# ---------------------------------------------------------------------------
# State integration


def integrate_state(problem: Problem, u: np.ndarray, grid: Grid) -> Trajectory:
    """Integrate x' = phi(t, x, u(t)) from x(0) = x0 with nodal controls.

    One classical 4th-order step per interval; u is interpolated linearly
    between nodes, so the midpoint stages see the node average.
    """
    u = np.asarray(u, dtype=float)
    k_nodes = grid.n_intervals + 1
    if u.shape != (k_nodes, problem.l):
        raise GridMismatchError(f"control shape {u.shape} != {(k_nodes, problem.l)}")
    fns = [problem.compiled(a) for a in problem.phi]
    h = grid.h
    t_nodes = grid.nodes
    x = np.empty((k_nodes, problem.n))
    x[0] = problem.x0

    def f(t, xv, uv):
        v = (t, *xv, *uv)
        return np.array([fn(v) for fn in fns], dtype=float)

    with np.errstate(all="ignore"):
        for k in range(grid.n_intervals):
            tk = t_nodes[k]
            uk, ue = u[k], u[k + 1]
            um = 0.5 * (uk + ue)
            xk = x[k]
            k1 = f(tk, xk, uk)
            k2 = f(tk + h / 2, xk + (h / 2) * k1, um)
            k3 = f(tk + h / 2, xk + (h / 2) * k2, um)
            k4 = f(tk + h, xk + h * k3, ue)
            x[k + 1] = xk + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(x[k + 1])):
                raise IntegrationError("non-finite state during integration", k + 1)
    return Trajectory(grid, x, u.copy())


def _phi_nodes(problem: Problem, traj: Trajectory) -> np.ndarray:
    return np.stack([node_values(problem, a, traj) for a in problem.phi], axis=1)


def state_residual(problem: Problem, traj: Trajectory) -> float:
    """Max-norm defect of x(t_i) = x0 + integral of phi, trapezoid quadrature."""
    f = _phi_nodes(problem, traj)
    c = np.zeros_like(f)
    c[1:] = np.cumsum(0.5 * traj.grid.h * (f[:-1] + f[1:]), axis=0)
    return float(np.max(np.abs(traj.x - problem.x0 - c)))


# ---------------------------------------------------------------------------
# Linear propagation machinery
#
# For x' = A(t) x + r(t) the one-step method gives an affine recurrence
# x_{k+1} = Phi_k x_k + d_k with d_k linear in the node samples of r.  The
# per-interval maps are precomputed in batch, and the recurrence is run as a
# parallel prefix scan over affine maps.


class _AffineScan:
    """Prefix scan of y_{k+1} = M_k y_k + d_k from y_0 = 0.

    The doubling cascade of matrix products depends only on M, so it is
    precomputed once; each application replays the vector half only, which
    is what makes repeated applies with a fixed map cheap.
    """

    def __init__(self, M: np.ndarray):
        self.levels = []
        M = M.copy()
        span = 1
        count = len(M)
        while span < count:
            self.levels.append((span, M[span:].copy()))
            M[span:] = np.matmul(M[span:], M[:-span])
            span *= 2

    def run(self, d: np.ndarray) -> np.ndarray:
        """Returns y_1..y_N for offsets d_0..d_{N-1}."""
        v = d.copy()
        for span, mats in self.levels:
            v[span:] = np.matmul(mats, v[:-span, :, None])[:, :, 0] + v[span:]
        return v


def _affine_scan(M: np.ndarray, d: np.ndarray) -> np.ndarray:
    return _AffineScan(M).run(d)


def _stage_maps(A: np.ndarray, h: float):
    """Transition Phi and source maps (P0, Pm, Pe) for every interval.

    d_k = P0 r_k + Pm r_mid + Pe r_{k+1}, with r_mid the node average.
    """
    n = A.shape[-1]
    eye = np.eye(n)
    a0, ae = A[:-1], A[1:]
    am = 0.5 * (a0 + ae)

    def mat(x, y):
        return np.einsum("kij,kjl->kil", x, y)

    k1 = a0
    k2 = mat(am, eye + (h / 2) * k1)
    k3 = mat(am, eye + (h / 2) * k2)
    k4 = mat(ae, eye + h * k3)
    phi = eye + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    def source_map(r0, rm, re):
        c1 = r0
        c2 = (h / 2) * mat(am, c1) + rm
        c3 = (h / 2) * mat(am, c2) + rm
        c4 = h * mat(ae, c3) + re
        return (h / 6) * (c1 + 2 * c2 + 2 * c3 + c4)

    zeros = np.zeros_like(a0)
    eye_b = np.broadcast_to(eye, a0.shape)
    p0 = source_map(eye_b, zeros, zeros)
    pm = source_map(zeros, eye_b, zeros)
    pe = source_map(zeros, zeros, eye_b)
    return phi, p0, pm, pe


class LinearStateMap:
    """Discrete map u -> x for x' = A(t) x + B(t) u, x(0) = 0, plus its transpose.

    The transpose is the exact adjoint of the discrete forward map, so
    <v, apply(u)> == <apply_transpose(v), u> to rounding for the flattened
    Euclidean inner products.
    """

    def __init__(self, A: np.ndarray, B: np.ndarray, grid: Grid):
        self.grid = grid
        self.n = A.shape[-1]
        self.l = B.shape[-1]
        self.phi, p0, pm, pe = _stage_maps(A, grid.h)
        b0, be = B[:-1], B[1:]
        self.gamma0 = np.einsum("kij,kjl->kil", p0 + 0.5 * pm, b0)
        self.gamma1 = np.einsum("kij,kjl->kil", 0.5 * pm + pe, be)
        self._forward_scan = _AffineScan(self.phi)
        count = len(self.phi)
        m = np.empty_like(self.phi)
        m[0] = np.eye(self.n)
        m[1:] = np.swapaxes(self.phi[::-1][: count - 1], 1, 2)
        self._transpose_scan = _AffineScan(m)

    @classmethod
    def from_problem(cls, problem: Problem, traj: Trajectory) -> "LinearStateMap":
        A, B = dynamics_jacobians(problem, traj)
        return cls(A, B, traj.grid)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """State response x (N+1, n) to nodal controls u (N+1, l)."""
        d = np.einsum("kij,kj->ki", self.gamma0, u[:-1]) + np.einsum(
            "kij,kj->ki", self.gamma1, u[1:]
        )
        x = np.zeros((len(u), self.n))
        x[1:] = self._forward_scan.run(d)
        return x

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        """Transpose map: node weights on x (N+1, n) -> weights on u (N+1, l)."""
        count = len(self.phi)
        d = v[::-1][:count]
        mu = self._transpose_scan.run(d)[::-1]  # mu[k]: sensitivity to x_{k+1}
        grad = np.zeros((count + 1, self.l))
        grad[:-1] += np.einsum("kij,ki->kj", self.gamma0, mu)
        grad[1:] += np.einsum("kij,ki->kj", self.gamma1, mu)
        return grad


class BackwardLinearMap:
    """Backward integrator for p' = -A(t)^T p - s(t) with p(1) = 0.

    Reuses the forward machinery on the time-reversed system; stage maps are
    precomputed once so repeated solves with different sources are cheap.
    """

    def __init__(self, A: np.ndarray, grid: Grid):
        self.grid = grid
        self.n = A.shape[-1]
        rev = np.swapaxes(A, 1, 2)[::-1]
        self.phi, self.p0, self.pm, self.pe = _stage_maps(rev, grid.h)
        self._scan = _AffineScan(self.phi)

    def _offsets(self, source: np.ndarray) -> np.ndarray:
        s = source[::-1]
        s0, se = s[:-1], s[1:]
        sm = 0.5 * (s0 + se)
        return (
            np.einsum("kij,kj->ki", self.p0, s0)
            + np.einsum("kij,kj->ki", self.pm, sm)
            + np.einsum("kij,kj->ki", self.pe, se)
        )

    def solve(self, source: np.ndarray) -> np.ndarray:
        q = np.zeros((len(source), self.n))
        q[1:] = self._scan.run(self._offsets(source))
        return q[::-1].copy()

    def defect(self, source: np.ndarray, p: np.ndarray) -> float:
        """Max one-step reproduction defect of given samples p under the scheme."""
        q = p[::-1]
        d = self._offsets(source)
        pred = np.einsum("kij,kj->ki", self.phi, q[:-1]) + d
        return float(np.max(np.abs(q[1:] - pred)))


def dynamics_jacobians(problem: Problem, traj: Trajectory):
    """phi_x (N+1, n, n) and phi_u (N+1, n, l) along a trajectory."""
    k = traj.grid.n_intervals + 1
    A = np.empty((k, problem.n, problem.n))
    B = np.empty((k, problem.n, problem.l))
    for i, table in enumerate(problem.phi_derivs):
        for j in range(problem.n):
            A[:, i, j] = node_values(problem, table.grad[j], traj)
        for j in range(problem.l):
            B[:, i, j] = node_values(problem, table.grad[problem.n + j], traj)
    return A, B


def linearized_state(problem: Problem, traj: Trajectory, u_dir: np.ndarray) -> np.ndarray:
    """Response of the dynamics linearized along traj: x' = phi_x x + phi_u u_dir."""
    u_dir = np.asarray(u_dir, dtype=float)
    k = traj.grid.n_intervals + 1
    if u_dir.shape != (k, problem.l):
        raise GridMismatchError(f"direction shape {u_dir.shape} != {(k, problem.l)}")
    return LinearStateMap.from_problem(problem, traj).apply(u_dir)


# ---------------------------------------------------------------------------
# Field tables along a reference trajectory


@dataclass(eq=False)
class TrajectoryFields:
    """Values and derivatives of L, phi, g sampled along a reference point.

    Hessians are in the stacked variables (x1..xn, u1..ul); shapes use
    K = N+1 nodes and nl = n+l.
    """

    grid: Grid
    t: np.ndarray  # (K,)
    w: np.ndarray  # (K,) trapezoid weights
    L: np.ndarray  # (m, K)
    Lx: np.ndarray  # (m, K, n)
    Lu: np.ndarray  # (m, K, l)
    Lhess: np.ndarray  # (m, K, nl, nl)
    phi: np.ndarray  # (K, n)
    phix: np.ndarray  # (K, n, n)
    phiu: np.ndarray  # (K, n, l)
    phihess: np.ndarray  # (n, K, nl, nl)
    g: np.ndarray  # (K,)
    gx: np.ndarray  # (K, n)
    gu: np.ndarray  # (K, l)
    ghess: np.ndarray  # (K, nl, nl)


def build_fields(problem: Problem, traj: Trajectory) -> TrajectoryFields:
    n, l, m = problem.n, problem.l, problem.m
    nl = n + l
    k = traj.grid.n_intervals + 1

    def values(ast):
        return node_values(problem, ast, traj)

    def hess_block(table):
        out = np.empty((k, nl, nl))
        for a in range(nl):
            for b in range(nl):
                out[:, a, b] = values(table.hess[a][b])
        return out

    L = np.stack([values(a) for a in problem.L])
    Lx = np.empty((m, k, n))
    Lu = np.empty((m, k, l))
    for j, table in enumerate(problem.L_derivs):
        for i in range(n):
            Lx[j, :, i] = values(table.grad[i])
        for i in range(l):
            Lu[j, :, i] = values(table.grad[n + i])
    Lhess = np.stack([hess_block(t) for t in problem.L_derivs])

    phi = _phi_nodes(problem, traj)
    phix, phiu = dynamics_jacobians(problem, traj)
    phihess = np.stack([hess_block(t) for t in problem.phi_derivs])

    g = values(problem.g)
    gx = np.stack([values(problem.g_derivs.grad[i]) for i in range(n)], axis=1)
    gu = np.stack([values(problem.g_derivs.grad[n + i]) for i in range(l)], axis=1)
    ghess = hess_block(problem.g_derivs)

    for label, arr in (("L", L), ("L gradients", Lx), ("dynamics jacobian", phix),
                       ("constraint", g)):
        if not np.all(np.isfinite(arr)):
            raise IntegrationError(f"non-finite {label} values along trajectory",
                                   int(np.argwhere(~np.isfinite(arr))[0][-1]))

    return TrajectoryFields(
        grid=traj.grid,
        t=traj.grid.nodes,
        w=quad_weights(traj.grid),
        L=L,
        Lx=Lx,
        Lu=Lu,
        Lhess=Lhess,
        phi=phi,
        phix=phix,
        phiu=phiu,
        phihess=phihess,
        g=g,
        gx=gx,
        gu=gu,
        ghess=ghess,
    )
