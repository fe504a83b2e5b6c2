"""First-order (KKT) multiplier recovery and residual checks.

Given a weight vector lambda on the objectives, the multiplier triple
(lambda, p, theta) must satisfy, along the reference trajectory,

* the adjoint equation   p' = -lambda^T L_x - phi_x^T p - theta g_x,  p(1) = 0,
* stationarity in u      lambda^T L_u + p^T phi_u + theta g_u = 0,
* the normal-cone condition   theta >= 0 and theta * g = 0.

theta is recovered pointwise from the stationarity component i0 singled out
by the constraint-sensitivity check; p and theta are coupled, so the solver
iterates the pair to a fixed point.  theta lives on grid nodes, the natural
sampling for the trapezoid quadrature used everywhere else.

All functions are pure; sweeps over weight grids can share the immutable
problem and trajectory freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import Problem, select_i0
from .trajectory import (
    BackwardLinearMap,
    Trajectory,
    TrajectoryFields,
    build_fields,
    state_residual,
)

__all__ = [
    "MultiplierTriple",
    "KktReport",
    "Tolerances",
    "H2ViolationError",
    "solve_adjoint",
    "recover_theta",
    "solve_kkt_system",
    "kkt_residuals",
]


class H2ViolationError(ValueError):
    """|g_u| too small at some node to divide the stationarity relation."""


@dataclass(frozen=True)
class Tolerances:
    """Per-residual acceptance thresholds (all default 1e-8)."""

    stationarity: float = 1e-8
    adjoint: float = 1e-8
    terminal: float = 1e-8
    sign: float = 1e-8
    complementarity: float = 1e-8
    feasibility: float = 1e-8
    state: float = 1e-8

    @classmethod
    def uniform(cls, tol: float) -> "Tolerances":
        return cls(tol, tol, tol, tol, tol, tol, tol)

    def to_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "adjoint": self.adjoint,
            "terminal": self.terminal,
            "sign": self.sign,
            "complementarity": self.complementarity,
            "feasibility": self.feasibility,
            "state": self.state,
        }


@dataclass(frozen=True, eq=False)
class MultiplierTriple:
    """(lambda, p, theta) samples; p is (N+1, n), theta is (N+1,).

    lambda is stored as given.  The existence theory normalises |lambda| = 1;
    sweeps generate unit-norm weights, but all residuals are positively
    homogeneous in (lambda, p, theta), so scaled weights are accepted.
    """

    lam: np.ndarray
    p: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1 or np.any(lam < 0) or not np.any(lam > 0):
            raise ValueError("lambda must be a nonnegative, nonzero vector")


@dataclass
class KktReport:
    """Residuals of the first-order conditions at one multiplier triple.

    When theta was recovered from the stationarity component i0, that
    component is zero by construction (asserted <= 1e-14 in the tests), so
    stationarity_residual effectively measures the remaining control
    components.
    """

    stationarity_residual: float
    adjoint_residual: float
    terminal_residual: float
    theta_sign_violation: float
    complementarity_residual: float
    feasibility_residual: float
    state_residual: float
    passed: bool
    tolerances: Tolerances
    lam: tuple[float, ...]
    grid_n: int
    converged: bool | None = None
    iterations: int | None = None

    def residuals(self) -> dict:
        return {
            "stationarity_residual": self.stationarity_residual,
            "adjoint_residual": self.adjoint_residual,
            "terminal_residual": self.terminal_residual,
            "theta_sign_violation": self.theta_sign_violation,
            "complementarity_residual": self.complementarity_residual,
            "feasibility_residual": self.feasibility_residual,
            "state_residual": self.state_residual,
        }

    def to_dict(self) -> dict:
        out = {k: float(v) for k, v in self.residuals().items()}
        out["passed"] = bool(self.passed)
        out["tolerances"] = self.tolerances.to_dict()
        out["lambda"] = [float(v) for v in self.lam]
        out["grid_n"] = self.grid_n
        if self.converged is not None:
            out["converged"] = bool(self.converged)
            out["iterations"] = self.iterations
        return out


# ---------------------------------------------------------------------------
# Internal helpers on precomputed fields


def _adjoint_source(fields: TrajectoryFields, lam, theta) -> np.ndarray:
    # s(t) = lambda^T L_x + theta g_x, shape (K, n)
    s = np.einsum("j,jkn->kn", lam, fields.Lx)
    return s + theta[:, None] * fields.gx


def _stationarity(fields: TrajectoryFields, lam, p, theta) -> np.ndarray:
    # lambda^T L_u + p^T phi_u + theta g_u at every node, shape (K, l)
    out = np.einsum("j,jkl->kl", lam, fields.Lu)
    out += np.einsum("knl,kn->kl", fields.phiu, p)
    out += theta[:, None] * fields.gu
    return out


def _recover_theta(fields: TrajectoryFields, lam, p, i0: int) -> np.ndarray:
    gu_i0 = fields.gu[:, i0]
    if np.min(np.abs(gu_i0)) < 1e-12:
        raise H2ViolationError(
            "constraint control-derivative vanishes on the grid; "
            "theta recovery is ill-posed"
        )
    num = np.einsum("j,jk->k", lam, fields.Lu[:, :, i0])
    num += np.einsum("kn,kn->k", fields.phiu[:, :, i0], p)
    return -num / gu_i0


def _kkt_residuals(
    fields: TrajectoryFields,
    backward: BackwardLinearMap,
    lam: np.ndarray,
    p: np.ndarray,
    theta: np.ndarray,
    state_res: float,
    tols: Tolerances,
) -> KktReport:
    stat = float(np.max(np.abs(_stationarity(fields, lam, p, theta))))
    adj = backward.defect(_adjoint_source(fields, lam, theta), p)
    term = float(np.max(np.abs(p[-1])))
    sign = float(max(0.0, -np.min(theta)))
    comp = float(np.max(np.abs(theta * fields.g)))
    feas = float(max(0.0, np.max(fields.g)))
    passed = (
        stat <= tols.stationarity
        and adj <= tols.adjoint
        and term <= tols.terminal
        and sign <= tols.sign
        and comp <= tols.complementarity
        and feas <= tols.feasibility
        and state_res <= tols.state
    )
    return KktReport(
        stationarity_residual=stat,
        adjoint_residual=adj,
        terminal_residual=term,
        theta_sign_violation=sign,
        complementarity_residual=comp,
        feasibility_residual=feas,
        state_residual=state_res,
        passed=passed,
        tolerances=tols,
        lam=tuple(float(v) for v in lam),
        grid_n=fields.grid.n_intervals,
    )


class KktWorkspace:
    """Shared per-(problem, trajectory) data for repeated multiplier solves."""

    def __init__(self, problem: Problem, traj: Trajectory,
                 fields: TrajectoryFields | None = None):
        self.problem = problem
        self.traj = traj
        self.fields = fields if fields is not None else build_fields(problem, traj)
        self.backward = BackwardLinearMap(self.fields.phix, traj.grid)
        self.i0, self.alpha_hat, _ = select_i0(self.fields.gu)
        self.state_res = state_residual(problem, traj)

    def solve_adjoint(self, lam, theta) -> np.ndarray:
        return self.backward.solve(_adjoint_source(self.fields, lam, theta))

    def recover_theta(self, lam, p) -> np.ndarray:
        return _recover_theta(self.fields, lam, p, self.i0)

    def residuals(self, lam, p, theta, tols: Tolerances) -> KktReport:
        return _kkt_residuals(
            self.fields, self.backward, np.asarray(lam, dtype=float), p, theta,
            self.state_res, tols,
        )

    def solve(self, lam, tols: Tolerances, fp_tol: float = 1e-10,
              max_iterations: int = 100):
        """Fixed-point iteration on (p, theta); see solve_kkt_system."""
        lam = np.asarray(lam, dtype=float)
        theta = np.zeros(self.fields.grid.n_intervals + 1)
        converged = False
        iterations = 0
        p = np.zeros((len(theta), self.problem.n))
        for iterations in range(1, max_iterations + 1):
            p = self.solve_adjoint(lam, theta)
            theta_next = self.recover_theta(lam, p)
            change = float(np.max(np.abs(theta_next - theta)))
            theta = theta_next
            if change <= fp_tol:
                converged = True
                break
        report = self.residuals(lam, p, theta, tols)
        report.converged = converged
        report.iterations = iterations
        if not converged:
            report.passed = False
        return p, theta, report


# ---------------------------------------------------------------------------
# Public operations


def solve_adjoint(problem: Problem, traj: Trajectory, lam, theta) -> np.ndarray:
    """Integrate p' = -lambda^T L_x - phi_x^T p - theta g_x backward, p(1)=0."""
    ws = KktWorkspace(problem, traj)
    return ws.solve_adjoint(np.asarray(lam, dtype=float), np.asarray(theta, dtype=float))


def recover_theta(problem: Problem, traj: Trajectory, lam, p) -> np.ndarray:
    """Solve the stationarity relation for theta via the i0 control component."""
    ws = KktWorkspace(problem, traj)
    return ws.recover_theta(np.asarray(lam, dtype=float), np.asarray(p, dtype=float))


def solve_kkt_system(
    problem: Problem,
    traj: Trajectory,
    lam,
    tolerances: Tolerances | None = None,
    fp_tol: float = 1e-10,
    max_iterations: int = 100,
):
    """Recover (p, theta) for a given lambda by fixed-point iteration.

    Starts from theta = 0, alternates adjoint solve and theta recovery until
    the max node change is <= fp_tol or the iteration budget runs out; a
    non-converged result is returned with the report flagged, never hidden.
    Returns (p, theta, KktReport).
    """
    tols = tolerances if tolerances is not None else Tolerances()
    return KktWorkspace(problem, traj).solve(lam, tols, fp_tol, max_iterations)


def kkt_residuals(
    problem: Problem,
    traj: Trajectory,
    triple: MultiplierTriple,
    tolerances: Tolerances | None = None,
) -> KktReport:
    """Evaluate every first-order residual at a given multiplier triple.

    The adjoint residual is the maximum one-step reproduction defect of the
    p samples under the same one-step scheme that solve_adjoint uses, so
    solver output passes at solver accuracy by construction.
    """
    tols = tolerances if tolerances is not None else Tolerances()
    ws = KktWorkspace(problem, traj)
    return ws.residuals(
        np.asarray(triple.lam, dtype=float),
        np.asarray(triple.p, dtype=float),
        np.asarray(triple.theta, dtype=float),
        tols,
    )
