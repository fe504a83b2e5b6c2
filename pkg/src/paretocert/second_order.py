"""Critical-cone membership, curvature evaluation, and second-order verdicts.

A direction z = (x, u) on the grid is critical when

* (c1) every linearized objective change integral is <= 0,
* (c2) x solves the dynamics linearized along the reference trajectory,
* (c3) at every node where the constraint is active (g >= -eps_act), the
  linearized constraint g_x x + g_u u is <= 0; inactive nodes impose nothing.

The necessary-cone and sufficient-cone variants collapse to this same
node-wise test at the discrete level; the variant is recorded in reports so
certificates can carry the "discrete surrogate" caveat for the closure-based
necessary cone.

The curvature of a multiplier triple at a direction is

    Q(z) = integral of z^T [ sum_j lam_j L_j'' + sum_i p_i phi_i'' + theta g'' ] z dt

with all Hessians in the stacked (x, u) variables.  The worst-direction
search minimizes Q over the discrete sufficient cone intersected with the
unit L2 sphere of the control component; it is a heuristic (projected
residual descent with exact ratio line search plus alternating projections)
and every verdict that uses it carries an explicit coverage caveat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kkt import KktWorkspace, MultiplierTriple, Tolerances
from .problem import Problem
from .simplex import unit_weight_grid
from .trajectory import (
    Direction,
    GridMismatchError,
    LinearStateMap,
    Trajectory,
    TrajectoryFields,
    build_fields,
    l2_norm,
)

__all__ = [
    "ConeMembership",
    "CurvatureReport",
    "CoercivityReport",
    "WorstDirectionResult",
    "SocnFragment",
    "SocsFragment",
    "is_critical",
    "quadratic_form",
    "coercivity_check",
    "worst_critical_direction",
    "random_critical_directions",
    "socn_verdict",
    "socs_verdict",
    "SecondOrderWorkspace",
]


@dataclass
class ConeMembership:
    variant: str  # "necessary" or "sufficient"
    c1_residual: float
    c2_residual: float
    c3_residual: float
    active_nodes: np.ndarray
    passed: bool
    eps_act: float
    tol: float
    c1_values: np.ndarray

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "c1_residual": float(self.c1_residual),
            "c2_residual": float(self.c2_residual),
            "c3_residual": float(self.c3_residual),
            "active_node_count": int(len(self.active_nodes)),
            "passed": bool(self.passed),
            "eps_act": float(self.eps_act),
            "tol": float(self.tol),
            "c1_values": [float(v) for v in self.c1_values],
            "note": "node-wise discrete surrogate of the cone conditions",
        }


@dataclass
class CurvatureReport:
    q_value: float
    cost_term: float
    dynamics_term: float
    constraint_term: float
    direction_norm: float

    def to_dict(self) -> dict:
        return {
            "q_value": float(self.q_value),
            "cost_term": float(self.cost_term),
            "dynamics_term": float(self.dynamics_term),
            "constraint_term": float(self.constraint_term),
            "direction_norm": float(self.direction_norm),
        }


@dataclass
class CoercivityReport:
    passed: bool
    margin: float
    min_eigenvalue: float
    gamma0: float
    argmin_node: int

    def to_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "margin": float(self.margin),
            "min_eigenvalue": float(self.min_eigenvalue),
            "gamma0": float(self.gamma0),
            "argmin_node": int(self.argmin_node),
        }


@dataclass
class WorstDirectionResult:
    direction: Direction
    q_value: float
    restart_values: list
    converged: bool

    def to_dict(self) -> dict:
        return {
            "q_value": float(self.q_value),
            "restart_values": [float(v) for v in self.restart_values],
            "converged": bool(self.converged),
            "direction": self.direction.to_dict(),
        }


# ---------------------------------------------------------------------------
# Shared per-(problem, trajectory) machinery


class SecondOrderWorkspace:
    """Reference-point data reused across directions, weights, and probes."""

    def __init__(self, problem: Problem, traj: Trajectory,
                 fields: TrajectoryFields | None = None):
        self.problem = problem
        self.traj = traj
        self.fields = fields if fields is not None else build_fields(problem, traj)
        f = self.fields
        self.linmap = LinearStateMap(f.phix, f.phiu, traj.grid)
        self.w = f.w
        # exact Riesz vectors of the c1 functionals against nodal controls,
        # under x = S u: c1_j(u) = <b_j, u> (flat Euclidean dot)
        self.c1_vectors = [
            self.linmap.apply_transpose(f.w[:, None] * f.Lx[j]) + f.w[:, None] * f.Lu[j]
            for j in range(problem.m)
        ]
        self.gu_sq = np.einsum("kl,kl->k", f.gu, f.gu)

    def active_mask(self, eps_act: float) -> np.ndarray:
        return self.fields.g >= -eps_act

    def combined_hessian(self, lam, p, theta) -> np.ndarray:
        f = self.fields
        W = np.einsum("j,jkab->kab", np.asarray(lam, dtype=float), f.Lhess)
        W += np.einsum("ikab,ki->kab", f.phihess, np.asarray(p, dtype=float))
        W += np.asarray(theta, dtype=float)[:, None, None] * f.ghess
        return W

    def c1_integrals(self, x, u) -> np.ndarray:
        f = self.fields
        vals = np.einsum("jkn,kn->jk", f.Lx, x) + np.einsum("jkl,kl->jk", f.Lu, u)
        return vals @ self.w

    def c3_values(self, x, u) -> np.ndarray:
        f = self.fields
        return np.einsum("kn,kn->k", f.gx, x) + np.einsum("kl,kl->k", f.gu, u)

    def membership(self, direction: Direction, variant: str, eps_act: float,
                   tol: float) -> ConeMembership:
        if direction.grid.n_intervals != self.traj.grid.n_intervals:
            raise GridMismatchError(
                f"direction grid N={direction.grid.n_intervals} does not match "
                f"reference grid N={self.traj.grid.n_intervals}"
            )
        if variant not in ("necessary", "sufficient"):
            raise ValueError("variant must be 'necessary' or 'sufficient'")
        x, u = direction.x, direction.u
        c1_values = self.c1_integrals(x, u)
        c1 = float(max(0.0, np.max(c1_values)))
        c2 = float(np.max(np.abs(x - self.linmap.apply(u))))
        active = self.active_mask(eps_act)
        vals = self.c3_values(x, u)
        c3 = float(max(0.0, np.max(vals[active], initial=0.0)))
        passed = c1 <= tol and c2 <= tol and c3 <= tol
        return ConeMembership(
            variant=variant,
            c1_residual=c1,
            c2_residual=c2,
            c3_residual=c3,
            active_nodes=np.flatnonzero(active),
            passed=passed,
            eps_act=eps_act,
            tol=tol,
            c1_values=c1_values,
        )

    def curvature(self, triple: MultiplierTriple, direction: Direction) -> CurvatureReport:
        f = self.fields
        z = np.hstack([direction.x, direction.u])
        per_objective = np.einsum("ka,jkab,kb->jk", z, f.Lhess, z)
        cost = float((np.asarray(triple.lam, dtype=float) @ per_objective) @ self.w)
        per_state = np.einsum("ka,ikab,kb->ik", z, f.phihess, z)
        dyn = float(np.einsum("ik,ki->k", per_state, np.asarray(triple.p)) @ self.w)
        con = float((np.asarray(triple.theta) * np.einsum("ka,kab,kb->k", z, f.ghess, z)) @ self.w)
        return CurvatureReport(
            q_value=cost + dyn + con,
            cost_term=cost,
            dynamics_term=dyn,
            constraint_term=con,
            direction_norm=l2_norm(direction.u, direction.grid),
        )

    # -- projection onto the discrete cone (alternating, heuristic) --------

    def project_cone(self, u: np.ndarray, eps_act: float, tol: float,
                     max_passes: int = 40):
        """Alternating projection of controls onto the c1/c3 inequalities.

        Node-wise half-space steps treat the state response as frozen and
        re-integrate it between passes; the c1 steps are exact half-space
        projections through the Riesz vectors.  Returns (u, x, moved) where
        moved reports whether any correction was applied.
        """
        active = self.active_mask(eps_act)
        gu = self.fields.gu
        safe = active & (self.gu_sq > 1e-24)
        x = self.linmap.apply(u)
        moved = False
        slack = 0.1 * tol
        for _ in range(max_passes):
            vals = self.c3_values(x, u)
            viol = safe & (vals > slack)
            c1_vals = self.c1_integrals(x, u)
            if not np.any(viol) and not np.any(c1_vals > slack):
                break
            if np.any(viol):
                moved = True
                u = u.copy()
                u[viol] -= (vals[viol] / self.gu_sq[viol])[:, None] * gu[viol]
            for b in self.c1_vectors:
                bb = float(np.sum(b * b))
                if bb < 1e-28:
                    continue
                c = float(np.sum(b * u))
                if c > slack:
                    moved = True
                    u = u - (c / bb) * b
            x = self.linmap.apply(u)
        return u, x, moved


# ---------------------------------------------------------------------------
# Public operations


def is_critical(
    problem: Problem,
    traj: Trajectory,
    direction: Direction,
    variant: str = "sufficient",
    eps_act: float = 1e-8,
    tol: float = 1e-8,
    workspace: SecondOrderWorkspace | None = None,
) -> ConeMembership:
    """Node-wise membership test for the critical cone at the reference point."""
    ws = workspace if workspace is not None else SecondOrderWorkspace(problem, traj)
    return ws.membership(direction, variant, eps_act, tol)


def quadratic_form(
    problem: Problem,
    traj: Trajectory,
    triple: MultiplierTriple,
    direction: Direction,
    workspace: SecondOrderWorkspace | None = None,
) -> CurvatureReport:
    """Curvature Q of the multiplier triple at a direction, with decomposition."""
    ws = workspace if workspace is not None else SecondOrderWorkspace(problem, traj)
    return ws.curvature(triple, direction)


def coercivity_check(
    problem: Problem,
    traj: Trajectory,
    lam,
    gamma0: float,
    fields: TrajectoryFields | None = None,
) -> CoercivityReport:
    """Uniform positive-definiteness of lambda^T L_uu along the trajectory."""
    if gamma0 <= 0:
        raise ValueError("gamma0 must be positive")
    f = fields if fields is not None else build_fields(problem, traj)
    n = problem.n
    blocks = np.einsum("j,jkab->kab", np.asarray(lam, dtype=float),
                       f.Lhess[:, :, n:, n:])
    blocks = 0.5 * (blocks + np.swapaxes(blocks, 1, 2))
    eigs = np.linalg.eigvalsh(blocks)[:, 0]
    k = int(np.argmin(eigs))
    min_eig = float(eigs[k])
    return CoercivityReport(
        passed=bool(min_eig >= gamma0),
        margin=min_eig - gamma0,
        min_eigenvalue=min_eig,
        gamma0=float(gamma0),
        argmin_node=k,
    )


class _CurvatureSearch:
    """Projected descent for min Q(z(u)) over the cone with ||u||_2 = 1."""

    def __init__(self, ws: SecondOrderWorkspace, triple: MultiplierTriple,
                 eps_act: float, tol: float):
        self.ws = ws
        self.eps_act = eps_act
        self.tol = tol
        W = ws.combined_hessian(triple.lam, triple.p, triple.theta)
        self.W = W
        self.Wsum = W + np.swapaxes(W, 1, 2)
        self.n = ws.problem.n
        self.w = ws.w

    def q_value(self, x, u) -> float:
        z = np.hstack([x, u])
        return float(np.einsum("ka,kab,kb->k", z, self.W, z) @ self.w)

    def q_bilinear(self, x1, u1, x2, u2) -> float:
        z1 = np.hstack([x1, u1])
        z2 = np.hstack([x2, u2])
        sym = np.einsum("ka,kab,kb->k", z1, self.Wsum, z2)
        return 0.5 * float(sym @ self.w)

    def gradient(self, x, u) -> np.ndarray:
        n = self.n
        gu = np.einsum("kln,kn->kl", self.Wsum[:, n:, :n], x)
        gu += np.einsum("klm,km->kl", self.Wsum[:, n:, n:], u)
        v = np.einsum("knm,km->kn", self.Wsum[:, :n, :n], x)
        v += np.einsum("knl,kl->kn", self.Wsum[:, :n, n:], u)
        return self.w[:, None] * gu + self.ws.linmap.apply_transpose(self.w[:, None] * v)

    def control_dot(self, u1, u2) -> float:
        return float(np.einsum("kl,kl->k", u1, u2) @ self.w)

    def _normalize_feasible(self, u, passes=3):
        u, x, moved = self.ws.project_cone(u, self.eps_act, self.tol,
                                           max_passes=passes)
        nrm = np.sqrt(max(self.control_dot(u, u), 0.0))
        if nrm < 1e-12:
            return None
        return u / nrm, x / nrm, moved

    def minimize(self, u0: np.ndarray, max_iters: int):
        """Rayleigh-quotient descent: nonlinear CG on the residual direction
        with exact ratio line search; CG memory resets whenever the cone
        projection actually moves the iterate.

        Projection during descent is loose (few alternating passes); the best
        iterate gets a hard projection polish before its value is reported.
        """
        state = self._normalize_feasible(u0, passes=30)
        if state is None:
            return None
        u, x, _ = state
        q = self.q_value(x, u)
        best = (q, u, x)
        stall = 0
        converged = False
        residual_prev = None
        direction = None
        for _ in range(max_iters):
            grad = self.gradient(x, u)
            # Rayleigh residual: vanishes at unconstrained stationarity
            residual = grad - 2.0 * q * (self.w[:, None] * u)
            rr = self.control_dot(residual, residual)
            if np.sqrt(rr) <= 1e-12 * (1 + abs(q)):
                converged = True
                break
            if direction is None or residual_prev is None:
                direction = residual
            else:
                beta = max(0.0, (rr - self.control_dot(residual, residual_prev))
                           / max(self.control_dot(residual_prev, residual_prev), 1e-300))
                direction = residual + beta * direction
            residual_prev = residual
            alpha = self._exact_ratio_step(u, x, direction)
            state = self._normalize_feasible(u - alpha * direction)
            if state is None:
                break
            u, x, moved = state
            if moved:
                direction = None
                residual_prev = None
            q_new = self.q_value(x, u)
            if q_new < best[0]:
                best = (q_new, u, x)
            if abs(q - q_new) <= 1e-13 * (1 + abs(q)):
                stall += 1
                if stall >= 5:
                    converged = True
                    break
            else:
                stall = 0
            q = q_new
        polished = self._normalize_feasible(best[1], passes=300)
        if polished is not None:
            u, x, _ = polished
            best = (self.q_value(x, u), u, x)
        return best, converged

    def _exact_ratio_step(self, u, x, d) -> float:
        """Minimizer of the Rayleigh ratio along u - alpha d (pre-projection)."""
        xd = self.ws.linmap.apply(d)
        a0 = self.q_value(x, u)
        a1 = self.q_bilinear(x, u, xd, d)
        a2 = self.q_value(xd, d)
        b0 = self.control_dot(u, u)
        b1 = self.control_dot(u, d)
        b2 = self.control_dot(d, d)
        qa = a1 * b2 - a2 * b1
        qb = a2 * b0 - a0 * b2
        qc = a0 * b1 - a1 * b0
        roots = []
        if abs(qa) > 1e-30:
            disc = qb * qb - 4 * qa * qc
            if disc >= 0:
                r = np.sqrt(disc)
                roots = [(-qb - r) / (2 * qa), (-qb + r) / (2 * qa)]
        elif abs(qb) > 1e-30:
            roots = [-qc / qb]
        best_alpha, best_val = None, None
        for alpha in roots:
            den = b0 - 2 * alpha * b1 + alpha * alpha * b2
            if den <= 1e-16:
                continue
            val = (a0 - 2 * alpha * a1 + alpha * alpha * a2) / den
            if best_val is None or val < best_val:
                best_alpha, best_val = alpha, val
        if best_alpha is None or best_alpha <= 0:
            gn = np.sqrt(max(self.control_dot(d, d), 1e-30))
            return 0.2 / gn
        return float(best_alpha)


def worst_critical_direction(
    problem: Problem,
    traj: Trajectory,
    triple: MultiplierTriple,
    n_restarts: int = 8,
    max_iters: int = 100,
    eps_act: float = 1e-8,
    tol: float = 1e-8,
    seed: int = 42,
    workspace: SecondOrderWorkspace | None = None,
) -> WorstDirectionResult:
    """Search the discrete sufficient cone for a low-curvature unit direction.

    Projected descent with exact ratio line search, restarted from seeded
    random controls.  The result is a witness (best found), not a global
    minimum; callers embed that caveat in their verdicts.
    """
    ws = workspace if workspace is not None else SecondOrderWorkspace(problem, traj)
    search = _CurvatureSearch(ws, triple, eps_act, tol)
    rng = np.random.default_rng(seed)
    k = traj.grid.n_intervals + 1
    best = None
    values = []
    all_converged = True
    for _ in range(max(1, n_restarts)):
        u0 = rng.standard_normal((k, problem.l))
        out = search.minimize(u0, max_iters)
        if out is None:
            all_converged = False
            continue
        (q, u, x), converged = out
        all_converged = all_converged and converged
        values.append(q)
        if best is None or q < best[0]:
            best = (q, u, x)
    if best is None:
        raise RuntimeError("every restart collapsed to the zero direction")
    q, u, x = best
    return WorstDirectionResult(
        direction=Direction(traj.grid, x, u),
        q_value=q,
        restart_values=values,
        converged=all_converged,
    )


def random_critical_directions(
    problem: Problem,
    traj: Trajectory,
    count: int,
    seed: int = 42,
    eps_act: float = 1e-8,
    tol: float = 1e-8,
    workspace: SecondOrderWorkspace | None = None,
) -> list[Direction]:
    """Seeded random unit directions projected into the discrete cone.

    Probes that fail the membership test after projection are dropped, so
    fewer than ``count`` directions may be returned.
    """
    ws = workspace if workspace is not None else SecondOrderWorkspace(problem, traj)
    rng = np.random.default_rng(seed)
    k = traj.grid.n_intervals + 1
    out = []
    attempts = 0
    while len(out) < count and attempts < 4 * count:
        attempts += 1
        u = rng.standard_normal((k, problem.l))
        u, x, _ = ws.project_cone(u, eps_act, tol, max_passes=300)
        nrm = l2_norm(u, traj.grid)
        if nrm < 1e-12:
            continue
        cand = Direction(traj.grid, x / nrm, u / nrm)
        if ws.membership(cand, "sufficient", eps_act, tol).passed:
            out.append(cand)
    return out


# ---------------------------------------------------------------------------
# Verdicts


@dataclass
class SocnFragment:
    """Per-direction sweep over normalized weights for the necessary condition."""

    verdict: str  # "holds", "violated", "vacuous", "kkt-degenerate"
    tested: int
    skipped: list
    results: list
    weight_grid: list
    tol: float

    @property
    def passed(self) -> bool:
        return self.verdict in ("holds", "vacuous")

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "tested": self.tested,
            "skipped": self.skipped,
            "results": self.results,
            "weight_grid": self.weight_grid,
            "tol": float(self.tol),
            "note": "existence is checked against the sampled weight grid only",
        }


def socn_verdict(
    problem: Problem,
    traj: Trajectory,
    directions: list,
    lambda_points: int = 21,
    tol: float = 1e-8,
    eps_act: float = 1e-8,
    tolerances: Tolerances | None = None,
    workspace: SecondOrderWorkspace | None = None,
    kkt_workspace: KktWorkspace | None = None,
) -> SocnFragment:
    """For each critical direction, look for a weight whose recovered triple
    has nonnegative curvature; report the first direction where none exists.
    """
    ws = workspace if workspace is not None else SecondOrderWorkspace(problem, traj)
    kws = kkt_workspace if kkt_workspace is not None else KktWorkspace(
        problem, traj, fields=ws.fields)
    tols = tolerances if tolerances is not None else Tolerances()
    weights = unit_weight_grid(problem.m, lambda_points)
    skipped = []
    results = []
    verdict = "holds"
    tested = 0
    for idx, direction in enumerate(directions):
        membership = ws.membership(direction, "necessary", eps_act, tol)
        if not membership.passed:
            skipped.append({
                "index": idx,
                "reason": "not critical",
                "membership": membership.to_dict(),
            })
            continue
        tested += 1
        q_by_weight = []
        found = None
        kkt_valid = 0
        for lam in weights:
            p, theta, report = kws.solve(lam, tols)
            if not report.passed:
                q_by_weight.append({"lambda": [float(v) for v in lam],
                                    "kkt_passed": False})
                continue
            kkt_valid += 1
            triple = MultiplierTriple(lam, p, theta)
            q = ws.curvature(triple, direction).q_value
            q_by_weight.append({"lambda": [float(v) for v in lam],
                                "kkt_passed": True, "q_value": float(q)})
            if q >= -tol:
                found = {"lambda": [float(v) for v in lam], "q_value": float(q)}
                break
        entry = {
            "index": idx,
            "membership": membership.to_dict(),
            "q_by_weight": q_by_weight,
        }
        if found is not None:
            entry["witness"] = found
            entry["holds"] = True
        elif kkt_valid == 0:
            entry["holds"] = False
            entry["reason"] = "no weight produced a valid multiplier triple"
            entry["direction"] = direction.to_dict()
            verdict = "kkt-degenerate"
        else:
            entry["holds"] = False
            entry["direction"] = direction.to_dict()
            verdict = "violated"
        results.append(entry)
        if verdict != "holds":
            break
    if tested == 0 and verdict == "holds":
        verdict = "vacuous"
    return SocnFragment(
        verdict=verdict,
        tested=tested,
        skipped=skipped,
        results=results,
        weight_grid=[[float(v) for v in lam] for lam in weights],
        tol=tol,
    )


@dataclass
class SocsFragment:
    """Staged sufficient-condition check: KKT residuals, coercivity, probes."""

    verdict: str  # "pass-with-caveat", "fail"
    failed_stage: str | None
    kkt: dict
    coercivity: dict | None
    search: dict | None
    caveat: str
    tol: float

    @property
    def passed(self) -> bool:
        return self.verdict == "pass-with-caveat"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "failed_stage": self.failed_stage,
            "kkt": self.kkt,
            "coercivity": self.coercivity,
            "search": self.search,
            "caveat": self.caveat,
            "tol": float(self.tol),
        }


_SOCS_CAVEAT = (
    "curvature positivity is verified on the probed directions only; the "
    "worst-direction search is a heuristic and does not certify the full cone"
)


def socs_verdict(
    problem: Problem,
    traj: Trajectory,
    triple: MultiplierTriple,
    gamma0: float,
    n_probes: int = 50,
    max_iters: int = 100,
    tol: float = 1e-8,
    eps_act: float = 1e-8,
    tolerances: Tolerances | None = None,
    seed: int = 42,
    workspace: SecondOrderWorkspace | None = None,
) -> SocsFragment:
    """Sufficient-condition pipeline at one multiplier triple."""
    ws = workspace if workspace is not None else SecondOrderWorkspace(problem, traj)
    tols = tolerances if tolerances is not None else Tolerances()
    kws = KktWorkspace(problem, traj, fields=ws.fields)
    kkt_report = kws.residuals(triple.lam, np.asarray(triple.p),
                               np.asarray(triple.theta), tols)
    if not kkt_report.passed:
        return SocsFragment("fail", "kkt", kkt_report.to_dict(), None, None,
                            _SOCS_CAVEAT, tol)
    coercivity = coercivity_check(problem, traj, triple.lam, gamma0, fields=ws.fields)
    if not coercivity.passed:
        return SocsFragment("fail", "coercivity", kkt_report.to_dict(),
                            coercivity.to_dict(), None, _SOCS_CAVEAT, tol)
    search = worst_critical_direction(
        problem, traj, triple,
        n_restarts=n_probes, max_iters=max_iters,
        eps_act=eps_act, tol=tol, seed=seed, workspace=ws,
    )
    min_q = min(search.restart_values) if search.restart_values else search.q_value
    # probes are normalized to unit control norm, so the threshold is plain tol
    if min_q <= tol:
        return SocsFragment("fail", "curvature", kkt_report.to_dict(),
                            coercivity.to_dict(), search.to_dict(), _SOCS_CAVEAT, tol)
    return SocsFragment("pass-with-caveat", None, kkt_report.to_dict(),
                        coercivity.to_dict(), search.to_dict(), _SOCS_CAVEAT, tol)
