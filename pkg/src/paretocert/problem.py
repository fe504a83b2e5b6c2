"""Multi-objective optimal control problem instances.

A problem bundles the running costs L_1..L_m, the dynamics phi_1..phi_n, one
mixed pointwise constraint g(t, x, u) <= 0, and the initial state x0, all on
the fixed horizon [0, 1].  Loading precomputes and caches simplified
first/second derivative trees for every expression with respect to every
state and control component; evaluation hot paths use compiled forms.

Two representational limits, by design: Lipschitz/boundedness regularity of
the data is the user's responsibility (undecidable for general expressions;
the loader guarantees twice continuously differentiable symbolics only), and
costs that are merely measurable in t are not representable because the
expression grammar forces continuity in t.

Problems are immutable after loading and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from . import expr as ex

if TYPE_CHECKING:  # pragma: no cover
    from .trajectory import Trajectory

__all__ = [
    "Problem",
    "DerivTable",
    "H2Report",
    "ProblemFormatError",
    "UnknownBuiltinError",
    "load_problem",
    "builtin",
    "builtin_names",
    "serialize",
    "validate_h2",
]


class ProblemFormatError(ValueError):
    """Problem document violates the schema (message carries the field path)."""


class UnknownBuiltinError(ValueError):
    pass


@dataclass(frozen=True)
class DerivTable:
    """Cached derivative trees of one expression w.r.t. (x1..xn, u1..ul).

    ``grad[i]`` and ``hess[i][j]`` are simplified ASTs; ``hess[i][j]`` is
    d/dv_j (d/dv_i expr), stored for all ordered pairs.
    """

    variables: tuple[str, ...]
    grad: tuple[ex.ExprAst, ...]
    hess: tuple[tuple[ex.ExprAst, ...], ...]


def _build_deriv_table(ast: ex.ExprAst, variables: Sequence[str]) -> DerivTable:
    grad = tuple(ex.simplify(ex.differentiate(ast, v)) for v in variables)
    hess = tuple(
        tuple(ex.simplify(ex.differentiate(g, w)) for w in variables) for g in grad
    )
    return DerivTable(tuple(variables), grad, hess)


@dataclass(frozen=True, eq=False)
class Problem:
    n: int
    l: int
    m: int
    x0: np.ndarray
    L: tuple[ex.ExprAst, ...]
    phi: tuple[ex.ExprAst, ...]
    g: ex.ExprAst
    name: str | None = None
    L_derivs: tuple[DerivTable, ...] = field(repr=False, default=())
    phi_derivs: tuple[DerivTable, ...] = field(repr=False, default=())
    g_derivs: DerivTable | None = field(repr=False, default=None)
    _compiled: dict = field(repr=False, default_factory=dict, compare=False)

    @property
    def variables(self) -> tuple[str, ...]:
        return ex.control_variables(self.n, self.l)

    @property
    def xu_variables(self) -> tuple[str, ...]:
        """Differentiation variables, state components first."""
        return self.variables[1:]

    def compiled(self, ast: ex.ExprAst):
        """Compiled evaluator for an AST, cached per problem.

        Keyed by the (frozen, hashable) node itself: id-based keys would be
        unsafe once temporary ASTs are garbage collected.
        """
        fn = self._compiled.get(ast)
        if fn is None:
            fn = ex.compile_ast(ast, self.variables)
            self._compiled[ast] = fn
        return fn

    def __eq__(self, other) -> bool:
        if not isinstance(other, Problem):
            return NotImplemented
        return (
            (self.n, self.l, self.m) == (other.n, other.l, other.m)
            and np.array_equal(self.x0, other.x0)
            and self.L == other.L
            and self.phi == other.phi
            and self.g == other.g
        )


def _make_problem(n, l, m, x0, L_sources, phi_sources, g_source, name=None) -> Problem:
    dims = (n, l)
    L = tuple(ex.parse(s, dims) for s in L_sources)
    phi = tuple(ex.parse(s, dims) for s in phi_sources)
    g = ex.parse(g_source, dims)
    xu = ex.control_variables(n, l)[1:]
    return Problem(
        n=n,
        l=l,
        m=m,
        x0=np.asarray(x0, dtype=float),
        L=L,
        phi=phi,
        g=g,
        name=name,
        L_derivs=tuple(_build_deriv_table(a, xu) for a in L),
        phi_derivs=tuple(_build_deriv_table(a, xu) for a in phi),
        g_derivs=_build_deriv_table(g, xu),
    )


_SCHEMA_FIELDS = {"n", "l", "m", "x0", "L", "phi", "g", "name"}


def load_problem(document) -> Problem:
    """Load a problem from a JSON text or an already-decoded mapping.

    Schema: {"n": int, "l": int, "m": int, "x0": [real...], "L": [str...],
    "phi": [str...], "g": str, "name": str optional}.  Unknown fields are
    rejected; dimension mismatches and expression errors report the field.
    """
    if isinstance(document, (str, bytes)):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as err:
            raise ProblemFormatError(f"invalid JSON: {err}") from None
    else:
        data = document
    if not isinstance(data, Mapping):
        raise ProblemFormatError("problem document must be a JSON object")

    unknown = set(data) - _SCHEMA_FIELDS
    if unknown:
        raise ProblemFormatError(f"unknown fields: {sorted(unknown)}")
    for key in ("n", "l", "m", "x0", "L", "phi", "g"):
        if key not in data:
            raise ProblemFormatError(f"missing field '{key}'")

    def positive_int(key):
        v = data[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ProblemFormatError(f"'{key}' must be a positive integer")
        return v

    n, l, m = positive_int("n"), positive_int("l"), positive_int("m")

    x0 = data["x0"]
    if not isinstance(x0, list) or not all(isinstance(v, (int, float)) for v in x0):
        raise ProblemFormatError("'x0' must be a list of reals")
    if len(x0) != n:
        raise ProblemFormatError(f"dimension mismatch: len(x0)={len(x0)}, n={n}")

    def string_list(key, expected, dim_name):
        v = data[key]
        if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
            raise ProblemFormatError(f"'{key}' must be a list of strings")
        if len(v) != expected:
            raise ProblemFormatError(
                f"dimension mismatch: len({key})={len(v)}, {dim_name}={expected}"
            )
        return v

    L_sources = string_list("L", m, "m")
    phi_sources = string_list("phi", n, "n")
    if not isinstance(data["g"], str):
        raise ProblemFormatError("'g' must be a string")
    name = data.get("name")
    if name is not None and not isinstance(name, str):
        raise ProblemFormatError("'name' must be a string")

    dims = (n, l)
    for label, sources in (("L", L_sources), ("phi", phi_sources)):
        for i, s in enumerate(sources):
            try:
                ex.parse(s, dims)
            except ex.ExprError as err:
                raise ProblemFormatError(f"{label}[{i}]: {err}") from None
    try:
        ex.parse(data["g"], dims)
    except ex.ExprError as err:
        raise ProblemFormatError(f"g: {err}") from None

    return _make_problem(n, l, m, x0, L_sources, phi_sources, data["g"], name)


def serialize(problem: Problem) -> dict:
    """Canonical JSON-ready document; round-trips through load_problem."""
    doc = {
        "n": problem.n,
        "l": problem.l,
        "m": problem.m,
        "x0": [float(v) for v in problem.x0],
        "L": [ex.to_source(a) for a in problem.L],
        "phi": [ex.to_source(a) for a in problem.phi],
        "g": ex.to_source(problem.g),
    }
    if problem.name is not None:
        doc["name"] = problem.name
    return doc


# ---------------------------------------------------------------------------
# Builtin registry

_BUILTIN_SOURCES = {
    "example_6_1": dict(
        n=2,
        l=2,
        m=2,
        x0=(0.0, 0.0),
        L_sources=("x1^2 + u1^2", "x2^2 + u2^2"),
        phi_sources=("u1", "u2"),
        g_source="x1 + x2 - u1 - u2",
    ),
    "example_6_2": dict(
        n=2,
        l=2,
        m=2,
        x0=(0.0, 0.0),
        L_sources=("x1^2 - u1^2", "x2^2 - u2^2"),
        phi_sources=("u1", "u2"),
        g_source="x1 + x2 - u1 - u2",
    ),
    # Nonlinear state-coupled fixture: a damped driven pendulum with a slack
    # control bound.  Exercises x-dependent dynamics (the two quadratic
    # examples above have phi = u, for which several discretisation errors
    # cancel identically).
    "damped_pendulum": dict(
        n=2,
        l=1,
        m=2,
        x0=(0.5, 0.0),
        L_sources=("x1^2 + x2^2 + u1^2", "(x1 - 1)^2 + u1^2"),
        phi_sources=("x2", "sin(x1) - x2 + u1"),
        g_source="u1 - 10",
    ),
}

_BUILTIN_CACHE: dict[str, Problem] = {}


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTIN_SOURCES))


def builtin(name: str) -> Problem:
    """Registry problem by name; raises UnknownBuiltinError listing entries."""
    if name not in _BUILTIN_SOURCES:
        raise UnknownBuiltinError(
            f"unknown builtin problem {name!r}; available: {', '.join(builtin_names())}"
        )
    if name not in _BUILTIN_CACHE:
        _BUILTIN_CACHE[name] = _make_problem(name=name, **_BUILTIN_SOURCES[name])
    return _BUILTIN_CACHE[name]


# ---------------------------------------------------------------------------
# Control-sensitivity check on the constraint


@dataclass
class H2Report:
    """Uniform lower bound on one control derivative of g along a trajectory.

    ``i0`` is the 1-based control index maximising min_t |g_{u_i}[t]| (lowest
    index wins ties); ``passed`` iff that minimum is at least ``alpha``.
    """

    i0: int
    alpha_hat: float
    alpha: float
    passed: bool
    per_node: np.ndarray
    per_control_min: np.ndarray

    def to_dict(self) -> dict:
        return {
            "i0": self.i0,
            "alpha_hat": float(self.alpha_hat),
            "alpha": float(self.alpha),
            "passed": bool(self.passed),
            "per_node": [float(v) for v in self.per_node],
            "per_control_min": [float(v) for v in self.per_control_min],
        }


def select_i0(gu_nodes: np.ndarray) -> tuple[int, float, np.ndarray]:
    """0-based argmax_i of min_k |gu[k, i]| with lowest-index tie-break."""
    mins = np.abs(gu_nodes).min(axis=0)
    i0 = int(np.argmax(mins))  # np.argmax returns the first maximiser
    return i0, float(mins[i0]), mins


def validate_h2(problem: Problem, traj: "Trajectory", alpha: float) -> H2Report:
    """Check |g_{u_{i0}}| >= alpha at every grid node of the trajectory."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    gu = constraint_control_gradient(problem, traj)
    i0, alpha_hat, mins = select_i0(gu)
    return H2Report(
        i0=i0 + 1,
        alpha_hat=alpha_hat,
        alpha=float(alpha),
        passed=bool(alpha_hat >= alpha),
        per_node=np.abs(gu[:, i0]),
        per_control_min=mins,
    )


def node_values(problem: Problem, ast: ex.ExprAst, traj: "Trajectory") -> np.ndarray:
    """Evaluate one expression at every node of a trajectory (compiled path)."""
    t = traj.grid.nodes
    packed = (t, *(traj.x[:, i] for i in range(problem.n)),
              *(traj.u[:, i] for i in range(problem.l)))
    with np.errstate(all="ignore"):
        out = np.asarray(problem.compiled(ast)(packed), dtype=float)
    if out.ndim == 0:
        out = np.full(t.shape, float(out))
    return out


def constraint_control_gradient(problem: Problem, traj: "Trajectory") -> np.ndarray:
    """g_u at every node, shape (N+1, l)."""
    table = problem.g_derivs
    cols = [node_values(problem, table.grad[problem.n + i], traj) for i in range(problem.l)]
    return np.stack(cols, axis=1)
