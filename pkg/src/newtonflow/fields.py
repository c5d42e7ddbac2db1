"""Velocity fields for the flow dx/dt = v(x).

A field is a plain callable wrapped with its dimension, an optional
analytic Jacobian and a label. Constructors are provided for the three
flow families used throughout the package:

* root-finding flow      v(x) = -J(x)^{-1} F(x)   (LU solve per point)
* scoring flow           v(x) = I(x)^{-1} S(x)    (Cholesky solve per point)
* plain gradient flow    v(x) = S(x)

Evaluation is pure and reentrant; fields carry no mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

from .errors import IndefiniteInformation, NonFiniteEvaluation, SingularJacobian
from .grids import GridSpec

#: Condition-number threshold beyond which a Jacobian counts as singular.
CONDITION_LIMIT = 1e12

#: Default relative step for finite-difference Jacobians.
FD_STEP = 1e-6


@dataclass(frozen=True)
class VelocityField:
    """Evaluable map x -> v(x) on R^p with optional analytic Jacobian.

    ``eval`` takes and returns a single point of shape (p,). ``eval_many``,
    when present, takes (N, p) and returns (N, p); it exists so that grid
    and ensemble sweeps do not pay a Python call per point.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    jac_eval: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = "field"
    eval_many: Callable[[np.ndarray], np.ndarray] | None = None

    def at(self, x) -> np.ndarray:
        """Evaluate at a single point; non-finite output is an error."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.atleast_1d(np.asarray(self.eval(x), dtype=float))
        if not np.all(np.isfinite(v)):
            raise NonFiniteEvaluation(x, self.label)
        return v

    def __call__(self, x) -> np.ndarray:
        return self.at(x)

    def at_points(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at an (N, p) batch; falls back to a per-point loop."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ValueError(f"expected (N, {self.dim}) points, got {pts.shape}")
        if self.eval_many is not None:
            out = np.asarray(self.eval_many(pts), dtype=float)
        else:
            out = np.empty_like(pts)
            for i, x in enumerate(pts):
                out[i] = np.asarray(self.eval(x), dtype=float)
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.all(np.isfinite(out), axis=1))[0, 0]
            raise NonFiniteEvaluation(pts[bad], self.label)
        return out

    def jacobian(self, x) -> np.ndarray:
        """Analytic Jacobian when supplied, else central differences."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.jac_eval is not None:
            return np.atleast_2d(np.asarray(self.jac_eval(x), dtype=float))
        return numeric_jacobian(self.at, x)


def numeric_jacobian(f, x, h=None) -> np.ndarray:
    """Central-difference Jacobian of f: R^p -> R^m at x.

    The step defaults to FD_STEP * max(1, |x_k|) per axis; h may be a
    scalar or a per-axis vector.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = x.size
    if h is None:
        steps = FD_STEP * np.maximum(1.0, np.abs(x))
    else:
        steps = np.broadcast_to(np.atleast_1d(np.asarray(h, dtype=float)), (p,))
        if np.any(steps <= 0):
            raise ValueError("finite-difference step must be positive")
    cols = []
    for k in range(p):
        e = np.zeros(p)
        e[k] = steps[k]
        fp = np.atleast_1d(np.asarray(f(x + e), dtype=float))
        fm = np.atleast_1d(np.asarray(f(x - e), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteEvaluation(x, "finite-difference target")
        cols.append((fp - fm) / (2.0 * steps[k]))
    return np.stack(cols, axis=-1)


def solve_spd(a: np.ndarray, b: np.ndarray, x=None) -> np.ndarray:
    """Solve a @ out = b via Cholesky; raise IndefiniteInformation if not SPD.

    ``x`` is only used to annotate the error with the evaluation point.
    The LAPACK potrf info value gives the first non-positive leading minor.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c, info = dpotrf(a, lower=1, overwrite_a=0)
    if info != 0:
        raise IndefiniteInformation(x if x is not None else np.zeros(a.shape[0]), info)
    return cho_solve((c, 1), np.asarray(b, dtype=float))


def _checked_jacobian(jac, x, cond_limit=CONDITION_LIMIT) -> np.ndarray:
    j = np.atleast_2d(np.asarray(jac, dtype=float))
    if not np.all(np.isfinite(j)):
        raise SingularJacobian(x, float("inf"))
    cond = np.linalg.cond(j)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularJacobian(x, cond)
    return j


def make_newton_field(F, J=None, dim: int | None = None,
                      label: str = "newton") -> VelocityField:
    """Root-finding flow v(x) = -J(x)^{-1} F(x).

    When J is omitted it is replaced by central differences of F. The
    linear system is solved per evaluation; no inverse is ever formed.
    Near-singular J (condition estimate above 1e12) raises SingularJacobian.
    """
    if dim is None:
        raise ValueError("dim is required")

    def jac_at(x):
        if J is not None:
            return np.atleast_2d(np.asarray(J(x), dtype=float))
        return numeric_jacobian(F, x)

    def eval_one(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = _checked_jacobian(jac_at(x), x)
        rhs = np.atleast_1d(np.asarray(F(x), dtype=float))
        return -np.linalg.solve(j, rhs)

    return VelocityField(dim=dim, eval=eval_one, jac_eval=None, label=label)


def make_fisher_field(S, I, dim: int | None = None,
                      label: str = "fisher",
                      S_many=None, I_many=None) -> VelocityField:
    """Scoring flow v(x) = I(x)^{-1} S(x) with an SPD solve per evaluation.

    Non-positive-definite I(x) raises IndefiniteInformation carrying the
    point and the offending leading minor index. ``S_many``/``I_many``
    optionally supply batched evaluation ((N,p) -> (N,p) / (N,p,p)).
    """
    if dim is None:
        raise ValueError("dim is required")

    def eval_one(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        info = np.atleast_2d(np.asarray(I(x), dtype=float))
        rhs = np.atleast_1d(np.asarray(S(x), dtype=float))
        return solve_spd(info, rhs, x)

    eval_many = None
    if S_many is not None and I_many is not None:
        def eval_many(points):
            mats = np.asarray(I_many(points), dtype=float)
            rhs = np.asarray(S_many(points), dtype=float)
            try:
                np.linalg.cholesky(mats)
            except np.linalg.LinAlgError:
                for x, m, r in zip(points, mats, rhs):
                    solve_spd(m, r, x)  # locates the offender and raises
                raise
            return np.linalg.solve(mats, rhs[..., None])[..., 0]

    return VelocityField(dim=dim, eval=eval_one, jac_eval=None, label=label,
                         eval_many=eval_many)


def make_gradient_field(S, dim: int | None = None, jac=None, S_many=None,
                        label: str = "gradient-flow") -> VelocityField:
    """Plain gradient flow: v = S, passed through unchanged."""
    if dim is None:
        raise ValueError("dim is required")

    def eval_one(x):
        return np.atleast_1d(np.asarray(S(np.atleast_1d(x)), dtype=float))

    return VelocityField(dim=dim, eval=eval_one, jac_eval=jac,
                         label=label, eval_many=S_many)


def sampled_divergence(field: VelocityField, grid: GridSpec) -> np.ndarray:
    """Divergence of the field sampled at cell centers.

    Central differences at interior cells, one-sided at boundary cells.
    Diagnostic only: this non-conservative form must not drive the
    transport solver.
    """
    if any(c < 3 for c in grid.cells):
        raise ValueError("need at least 3 cells per axis for divergence sampling")
    centers = grid.centers()
    flat = centers.reshape(-1, grid.dim)
    vel = field.at_points(flat).reshape(centers.shape)
    div = np.zeros(grid.cells)
    for k in range(grid.dim):
        div += np.gradient(vel[..., k], grid.dx[k], axis=k)
    return div


def linear_decay_field(dim: int) -> VelocityField:
    """v(x) = -x in any dimension."""
    return VelocityField(
        dim=dim,
        eval=lambda x: -np.asarray(x, dtype=float),
        jac_eval=lambda x: -np.eye(dim),
        label="linear-decay",
        eval_many=lambda pts: -np.asarray(pts, dtype=float),
    )


def zero_field(dim: int) -> VelocityField:
    """v(x) = 0; the do-nothing baseline."""
    return VelocityField(
        dim=dim,
        eval=lambda x: np.zeros(dim),
        jac_eval=lambda x: np.zeros((dim, dim)),
        label="zero",
        eval_many=lambda pts: np.zeros_like(np.asarray(pts, dtype=float)),
    )


def rotation_field() -> VelocityField:
    """Divergence-free planar rotation v(x) = (-x2, x1)."""
    def eval_one(x):
        x = np.asarray(x, dtype=float)
        return np.array([-x[1], x[0]])

    def eval_many(pts):
        pts = np.asarray(pts, dtype=float)
        return np.stack([-pts[:, 1], pts[:, 0]], axis=1)

    return VelocityField(
        dim=2, eval=eval_one,
        jac_eval=lambda x: np.array([[0.0, -1.0], [1.0, 0.0]]),
        label="rotation", eval_many=eval_many,
    )


def quadratic_newton_field(dim: int = 1, offset: float = 4.0) -> VelocityField:
    """Root-finding flow for the componentwise map F(x) = x^2 - offset."""
    def F(x):
        x = np.asarray(x, dtype=float)
        return x * x - offset

    def J(x):
        return np.diag(2.0 * np.asarray(x, dtype=float))

    return make_newton_field(F, J, dim=dim, label="newton:quadratic")


def builtin_field(key: str, dim: int | None = None, dataset=None) -> VelocityField:
    """Resolve a named field. GLM-backed keys require a dataset."""
    if key in ("linear-decay", "zero"):
        if dim is None:
            raise ValueError(f"{key} needs a dimension")
        return linear_decay_field(dim) if key == "linear-decay" else zero_field(dim)
    if key == "rotation":
        if dim not in (None, 2):
            raise ValueError("rotation is a planar field (dim 2)")
        return rotation_field()
    if key == "newton:quadratic":
        return quadratic_newton_field(dim if dim is not None else 1)
    if key in ("glm-fisher", "glm-score"):
        if dataset is None:
            raise ValueError(f"{key} needs a GLM dataset")
        from . import glm  # local import: glm depends on this module

        if key == "glm-fisher":
            return glm.fisher_velocity_field(dataset)
        return glm.score_velocity_field(dataset)
    raise KeyError(f"unknown field key {key!r}")
