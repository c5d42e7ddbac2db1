"""Trajectories and ensembles of the flow dx/dt = v(x).

Single trajectories and whole ensembles are advanced with fixed-step
explicit integrators (classical RK4 by default, forward Euler for
fidelity checks). Ensembles are converted to grid densities so they can
be compared against the transport solver's output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import NewtonFlowError
from .fields import VelocityField
from .grids import DensityField, GridSpec, WorkingDomain

_METHODS = ("euler", "rk4")


@dataclass(frozen=True)
class Trajectory:
    """A single integrated path: strictly increasing times, matching states.

    ``escaped`` marks that the path left the working domain; the states
    stop at the last in-domain point and ``escape_time`` records when the
    offending step would have landed.
    """

    times: np.ndarray
    states: np.ndarray
    escaped: bool = False
    escape_time: float | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if times.ndim != 1 or states.ndim != 2 or len(times) != len(states):
            raise ValueError("times and states must be matching sequences")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class ParticleEnsemble:
    """Positions of many simultaneous movers at a common time stamp."""

    positions: np.ndarray
    time: float = 0.0
    seed: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2:
            raise ValueError("positions must be an (n, p) array")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def _step_states(field: VelocityField, states: np.ndarray, dt: float,
                 method: str) -> np.ndarray:
    if method == "euler":
        return states + dt * field.at_points(states)
    k1 = field.at_points(states)
    k2 = field.at_points(states + 0.5 * dt * k1)
    k3 = field.at_points(states + 0.5 * dt * k2)
    k4 = field.at_points(states + dt * k3)
    return states + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _n_steps(dt: float, duration: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if duration < 0:
        raise ValueError("integration duration must be nonnegative")
    # final time lands within dt of the requested horizon
    return max(0, int(round(duration / dt)))


def integrate(field: VelocityField, x0, dt: float, t_end: float,
              method: str = "rk4",
              domain: WorkingDomain | None = None) -> Trajectory:
    """Fixed-step integration from t=0, recording the state at every step.

    Field errors are re-raised with the failure time attached. If the
    state exits the working domain the trajectory is truncated at the
    last in-domain state and flagged as escaped.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    x = np.atleast_1d(np.asarray(x0, dtype=float))[None, :]
    steps = _n_steps(dt, t_end)
    times = [0.0]
    states = [x[0].copy()]
    for k in range(steps):
        t_next = (k + 1) * dt
        try:
            x = _step_states(field, x, dt, method)
        except NewtonFlowError as exc:
            exc.time = times[-1]
            raise
        if domain is not None and not bool(domain.contains(x[0])):
            return Trajectory(np.array(times), np.array(states),
                              escaped=True, escape_time=t_next)
        times.append(t_next)
        states.append(x[0].copy())
    return Trajectory(np.array(times), np.array(states))


def sample_initial(domain, law: str, count: int, seed: int,
                   mean=None, cov=None,
                   truncate: float | None = None) -> ParticleEnsemble:
    """Draw an i.i.d. initial ensemble inside a grid or box.

    ``law`` is "gaussian" (requires mean and covariance; covariance may be
    a scalar, a per-axis vector of variances, or a full SPD matrix) or
    "uniform" over the box. ``truncate`` optionally rejects Gaussian draws
    farther than this many Mahalanobis units from the mean; resampling is
    deterministic under the seed.
    """
    if isinstance(domain, GridSpec):
        domain = domain.as_domain()
    if count < 1:
        raise ValueError("count must be at least 1")
    p = domain.dim
    rng = np.random.default_rng(seed)
    if law == "uniform":
        pos = rng.uniform(domain.lower, domain.upper, size=(count, p))
        return ParticleEnsemble(pos, 0.0, seed)
    if law != "gaussian":
        raise ValueError(f"unknown law {law!r}")
    if mean is None or cov is None:
        raise ValueError("gaussian law needs mean and cov")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = promote_covariance(cov, p)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance must be symmetric positive definite") from exc

    def rejected(pos):
        # keep every draw inside the box (the ensemble invariant) and,
        # when requested, inside the Mahalanobis ball
        bad = ~domain.contains(pos)
        if truncate is not None:
            z = np.linalg.solve(chol, (pos - mean).T).T
            bad |= np.einsum("ij,ij->i", z, z) > truncate**2
        return bad

    pos = mean + rng.standard_normal((count, p)) @ chol.T
    bad = rejected(pos)
    for _ in range(1000):
        if not bad.any():
            break
        pos[bad] = mean + rng.standard_normal((int(bad.sum()), p)) @ chol.T
        bad = rejected(pos)
    else:
        raise ValueError("rejection sampling failed; distribution barely "
                         "overlaps the domain")
    return ParticleEnsemble(pos, 0.0, seed)


def promote_covariance(cov, p: int) -> np.ndarray:
    """Scalar variance, per-axis variances or full matrix -> (p, p) matrix."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        return np.eye(p) * float(cov)
    if cov.ndim == 1:
        if cov.size != p:
            raise ValueError("per-axis variance vector has wrong length")
        return np.diag(cov)
    if cov.shape != (p, p):
        raise ValueError("covariance matrix has wrong shape")
    return cov


def advance_ensemble(e: ParticleEnsemble, field: VelocityField, dt: float,
                     t_end: float, method: str = "rk4",
                     domain: WorkingDomain | None = None
                     ) -> tuple[ParticleEnsemble, int]:
    """Advance every particle independently to the absolute time t_end.

    Escaped particles (outside ``domain`` after a step) are removed and
    counted, mirroring the transport solver's outflow boundary. All
    particles see identical arithmetic regardless of batch composition,
    so the result is independent of particle order.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    duration = t_end - e.time
    steps = _n_steps(dt, duration)
    pos = e.positions.copy()
    escaped = 0
    for _ in range(steps):
        try:
            pos = _step_states(field, pos, dt, method)
        except NewtonFlowError as exc:
            exc.time = e.time
            raise
        if domain is not None:
            inside = domain.contains(pos)
            escaped += int((~inside).sum())
            pos = pos[inside]
            if pos.size == 0:
                break
    return ParticleEnsemble(pos, e.time + steps * dt, e.seed), escaped


def empirical_density(e: ParticleEnsemble, grid: GridSpec,
                      smoothing: str = "histogram",
                      bandwidth: float | None = None) -> DensityField:
    """Bin an ensemble into a unit-mass density on the grid.

    "histogram" assigns each particle to its containing cell, matching
    the finite-volume cell-average semantics. "gaussian_kernel" smooths
    the histogram with a Gaussian of the given bandwidth (default: one
    cell width per axis) and renormalizes.
    """
    if e.count == 0:
        raise ValueError("cannot build a density from an empty ensemble")
    if not np.all(grid.as_domain().contains(e.positions)):
        raise ValueError("grid does not cover the ensemble support")
    edges = [grid.axis_faces(k) for k in range(grid.dim)]
    counts, _ = np.histogramdd(e.positions, bins=edges)
    values = counts / (e.count * grid.cell_volume)
    if smoothing == "histogram":
        return DensityField(grid, values, e.time)
    if smoothing != "gaussian_kernel":
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if bandwidth is None:
        sigmas = np.ones(grid.dim)          # one cell width per axis
    else:
        sigmas = bandwidth / grid.dx
    smoothed = gaussian_filter(values, sigma=sigmas, mode="constant")
    total = smoothed.sum() * grid.cell_volume
    return DensityField(grid, smoothed / total, e.time)


def save_ensemble(e: ParticleEnsemble, path) -> None:
    """CSV export, one row per particle: t,x1,...,xp."""
    header = "t," + ",".join(f"x{k + 1}" for k in range(e.dim))
    rows = [header]
    for x in e.positions:
        rows.append(f"{e.time:.17g}," + ",".join(f"{v:.17g}" for v in x))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
