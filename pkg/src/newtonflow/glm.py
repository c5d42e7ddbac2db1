"""Logistic regression with the canonical link.

Provides data simulation, the log-likelihood and its first two
derivatives, a discrete scoring iteration used as the MLE oracle by the
rest of the package, and Monte-Carlo checks of the two moment identities
of the score (zero mean, and information equal to the expected negative
score Jacobian at the true parameter).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import NonConvergence
from .fields import (VelocityField, make_gradient_field, numeric_jacobian,
                     solve_spd)

#: Guard against runaway iterates (separated data push the MLE to infinity).
SEPARATION_NORM = 1e3

#: Branch point of the overflow-safe softplus.
SOFTPLUS_CUT = 30.0


def softplus(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(t)), exact for small t, asymptotic branch for t > 30."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    big = t > SOFTPLUS_CUT
    out[big] = t[big] + np.log1p(np.exp(-t[big]))
    out[~big] = np.log1p(np.exp(t[~big]))
    return out


@dataclass(frozen=True)
class GlmDataset:
    """Binary-response design: X (n, p), y in {0,1}^n, generating beta, seed."""

    X: np.ndarray
    y: np.ndarray
    beta_star: np.ndarray
    seed: int
    law: str = "standard_normal"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        beta_star = np.atleast_1d(np.asarray(self.beta_star, dtype=float))
        if X.ndim != 2:
            raise ValueError("X must be a matrix")
        n, p = X.shape
        if y.shape != (n,):
            raise ValueError("y length must match the number of rows of X")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("y must be binary")
        if beta_star.size != p:
            raise ValueError("beta_star dimension must match X columns")
        if n < p:
            raise ValueError("need at least as many observations as parameters")
        if np.linalg.matrix_rank(X) < p:
            raise ValueError("X is rank deficient")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "beta_star", beta_star)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class MleResult:
    beta_hat: np.ndarray
    iterations: int
    final_score_norm: float


def glm_simulate(n: int, beta_star, seed: int,
                 covariate_law: str = "standard_normal") -> GlmDataset:
    """Draw a dataset with y_j ~ Bernoulli(sigmoid(x_j . beta_star)).

    Identical (n, beta_star, seed, law) reproduce bit-identical data: the
    generator draws X first, then one uniform per response.
    """
    beta_star = np.atleast_1d(np.asarray(beta_star, dtype=float))
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    p = beta_star.size
    if covariate_law == "standard_normal":
        X = rng.standard_normal((n, p))
    elif covariate_law == "uniform":
        X = rng.uniform(-1.0, 1.0, size=(n, p))
    else:
        raise ValueError(f"unknown covariate law {covariate_law!r}")
    probs = expit(X @ beta_star)
    y = (rng.random(n) < probs).astype(float)
    return GlmDataset(X, y, beta_star, seed, covariate_law)


def glm_loglik(d: GlmDataset, beta) -> float:
    t = d.X @ np.asarray(beta, dtype=float)
    return float(np.sum(d.y * t - softplus(t)))


def glm_score(d: GlmDataset, beta) -> np.ndarray:
    t = d.X @ np.asarray(beta, dtype=float)
    return d.X.T @ (d.y - expit(t))


def glm_fisher(d: GlmDataset, beta) -> np.ndarray:
    t = d.X @ np.asarray(beta, dtype=float)
    w = expit(t)
    w = w * (1.0 - w)
    m = (d.X * w[:, None]).T @ d.X
    return 0.5 * (m + m.T)  # exact symmetry despite summation-order effects


def _score_batch(d: GlmDataset, points: np.ndarray) -> np.ndarray:
    # points (N, p) -> scores (N, p)
    t = points @ d.X.T                      # (N, n)
    return (d.y[None, :] - expit(t)) @ d.X


def _fisher_batch(d: GlmDataset, points: np.ndarray) -> np.ndarray:
    # points (N, p) -> information matrices (N, p, p)
    t = points @ d.X.T
    w = expit(t)
    w = w * (1.0 - w)                       # (N, n)
    m = np.einsum("Nj,ja,jb->Nab", w, d.X, d.X, optimize=True)
    return 0.5 * (m + np.swapaxes(m, 1, 2))


def score_velocity_field(d: GlmDataset) -> VelocityField:
    """Gradient flow along the raw score, v = S."""
    return make_gradient_field(
        lambda b: glm_score(d, b),
        dim=d.p,
        jac=lambda b: -glm_fisher(d, b),
        S_many=lambda pts: _score_batch(d, pts),
        label="glm-score",
    )


def fisher_velocity_field(d: GlmDataset) -> VelocityField:
    """Scoring flow v = I(beta)^{-1} S(beta), batched over points."""
    def eval_one(b):
        return solve_spd(glm_fisher(d, b), glm_score(d, b), b)

    def eval_many(points):
        mats = _fisher_batch(d, points)
        rhs = _score_batch(d, points)
        try:
            np.linalg.cholesky(mats)
        except np.linalg.LinAlgError:
            for x, m, r in zip(points, mats, rhs):
                solve_spd(m, r, x)
            raise
        return np.linalg.solve(mats, rhs[..., None])[..., 0]

    return VelocityField(dim=d.p, eval=eval_one, label="glm-fisher",
                         eval_many=eval_many)


def fisher_scoring_solve(d: GlmDataset, beta0=None, tol: float = 1e-10,
                         max_iter: int = 50) -> MleResult:
    """Iterate beta <- beta + I(beta)^{-1} S(beta) until the score vanishes.

    This is the package's MLE oracle: the sup-norm of the score at the
    returned point is at most tol. Raises NonConvergence when the iterate
    norm exceeds SEPARATION_NORM (data separation, MLE at infinity) or the
    iteration budget runs out.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    beta = np.zeros(d.p) if beta0 is None else np.atleast_1d(
        np.asarray(beta0, dtype=float)).copy()
    for it in range(max_iter + 1):
        s = glm_score(d, beta)
        norm = float(np.abs(s).max())
        if norm <= tol:
            return MleResult(beta, it, norm)
        if it == max_iter:
            raise NonConvergence(beta, it, norm, "iteration budget exhausted")
        beta = beta + solve_spd(glm_fisher(d, beta), s, beta)
        if np.linalg.norm(beta) > SEPARATION_NORM:
            raise NonConvergence(beta, it + 1, norm,
                                 "iterate norm exploded (separated data?)")
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class BartlettReport:
    """Monte-Carlo estimates of the score's first two moment identities."""

    mean_score: np.ndarray
    se_score: np.ndarray
    mean_neg_hessian: np.ndarray
    mean_fisher: np.ndarray
    se_identity_gap: np.ndarray
    replications: int
    n: int
    degenerate: bool


def bartlett_check(beta_star, n: int, replications: int, seed: int,
                   covariate_law: str = "standard_normal",
                   threads: int = 1) -> BartlettReport:
    """Estimate E[S(beta*)] and E[-dS/dbeta^T] over fresh datasets.

    Replication r uses the derived seed (seed + r) mod 2**64, so results
    are independent of execution order and thread count. The negative
    score Jacobian is measured by central differences, which keeps the
    comparison against the analytic information matrix a genuine check.
    """
    beta_star = np.atleast_1d(np.asarray(beta_star, dtype=float))
    if replications < 1:
        raise ValueError("need at least one replication")
    p = beta_star.size

    def one(r: int):
        d = glm_simulate(n, beta_star, (seed + r) % 2**64, covariate_law)
        score = glm_score(d, beta_star)
        neg_hess = -numeric_jacobian(lambda b: glm_score(d, b), beta_star)
        fisher = glm_fisher(d, beta_star)
        return score, neg_hess, fisher

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replications)))
    else:
        results = [one(r) for r in range(replications)]

    scores = np.stack([r[0] for r in results])
    neg_hessians = np.stack([r[1] for r in results])
    fishers = np.stack([r[2] for r in results])
    gaps = neg_hessians - fishers

    degenerate = replications < 2
    if degenerate:
        se_score = np.full(p, np.nan)
        se_gap = np.full((p, p), np.nan)
    else:
        se_score = scores.std(axis=0, ddof=1) / np.sqrt(replications)
        se_gap = gaps.std(axis=0, ddof=1) / np.sqrt(replications)

    return BartlettReport(
        mean_score=scores.mean(axis=0),
        se_score=se_score,
        mean_neg_hessian=neg_hessians.mean(axis=0),
        mean_fisher=fishers.mean(axis=0),
        se_identity_gap=se_gap,
        replications=replications,
        n=n,
        degenerate=degenerate,
    )


def save_dataset(d: GlmDataset, path: str | Path) -> Path:
    """Write the design as CSV (header x1,...,xp,y) plus a key=value sidecar."""
    path = Path(path)
    header = ",".join(f"x{k + 1}" for k in range(d.p)) + ",y"
    rows = [header]
    for xj, yj in zip(d.X, d.y):
        rows.append(",".join(f"{v:.17g}" for v in xj) + f",{int(yj)}")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
    meta = path.with_suffix(path.suffix + ".meta")
    meta.write_text(
        "\n".join([
            f"n={d.n}",
            f"p={d.p}",
            "beta_star=" + ",".join(f"{v:.17g}" for v in d.beta_star),
            f"seed={d.seed}",
            f"law={d.law}",
        ]) + "\n",
        encoding="utf-8", newline="\n",
    )
    return path


def load_dataset(path: str | Path) -> GlmDataset:
    """Read a dataset written by :func:`save_dataset`."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    meta = {}
    meta_path = path.with_suffix(path.suffix + ".meta")
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        key, _, raw = line.partition("=")
        meta[key.strip()] = raw.strip()
    beta_star = np.array([float(v) for v in meta["beta_star"].split(",")])
    return GlmDataset(data[:, :-1], data[:, -1], beta_star,
                      int(meta["seed"]), meta["law"])
