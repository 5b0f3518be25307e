#!/usr/bin/env python3
# src/chuk_gmm_sce/linalg_opt.py
"""
Numerical kernels shared by every estimator.

* simplex-constrained quadratic programming (accelerated projected gradient
  with restarts and an active-face polish step)
* Euclidean and metric projection onto the simplex
* minimum-norm unconstrained minimisation via the pseudo-inverse
* convex-hull membership with certificate weights
* Bartlett-kernel (Newey-West) long-run variance
* SVD principal components with the ``λ'λ/T = I``, ``μμ'`` diagonal normalisation
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import linalg as sla
from statsmodels.stats.sandwich_covariance import S_hac_simple

logger = logging.getLogger(__name__)

SUPPORT_THRESHOLD = 1e-10
SIMPLEX_TOLERANCE = 1e-10
DEFAULT_QP_TOL = 1e-10
DEFAULT_QP_MAX_ITER = 50_000

Bandwidth = int | Literal["auto"] | None


class InputError(ValueError):
    """Malformed numerical input (NaN, wrong shape, not PSD)."""


@dataclass(frozen=True)
class WeightVector:
    """Synthetic-control weights over an ordered set of control units."""

    values: np.ndarray
    on_simplex: bool = True

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise InputError("weights must be finite")
        if self.on_simplex:
            if values.size == 0:
                raise InputError("simplex weights need at least one entry")
            if values.min() < 0.0:
                raise InputError(f"negative simplex weight {values.min():.3e}")
            if abs(values.sum() - 1.0) > SIMPLEX_TOLERANCE:
                raise InputError(f"simplex weights sum to {values.sum():.12f}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, size: int) -> "WeightVector":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def from_raw(cls, values: Sequence[float] | np.ndarray) -> "WeightVector":
        """Clip round-off negatives and renormalise onto the simplex."""
        arr = np.clip(np.asarray(values, dtype=float), 0.0, None)
        total = arr.sum()
        if total <= 0.0:
            raise InputError("cannot renormalise an all-zero weight vector")
        return cls(arr / total)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.values > SUPPORT_THRESHOLD))

    def expand(self, positions: Sequence[int], size: int) -> "WeightVector":
        """Scatter these weights into a longer vector at ``positions``."""
        full = np.zeros(size)
        full[list(positions)] = self.values
        return WeightVector(full, on_simplex=self.on_simplex)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class SimplexQP:
    """Quadratic ``w'Mw - 2b'w + c`` to be minimised over the simplex."""

    M: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        M = np.array(self.M, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float).reshape(-1)
        if M.shape[0] != M.shape[1] or M.shape[0] != b.size:
            raise InputError(f"inconsistent QP dimensions M{M.shape}, b({b.size})")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(b))):
            raise InputError("QP inputs contain NaN or infinite values")
        if not math.isfinite(float(self.c)):
            raise InputError("QP offset is not finite")

        scale = max(1.0, float(np.abs(M).max(initial=0.0)))
        if np.abs(M - M.T).max(initial=0.0) > 1e-10 * scale:
            raise InputError("QP matrix is not symmetric")
        M = 0.5 * (M + M.T)
        if M.size:
            eig = np.linalg.eigvalsh(M)
            if eig[0] < -1e-10 * max(abs(eig[-1]), abs(eig[0]), np.finfo(float).tiny):
                raise InputError(f"QP matrix is not PSD (min eigenvalue {eig[0]:.3e})")

        M.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return int(self.b.size)

    def objective(self, w: np.ndarray) -> float:
        return float(w @ self.M @ w - 2.0 * self.b @ w + self.c)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return 2.0 * (self.M @ w - self.b)


@dataclass(frozen=True)
class QPSolution:
    weights: WeightVector
    objective: float
    kkt_residual: float
    iterations: int
    unique: bool = True


class QPConvergenceError(RuntimeError):
    """Simplex QP did not reach the KKT tolerance within the iteration cap."""

    def __init__(self, message: str, solution: QPSolution):
        super().__init__(message)
        self.solution = solution
        self.residual = solution.kkt_residual
        self.iterations = solution.iterations


@dataclass(frozen=True)
class FactorFit:
    """Principal-components factor fit of a units x periods block."""

    factors: np.ndarray
    loadings: np.ndarray
    rank: int
    residual_variances: np.ndarray
    singular_values: np.ndarray
    residuals: np.ndarray

    def fitted(self) -> np.ndarray:
        """Common component, units x periods."""
        return (self.factors @ self.loadings).T


def _euclidean_projection(v: np.ndarray) -> np.ndarray:
    """Sort-based exact projection of ``v`` onto the unit simplex."""
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def _step(qp: SimplexQP, w: np.ndarray, step: float) -> np.ndarray:
    """Projected gradient step; the gradient is shifted by its minimum,
    which the projection is invariant to."""
    g = qp.gradient(w)
    return _euclidean_projection(w - (g - g.min()) * step)


def _kkt_residual(qp: SimplexQP, w: np.ndarray, step: float) -> float:
    """Gradient-mapping residual in weight units (zero exactly at optima)."""
    return float(np.abs(w - _step(qp, w, step)).max())


def _polish(qp: SimplexQP, w: np.ndarray) -> Optional[np.ndarray]:
    """Solve the equality-constrained QP on the current active face."""
    face = np.flatnonzero(w > 0.0)
    if face.size == 0:
        return None
    n = face.size
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = qp.M[np.ix_(face, face)]
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    rhs = np.append(qp.b[face], 1.0)
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:n]
    if not np.all(np.isfinite(sol)) or sol.min() < -1e-12:
        return None
    full = np.zeros_like(w)
    full[face] = np.clip(sol, 0.0, None)
    total = full.sum()
    if total <= 0.0:
        return None
    return full / total


def _face_is_unique(qp: SimplexQP, w: np.ndarray, scale: float) -> bool:
    face = np.flatnonzero(w > SUPPORT_THRESHOLD)
    if face.size <= 1:
        return True
    basis = sla.null_space(np.ones((1, face.size)))
    hessian = basis.T @ qp.M[np.ix_(face, face)] @ basis
    smallest = float(np.linalg.eigvalsh(hessian)[0])
    return smallest >= 1e-8 * max(scale, np.finfo(float).tiny)


def solve_simplex_qp(
    qp: SimplexQP,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
    polish_every: int = 25,
) -> QPSolution:
    """Minimise ``w'Mw - 2b'w + c`` over the unit simplex.

    Accelerated projected gradient from uniform weights, restarted whenever
    an accelerated step increases the objective. Every ``polish_every``
    iterations the active face is solved exactly and accepted when it meets
    the KKT tolerance.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    J = qp.dim
    if J == 0:
        raise InputError("empty QP")
    if J == 1:
        w = np.ones(1)
        return QPSolution(WeightVector(w), qp.objective(w), 0.0, 0)

    lmax = float(np.linalg.eigvalsh(qp.M)[-1])
    lipschitz = 2.0 * lmax if lmax > 0.0 else 1.0
    step = 1.0 / lipschitz

    x = np.full(J, 1.0 / J)
    y = x.copy()
    t = 1.0
    fx = qp.objective(x)
    residual = _kkt_residual(qp, x, step)
    iterations = 0

    while residual > tol and iterations < max_iter:
        iterations += 1
        x_new = _step(qp, y, step)
        f_new = qp.objective(x_new)
        if t > 1.0 and f_new > fx:
            y, t = x, 1.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        residual = _kkt_residual(qp, x, step)

        if residual > tol and iterations % polish_every == 0:
            candidate = _polish(qp, x)
            if candidate is not None:
                f_cand = qp.objective(candidate)
                r_cand = _kkt_residual(qp, candidate, step)
                if r_cand <= tol and f_cand <= fx + 1e-12 * (1.0 + abs(fx)):
                    x, fx, residual = candidate, f_cand, r_cand

    if residual > tol:
        candidate = _polish(qp, x)
        if candidate is not None and _kkt_residual(qp, candidate, step) <= tol:
            x, fx = candidate, qp.objective(candidate)
            residual = _kkt_residual(qp, x, step)

    x = np.clip(x, 0.0, None)
    x = x / x.sum()
    fx = qp.objective(x)

    # Safeguard against uniform weights and every vertex.
    vertex_obj = np.diag(qp.M) - 2.0 * qp.b + qp.c
    best_vertex = int(np.argmin(vertex_obj))
    uniform = np.full(J, 1.0 / J)
    slack = 1e-12 * (1.0 + abs(fx))
    if vertex_obj[best_vertex] < fx - slack:
        logger.debug(
            f"QP iterate worse than vertex {best_vertex}; returning the vertex"
        )
        x = np.zeros(J)
        x[best_vertex] = 1.0
        fx = float(vertex_obj[best_vertex])
        residual = _kkt_residual(qp, x, step)
    elif qp.objective(uniform) < fx - slack:
        logger.debug("QP iterate worse than uniform weights; returning uniform")
        x, fx = uniform, qp.objective(uniform)
        residual = _kkt_residual(qp, x, step)

    unique = _face_is_unique(qp, x, lmax)
    if not unique:
        logger.warning("QP optimum is not unique on its active face")

    solution = QPSolution(WeightVector(x), fx, residual, iterations, unique)
    if residual > tol:
        raise QPConvergenceError(
            f"simplex QP did not converge after {iterations} iterations "
            f"(KKT residual {residual:.3e} > {tol:.1e})",
            solution,
        )
    return solution


def project_simplex(
    v: Sequence[float] | np.ndarray,
    metric: Optional[np.ndarray] = None,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> WeightVector:
    """Project ``v`` onto the simplex, Euclidean or in the ``metric`` norm."""
    vec = np.asarray(v, dtype=float).reshape(-1)
    if vec.size == 0 or not np.all(np.isfinite(vec)):
        raise InputError("projection input must be a non-empty finite vector")
    if metric is None:
        return WeightVector.from_raw(_euclidean_projection(vec))

    G = np.asarray(metric, dtype=float)
    qp = SimplexQP(G, G @ vec, float(vec @ G @ vec))
    return solve_simplex_qp(qp, tol=tol, max_iter=max_iter).weights


def min_norm_quadratic(qp: SimplexQP) -> np.ndarray:
    """Minimum-norm unconstrained minimiser ``M⁺b``.

    Eigenvalues below ``dim * eps * max|eig|`` are treated as zero.
    """
    cutoff = qp.dim * np.finfo(float).eps
    return sla.pinvh(qp.M, atol=0.0, rtol=cutoff) @ qp.b


def in_convex_hull(
    target: Sequence[float] | np.ndarray,
    points: Sequence[Sequence[float]] | Sequence[float] | np.ndarray,
    tol: float = 1e-8,
) -> tuple[bool, WeightVector]:
    """Whether ``target`` lies within ``tol`` of the convex hull of ``points``.

    ``points`` holds one point per row. Returns the membership flag and the
    distance-minimising simplex weights as certificate.
    """
    t = np.atleast_1d(np.asarray(target, dtype=float))
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    if P.shape[1] != t.size:
        raise InputError(
            f"points have dimension {P.shape[1]} but target has {t.size}"
        )
    qp = SimplexQP(P @ P.T, P @ t, float(t @ t))
    weights = solve_simplex_qp(qp).weights
    distance = float(np.linalg.norm(t - P.T @ weights.values))
    return distance <= tol, weights


def auto_bandwidth(n_obs: int) -> int:
    """Newey-West plug-in lag count ``floor(4 (T/100)^(2/9))``."""
    return int(math.floor(4.0 * (n_obs / 100.0) ** (2.0 / 9.0)))


def hac_lrv(series: np.ndarray, bandwidth: Bandwidth = "auto") -> np.ndarray:
    """Bartlett-kernel long-run variance of a (T x d) series.

    The series is demeaned; the result is symmetrised and its eigenvalues are
    floored at zero. A constant series returns the zero matrix.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n_obs = x.shape[0]
    if n_obs < 2:
        raise InputError("long-run variance needs at least two observations")
    if not np.all(np.isfinite(x)):
        raise InputError("long-run variance input contains NaN")

    if bandwidth is None or bandwidth == "auto":
        lags = auto_bandwidth(n_obs)
    else:
        lags = int(bandwidth)
        if lags < 0:
            raise InputError("bandwidth must be non-negative")
    lags = min(lags, n_obs - 1)

    centred = x - x.mean(axis=0)
    S = np.atleast_2d(S_hac_simple(centred, nlags=lags)) / n_obs
    S = 0.5 * (S + S.T)
    eigval, eigvec = np.linalg.eigh(S)
    S = (eigvec * np.clip(eigval, 0.0, None)) @ eigvec.T
    S = 0.5 * (S + S.T)
    if not np.any(S):
        logger.debug("long-run variance is identically zero")
    return S


def svd_pca(data: np.ndarray, rank: int) -> FactorFit:
    """Rank-``rank`` principal components of a units x periods matrix."""
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise InputError("PCA input must be a non-empty matrix")
    n_units, n_periods = X.shape
    if not 0 <= rank <= min(n_units, n_periods):
        raise InputError(f"rank {rank} outside [0, {min(n_units, n_periods)}]")

    U, s, Vt = np.linalg.svd(X.T, full_matrices=False)
    root_t = math.sqrt(n_periods)
    factors = root_t * U[:, :rank]
    loadings = (s[:rank, None] * Vt[:rank]) / root_t

    for f in range(rank):
        row = loadings[f]
        nonzero = np.flatnonzero(np.abs(row) > 1e-12 * max(1.0, np.abs(row).max()))
        if nonzero.size and row[nonzero[0]] < 0:
            loadings[f] *= -1.0
            factors[:, f] *= -1.0

    residuals = X - (factors @ loadings).T
    if n_periods > 1:
        residual_variances = residuals.var(axis=1, ddof=1)
    else:
        residual_variances = np.zeros(n_units)

    return FactorFit(
        factors=factors,
        loadings=loadings,
        rank=rank,
        residual_variances=residual_variances,
        singular_values=s,
        residuals=residuals,
    )
