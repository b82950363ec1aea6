"""Exact Gaussian-process regression with a squared-exponential kernel.

Inputs are mapped to the unit box and targets standardized before anything
touches the kernel, so hyperparameters always live in normalized space.
The Cholesky factor of the regularized kernel matrix is cached on the
fitted model; posterior sampling reuses it directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

__all__ = [
    "GpFitError",
    "KernelParams",
    "NormStats",
    "TrainedSurrogate",
    "kernel_eval",
    "kernel_matrix",
    "log_marginal_likelihood",
    "fit",
    "posterior_mean",
    "posterior_variance",
    "prior_surrogate",
]

# Box for length scales and signal variance during hyperparameter search.
HYPER_BOUNDS = (1e-2, 1e2)
# Nugget escalation stops here; beyond it the fit is declared broken.
NUGGET_CEILING = 1e-3
# Training inputs closer than this (normalized space) are merged.
DUPLICATE_TOL = 1e-10

DEFAULT_NUGGET = 1e-7
DEFAULT_RESTARTS = 4


class GpFitError(RuntimeError):
    """Kernel matrix could not be factorized, even with an escalated nugget."""


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential hyperparameters, one length scale per input dimension."""

    length_scales: np.ndarray
    signal_variance: float
    nugget: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        if not np.all(ls > 0.0):
            raise ValueError("length scales must be strictly positive")
        if not self.signal_variance > 0.0:
            raise ValueError("signal variance must be strictly positive")
        if not self.nugget > 0.0:
            raise ValueError("nugget must be strictly positive")

    @property
    def dim(self) -> int:
        return self.length_scales.size


@dataclass(frozen=True)
class NormStats:
    """Affine input/output transforms applied before fitting."""

    input_shift: np.ndarray
    input_scale: np.ndarray
    output_mean: float
    output_std: float

    def normalize_inputs(self, X: np.ndarray) -> np.ndarray:
        return (X - self.input_shift) / self.input_scale

    @staticmethod
    def identity(dim: int) -> "NormStats":
        return NormStats(np.zeros(dim), np.ones(dim), 0.0, 1.0)


@dataclass(frozen=True)
class TrainedSurrogate:
    """A fitted GP for one scalar output.

    ``chol`` is the lower Cholesky factor of K + nugget*I in normalized
    space and ``alpha`` the cached solve of that system against the
    standardized targets.
    """

    X: np.ndarray
    y: np.ndarray
    params: KernelParams
    chol: np.ndarray
    alpha: np.ndarray
    norm: NormStats
    X_norm: np.ndarray
    y_std: np.ndarray

    @property
    def n(self) -> int:
        return self.X_norm.shape[0]

    @property
    def dim(self) -> int:
        return self.params.dim


def _as_batch(x, dim: int):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {arr.shape[1]}")
    return arr, single


def kernel_eval(params: KernelParams, x, xp) -> float:
    """Evaluate k(x, x') for single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    if x.size != xp.size or x.size != params.dim:
        raise ValueError("dimension mismatch between points and length scales")
    r = (x - xp) / params.length_scales
    return float(params.signal_variance * np.exp(-0.5 * np.dot(r, r)))


def kernel_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cross-covariance matrix between row sets A (n,d) and B (m,d), no nugget."""
    diff = (A[:, None, :] - B[None, :, :]) / params.length_scales
    return params.signal_variance * np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff))


def _solve_chol(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    w = linalg.solve_triangular(L, b, lower=True)
    return linalg.solve_triangular(L.T, w, lower=False)


def log_marginal_likelihood(params: KernelParams, X_norm: np.ndarray, y_std: np.ndarray) -> float:
    """Gaussian log marginal likelihood of standardized targets under ``params``."""
    X_norm = np.atleast_2d(np.asarray(X_norm, dtype=float))
    y_std = np.asarray(y_std, dtype=float).ravel()
    K = kernel_matrix(params, X_norm, X_norm)
    K[np.diag_indices_from(K)] += params.nugget
    L = np.linalg.cholesky(K)  # raises LinAlgError if not positive definite
    alpha = _solve_chol(L, y_std)
    n = y_std.size
    return float(-0.5 * y_std @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2.0 * np.pi))


def _norm_stats(X: np.ndarray, y: np.ndarray) -> NormStats:
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span = np.where(span > 0.0, span, 1.0)
    std = float(y.std())
    if std <= 0.0:
        std = 1.0
    return NormStats(lo, span, float(y.mean()), std)


def _dedup_keep_latest(X_norm: np.ndarray) -> np.ndarray:
    """Indices surviving the merge of near-identical rows; later rows win."""
    n = X_norm.shape[0]
    keep = []
    for i in range(n):
        d = np.abs(X_norm[i + 1 :] - X_norm[i]).max(axis=1) if i + 1 < n else np.empty(0)
        if not np.any(d < DUPLICATE_TOL):
            keep.append(i)
    return np.asarray(keep, dtype=int)


def _chol_with_escalation(params: KernelParams, X_norm: np.ndarray):
    """Factorize K + nugget*I, escalating the nugget by decades if needed."""
    K = kernel_matrix(params, X_norm, X_norm)
    nugget = params.nugget
    while True:
        try:
            Kn = K.copy()
            Kn[np.diag_indices_from(Kn)] += nugget
            L = np.linalg.cholesky(Kn)
            if nugget != params.nugget:
                params = KernelParams(params.length_scales, params.signal_variance, nugget)
            return L, params
        except np.linalg.LinAlgError:
            if nugget >= NUGGET_CEILING:
                raise GpFitError(
                    f"Cholesky failed with nugget {nugget:g} "
                    f"(condition estimate {np.linalg.cond(K):.3e})"
                ) from None
            nugget = min(nugget * 10.0, NUGGET_CEILING)


def _theta_to_params(theta: np.ndarray, dim: int, isotropic: bool, nugget: float) -> KernelParams:
    scales = np.exp(theta[:-1])
    if isotropic:
        scales = np.full(dim, scales[0])
    return KernelParams(scales, float(np.exp(theta[-1])), nugget)


def _neg_lml_and_grad(theta, X_norm, y_std, dim, isotropic, nugget):
    """Negative log marginal likelihood and its gradient in log-parameter space.

    Analytic gradients keep the quasi-Newton search stable on the flat
    ridges this likelihood develops for smooth data.
    """
    params = _theta_to_params(theta, dim, isotropic, nugget)
    n = y_std.size
    diff = X_norm[:, None, :] - X_norm[None, :, :]
    scaled_sq = (diff / params.length_scales) ** 2
    K_nl = params.signal_variance * np.exp(-0.5 * scaled_sq.sum(axis=-1))
    K = K_nl + nugget * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = _solve_chol(L, y_std)
    lml = -0.5 * y_std @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2.0 * np.pi)
    # d lml / d theta_j = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta_j)
    W = np.outer(alpha, alpha) - _solve_chol(L, np.eye(n))
    grad_log_sv = 0.5 * np.sum(W * K_nl)
    per_dim = 0.5 * np.einsum("ij,ij,ijd->d", W, K_nl, scaled_sq)
    grad_scales = np.array([per_dim.sum()]) if isotropic else per_dim
    grad = np.concatenate([grad_scales, [grad_log_sv]])
    return -float(lml), -grad


def fit(
    X,
    y,
    *,
    nugget: float = DEFAULT_NUGGET,
    restarts: int = DEFAULT_RESTARTS,
    rng=None,
    isotropic: bool = False,
    warm_start: KernelParams | None = None,
) -> TrainedSurrogate:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    The search is a bounded L-BFGS-B run in log space, started at unit
    length scales and unit signal variance plus ``restarts`` random
    restarts drawn from ``rng`` (and at ``warm_start`` when given). The
    nugget is held fixed unless Cholesky failures force escalation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValueError("X and y disagree on the number of points")
    if X.shape[0] < 2:
        raise ValueError("need at least two training points")
    rng = np.random.default_rng(rng)

    norm = _norm_stats(X, y)
    X_norm = norm.normalize_inputs(X)
    keep = _dedup_keep_latest(X_norm)
    X, X_norm, y = X[keep], X_norm[keep], y[keep]
    y_std = (y - norm.output_mean) / norm.output_std

    dim = X.shape[1]
    n_theta = (1 if isotropic else dim) + 1
    lo, hi = np.log(HYPER_BOUNDS[0]), np.log(HYPER_BOUNDS[1])

    starts = []
    if warm_start is not None:
        ls = warm_start.length_scales[:1] if isotropic else warm_start.length_scales
        starts.append(np.clip(np.log(np.append(ls, warm_start.signal_variance)), lo, hi))
    starts.append(np.zeros(n_theta))
    starts.extend(rng.uniform(lo, hi, size=n_theta) for _ in range(restarts))

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        res = optimize.minimize(
            _neg_lml_and_grad,
            theta0,
            args=(X_norm, y_std, dim, isotropic, nugget),
            method="L-BFGS-B",
            jac=True,
            bounds=[(lo, hi)] * n_theta,
            options={"ftol": 1e-13, "gtol": 1e-9, "maxiter": 500},
        )
        if res.fun < best_val:
            best_theta, best_val = res.x, res.fun

    params = _theta_to_params(best_theta, dim, isotropic, nugget)
    L, params = _chol_with_escalation(params, X_norm)
    alpha = _solve_chol(L, y_std)
    for arr in (X, y, L, alpha, X_norm, y_std):
        arr.setflags(write=False)
    return TrainedSurrogate(X=X, y=y, params=params, chol=L, alpha=alpha, norm=norm, X_norm=X_norm, y_std=y_std)


def prior_surrogate(params: KernelParams, dim: int) -> TrainedSurrogate:
    """A data-free surrogate (identity normalization); posterior equals the prior."""
    if params.dim != dim:
        raise ValueError("params dimension disagrees with dim")
    empty2 = np.empty((0, dim))
    empty1 = np.empty(0)
    return TrainedSurrogate(
        X=empty2,
        y=empty1,
        params=params,
        chol=np.empty((0, 0)),
        alpha=empty1,
        norm=NormStats.identity(dim),
        X_norm=empty2,
        y_std=empty1,
    )


def posterior_mean(s: TrainedSurrogate, x):
    """Posterior mean at ``x`` in raw output units; accepts a point or a batch."""
    Xq, single = _as_batch(x, s.dim)
    Xqn = s.norm.normalize_inputs(Xq)
    if s.n == 0:
        m = np.zeros(Xq.shape[0])
    else:
        m = kernel_matrix(s.params, Xqn, s.X_norm) @ s.alpha
    out = s.norm.output_mean + s.norm.output_std * m
    return float(out[0]) if single else out


def posterior_variance(s: TrainedSurrogate, x):
    """Posterior variance at ``x`` in raw output units, clamped at zero."""
    Xq, single = _as_batch(x, s.dim)
    Xqn = s.norm.normalize_inputs(Xq)
    prior_var = np.full(Xq.shape[0], s.params.signal_variance)
    if s.n == 0:
        var = prior_var
    else:
        Kxs = kernel_matrix(s.params, Xqn, s.X_norm)
        w = linalg.solve_triangular(s.chol, Kxs.T, lower=True)
        var = prior_var - np.einsum("ij,ij->j", w, w)
    out = np.maximum(var, 0.0) * s.norm.output_std**2
    return float(out[0]) if single else out
