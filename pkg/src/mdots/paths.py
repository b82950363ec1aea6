"""Approximate posterior sample paths: random Fourier features plus an exact update.

A draw is a continuous, deterministic function cheap enough to sit inside an
iterative coupled solve: a cosine expansion of the prior (frequencies from the
kernel's spectral density) corrected by a kernel-weighted residual term that
pins the path to the training data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .gp import KernelParams, TrainedSurrogate, kernel_matrix

__all__ = ["FeatureMap", "PathSample", "sample_feature_map", "draw_path", "eval_path"]

DEFAULT_FEATURES = 1000


@dataclass(frozen=True)
class FeatureMap:
    """Cosine basis for one prior draw: frequencies, phases, weights, amplitude."""

    thetas: np.ndarray  # (n_features, dim)
    taus: np.ndarray  # (n_features,)
    weights: np.ndarray  # (n_features,)
    amplitude: float

    @property
    def n_features(self) -> int:
        return self.taus.size


@dataclass(frozen=True)
class PathSample:
    """One posterior draw; evaluation is pure and reproducible from (seed, surrogate)."""

    features: FeatureMap
    update_coeffs: np.ndarray
    anchor: TrainedSurrogate


def sample_feature_map(params: KernelParams, dim: int, n_features: int = DEFAULT_FEATURES, rng=None) -> FeatureMap:
    """Draw RFF frequencies/phases/weights for the squared-exponential kernel.

    Frequencies are independent normals with per-dimension standard
    deviation 1/length_scale (the kernel's spectral density in normalized
    input space).
    """
    if n_features < 1:
        raise ValueError("need at least one basis function")
    if params.dim != dim:
        raise ValueError("params dimension disagrees with dim")
    rng = np.random.default_rng(rng)
    thetas = rng.standard_normal((n_features, dim)) / params.length_scales
    taus = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    weights = rng.standard_normal(n_features)
    amplitude = float(np.sqrt(params.signal_variance) * np.sqrt(2.0 / n_features))
    for arr in (thetas, taus, weights):
        arr.setflags(write=False)
    return FeatureMap(thetas=thetas, taus=taus, weights=weights, amplitude=amplitude)


def _prior_values(fm: FeatureMap, X_norm: np.ndarray) -> np.ndarray:
    return fm.amplitude * (np.cos(X_norm @ fm.thetas.T + fm.taus) @ fm.weights)


def draw_path(surrogate: TrainedSurrogate, n_features: int = DEFAULT_FEATURES, rng=None) -> PathSample:
    """Draw one approximate posterior path from a fitted surrogate.

    Consumes the stream in a fixed order (frequencies, phases, weights,
    then the noise variates of the exact update), so a seed fully
    determines the path.
    """
    rng = np.random.default_rng(rng)
    fm = sample_feature_map(surrogate.params, surrogate.dim, n_features, rng)
    if surrogate.n:
        eps = rng.standard_normal(surrogate.n) * np.sqrt(surrogate.params.nugget)
        resid = surrogate.y_std - _prior_values(fm, surrogate.X_norm) - eps
        w = linalg.solve_triangular(surrogate.chol, resid, lower=True)
        v = linalg.solve_triangular(surrogate.chol.T, w, lower=False)
    else:
        v = np.empty(0)
    v.setflags(write=False)
    return PathSample(features=fm, update_coeffs=v, anchor=surrogate)


def eval_path(path: PathSample, x):
    """Evaluate the path at a point (d,) or batch (n, d); raw output units."""
    s = path.anchor
    Xq = np.asarray(x, dtype=float)
    single = Xq.ndim == 1
    Xq = np.atleast_2d(Xq)
    if Xq.shape[1] != s.dim:
        raise ValueError(f"expected points of dimension {s.dim}, got {Xq.shape[1]}")
    Xqn = s.norm.normalize_inputs(Xq)
    vals = _prior_values(path.features, Xqn)
    if path.update_coeffs.size:
        vals = vals + kernel_matrix(s.params, Xqn, s.X_norm) @ path.update_coeffs
    out = s.norm.output_mean + s.norm.output_std * vals
    return float(out[0]) if single else out
