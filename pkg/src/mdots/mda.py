"""Fixed-point solution of coupled disciplines by Gauss-Seidel sweeps.

Convergence is accelerated with dynamic (Aitken delta-squared) relaxation.
The engine is batch-first: many design points share one sweep loop, each
candidate carrying its own coupling state, relaxation factor and status.
Non-convergence and evaluator failures are reported as data so callers can
penalize instead of aborting.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DisciplineFailure",
    "MdaStatus",
    "MdaConfig",
    "CouplingState",
    "BatchCouplingResult",
    "aitken_update",
    "gauss_seidel_solve",
    "solve_batch",
    "initial_coupling_guess",
]

RESIDUAL_FLOOR = 1e-12


class DisciplineFailure(RuntimeError):
    """An evaluator could not produce an output (crash, bad input, remote error)."""

    def __init__(self, message: str, kind: str = "evaluator"):
        super().__init__(message)
        self.kind = kind


class MdaStatus(enum.IntEnum):
    CONVERGED = 0
    MAX_ITERATIONS = 1
    EVALUATOR_FAILURE = 2

    def __str__(self) -> str:  # stable names for records
        return self.name.lower()


@dataclass(frozen=True)
class MdaConfig:
    """Tolerances and relaxation settings for one coupled solve."""

    tolerance: float = 1e-10
    max_iterations: int = 200
    aitken: bool = True
    omega_init: float = 0.5
    omega_min: float = 0.05
    omega_max: float = 2.0
    initial_guess: str = "midpoint"

    def __post_init__(self):
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not (0.0 < self.omega_min <= self.omega_max <= 2.0):
            raise ValueError("relaxation bounds must satisfy 0 < omega_min <= omega_max <= 2")
        if self.initial_guess not in ("midpoint", "zero"):
            raise ValueError("initial_guess must be 'midpoint' or 'zero'")


@dataclass
class CouplingState:
    """Result of one coupled solve: coupling vector, status and diagnostics."""

    y: np.ndarray
    status: MdaStatus
    iterations: int
    residual: float
    failure: str | None = None


@dataclass
class BatchCouplingResult:
    """Per-candidate coupling vectors and statuses for a batch of design points."""

    y: np.ndarray  # (n, d_y)
    status: np.ndarray  # (n,) of MdaStatus codes
    iterations: np.ndarray  # (n,)
    residual: np.ndarray  # (n,)
    failure: str | None = None


def aitken_update(omega_prev: float, delta_prev, delta_curr, bounds=(0.05, 2.0)) -> float:
    """Next relaxation factor from two consecutive sweep updates.

    Degenerate updates (identical consecutive deltas) keep the previous
    factor; the result is always clamped into ``bounds``.
    """
    delta_prev = np.asarray(delta_prev, dtype=float).ravel()
    delta_curr = np.asarray(delta_curr, dtype=float).ravel()
    diff = delta_curr - delta_prev
    denom = float(diff @ diff)
    if denom <= 0.0:
        omega = omega_prev
    else:
        omega = -omega_prev * float(delta_prev @ diff) / denom
    return float(np.clip(omega, bounds[0], bounds[1]))


def initial_coupling_guess(y_bounds: np.ndarray, policy: str = "midpoint") -> np.ndarray:
    y_bounds = np.asarray(y_bounds, dtype=float)
    if policy == "midpoint":
        return 0.5 * (y_bounds[:, 0] + y_bounds[:, 1])
    if policy == "zero":
        return np.zeros(y_bounds.shape[0])
    raise ValueError(f"unknown initial guess policy {policy!r}")


def solve_batch(disciplines, Z: np.ndarray, y0: np.ndarray, cfg: MdaConfig) -> BatchCouplingResult:
    """Run Gauss-Seidel sweeps for a batch of design points simultaneously.

    Each sweep evaluates the disciplines in order, every discipline seeing
    the freshest values produced earlier in the same sweep. The full sweep
    update is then relaxed per candidate. Candidates leave the active set
    when their maximum relative component change drops below the tolerance,
    when an evaluator returns a non-finite output (EVALUATOR_FAILURE, the
    last valid iterate is kept) or when the sweep budget runs out.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = Z.shape[0]
    y = np.array(np.atleast_2d(np.asarray(y0, dtype=float)), copy=True)
    if y.shape[0] == 1 and n > 1:
        y = np.repeat(y, n, axis=0)
    if y.shape[0] != n:
        raise ValueError("y0 and Z disagree on batch size")

    status = np.full(n, int(MdaStatus.MAX_ITERATIONS))
    iterations = np.full(n, cfg.max_iterations)
    residual = np.full(n, np.inf)
    omega = np.full(n, cfg.omega_init if cfg.aitken else 1.0)
    delta_prev = np.zeros_like(y)
    has_prev = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    failure_note = None

    for sweep in range(1, cfg.max_iterations + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        y_act = y[idx]
        y_new = y_act.copy()
        failed = np.zeros(idx.size, dtype=bool)
        for disc in disciplines:
            try:
                with np.errstate(all="ignore"):
                    out = np.asarray(disc.fn(Z[idx], y_new[:, disc.consumes]), dtype=float)
            except DisciplineFailure as exc:
                failed[:] = True
                failure_note = failure_note or f"discipline {disc.name!r}: {exc}"
                break
            out = out.reshape(idx.size, disc.produces.size)
            bad = ~np.isfinite(out).all(axis=1)
            if bad.any():
                failed |= bad
                failure_note = failure_note or f"discipline {disc.name!r} returned non-finite output"
            y_new[:, disc.produces] = out

        if failed.any():
            fidx = idx[failed]
            status[fidx] = int(MdaStatus.EVALUATOR_FAILURE)
            iterations[fidx] = sweep
            active[fidx] = False
            ok = ~failed
            idx, y_act, y_new = idx[ok], y_act[ok], y_new[ok]
            if idx.size == 0:
                continue

        delta = y_new - y_act
        if cfg.aitken:
            prev_ok = has_prev[idx]
            if prev_ok.any():
                diff = delta[prev_ok] - delta_prev[idx[prev_ok]]
                denom = np.einsum("ij,ij->i", diff, diff)
                num = np.einsum("ij,ij->i", delta_prev[idx[prev_ok]], diff)
                w = omega[idx[prev_ok]]
                w_new = np.where(denom > 0.0, -w * np.divide(num, denom, out=np.zeros_like(num), where=denom > 0.0), w)
                omega[idx[prev_ok]] = np.clip(w_new, cfg.omega_min, cfg.omega_max)
        applied = omega[idx, None] * delta
        y_next = y_act + applied
        res = np.abs(applied) / np.maximum(np.abs(y_next), RESIDUAL_FLOOR)
        res = res.max(axis=1)

        y[idx] = y_next
        delta_prev[idx] = delta
        has_prev[idx] = True
        residual[idx] = res
        done = res <= cfg.tolerance
        didx = idx[done]
        status[didx] = int(MdaStatus.CONVERGED)
        iterations[didx] = sweep
        active[didx] = False

    return BatchCouplingResult(y=y, status=status, iterations=iterations, residual=residual, failure=failure_note)


def gauss_seidel_solve(disciplines, z, y0, cfg: MdaConfig) -> CouplingState:
    """Solve the coupled system for a single design point."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    res = solve_batch(disciplines, z[None, :], np.asarray(y0, dtype=float)[None, :], cfg)
    return CouplingState(
        y=res.y[0],
        status=MdaStatus(int(res.status[0])),
        iterations=int(res.iterations[0]),
        residual=float(res.residual[0]),
        failure=res.failure,
    )
