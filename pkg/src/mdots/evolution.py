"""Differential evolution over the design box, plus the penalized coupled objective.

The optimizer is rand/1/bin with binomial crossover, reflection at box
faces and generation-level (deferred) selection, so a whole trial
population can be scored in one vectorized call. A candidate's score comes
from solving the coupled system on whatever evaluators the caller supplies
(true disciplines, posterior means or path samples); non-convergence and
coupling-bound violations turn into additive penalties rather than errors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mda import MdaConfig, MdaStatus, solve_batch
from .problems import MdoProblem, lhs

__all__ = ["DeConfig", "PenaltySpec", "DeResult", "de_minimize", "penalized_mdo_objective"]


@dataclass(frozen=True)
class DeConfig:
    """Differential evolution settings; ``population=None`` means max(15*d, 30)."""

    population: int | None = None
    mutation: float = 0.7
    crossover: float = 0.9
    max_generations: int = 300
    window: int = 40
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise ValueError("population must be at least 4")
        if not (0.0 < self.mutation <= 2.0):
            raise ValueError("mutation factor must be in (0, 2]")
        if not (0.0 <= self.crossover <= 1.0):
            raise ValueError("crossover rate must be in [0, 1]")
        if self.max_generations < 1 or self.window < 1:
            raise ValueError("max_generations and window must be positive")


@dataclass(frozen=True)
class PenaltySpec:
    """Additive penalty for unconverged solves and coupling-bound violations."""

    base: float = 1000.0
    bound_weight: float = 100.0

    def __post_init__(self):
        if not self.base > 0.0:
            raise ValueError("base penalty must be positive")
        if self.bound_weight < 0.0:
            raise ValueError("bound weight must be non-negative")


@dataclass
class DeResult:
    z: np.ndarray
    value: float
    history: np.ndarray  # best value after each generation (index 0 = initial population)
    generations: int
    evaluations: int


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # Fold back at the faces; repeat for large excursions, clip as a last resort.
    for _ in range(8):
        below, above = x < lo, x > hi
        if not (below.any() or above.any()):
            return x
        x = np.where(below, 2.0 * lo - x, x)
        x = np.where(above, 2.0 * hi - x, x)
    return np.clip(x, lo, hi)


def _scores(objective, pop: np.ndarray, vectorized: bool) -> np.ndarray:
    if vectorized:
        vals = np.asarray(objective(pop), dtype=float)
    else:
        vals = np.array([float(objective(row)) for row in pop])
    return np.where(np.isfinite(vals), vals, np.inf)


def de_minimize(objective, bounds, cfg: DeConfig, vectorized: bool = False) -> DeResult:
    """Minimize over a box; deterministic given the config seed.

    Stops after ``max_generations`` or once the best value has improved by
    less than ``tol`` over the last ``window`` generations. Non-finite
    objective values are treated as +inf.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or not np.all(np.isfinite(bounds)):
        raise ValueError("bounds must be a finite (d, 2) box")
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = bounds.shape[0]
    n_pop = cfg.population or max(15 * d, 30)
    rng = np.random.default_rng(cfg.seed)

    pop = lhs(bounds, n_pop, rng)
    vals = _scores(objective, pop, vectorized)
    evaluations = n_pop
    history = [float(vals.min())]

    generations = 0
    for _ in range(cfg.max_generations):
        generations += 1
        trials = np.empty_like(pop)
        for i in range(n_pop):
            pick = rng.choice(n_pop - 1, size=3, replace=False)
            pick[pick >= i] += 1
            mutant = pop[pick[0]] + cfg.mutation * (pop[pick[1]] - pop[pick[2]])
            mutant = _reflect(mutant, lo, hi)
            cross = rng.random(d) < cfg.crossover
            cross[rng.integers(d)] = True
            trials[i] = np.where(cross, mutant, pop[i])
        trial_vals = _scores(objective, trials, vectorized)
        evaluations += n_pop
        better = trial_vals <= vals
        pop[better] = trials[better]
        vals[better] = trial_vals[better]
        history.append(float(vals.min()))
        if len(history) > cfg.window and history[-1 - cfg.window] - history[-1] < cfg.tol:
            break

    best = int(np.argmin(vals))
    return DeResult(
        z=pop[best].copy(),
        value=float(vals[best]),
        history=np.asarray(history),
        generations=generations,
        evaluations=evaluations,
    )


def penalized_mdo_objective(evaluators, problem: MdoProblem, penalty: PenaltySpec, mda_cfg: MdaConfig):
    """Wrap per-discipline evaluators into a design-space objective.

    For each candidate the coupled system is solved from the coupling-box
    midpoint. Converged, in-bounds solutions score the plain objective;
    converged out-of-bounds ones add ``base`` plus weighted relative
    violations; unconverged ones score ``base`` plus the objective at the
    last iterate when that is finite. Anything non-finite becomes +inf.

    The returned callable accepts one design point ``(d_z,)`` or a batch
    ``(n, d_z)``.
    """
    if len(evaluators) != problem.n_disciplines:
        raise ValueError("one evaluator per discipline is required")
    disciplines = tuple(replace(d, fn=e) for d, e in zip(problem.disciplines, evaluators))
    lo, hi = problem.y_bounds[:, 0], problem.y_bounds[:, 1]
    width = hi - lo
    midpoint = problem.y_midpoint()

    def objective(z):
        Z = np.asarray(z, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        res = solve_batch(disciplines, Z, np.tile(midpoint, (Z.shape[0], 1)), mda_cfg)
        with np.errstate(all="ignore"):
            f = np.asarray(problem.objective(Z, res.y), dtype=float)
        viol = (np.maximum(lo - res.y, 0.0) + np.maximum(res.y - hi, 0.0)) / width
        viol = viol.sum(axis=1)
        in_bounds = np.all((res.y >= lo) & (res.y <= hi), axis=1)
        converged = res.status == int(MdaStatus.CONVERGED)
        f_fallback = np.where(np.isfinite(f), f, 0.0)

        value = np.where(
            converged & in_bounds,
            f,
            np.where(converged, f + penalty.base + penalty.bound_weight * viol, penalty.base + f_fallback),
        )
        value = np.where(np.isfinite(value), value, np.inf)
        return float(value[0]) if single else value

    return objective
