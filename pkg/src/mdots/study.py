"""Replicate studies: seed policy, worker pool, reference solutions, statistics."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .evolution import DeConfig, PenaltySpec, de_minimize, penalized_mdo_objective
from .external import load_external_problem
from .mda import MdaConfig
from .problems import MdoProblem, ReferenceSolution, sellar_problem, toy_problem
from .records import save_run_record
from .thompson import GpConfig, RunConfig, RunRecord, Seeds, convergence_check, run_mdo_ts

__all__ = [
    "ExperimentConfig",
    "VariableStat",
    "StudySummary",
    "replicate_seeds",
    "build_problem",
    "run_config_from",
    "run_replicate",
    "run_study",
    "run_from_record",
    "resolve_reference",
    "summarize",
    "resolve_workers",
]

WORKERS_ENV = "MDOTS_WORKERS"
PATH_SEED_OFFSET = 1_000_000
DE_SEED_OFFSET = 2_000_000


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved settings for a run or a study; everything JSON-friendly."""

    problem: str = "sellar"
    external_cmd: str | None = None
    n_doe: int = 5
    n_iter: int = 10
    repeat: int = 1
    seed: int = 0
    n_features: int = 1000
    mda_tol: float = 1e-2
    mda_max_iterations: int = 100
    reference_tol: float = 1e-10
    out: str = "runs"
    workers: int | None = None
    gp_nugget: float = 1e-7
    gp_restarts: int = 4
    gp_isotropic: bool = False
    de_population: int | None = None
    de_mutation: float = 0.7
    de_crossover: float = 0.9
    de_max_generations: int = 300
    de_window: int = 40
    de_tol: float = 1e-8
    penalty_base: float = 1000.0
    penalty_bound_weight: float = 100.0
    recompute_reference: bool = False

    def __post_init__(self):
        if self.repeat < 1:
            raise ValueError("repeat must be at least 1")
        if self.n_doe < 2:
            raise ValueError("n_doe must be at least 2")
        if self.n_iter < 0:
            raise ValueError("n_iter must be non-negative")


@dataclass
class VariableStat:
    name: str
    reference: float
    mean_converged: float | None
    mean_abs_pct_err: float | None


@dataclass
class StudySummary:
    """Convergence counts and per-variable statistics over converged runs only."""

    problem: str
    n_runs: int
    n_converged: int
    variables: list


def replicate_seeds(seed_base: int, k: int) -> Seeds:
    """Replicate ``k``: DoE stream at base+k, paths and optimizer in offset bands."""
    return Seeds(doe=seed_base + k, paths=seed_base + PATH_SEED_OFFSET + k, de=seed_base + DE_SEED_OFFSET + k)


def build_problem(cfg: ExperimentConfig) -> MdoProblem:
    if cfg.problem == "toy":
        return toy_problem()
    if cfg.problem == "sellar":
        return sellar_problem()
    if cfg.problem == "external":
        if not cfg.external_cmd:
            raise ValueError("problem 'external' requires external_cmd (path to a problem spec)")
        return load_external_problem(cfg.external_cmd)
    raise ValueError(f"unknown problem {cfg.problem!r}")


def run_config_from(cfg: ExperimentConfig, k: int) -> RunConfig:
    return RunConfig(
        n_doe=cfg.n_doe,
        n_iter=cfg.n_iter,
        n_features=cfg.n_features,
        gp=GpConfig(nugget=cfg.gp_nugget, restarts=cfg.gp_restarts, isotropic=cfg.gp_isotropic),
        de=DeConfig(
            population=cfg.de_population,
            mutation=cfg.de_mutation,
            crossover=cfg.de_crossover,
            max_generations=cfg.de_max_generations,
            window=cfg.de_window,
            tol=cfg.de_tol,
        ),
        mda_surrogate=MdaConfig(tolerance=cfg.mda_tol, max_iterations=cfg.mda_max_iterations),
        mda_reference=MdaConfig(tolerance=cfg.reference_tol, max_iterations=500),
        penalty=PenaltySpec(base=cfg.penalty_base, bound_weight=cfg.penalty_bound_weight),
        seeds=replicate_seeds(cfg.seed, k),
    )


def run_replicate(cfg: ExperimentConfig, k: int, out_dir: str | None = None) -> RunRecord:
    """One independent replicate; persists its record when ``out_dir`` is given."""
    problem = build_problem(cfg)
    record = run_mdo_ts(problem, run_config_from(cfg, k), replicate=k, config_echo=asdict(cfg))
    if out_dir is not None:
        save_run_record(record, os.path.join(out_dir, f"run_{k}.ndjson"))
    return record


def run_from_record(record: RunRecord, out_dir: str | None = None) -> RunRecord:
    """Re-launch a run from the config embedded in its record."""
    cfg = ExperimentConfig(**record.config)
    return run_replicate(cfg, record.replicate, out_dir=out_dir)


def resolve_workers(cfg: ExperimentConfig) -> int:
    if cfg.workers is not None:
        return max(1, cfg.workers)
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_study(cfg: ExperimentConfig, out_dir: str | None = None):
    """Run ``repeat`` independent replicates and summarize them.

    Replicates are keyed by index; execution order (and the worker pool
    width) cannot change any record or statistic. A replicate that fails
    outright is warned about and counted as a run that did not converge;
    the study always completes.
    """
    workers = min(resolve_workers(cfg), cfg.repeat)
    failures: dict[int, str] = {}
    records = []
    if workers <= 1:
        for k in range(cfg.repeat):
            try:
                records.append(run_replicate(cfg, k, out_dir))
            except Exception as exc:
                failures[k] = str(exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {k: pool.submit(run_replicate, cfg, k, out_dir) for k in range(cfg.repeat)}
            for k, future in futures.items():
                try:
                    records.append(future.result())
                except Exception as exc:
                    failures[k] = str(exc)
    for k in sorted(failures):
        warnings.warn(f"replicate {k} failed: {failures[k]}", stacklevel=2)
    records.sort(key=lambda r: r.replicate)

    problem = build_problem(cfg)
    reference = resolve_reference(problem, recompute=cfg.recompute_reference, tolerance=cfg.reference_tol)
    summary = summarize(problem, records, reference, tolerance=cfg.reference_tol, n_runs=cfg.repeat)
    return records, summary


def resolve_reference(problem: MdoProblem, recompute: bool = False, tolerance: float = 1e-10) -> ReferenceSolution:
    """Shipped reference optimum, or a fresh exhaustive solve of the true problem."""
    if problem.reference is not None and not recompute:
        return problem.reference
    evaluators = [d.fn for d in problem.disciplines]
    mda_cfg = MdaConfig(tolerance=tolerance, max_iterations=500)
    objective = penalized_mdo_objective(evaluators, problem, PenaltySpec(), mda_cfg)
    de_cfg = DeConfig(max_generations=400, seed=0)
    result = de_minimize(objective, problem.z_bounds, de_cfg, vectorized=True)
    f_true, _ = problem.true_objective(result.z, tolerance=tolerance)
    return ReferenceSolution(z=result.z, objective=float(f_true))


def summarize(
    problem: MdoProblem,
    records,
    reference: ReferenceSolution,
    tolerance: float = 1e-10,
    n_runs: int | None = None,
) -> StudySummary:
    """Apply the relative convergence criterion and average the converged runs.

    ``n_runs`` defaults to the number of records; a study that lost
    replicates to hard failures passes the intended count explicitly.
    """
    z_found = np.empty((len(records), problem.d_z))
    f_found = np.empty(len(records))
    mask = np.zeros(len(records), dtype=bool)
    for i, record in enumerate(records):
        f, _ = problem.true_objective(np.asarray(record.final_z), tolerance=tolerance)
        z_found[i] = record.final_z
        f_found[i] = f
        mask[i] = np.isfinite(f) and convergence_check(reference.objective, f)

    variables = []
    names = [f"z{i + 1}" for i in range(problem.d_z)] + ["objective"]
    refs = list(np.atleast_1d(reference.z)) + [reference.objective]
    values = [z_found[:, i] for i in range(problem.d_z)] + [f_found]
    for name, ref, vals in zip(names, refs, values):
        if mask.any():
            mean = float(vals[mask].mean())
            err = float(np.mean(np.abs(100.0 * (ref - vals[mask]) / ref))) if ref != 0.0 else None
        else:
            mean, err = None, None
        variables.append(VariableStat(name=name, reference=float(ref), mean_converged=mean, mean_abs_pct_err=err))
    return StudySummary(
        problem=problem.problem_id,
        n_runs=len(records) if n_runs is None else n_runs,
        n_converged=int(mask.sum()),
        variables=variables,
    )
