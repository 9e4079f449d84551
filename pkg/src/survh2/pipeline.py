"""End-to-end fits: censored heritability and the liability baseline.

This is the library face of the whole estimator: given an opened
genotype source with partitions assigned, aligned follow-up times and
event indicators, and a covariate basis, it runs censoring fit ->
synthetic decomposition -> moment accumulation -> system assembly ->
solve -> heritability conversion, honoring one FitConfig.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .censoring import (
    SyntheticDecomposition,
    build_synthetic_arrays,
    fit_censoring_arrays,
)
from .errors import InputFormatError, NumericalError
from .estimator import (
    HeritabilityReport,
    lt_convert_report,
    solve_components,
    to_heritability,
)
from .genotype import GenotypeSource, assign_jackknife_blocks
from .moments import (
    DEFAULT_MEMORY_BUDGET,
    accumulate,
    assemble_system,
    exact_system,
    make_probes,
)
from .projection import CovariateBasis

__all__ = [
    "FitConfig",
    "FitResult",
    "LtBaselineResult",
    "fit_censored_heritability",
    "fit_lt_baseline",
]

MEMORY_BUDGET_ENV = "SURVH2_MEMORY_BUDGET"
SCRATCH_DIR_ENV = "SURVH2_SCRATCH_DIR"


@dataclass(frozen=True)
class FitConfig:
    """Tuning knobs for one fit; defaults follow the method's own.

    ``memory_budget`` and ``scratch_dir`` fall back to the environment
    variables SURVH2_MEMORY_BUDGET / SURVH2_SCRATCH_DIR when unset.
    """

    b_probes: int = 10
    j_blocks: int = 100
    seed: int = 1
    exact_trace: bool = False
    cap: float | None = None
    jackknife_scheme: str = "within-partition"
    memory_budget: int | None = None
    scratch_dir: str | None = None
    keep_scratch: bool = False

    def resolved_memory_budget(self) -> int:
        if self.memory_budget is not None:
            return int(self.memory_budget)
        env = os.environ.get(MEMORY_BUDGET_ENV)
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise InputFormatError(
                    f"{MEMORY_BUDGET_ENV} must be an integer byte count, got {env!r}"
                )
        return DEFAULT_MEMORY_BUDGET

    def resolved_scratch_dir(self) -> str | None:
        if self.scratch_dir is not None:
            return self.scratch_dir
        return os.environ.get(SCRATCH_DIR_ENV)


@dataclass(frozen=True)
class FitResult:
    """A heritability report plus the run facts the report depends on."""

    report: HeritabilityReport
    censored_fraction: float
    n_subjects: int
    m_k: np.ndarray
    b_probes: int
    j_blocks: int
    seed: int
    mode: str

    @property
    def n_partitions(self) -> int:
        return int(self.m_k.size)


@dataclass(frozen=True)
class LtBaselineResult:
    """Liability-threshold baseline: observed-scale fit plus conversion."""

    observed: FitResult
    liability: HeritabilityReport
    censored_fraction: float


def _validate_fit_inputs(
    source: GenotypeSource,
    basis: CovariateBasis,
    times: np.ndarray,
    status: np.ndarray,
) -> tuple:
    if source.partitions is None:
        raise InputFormatError("assign partitions before fitting")
    n = source.n_subjects
    times = np.asarray(times, dtype=float)
    status = np.asarray(status)
    if times.shape != (n,) or status.shape != (n,):
        raise InputFormatError(
            f"phenotype length mismatch: genotypes have {n} subjects, "
            f"got {times.shape[0]} times and {status.shape[0]} status values"
        )
    if not np.isfinite(times).all():
        raise InputFormatError("non-finite follow-up times")
    uniq = np.unique(status)
    if not np.isin(uniq, (0, 1)).all():
        raise InputFormatError(
            f"status must be 0 (censored) or 1 (event), got values {uniq.tolist()}"
        )
    if basis.n != n:
        raise InputFormatError("covariate rows do not match genotype subjects")
    return times, status.astype(float)


def _run_moments(
    source: GenotypeSource,
    basis: CovariateBasis,
    syn: SyntheticDecomposition,
    config: FitConfig,
):
    source = assign_jackknife_blocks(
        source, config.j_blocks, scheme=config.jackknife_scheme
    )
    if config.exact_trace:
        return exact_system(source, basis, syn), "exact"
    probes = make_probes(source.n_subjects, config.b_probes, basis, syn.d, config.seed)
    arr = accumulate(
        source,
        basis,
        syn,
        probes,
        memory_budget=config.resolved_memory_budget(),
        scratch_dir=config.resolved_scratch_dir(),
        keep_scratch=config.keep_scratch,
    )
    try:
        system = assemble_system(arr, syn, basis, probes)
    finally:
        arr.close()
    return system, "randomized"


def fit_censored_heritability(
    source: GenotypeSource,
    basis: CovariateBasis,
    times: np.ndarray,
    status: np.ndarray,
    config: FitConfig | None = None,
) -> FitResult:
    """Estimate total and partitioned heritability of a censored trait.

    ``times`` are log follow-up times aligned to the genotype subject
    order; ``status`` is 1 for an observed event, 0 for censored. The
    censoring distribution is fit by Kaplan-Meier on the flipped
    indicator, the synthetic first/second moments replace the trait, and
    the moment system is solved with block-jackknife replicates.
    """
    config = config or FitConfig()
    times, status = _validate_fit_inputs(source, basis, times, status)
    g = fit_censoring_arrays(times, status, cap=config.cap)
    syn = build_synthetic_arrays(times, g)
    system, mode = _run_moments(source, basis, syn, config)
    report = to_heritability(solve_components(system))
    return FitResult(
        report=report,
        censored_fraction=float(1.0 - status.mean()),
        n_subjects=source.n_subjects,
        m_k=system.m_k.copy(),
        b_probes=config.b_probes,
        j_blocks=config.j_blocks,
        seed=config.seed,
        mode=mode,
    )


def fit_lt_baseline(
    source: GenotypeSource,
    basis: CovariateBasis,
    status: np.ndarray,
    config: FitConfig | None = None,
) -> LtBaselineResult:
    """Heritability of the event indicator, rescaled to liability.

    Treats the binary status itself as the trait (first moment delta,
    second moment delta squared, empty diagonal), runs the identical
    moments pipeline, then applies the threshold-model conversion at the
    observed censored fraction.
    """
    config = config or FitConfig()
    n = source.n_subjects
    _, status = _validate_fit_inputs(source, basis, np.zeros(n), status)
    censored = float(1.0 - status.mean())
    if not 0.0 < censored < 1.0:
        raise NumericalError(
            f"status indicator is constant (censored fraction {censored}); "
            "the liability baseline is undefined"
        )
    syn = SyntheticDecomposition(y1=status, y2=status * status, d=np.zeros(n))
    system, mode = _run_moments(source, basis, syn, config)
    report = to_heritability(solve_components(system))
    observed = FitResult(
        report=report,
        censored_fraction=censored,
        n_subjects=n,
        m_k=system.m_k.copy(),
        b_probes=config.b_probes,
        j_blocks=config.j_blocks,
        seed=config.seed,
        mode=mode,
    )
    return LtBaselineResult(
        observed=observed,
        liability=lt_convert_report(report, censored),
        censored_fraction=censored,
    )
