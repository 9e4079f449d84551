"""SNP heritability for right-censored survival traits.

Method-of-moments variance components with a Kaplan-Meier plug-in for
the censoring distribution, randomized trace estimation over streamed
bit-packed genotypes, and block-jackknife standard errors.
"""

from .censoring import (
    CensoredSample,
    CensoringCdf,
    SyntheticDecomposition,
    build_synthetic,
    build_synthetic_arrays,
    default_cap,
    fit_censoring_arrays,
    fit_censoring_cdf,
    synthetic_first,
    synthetic_second,
)
from .errors import InputFormatError, NumericalError, SurvH2Error
from .estimator import (
    ComponentSolution,
    HeritabilityReport,
    VarianceComponents,
    jackknife_se,
    lt_convert,
    lt_convert_report,
    solve_components,
    to_heritability,
)
from .genotype import (
    GenotypeSource,
    PartitionScheme,
    assign_jackknife_blocks,
    assign_partitions,
    open_genotypes,
    write_plink,
)
from .moments import (
    NormalEquationSystem,
    accumulate,
    assemble_system,
    exact_system,
    make_probes,
)
from .pipeline import (
    FitConfig,
    FitResult,
    LtBaselineResult,
    fit_censored_heritability,
    fit_lt_baseline,
)
from .projection import CovariateBasis, build_basis, empty_basis
from .simulate import (
    ArchitectureSpec,
    CensoringResult,
    calibrate_censoring,
    simulate_covariates,
    simulate_genotypes,
    simulate_phenotypes_correct,
    simulate_phenotypes_misspec,
)

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "CensoredSample",
    "CensoringCdf",
    "CensoringResult",
    "ComponentSolution",
    "CovariateBasis",
    "FitConfig",
    "FitResult",
    "GenotypeSource",
    "HeritabilityReport",
    "InputFormatError",
    "LtBaselineResult",
    "NormalEquationSystem",
    "NumericalError",
    "PartitionScheme",
    "SurvH2Error",
    "SyntheticDecomposition",
    "VarianceComponents",
    "accumulate",
    "assemble_system",
    "assign_jackknife_blocks",
    "assign_partitions",
    "build_basis",
    "build_synthetic",
    "build_synthetic_arrays",
    "calibrate_censoring",
    "default_cap",
    "empty_basis",
    "exact_system",
    "fit_censored_heritability",
    "fit_censoring_arrays",
    "fit_censoring_cdf",
    "fit_lt_baseline",
    "jackknife_se",
    "lt_convert",
    "lt_convert_report",
    "make_probes",
    "open_genotypes",
    "simulate_covariates",
    "simulate_genotypes",
    "simulate_phenotypes_correct",
    "simulate_phenotypes_misspec",
    "solve_components",
    "synthetic_first",
    "synthetic_second",
    "to_heritability",
    "write_plink",
]
