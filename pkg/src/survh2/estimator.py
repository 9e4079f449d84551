"""Solving the moment systems and converting to heritability scale."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.stats import norm

from .errors import NumericalError
from .moments import NormalEquationSystem

__all__ = [
    "VarianceComponents",
    "ComponentSolution",
    "HeritabilityReport",
    "solve_components",
    "to_heritability",
    "jackknife_se",
    "lt_convert",
    "lt_convert_report",
]

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class VarianceComponents:
    """Variance components, deliberately unconstrained.

    Negative entries are legitimate method-of-moments outcomes; clamping
    them at zero would bias totals, so nothing here enforces a sign.
    """

    sigma_g: np.ndarray
    sigma_e: float

    @property
    def n_partitions(self) -> int:
        return int(self.sigma_g.size)

    @property
    def total(self) -> float:
        return float(self.sigma_g.sum() + self.sigma_e)


@dataclass(frozen=True)
class ComponentSolution:
    """Full-system components plus the leave-one-block-out replicates.

    ``replicates`` is (J, K+1) with sigma_e in the last column, empty
    when the jackknife was disabled. ``condition_number`` is that of the
    full system.
    """

    components: VarianceComponents
    replicates: np.ndarray
    condition_number: float

    @property
    def n_replicates(self) -> int:
        return int(self.replicates.shape[0])


@dataclass(frozen=True)
class HeritabilityReport:
    """Total and per-partition heritability with block-jackknife SEs.

    ``jackknife_estimates`` is (J, K+1): per-replicate partition values
    with the total in the last column, on the same scale as ``h2``.
    """

    h2_total: float
    h2_partition: np.ndarray
    se_total: float
    se_partition: np.ndarray
    jackknife_estimates: np.ndarray
    components: VarianceComponents
    condition_number: float

    @property
    def n_partitions(self) -> int:
        return int(self.h2_partition.size)


def _solve_one(t_mat: np.ndarray, rhs: np.ndarray, label: str) -> tuple:
    cond = float(np.linalg.cond(t_mat))
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise NumericalError(
            f"ill-conditioned normal equations (collinear GRMs?): "
            f"{label} system condition number {cond:.3e}"
        )
    return scipy.linalg.solve(t_mat, rhs, assume_a="sym"), cond


def solve_components(system: NormalEquationSystem) -> ComponentSolution:
    """Solve the full system and every leave-one-block-out variant."""
    full, cond = _solve_one(system.t_mat, system.rhs, "full")
    j = system.variants_t.shape[0]
    reps = np.empty((j, full.size))
    for i in range(j):
        reps[i], _ = _solve_one(
            system.variants_t[i], system.variants_rhs[i], f"leave-out-{i}"
        )
    return ComponentSolution(
        components=VarianceComponents(sigma_g=full[:-1], sigma_e=float(full[-1])),
        replicates=reps,
        condition_number=cond,
    )


def jackknife_se(values: np.ndarray) -> np.ndarray:
    """Delete-one-block jackknife SE, column-wise over (J, q) values."""
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    j = vals.shape[0]
    if j < 2:
        return np.full(vals.shape[1], np.nan)
    centered = vals - vals.mean(axis=0)
    return np.sqrt((j - 1) / j * np.einsum("jq,jq->q", centered, centered))


def _h2_rows(component_rows: np.ndarray) -> np.ndarray:
    """Map rows of (sigma_g..., sigma_e) to rows of (h2_k..., h2_total).

    The guard is scale-aware: a denominator is degenerate when it is
    tiny relative to the component magnitudes (or to 1, whichever is
    larger), which catches constant-trait fits where everything solved
    to roundoff noise.
    """
    comp = np.atleast_2d(component_rows)
    total = comp.sum(axis=1)
    scale = np.maximum(1.0, np.abs(comp).sum(axis=1))
    if (np.abs(total) <= 1e-12 * scale).any() or not np.isfinite(total).all():
        raise NumericalError(
            "degenerate total variance: genetic and residual components "
            "sum to (numerical) zero, heritability is undefined"
        )
    genetic = comp[:, :-1]
    return np.column_stack([genetic / total[:, None], genetic.sum(axis=1) / total])


def to_heritability(solution: ComponentSolution) -> HeritabilityReport:
    """Convert solved components to heritability with jackknife SEs.

    Every replicate is pushed through the same variance ratio before the
    spread is measured, so the SEs reflect the correlation between the
    numerator and its denominator. With fewer than two replicates the
    SEs are NaN.
    """
    comp = solution.components
    point = _h2_rows(np.concatenate([comp.sigma_g, [comp.sigma_e]]))[0]
    if solution.n_replicates >= 2:
        jack = _h2_rows(solution.replicates)
        ses = jackknife_se(jack)
    else:
        jack = np.zeros((0, point.size))
        ses = np.full(point.size, np.nan)
    return HeritabilityReport(
        h2_total=float(point[-1]),
        h2_partition=point[:-1],
        se_total=float(ses[-1]),
        se_partition=ses[:-1],
        jackknife_estimates=jack,
        components=comp,
        condition_number=solution.condition_number,
    )


def lt_convert(h2_binary: float, censoring_rate: float) -> float:
    """Rescale a binary-trait heritability to the liability scale.

    The factor is K(1-K)/f(Phi^-1(K))^2 for case fraction K, with f the
    standard normal density; it assumes the sample case fraction matches
    the population one.
    """
    if not 0.0 < censoring_rate < 1.0:
        raise NumericalError(
            "liability conversion needs a censoring rate strictly inside (0, 1); "
            f"got {censoring_rate} (density denominator degenerate)"
        )
    density = norm.pdf(norm.ppf(censoring_rate))
    return float(censoring_rate * (1.0 - censoring_rate) / (density * density) * h2_binary)


def lt_convert_report(report: HeritabilityReport, censoring_rate: float) -> HeritabilityReport:
    """Apply the liability rescaling to every value in a report."""
    c = lt_convert(1.0, censoring_rate)
    return replace(
        report,
        h2_total=report.h2_total * c,
        h2_partition=report.h2_partition * c,
        se_total=report.se_total * c,
        se_partition=report.se_partition * c,
        jackknife_estimates=report.jackknife_estimates * c,
    )
