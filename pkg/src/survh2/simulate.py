"""Synthetic survival-GWAS data: genotypes, phenotypes, censoring.

Genotypes are AR(1)-correlated Bernoulli haplotype passes built by
thresholding latent Gaussian chains, which gives exact Bin(2, f) dosage
marginals with tunable adjacent LD. Everything is reproducible from a
single seed: each consumer of randomness gets its own numbered
SeedSequence branch, and genotype latents restart per fixed-width SNP
block keyed by (seed, block index), so block-parallel generation would
produce identical output.

Seed branch map: 0 allele frequencies, (1, block) genotype latents,
2 effect sizes and component variances, 3 covariate effects, 4 noise,
5 censoring draws, 6 covariate values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import InputFormatError, NumericalError
from .genotype import BedWriter, GenotypeSource, stream_blocks, write_bim, write_fam

__all__ = [
    "ArchitectureSpec",
    "CensoringResult",
    "simulate_genotypes",
    "simulate_covariates",
    "simulate_phenotypes_correct",
    "simulate_phenotypes_misspec",
    "calibrate_censoring",
]

GENOTYPE_BLOCK = 1024


@dataclass(frozen=True)
class ArchitectureSpec:
    """Per-SNP effect-variance law for misspecified architectures.

    The variance of SNP j's effect is s_j * w_j**b * (f_j (1 - f_j))**a
    with s_j a Bernoulli(cvr) causal indicator restricted to the MAF
    window; w_j are optional LD weights (1 when absent).
    """

    h2_target: float
    a: float = 0.0
    b_coupling: float = 0.0
    cvr: float = 1.0
    causal_maf_window: tuple = (0.0, 0.5)
    error_law: str = "normal"

    def __post_init__(self) -> None:
        if not 0.0 < self.h2_target < 1.0:
            raise InputFormatError(f"h2 target must be in (0, 1), got {self.h2_target}")
        if not 0.0 < self.cvr <= 1.0:
            raise InputFormatError(f"causal rate must be in (0, 1], got {self.cvr}")
        lo, hi = self.causal_maf_window
        if not 0.0 <= lo < hi <= 0.5:
            raise InputFormatError(f"bad MAF window [{lo}, {hi}]")
        if self.error_law not in ("normal", "gumbel"):
            raise InputFormatError(f"unknown error law {self.error_law!r}")


@dataclass(frozen=True)
class CensoringResult:
    """Censored observations plus the calibrated threshold location."""

    u: np.ndarray
    delta: np.ndarray
    mu_c: float
    sigma_c: float
    target_rate: float
    realized_rate: float


def draw_mafs(m: int, seed: int) -> np.ndarray:
    """Allele frequencies 0.01 + 0.49 * Beta(0.2, 0.8), one per SNP."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    return 0.01 + 0.49 * rng.beta(0.2, 0.8, size=m)


def latent_blocks(n: int, m: int, rho: float, seed: int):
    """Yield (start, stop, latents) with latents (2, n, width) AR(1) chains.

    The two leading slices are the two haplotype passes. Chains restart
    at every block boundary with a (seed, 1, block) substream.
    """
    if not 0.0 <= rho < 1.0:
        raise InputFormatError(f"AR coefficient must be in [0, 1), got {rho}")
    innov = math.sqrt(1.0 - rho * rho)
    for block, start in enumerate(range(0, m, GENOTYPE_BLOCK)):
        stop = min(start + GENOTYPE_BLOCK, m)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, block]))
        lat = rng.standard_normal((2, n, stop - start))
        for j in range(1, stop - start):
            lat[:, :, j] *= innov
            lat[:, :, j] += rho * lat[:, :, j - 1]
        yield start, stop, lat


def simulate_genotypes(
    prefix,
    n: int,
    m: int,
    rho: float = 0.1,
    seed: int = 1,
) -> tuple:
    """Write an AR(1)-correlated genotype triplet; returns (paths, mafs).

    Dosages are the sum of two independent thresholded-Gaussian
    haplotype passes, so each SNP is exactly Bin(2, f_j) marginally.
    """
    if n < 1 or m < 1:
        raise InputFormatError("need at least one subject and one SNP")
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    mafs = draw_mafs(m, seed)
    thresholds = norm.ppf(mafs)
    # not with_suffix: a dotted prefix like "sim.v2" must keep its name
    bed_path = prefix.parent / (prefix.name + ".bed")
    with BedWriter(bed_path, n) as writer:
        for start, stop, lat in latent_blocks(n, m, rho, seed):
            alleles = lat < thresholds[start:stop]
            dosages = alleles[0].astype(np.int8) + alleles[1].astype(np.int8)
            writer.append(dosages.T)
    bim_path = prefix.parent / (prefix.name + ".bim")
    fam_path = prefix.parent / (prefix.name + ".fam")
    write_bim(bim_path, [f"snp{j}" for j in range(m)])
    write_fam(fam_path, [f"s{i}" for i in range(n)])
    return (bed_path, bim_path, fam_path), mafs


def simulate_covariates(n: int, c: int, seed: int) -> np.ndarray:
    """Intercept plus c - 1 standard normal covariate columns."""
    if c < 1:
        raise InputFormatError("need at least the intercept column")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))
    return np.column_stack([np.ones(n), rng.standard_normal((n, c - 1))])


def _stream_genetic_value(source: GenotypeSource, beta: np.ndarray) -> np.ndarray:
    g = np.zeros(source.n_subjects)
    for blk in stream_blocks(source):
        g += blk.x @ beta[blk.start : blk.stop]
    return g


def _noise(sigma_e2: float, n: int, error_law: str, rng) -> np.ndarray:
    if error_law == "normal":
        return rng.standard_normal(n) * math.sqrt(sigma_e2)
    # Mean-zero Gumbel with variance sigma_e2.
    scale = math.sqrt(sigma_e2 * 6.0) / math.pi
    return rng.gumbel(loc=-scale * np.euler_gamma, scale=scale, size=n)


def _assemble_phenotype(source, w, beta, sigma_g_total, h2, error_law, seed):
    sigma_e2 = (1.0 / h2 - 1.0) * sigma_g_total
    g = _stream_genetic_value(source, beta)
    rng_alpha = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    alpha = rng_alpha.uniform(0.0, 1.0, size=w.shape[1]) if w is not None else None
    rng_noise = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    y = g + _noise(sigma_e2, source.n_subjects, error_law, rng_noise)
    if w is not None:
        y = y + w @ alpha
    return y, sigma_e2, alpha


def simulate_phenotypes_correct(
    source: GenotypeSource,
    w: np.ndarray | None,
    h2_target: float,
    seed: int,
    error_law: str = "normal",
) -> tuple:
    """Log-times under the model the estimator assumes.

    Each partition k gets a variance sigma2_k ~ Uniform(0, 1) spread
    evenly over its SNPs (beta ~ N(0, sigma2_k / M_k) on standardized
    dosages); the residual variance is set so heritability equals the
    target exactly in the population. Returns (y, truth dict).
    """
    if not 0.0 < h2_target < 1.0:
        raise InputFormatError(f"h2 target must be in (0, 1), got {h2_target}")
    if error_law not in ("normal", "gumbel"):
        raise InputFormatError(f"unknown error law {error_law!r}")
    if source.partitions is None:
        raise InputFormatError("assign partitions before simulating phenotypes")
    if w is not None and w.shape[0] != source.n_subjects:
        raise InputFormatError("covariate rows do not match subjects")
    sizes = source.partition_sizes
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    sigma_k = rng.uniform(0.0, 1.0, size=source.n_partitions)
    per_snp_var = (sigma_k / sizes)[source.partitions]
    beta = rng.standard_normal(source.n_snps) * np.sqrt(per_snp_var)
    y, sigma_e2, alpha = _assemble_phenotype(
        source, w, beta, float(sigma_k.sum()), h2_target, error_law, seed
    )
    denom = sigma_k.sum() + sigma_e2
    truth = {
        "model": "correct",
        "h2_total": h2_target,
        "h2_partition": (sigma_k / denom).tolist(),
        "sigma_g": sigma_k.tolist(),
        "sigma_e": sigma_e2,
        "error_law": error_law,
        "alpha": None if alpha is None else alpha.tolist(),
        "seed": seed,
    }
    return y, truth


def simulate_phenotypes_misspec(
    source: GenotypeSource,
    w: np.ndarray | None,
    spec: ArchitectureSpec,
    seed: int,
    mafs: np.ndarray | None = None,
    ld_weights: np.ndarray | None = None,
) -> tuple:
    """Log-times under a per-SNP effect-variance law (MAF/LD coupling).

    Causal SNPs are sampled at rate cvr inside the MAF window; each
    causal effect has variance w_j**b * (f_j(1-f_j))**a. Residual
    variance again pins population heritability at the target.
    """
    if w is not None and w.shape[0] != source.n_subjects:
        raise InputFormatError("covariate rows do not match subjects")
    m = source.n_snps
    f = source.mafs if mafs is None else np.asarray(mafs, dtype=float)
    if f.shape != (m,):
        raise InputFormatError(f"need one MAF per SNP, got {f.shape}")
    weights = np.ones(m) if ld_weights is None else np.asarray(ld_weights, dtype=float)
    if weights.shape != (m,):
        raise InputFormatError(f"need one LD weight per SNP, got {weights.shape}")
    lo, hi = spec.causal_maf_window
    in_window = (f >= lo) & (f <= hi)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    causal = in_window & (rng.uniform(size=m) < spec.cvr)
    if not causal.any():
        raise InputFormatError("no causal SNPs in MAF window")
    per_snp_var = np.where(
        causal,
        weights**spec.b_coupling * (f * (1.0 - f)) ** spec.a,
        0.0,
    )
    beta = rng.standard_normal(m) * np.sqrt(per_snp_var)
    total = float(per_snp_var.sum())
    y, sigma_e2, alpha = _assemble_phenotype(
        source, w, beta, total, spec.h2_target, spec.error_law, seed
    )
    truth = {
        "model": "misspec",
        "h2_total": spec.h2_target,
        "n_causal": int(causal.sum()),
        "sigma_g_total": total,
        "sigma_e": sigma_e2,
        "a": spec.a,
        "b_coupling": spec.b_coupling,
        "cvr": spec.cvr,
        "causal_maf_window": list(spec.causal_maf_window),
        "error_law": spec.error_law,
        "alpha": None if alpha is None else alpha.tolist(),
        "seed": seed,
    }
    return y, truth


def calibrate_censoring(
    y: np.ndarray,
    target_rate: float,
    sigma_c: float,
    seed: int,
    xi: np.ndarray | None = None,
) -> CensoringResult:
    """Censor y at a calibrated normal threshold hitting the target rate.

    Censoring times are r_i = mu + sigma_c * xi_i with xi_i standard
    normal drawn once (or injected for testing); the empirical censored
    fraction is a non-increasing step function of mu, and bisection
    finds the smallest mu whose fraction is at or below the target. The
    realized rate lands within 1/N of the target unless ties among
    y_i - sigma_c * xi_i make that unattainable, which is raised as an
    error.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        raise InputFormatError("cannot censor an empty phenotype vector")
    if not 0.0 <= target_rate < 1.0:
        raise InputFormatError(f"censoring rate must be in [0, 1), got {target_rate}")
    if sigma_c < 0:
        raise InputFormatError(f"censoring scale must be nonnegative, got {sigma_c}")
    if target_rate == 0.0:
        return CensoringResult(
            u=y.copy(),
            delta=np.ones(n, dtype=int),
            mu_c=math.inf,
            sigma_c=sigma_c,
            target_rate=0.0,
            realized_rate=0.0,
        )
    if xi is None:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
        xi = rng.standard_normal(n)
    else:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != y.shape:
            raise InputFormatError("censoring draws must match the phenotype length")
    cut = y - sigma_c * xi  # censored iff cut_i > mu

    def frac(mu: float) -> float:
        return float((cut > mu).mean())

    lo = float(y.min()) - 10.0 * max(sigma_c, 1.0)
    hi = float(y.max()) + 10.0 * max(sigma_c, 1.0)
    span = hi - lo
    while frac(lo) <= target_rate:
        lo -= span
        span *= 2.0
    span = hi - lo
    while frac(hi) > target_rate:
        hi += span
        span *= 2.0
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if frac(mid) > target_rate:
            lo = mid
        else:
            hi = mid
    mu = hi
    r = mu + sigma_c * xi
    delta = (y <= r).astype(int)
    realized = float(1.0 - delta.mean())
    if abs(realized - target_rate) > 1.0 / n + 1e-12:
        raise NumericalError(
            f"calibrated censoring rate {realized:.6f} misses target "
            f"{target_rate:.6f} by more than 1/N (tied thresholds?)"
        )
    return CensoringResult(
        u=np.minimum(y, r),
        delta=delta,
        mu_c=mu,
        sigma_c=sigma_c,
        target_rate=target_rate,
        realized_rate=realized,
    )
