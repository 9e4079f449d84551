"""Command-line front end: estimate, estimate-lt, simulate, km, check.

Reports are deterministic by construction: no timestamps, sorted JSON
keys, and a seeded fit, so identical configurations produce
byte-identical output files. All output files are written to a
temporary name and atomically renamed, so a failing run never leaves a
partial report behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .censoring import default_cap, fit_censoring_arrays
from .errors import InputFormatError, NumericalError
from .genotype import (
    PartitionScheme,
    _read_fam,
    assign_jackknife_blocks,
    assign_partitions,
    open_genotypes,
)
from .moments import DEFAULT_MEMORY_BUDGET, EXACT_MODE_LIMIT
from .pipeline import FitConfig, fit_censored_heritability, fit_lt_baseline
from .projection import build_basis
from .simulate import (
    ArchitectureSpec,
    calibrate_censoring,
    simulate_covariates,
    simulate_genotypes,
    simulate_phenotypes_correct,
    simulate_phenotypes_misspec,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

logger = logging.getLogger("survh2")


# ---------------------------------------------------------------------------
# input tables


def _read_table(path: Path, what: str) -> pd.DataFrame:
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        df = pd.read_csv(path, sep=r"\s+", dtype={"id": str})
    except Exception as exc:
        raise InputFormatError(f"{path}: cannot parse {what} table ({exc})")
    if "id" not in df.columns:
        raise InputFormatError(f"{path}: {what} table needs an 'id' column")
    if df["id"].duplicated().any():
        dup = df["id"][df["id"].duplicated()].iloc[0]
        raise InputFormatError(f"{path}: duplicate id {dup!r}")
    return df


def read_phenotypes(path, pre_logged: bool = False, validate_times: bool = True):
    """Parse an (id, time, status) table into log-times and indicators.

    Rows with missing time or status are dropped (and counted); rows
    with a malformed status or a nonpositive time are errors naming the
    row. Returns (DataFrame indexed by id with logtime/status, n_dropped).
    """
    path = Path(path)
    df = _read_table(path, "phenotype")
    for col in ("time", "status"):
        if col not in df.columns:
            raise InputFormatError(f"{path}: phenotype table needs a '{col}' column")
    n_raw = len(df)
    df = df.dropna(subset=["time", "status"])
    n_dropped = n_raw - len(df)
    if n_dropped:
        logger.warning("%s: dropped %d rows with missing time/status", path, n_dropped)
    status = pd.to_numeric(df["status"], errors="coerce")
    bad = status.isna() | ~status.isin((0, 1))
    if bad.any():
        row = df.loc[bad.idxmax()]
        raise InputFormatError(
            f"{path}: id {row['id']!r} has malformed status {row['status']!r} "
            "(must be 0 for censored or 1 for event)"
        )
    times = pd.to_numeric(df["time"], errors="coerce")
    if times.isna().any():
        row = df.loc[times.isna().idxmax()]
        raise InputFormatError(f"{path}: id {row['id']!r} has non-numeric time {row['time']!r}")
    if validate_times and not pre_logged and (times <= 0).any():
        row = df.loc[(times <= 0).idxmax()]
        raise InputFormatError(
            f"{path}: id {row['id']!r} has nonpositive time {row['time']!r}; "
            "times must be positive unless --pre-logged"
        )
    raw = times.to_numpy(dtype=float)
    logtime = np.log(raw) if (validate_times and not pre_logged) else raw
    out = pd.DataFrame(
        {"logtime": logtime, "status": status.to_numpy(dtype=int)},
        index=pd.Index(df["id"], name="id"),
    )
    return out, n_dropped


def read_covariates(path):
    """Parse an id + numeric-columns covariate table."""
    path = Path(path)
    df = _read_table(path, "covariate")
    names = [c for c in df.columns if c != "id"]
    if not names:
        raise InputFormatError(f"{path}: covariate table has no covariate columns")
    n_raw = len(df)
    values = df[names].apply(pd.to_numeric, errors="coerce")
    keep = ~values.isna().any(axis=1)
    n_dropped = n_raw - int(keep.sum())
    if n_dropped:
        logger.warning("%s: dropped %d rows with missing covariates", path, n_dropped)
    out = values[keep]
    out.index = pd.Index(df["id"][keep], name="id")
    return out, n_dropped


def read_partition_file(path) -> dict:
    path = Path(path)
    df = _read_table(path, "partition")
    if "partition" not in df.columns:
        raise InputFormatError(f"{path}: partition table needs a 'partition' column")
    parts = pd.to_numeric(df["partition"], errors="coerce")
    if parts.isna().any() or (parts != parts.astype(int)).any():
        raise InputFormatError(f"{path}: partition labels must be integers")
    return dict(zip(df["id"], parts.astype(int)))


def read_ld_weights(path, snp_ids) -> np.ndarray:
    path = Path(path)
    df = _read_table(path, "LD weight")
    if "weight" not in df.columns:
        raise InputFormatError(f"{path}: LD weight table needs a 'weight' column")
    w = pd.to_numeric(df["weight"], errors="coerce")
    if w.isna().any():
        raise InputFormatError(f"{path}: non-numeric LD weight")
    lookup = dict(zip(df["id"], w.astype(float)))
    try:
        return np.array([lookup[s] for s in snp_ids], dtype=float)
    except KeyError as exc:
        raise InputFormatError(f"{path}: SNP {exc.args[0]!r} has no LD weight")


# ---------------------------------------------------------------------------
# alignment and assembly


def _with_ext(prefix, ext: str) -> Path:
    p = Path(prefix)
    return p.parent / (p.name + ext)


def _resolve_triplet(args) -> tuple:
    if args.bfile:
        return tuple(_with_ext(args.bfile, ext) for ext in (".bed", ".bim", ".fam"))
    if not (args.bed and args.bim and args.fam):
        raise InputFormatError("provide --bfile or all of --bed/--bim/--fam")
    return Path(args.bed), Path(args.bim), Path(args.fam)


def _align_subjects(fam_path, pheno, covar):
    fam_ids = _read_fam(fam_path)
    wanted = set(pheno.index)
    if covar is not None:
        wanted &= set(covar.index)
    keep = [sid for sid in fam_ids if sid in wanted]
    if not keep:
        raise InputFormatError(
            "no subjects shared across genotype, phenotype"
            + (", and covariate files" if covar is not None else " files")
        )
    drops = {
        "genotype_subjects_without_phenotype": len(fam_ids) - len(keep),
        "phenotype_rows_without_genotype": int(len(pheno) - pheno.index.isin(keep).sum()),
    }
    return keep, drops


def _partition_scheme(args, src):
    ld = None
    if args.partition_file:
        scheme = PartitionScheme("explicit", assignments=read_partition_file(args.partition_file))
        label = f"explicit:{args.partition_file}"
    elif args.maf_ld_grid:
        scheme = PartitionScheme(
            "maf-ld-grid",
            maf_knots=tuple(args.maf_knots),
            n_ld_quantiles=args.ld_quantiles,
        )
        if args.ld_quantiles > 1:
            if not args.ld_weights:
                raise InputFormatError("--maf-ld-grid with LD quantiles needs --ld-weights")
            ld = read_ld_weights(args.ld_weights, src.snp_ids)
        label = "maf-ld-grid"
    else:
        scheme = PartitionScheme("contiguous", n_partitions=args.partitions)
        label = f"contiguous:{args.partitions}"
    return assign_partitions(src, scheme, ld_weights=ld), label


def _fit_config(args) -> FitConfig:
    return FitConfig(
        b_probes=args.b_probes,
        j_blocks=args.j_blocks,
        seed=args.seed,
        exact_trace=args.exact_trace,
        cap=args.cap,
        jackknife_scheme=args.jackknife_scheme,
        memory_budget=args.memory_budget,
        scratch_dir=args.scratch_dir,
        keep_scratch=args.keep_scratch,
    )


def _load_aligned(args, validate_times=True):
    """Shared ingestion for estimate/estimate-lt/check."""
    bed, bim, fam = _resolve_triplet(args)
    pheno, n_bad_pheno = read_phenotypes(
        args.pheno, pre_logged=args.pre_logged, validate_times=validate_times
    )
    covar = None
    n_bad_covar = 0
    if args.covar:
        covar, n_bad_covar = read_covariates(args.covar)
    keep, drops = _align_subjects(fam, pheno, covar)
    drops["phenotype_rows_invalid"] = n_bad_pheno
    drops["covariate_rows_invalid"] = n_bad_covar
    src = open_genotypes(bed, bim, fam, keep_ids=keep)
    pheno = pheno.loc[src.subject_ids]
    w = np.ones((src.n_subjects, 1))
    covariate_names = ["intercept"]
    if covar is not None:
        aligned = covar.loc[src.subject_ids]
        w = np.column_stack([w, aligned.to_numpy(dtype=float)])
        covariate_names += list(aligned.columns)
    src, partition_label = _partition_scheme(args, src)
    drops["snps_all_missing"] = src.n_dropped_all_missing
    drops["snps_monomorphic"] = src.n_dropped_monomorphic
    inputs = {
        "bed": str(bed),
        "bim": str(bim),
        "fam": str(fam),
        "pheno": str(args.pheno),
        "covar": str(args.covar) if args.covar else None,
        "partitions": partition_label,
    }
    return src, pheno, w, covariate_names, drops, inputs


# ---------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if math.isfinite(val) else None
    return obj


def _write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path, payload: dict) -> None:
    _write_atomic(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _estimates_block(report, m_k) -> dict:
    return {
        "h2_total": report.h2_total,
        "se_total": report.se_total,
        "h2_partition": report.h2_partition,
        "se_partition": report.se_partition,
        "sigma_g": report.components.sigma_g,
        "sigma_e": report.components.sigma_e,
        "condition_number": report.condition_number,
        "jackknife_h2": report.jackknife_estimates,
        "m_k": [int(v) for v in np.asarray(m_k)],
    }


def _fmt(value) -> str:
    """Shortest-roundtrip decimal; numpy scalars repr as np.float64(...)."""
    return repr(float(value))


def _partition_tsv(report) -> str:
    lines = ["partition\th2\tse"]
    for k in range(report.n_partitions):
        lines.append(f"{k}\t{_fmt(report.h2_partition[k])}\t{_fmt(report.se_partition[k])}")
    lines.append(f"total\t{_fmt(report.h2_total)}\t{_fmt(report.se_total)}")
    return "\n".join(lines) + "\n"


def _config_block(args) -> dict:
    return {
        "b_probes": args.b_probes,
        "j_blocks": args.j_blocks,
        "seed": args.seed,
        "exact_trace": args.exact_trace,
        "cap": args.cap,
        "jackknife_scheme": args.jackknife_scheme,
        "threads": args.threads,
        "strict_deterministic": args.strict_deterministic,
        "pre_logged": args.pre_logged,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_estimate(args) -> int:
    src, pheno, w, covariate_names, drops, inputs = _load_aligned(args)
    status = pheno["status"].to_numpy()
    censored = 1.0 - status.mean()
    logger.info(
        "aligned n=%d subjects, m=%d SNPs, k=%d partitions, censored fraction %.4f",
        src.n_subjects,
        src.n_snps,
        src.n_partitions,
        censored,
    )
    basis = build_basis(w)
    res = fit_censored_heritability(
        src, basis, pheno["logtime"].to_numpy(), status, _fit_config(args)
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "inputs": inputs,
        "config": _config_block(args),
        "data": {
            "n_subjects": src.n_subjects,
            "n_snps": src.n_snps,
            "n_partitions": src.n_partitions,
            "n_covariates": len(covariate_names),
            "covariate_rank": basis.rank,
            "censored_fraction": res.censored_fraction,
            "trace_mode": res.mode,
            "dropped": drops,
        },
        "estimates": _estimates_block(res.report, res.m_k),
    }
    _write_json(Path(args.out + ".json"), payload)
    _write_atomic(Path(args.out + ".tsv"), _partition_tsv(res.report))
    logger.info(
        "h2_total %.4f (se %.4f); report at %s.json",
        res.report.h2_total,
        res.report.se_total,
        args.out,
    )
    return EXIT_OK


def cmd_estimate_lt(args) -> int:
    src, pheno, w, covariate_names, drops, inputs = _load_aligned(args, validate_times=False)
    basis = build_basis(w)
    res = fit_lt_baseline(src, basis, pheno["status"].to_numpy(), _fit_config(args))
    logger.info(
        "liability baseline on n=%d: censored fraction %.4f, observed h2 %.4f -> liability %.4f",
        src.n_subjects,
        res.censored_fraction,
        res.observed.report.h2_total,
        res.liability.h2_total,
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate-lt",
        "inputs": inputs,
        "config": _config_block(args),
        "data": {
            "n_subjects": src.n_subjects,
            "n_snps": src.n_snps,
            "n_partitions": src.n_partitions,
            "n_covariates": len(covariate_names),
            "covariate_rank": basis.rank,
            "censored_fraction": res.censored_fraction,
            "trace_mode": res.observed.mode,
            "dropped": drops,
        },
        "estimates_observed": _estimates_block(res.observed.report, res.observed.m_k),
        "estimates_liability": _estimates_block(res.liability, res.observed.m_k),
    }
    _write_json(Path(args.out + ".json"), payload)
    _write_atomic(Path(args.out + ".tsv"), _partition_tsv(res.liability))
    return EXIT_OK


def cmd_km(args) -> int:
    pheno, _ = read_phenotypes(args.pheno, pre_logged=args.pre_logged)
    u = pheno["logtime"].to_numpy()
    status = pheno["status"].to_numpy()
    g = fit_censoring_arrays(u, status, cap=args.cap)
    lines = ["jump_time\tcdf_value"]
    for t, v in zip(g.jump_times, g.cdf_values):
        lines.append(f"{_fmt(t)}\t{_fmt(v)}")
    if g.jump_times.size == 0:
        lines.append("# no censored observations: censoring CDF is identically zero")
    _write_atomic(Path(args.out), "\n".join(lines) + "\n")
    logger.info(
        "censoring CDF with %d jumps (cap %.6f) written to %s",
        g.jump_times.size,
        g.cap,
        args.out,
    )
    return EXIT_OK


def _grid_occupancy(args, src) -> dict | None:
    if not args.maf_ld_grid:
        return None
    n_bins = len(args.maf_knots) + 1
    raw = n_bins * args.ld_quantiles
    return {
        "grid_cells": raw,
        "occupied": src.n_partitions,
        "empty": raw - src.n_partitions,
    }


def cmd_check(args) -> int:
    src, pheno, w, covariate_names, drops, inputs = _load_aligned(args)
    status = pheno["status"].to_numpy()
    censored = float(1.0 - status.mean())
    findings = []
    mafs = src.mafs
    spectrum = {
        "min": float(mafs.min()),
        "q25": float(np.quantile(mafs, 0.25)),
        "median": float(np.quantile(mafs, 0.5)),
        "q75": float(np.quantile(mafs, 0.75)),
        "max": float(mafs.max()),
        "below_0.05": int((mafs < 0.05).sum()),
    }
    occupancy = _grid_occupancy(args, src)
    if occupancy and occupancy["empty"]:
        findings.append(
            f"warning: {occupancy['empty']} of {occupancy['grid_cells']} "
            "grid partitions are empty and were collapsed"
        )
    try:
        assign_jackknife_blocks(src, args.j_blocks, scheme=args.jackknife_scheme)
    except InputFormatError as exc:
        findings.append(f"error: jackknife assignment fails: {exc}")
    sizes = src.partition_sizes
    if (sizes < 2 * max(1, args.j_blocks // max(1, src.n_partitions))).any():
        findings.append(
            "warning: some partitions are small relative to the jackknife "
            f"block count (sizes {sizes.tolist()}, j={args.j_blocks})"
        )
    if censored in (0.0, 1.0):
        findings.append(
            f"warning: censored fraction is {censored}; the liability baseline "
            "and censoring CDF are degenerate"
        )
    n, b = src.n_subjects, args.b_probes
    n_cells = args.j_blocks
    working = (2 * b + 1) * n_cells * n * 8
    budget = args.memory_budget if args.memory_budget is not None else DEFAULT_MEMORY_BUDGET
    footprint = {
        "working_array_bytes": int(working),
        "memory_budget_bytes": int(budget),
        "predicted_spill": working > budget,
        "genotype_payload_bytes": int(src.stride * src.n_snps),
        "exact_mode_allowed": n * src.n_snps <= EXACT_MODE_LIMIT,
    }
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "check",
        "inputs": inputs,
        "status": "ok" if not any(f.startswith("error") for f in findings) else "error",
        "data": {
            "n_subjects": src.n_subjects,
            "n_snps": src.n_snps,
            "n_partitions": src.n_partitions,
            "n_covariates": len(covariate_names),
            "censored_fraction": censored,
            "partition_sizes": sizes,
            "dropped": drops,
            "maf_spectrum": spectrum,
            "grid_occupancy": occupancy,
        },
        "footprint": footprint,
        "findings": findings,
    }
    if args.out:
        _write_json(Path(args.out), payload)
    print(f"status: {payload['status']}")
    print(
        f"n={src.n_subjects} m={src.n_snps} k={src.n_partitions} "
        f"censored={censored:.4f}"
    )
    print(
        f"maf spectrum: min {spectrum['min']:.4f} median {spectrum['median']:.4f} "
        f"max {spectrum['max']:.4f} ({spectrum['below_0.05']} below 0.05)"
    )
    if occupancy:
        print(
            f"grid occupancy: {occupancy['occupied']}/{occupancy['grid_cells']} "
            f"cells occupied"
        )
    print(
        f"predicted working set: {working / 1e6:.1f} MB "
        f"(budget {budget / 1e6:.1f} MB, spill={footprint['predicted_spill']})"
    )
    for f in findings:
        print(f)
    return EXIT_OK


def cmd_simulate(args) -> int:
    prefix = Path(args.out)
    paths, mafs = simulate_genotypes(prefix, args.n, args.m, rho=args.rho, seed=args.seed)
    src = open_genotypes(*paths)
    src = assign_partitions(src, PartitionScheme("contiguous", n_partitions=args.partitions))
    w = simulate_covariates(src.n_subjects, args.covariates, seed=args.seed)
    if args.architecture == "correct":
        y, truth = simulate_phenotypes_correct(
            src, w, args.h2, seed=args.seed, error_law=args.error_law
        )
    else:
        spec = ArchitectureSpec(
            h2_target=args.h2,
            a=args.maf_coupling,
            b_coupling=args.ld_coupling,
            cvr=args.cvr,
            causal_maf_window=tuple(args.maf_window),
            error_law=args.error_law,
        )
        ld = read_ld_weights(args.ld_weights, src.snp_ids) if args.ld_weights else None
        y, truth = simulate_phenotypes_misspec(src, w, spec, seed=args.seed, ld_weights=ld)
    sigma_c = args.censor_scale if args.censor_scale is not None else math.sqrt(truth["sigma_e"])
    cens = calibrate_censoring(y, args.censoring, sigma_c, seed=args.seed)
    pheno_lines = ["id\ttime\tstatus"]
    for sid, u, d in zip(src.subject_ids, cens.u, cens.delta):
        pheno_lines.append(f"{sid}\t{_fmt(math.exp(u))}\t{int(d)}")
    _write_atomic(_with_ext(prefix, ".pheno.tsv"), "\n".join(pheno_lines) + "\n")
    if args.covariates > 1:
        # the intercept column stays implicit; estimate re-adds it
        cov_names = [f"cov{i}" for i in range(1, args.covariates)]
        cov_lines = ["\t".join(["id"] + cov_names)]
        for i, sid in enumerate(src.subject_ids):
            vals = "\t".join(_fmt(v) for v in w[i, 1:])
            cov_lines.append(f"{sid}\t{vals}")
        _write_atomic(_with_ext(prefix, ".covar.tsv"), "\n".join(cov_lines) + "\n")
    truth_payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "n_subjects": src.n_subjects,
        "n_snps": src.n_snps,
        "n_snps_generated": args.m,
        "n_partitions": args.partitions,
        "rho": args.rho,
        "covariates": args.covariates,
        "truth": truth,
        "censoring": {
            "target_rate": cens.target_rate,
            "realized_rate": cens.realized_rate,
            "mu_c": cens.mu_c,
            "sigma_c": cens.sigma_c,
        },
    }
    _write_json(_with_ext(prefix, ".truth.json"), truth_payload)
    logger.info(
        "simulated n=%d m=%d (h2 %.3f, censored %.3f) at %s",
        src.n_subjects,
        src.n_snps,
        args.h2,
        cens.realized_rate,
        prefix,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


def _add_genotype_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bfile", help="PLINK triplet prefix (expects .bed/.bim/.fam)")
    p.add_argument("--bed", help="explicit .bed path (with --bim and --fam)")
    p.add_argument("--bim", help="explicit .bim path")
    p.add_argument("--fam", help="explicit .fam path")


def _add_partition_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--partitions",
        type=int,
        default=1,
        help="number of contiguous file-order partitions (default 1)",
    )
    p.add_argument("--partition-file", help="TSV (id, partition) with explicit assignments")
    p.add_argument(
        "--maf-ld-grid",
        action="store_true",
        help="partition by the MAF-bin x LD-quantile grid",
    )
    p.add_argument(
        "--maf-knots",
        type=float,
        nargs="+",
        default=[0.01, 0.02, 0.03, 0.04, 0.05],
        help="MAF bin edges for the grid scheme",
    )
    p.add_argument(
        "--ld-quantiles",
        type=int,
        default=4,
        help="LD-weight quantile groups for the grid scheme (default 4)",
    )
    p.add_argument("--ld-weights", help="TSV (id, weight) of per-SNP LD weights")


def _add_fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pheno", required=True, help="TSV (id, time, status)")
    p.add_argument("--covar", help="TSV (id, covariates...); intercept is added automatically")
    p.add_argument("--b-probes", type=int, default=10, help="trace probe vectors (default 10)")
    p.add_argument("--j-blocks", type=int, default=100, help="jackknife blocks (default 100)")
    p.add_argument("--seed", type=int, default=1, help="probe RNG seed")
    p.add_argument(
        "--exact-trace",
        action="store_true",
        help="deterministic dense traces (small problems only)",
    )
    p.add_argument(
        "--jackknife-scheme",
        choices=("within-partition", "global"),
        default="within-partition",
    )
    p.add_argument("--cap", type=float, default=None, help="censoring CDF cap (default 1 - 1/2N)")
    p.add_argument(
        "--pre-logged",
        action="store_true",
        help="times are already on the log scale (skips positivity check and transform)",
    )
    p.add_argument("--threads", type=int, default=1, help="reserved; streaming is single-threaded")
    p.add_argument(
        "--strict-deterministic",
        action="store_true",
        help="fixed reduction order (always on; flag recorded in the report)",
    )
    p.add_argument("--memory-budget", type=int, default=None, help="working-array bytes before spilling")
    p.add_argument("--scratch-dir", default=None, help="spill directory (default: system temp)")
    p.add_argument("--keep-scratch", action="store_true", help="keep spill files after the run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survh2",
        description="Heritability of right-censored survival traits from SNP data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="censored heritability estimate")
    _add_genotype_args(est)
    _add_partition_args(est)
    _add_fit_args(est)
    est.add_argument("--out", required=True, help="output prefix (.json and .tsv)")
    est.set_defaults(func=cmd_estimate)

    lt = sub.add_parser("estimate-lt", help="liability-threshold baseline on the event indicator")
    _add_genotype_args(lt)
    _add_partition_args(lt)
    _add_fit_args(lt)
    lt.add_argument("--out", required=True, help="output prefix (.json and .tsv)")
    lt.set_defaults(func=cmd_estimate_lt)

    km = sub.add_parser("km", help="censoring-distribution CDF table")
    km.add_argument("--pheno", required=True, help="TSV (id, time, status)")
    km.add_argument("--cap", type=float, default=None)
    km.add_argument("--pre-logged", action="store_true")
    km.add_argument("--out", required=True, help="output TSV path")
    km.set_defaults(func=cmd_km)

    chk = sub.add_parser("check", help="validate inputs and report footprint")
    _add_genotype_args(chk)
    _add_partition_args(chk)
    _add_fit_args(chk)
    chk.add_argument("--out", help="optional JSON diagnostics path")
    chk.set_defaults(func=cmd_check)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--n", type=int, required=True, help="subjects")
    sim.add_argument("--m", type=int, required=True, help="SNPs")
    sim.add_argument("--partitions", type=int, default=1)
    sim.add_argument("--h2", type=float, default=0.5, help="target heritability")
    sim.add_argument("--censoring", type=float, default=0.2, help="target censored fraction")
    sim.add_argument("--rho", type=float, default=0.1, help="adjacent-SNP latent correlation")
    sim.add_argument("--seed", type=int, default=1)
    sim.add_argument("--covariates", type=int, default=10, help="covariate count incl. intercept")
    sim.add_argument("--error-law", choices=("normal", "gumbel"), default="normal")
    sim.add_argument(
        "--architecture",
        choices=("correct", "misspec"),
        default="correct",
        help="per-partition variances, or a per-SNP MAF/LD-coupled law",
    )
    sim.add_argument("--maf-coupling", type=float, default=0.0, help="MAF exponent (misspec)")
    sim.add_argument("--ld-coupling", type=float, default=0.0, help="LD-weight exponent (misspec)")
    sim.add_argument("--cvr", type=float, default=1.0, help="causal variant rate (misspec)")
    sim.add_argument(
        "--maf-window",
        type=float,
        nargs=2,
        default=[0.0, 0.5],
        help="causal MAF window (misspec)",
    )
    sim.add_argument("--ld-weights", help="TSV (id, weight) for the misspec law")
    sim.add_argument("--censor-scale", type=float, default=None, help="sigma of censoring times (default sigma_e)")
    sim.add_argument("--out", required=True, help="output prefix")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputFormatError as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    except NumericalError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        logger.error("file not found: %s", exc)
        return EXIT_IO
    except OSError as exc:
        logger.error("i/o failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
