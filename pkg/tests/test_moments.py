"""Streaming accumulation and system assembly against dense oracles."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import (
    dense_x,
    make_covariate_basis,
    make_source,
    make_synthetic,
    random_dosages,
)
from survh2.censoring import SyntheticDecomposition
from survh2.errors import InputFormatError, NumericalError
from survh2.genotype import (
    PartitionScheme,
    assign_jackknife_blocks,
    assign_partitions,
    open_genotypes,
    write_plink,
)
from survh2.moments import (
    ProbeSet,
    accumulate,
    assemble_system,
    exact_system,
    make_probes,
)
from survh2.projection import build_basis, empty_basis


def dense_projector(basis, n):
    if basis.rank == 0:
        return np.eye(n)
    return np.eye(n) - basis.h @ basis.h.T


def dense_oracle(src, basis, syn, probes):
    """Recompute the full and leave-one-out systems with dense matrices,
    replicating the estimator definitions directly (no streaming, no
    differencing: every variant is rebuilt from scratch)."""
    x = dense_x(src)
    n = src.n_subjects
    k_parts = src.n_partitions
    j_blocks = src.n_jackknife_blocks
    v = dense_projector(basis, n)
    p = np.eye(n) - v
    y1, d = syn.y1, syn.d
    ystar = np.diag(d) + np.outer(y1, y1)
    z = probes.z
    b_probes = z.shape[1]
    corner = np.trace(ystar @ v)

    def system_for(col_mask):
        kmats = []
        sizes = []
        for k in range(k_parts):
            cols = (src.partitions == k) & col_mask
            xk = x[:, cols]
            kmats.append(xk @ xk.T)
            sizes.append(cols.sum())
        t = np.zeros((k_parts + 1, k_parts + 1))
        rhs = np.zeros(k_parts + 1)
        for k in range(k_parts):
            for l in range(k_parts):
                vals = [
                    zb @ (kmats[k] @ (v @ (kmats[l] @ (v @ zb)))) for zb in z.T
                ]
                t[k, l] = np.mean(vals) / (sizes[k] * sizes[l])
        t[:k_parts, :k_parts] = (t[:k_parts, :k_parts] + t[:k_parts, :k_parts].T) / 2
        for k in range(k_parts):
            t[k, k_parts] = t[k_parts, k] = np.trace(v @ kmats[k]) / sizes[k]
            exact_bits = (
                np.trace(np.diag(d) @ kmats[k])
                + y1 @ kmats[k] @ y1
                - 2 * (np.trace(np.diag(d) @ p @ kmats[k]) + y1 @ kmats[k] @ (p @ y1))
                + (p @ y1) @ kmats[k] @ (p @ y1)
            )
            probe_bit = np.mean(
                [(p @ zb) @ (kmats[k] @ (p @ (d * zb))) for zb in z.T]
            )
            rhs[k] = (exact_bits + probe_bit) / sizes[k]
        t[k_parts, k_parts] = n - basis.rank
        rhs[k_parts] = corner
        return t, rhs

    full_t, full_rhs = system_for(np.ones(src.n_snps, dtype=bool))
    var_t, var_rhs = [], []
    for j in range(j_blocks):
        mask = src.jackknife_blocks != j
        tj, rj = system_for(mask)
        var_t.append(tj)
        var_rhs.append(rj)
    return full_t, full_rhs, np.array(var_t), np.array(var_rhs)


def dense_exact_oracle(src, basis, syn):
    """Exact traces with dense matrices, variants from scratch."""
    x = dense_x(src)
    n = src.n_subjects
    k_parts = src.n_partitions
    v = dense_projector(basis, n)
    ystar = np.diag(syn.d) + np.outer(syn.y1, syn.y1)

    def system_for(col_mask):
        t = np.zeros((k_parts + 1, k_parts + 1))
        rhs = np.zeros(k_parts + 1)
        kmats = []
        sizes = []
        for k in range(k_parts):
            cols = (src.partitions == k) & col_mask
            xk = x[:, cols]
            kmats.append(xk @ xk.T / cols.sum())
            sizes.append(cols.sum())
        for k in range(k_parts):
            for l in range(k_parts):
                t[k, l] = np.trace(kmats[k] @ v @ kmats[l] @ v)
            t[k, k_parts] = t[k_parts, k] = np.trace(v @ kmats[k])
            rhs[k] = np.trace(ystar @ v @ kmats[k] @ v)
        t[k_parts, k_parts] = n - basis.rank
        rhs[k_parts] = np.trace(ystar @ v)
        return t, rhs

    full = system_for(np.ones(src.n_snps, dtype=bool))
    variants = [
        system_for(src.jackknife_blocks != j) for j in range(src.n_jackknife_blocks)
    ]
    return full, variants


class TestProbes:
    def test_deterministic_and_projected(self, rng):
        n = 30
        basis, _ = make_covariate_basis(rng, n, 3)
        d = rng.normal(size=n)
        p1 = make_probes(n, 5, basis, d, seed=99)
        p2 = make_probes(n, 5, basis, d, seed=99)
        assert_allclose(p1.z, p2.z, atol=0)
        assert p1.z.shape == (30, 5)
        hh = basis.h @ basis.h.T
        assert_allclose(p1.z_proj, hh @ p1.z, atol=1e-12)
        assert_allclose(p1.z_proj_weighted, hh @ (d[:, None] * p1.z), atol=1e-12)

    def test_zero_diagonal_kills_weighted_projection(self, rng):
        basis, _ = make_covariate_basis(rng, 20, 2)
        probes = make_probes(20, 4, basis, np.zeros(20), seed=1)
        assert_allclose(probes.z_proj_weighted, 0.0, atol=0)

    def test_hutchinson_identity_trace(self):
        # For the identity matrix the Hutchinson estimate is mean_b ||z_b||^2.
        n, b = 100, 1000
        probes = make_probes(n, b, empty_basis(n), np.zeros(n), seed=5)
        est = float(np.mean((probes.z**2).sum(axis=0)))
        assert abs(est - n) / n < 0.05


class TestAccumulate:
    def test_two_subject_hand_example(self, tmp_path):
        # One SNP with dosages [0, 2] standardizes to [-1, +1]; with an
        # intercept the covariate overlap vanishes and the trait gram is
        # X (X' y1) = [-2, 2] for y1 = [-1, 1].
        paths = write_plink(tmp_path / "hand", np.array([[0], [2]]))
        src = open_genotypes(*paths)
        src = assign_partitions(src, PartitionScheme("contiguous", n_partitions=1))
        src = assign_jackknife_blocks(src, 1)
        basis = build_basis(np.ones((2, 1)))
        y1 = np.array([-1.0, 1.0])
        syn = SyntheticDecomposition(y1=y1, y2=y1 * y1, d=np.zeros(2))
        probes = make_probes(2, 3, basis, syn.d, seed=0)
        arr = accumulate(src, basis, syn, probes)
        assert arr.n_cells == 1
        assert_allclose(arr.gram_trait[0], [-2.0, 2.0], atol=1e-14)
        assert_allclose(arr.overlap_sq[0], 0.0, atol=1e-14)
        assert_allclose(arr.weighted_colnorms[0], 0.0, atol=1e-14)
        x = np.array([[-1.0], [1.0]])
        assert_allclose(arr.gram_probes[0], x @ (x.T @ probes.z), atol=1e-12)
        arr.close()

    def test_unit_diagonal_recovers_column_norms(self, tmp_path, rng):
        # With d = 1 the weighted column norms total n per SNP.
        src = make_source(tmp_path, rng, n=19, m=11, k=2, j=2, missing_rate=0.1)
        basis, _ = make_covariate_basis(rng, 19, 2)
        y1 = rng.normal(size=19)
        syn = SyntheticDecomposition(y1=y1, y2=y1 * y1 + 1.0, d=np.ones(19))
        probes = make_probes(19, 2, basis, syn.d, seed=3)
        arr = accumulate(src, basis, syn, probes)
        assert_allclose(arr.weighted_colnorms.sum(), 19.0 * 11, rtol=1e-12)
        arr.close()

    def test_totals_match_dense_gram(self, tmp_path, rng):
        src = make_source(tmp_path, rng, n=23, m=14, k=2, j=3, missing_rate=0.05)
        basis, _ = make_covariate_basis(rng, 23, 3)
        syn = make_synthetic(rng, 23)
        probes = make_probes(23, 4, basis, syn.d, seed=7)
        arr = accumulate(src, basis, syn, probes)
        x = dense_x(src)
        for k in range(2):
            xk = x[:, src.partitions == k]
            mask = arr.cell_partition == k
            assert_allclose(
                arr.gram_probes[mask].sum(axis=0), xk @ (xk.T @ probes.z), atol=1e-10
            )
            assert_allclose(
                arr.gram_probes_proj[mask].sum(axis=0),
                xk @ (xk.T @ probes.z_proj),
                atol=1e-10,
            )
            assert_allclose(
                arr.gram_trait[mask].sum(axis=0), xk @ (xk.T @ syn.y1), atol=1e-10
            )
            assert_allclose(
                arr.overlap_sq[mask].sum(),
                np.sum((xk.T @ basis.h) ** 2),
                atol=1e-10,
            )
        arr.close()

    def test_single_pass_over_payload(self, tmp_path, rng):
        src = make_source(tmp_path, rng, n=17, m=29, k=2, j=2, block_width=5)
        basis, _ = make_covariate_basis(rng, 17, 2)
        syn = make_synthetic(rng, 17)
        probes = make_probes(17, 3, basis, syn.d, seed=11)
        src.io_bytes = 0
        arr = accumulate(src, basis, syn, probes)
        assert src.io_bytes == src.stride * src.n_snps
        arr.close()

    def test_requires_assignments(self, tmp_path, rng):
        paths = write_plink(tmp_path / "raw", random_dosages(rng, 6, 4))
        src = open_genotypes(*paths)
        basis = empty_basis(6)
        syn = make_synthetic(rng, 6)
        probes = make_probes(6, 2, basis, syn.d, seed=0)
        with pytest.raises(InputFormatError, match="assign"):
            accumulate(src, basis, syn, probes)


class TestSpill:
    def test_spilled_store_matches_ram_and_cleans_up(self, tmp_path, rng):
        src = make_source(tmp_path, rng, n=15, m=10, k=2, j=2)
        basis, _ = make_covariate_basis(rng, 15, 2)
        syn = make_synthetic(rng, 15)
        probes = make_probes(15, 3, basis, syn.d, seed=13)
        ram = accumulate(src, basis, syn, probes)
        scratch = tmp_path / "scratch"
        spilled = accumulate(
            src, basis, syn, probes, memory_budget=0, scratch_dir=scratch
        )
        assert spilled.store.spilled and not ram.store.spilled
        work = spilled.store.scratch_path
        manifest = json.loads((work / "gram_probes.json").read_text())
        assert manifest["dtype"] == "<f8"
        assert manifest["shape"] == [2, 15, 3]
        assert "role" in manifest
        raw = np.fromfile(work / "gram_probes.f64", dtype="<f8").reshape(2, 15, 3)
        assert_allclose(raw, ram.gram_probes, atol=1e-12)
        assert_allclose(spilled.gram_probes_proj, ram.gram_probes_proj, atol=1e-12)
        spilled.close()
        assert not work.exists()
        ram.close()

    def test_keep_scratch_preserves_files(self, tmp_path, rng):
        src = make_source(tmp_path, rng, n=9, m=6, k=1, j=2)
        basis = empty_basis(9)
        syn = make_synthetic(rng, 9)
        probes = make_probes(9, 2, basis, syn.d, seed=17)
        arr = accumulate(
            src,
            basis,
            syn,
            probes,
            memory_budget=0,
            scratch_dir=tmp_path / "keep",
            keep_scratch=True,
        )
        work = arr.store.scratch_path
        arr.close()
        assert work.exists()
        assert (work / "gram_probes.f64").exists()


class TestAssembly:
    @pytest.mark.parametrize("c_covars", [0, 3])
    def test_full_and_variant_systems_match_dense_oracle(self, tmp_path, rng, c_covars):
        src = make_source(tmp_path, rng, n=31, m=18, k=3, j=6, missing_rate=0.05)
        basis, _ = make_covariate_basis(rng, 31, c_covars)
        syn = make_synthetic(rng, 31)
        probes = make_probes(31, 4, basis, syn.d, seed=23)
        arr = accumulate(src, basis, syn, probes)
        system = assemble_system(arr, syn, basis, probes)
        arr.close()
        t_ref, rhs_ref, vt_ref, vrhs_ref = dense_oracle(src, basis, syn, probes)
        assert_allclose(system.t_mat, t_ref, rtol=1e-9, atol=1e-9)
        assert_allclose(system.rhs, rhs_ref, rtol=1e-9, atol=1e-9)
        assert system.variants_t.shape == (6, 4, 4)
        assert_allclose(system.variants_t, vt_ref, rtol=1e-9, atol=1e-9)
        assert_allclose(system.variants_rhs, vrhs_ref, rtol=1e-9, atol=1e-9)

    def test_corner_is_exact_trace_of_projected_outer(self, tmp_path, rng):
        src = make_source(tmp_path, rng, n=20, m=8, k=1, j=2)
        basis, _ = make_covariate_basis(rng, 20, 4)
        syn = make_synthetic(rng, 20)
        probes = make_probes(20, 2, basis, syn.d, seed=29)
        arr = accumulate(src, basis, syn, probes)
        system = assemble_system(arr, syn, basis, probes)
        arr.close()
        v = dense_projector(basis, 20)
        ystar = np.diag(syn.d) + np.outer(syn.y1, syn.y1)
        assert_allclose(system.rhs[-1], np.trace(ystar @ v), rtol=1e-12)
        assert system.t_mat[-1, -1] == 20 - basis.rank

    def test_randomized_t_is_unbiased(self, tmp_path, rng):
        src = make_source(tmp_path, rng, n=40, m=20, k=2, j=4)
        basis, _ = make_covariate_basis(rng, 40, 2)
        syn = make_synthetic(rng, 40)
        exact = exact_system(src, basis, syn)
        n_seeds = 40
        t01 = np.empty(n_seeds)
        for s in range(n_seeds):
            probes = make_probes(40, 8, basis, syn.d, seed=1000 + s)
            arr = accumulate(src, basis, syn, probes)
            system = assemble_system(arr, syn, basis, probes)
            arr.close()
            t01[s] = system.t_mat[0, 1]
        se = t01.std(ddof=1) / np.sqrt(n_seeds)
        assert abs(t01.mean() - exact.t_mat[0, 1]) < 3.0 * se

    def test_block_wiping_partition_is_rejected(self, tmp_path, rng):
        # K = 2 partitions, J = 2 blocks: each block is a whole partition.
        src = make_source(tmp_path, rng, n=12, m=8, k=2, j=2)
        basis = empty_basis(12)
        syn = make_synthetic(rng, 12)
        probes = make_probes(12, 2, basis, syn.d, seed=31)
        arr = accumulate(src, basis, syn, probes)
        with pytest.raises(NumericalError, match="entirely"):
            assemble_system(arr, syn, basis, probes)
        arr.close()


class TestExactSystem:
    @pytest.mark.parametrize("c_covars", [0, 2])
    def test_matches_dense_traces(self, tmp_path, rng, c_covars):
        src = make_source(tmp_path, rng, n=26, m=15, k=3, j=6, missing_rate=0.08)
        basis, _ = make_covariate_basis(rng, 26, c_covars)
        syn = make_synthetic(rng, 26)
        system = exact_system(src, basis, syn)
        (t_ref, rhs_ref), variants = dense_exact_oracle(src, basis, syn)
        assert_allclose(system.t_mat, t_ref, rtol=1e-9, atol=1e-9)
        assert_allclose(system.rhs, rhs_ref, rtol=1e-9, atol=1e-9)
        for j, (tj, rj) in enumerate(variants):
            assert_allclose(system.variants_t[j], tj, rtol=1e-9, atol=1e-9)
            assert_allclose(system.variants_rhs[j], rj, rtol=1e-9, atol=1e-9)

    def test_global_blocks_straddling_partitions(self, tmp_path, rng):
        src = make_source(tmp_path, rng, n=18, m=12, k=3, j=6)
        src = assign_jackknife_blocks(src, 4, scheme="global")
        basis, _ = make_covariate_basis(rng, 18, 2)
        syn = make_synthetic(rng, 18)
        system = exact_system(src, basis, syn)
        (t_ref, rhs_ref), variants = dense_exact_oracle(src, basis, syn)
        assert_allclose(system.t_mat, t_ref, rtol=1e-9, atol=1e-9)
        for j, (tj, rj) in enumerate(variants):
            assert_allclose(system.variants_t[j], tj, rtol=1e-9, atol=1e-9)
            assert_allclose(system.variants_rhs[j], rj, rtol=1e-9, atol=1e-9)

    def test_size_guard(self, tmp_path, rng):
        src = make_source(tmp_path, rng, n=10, m=6, k=1, j=2)
        basis = empty_basis(10)
        syn = make_synthetic(rng, 10)
        import survh2.moments as moments_mod

        original = moments_mod.EXACT_MODE_LIMIT
        moments_mod.EXACT_MODE_LIMIT = 10
        try:
            with pytest.raises(NumericalError, match="exact mode"):
                exact_system(src, basis, syn)
        finally:
            moments_mod.EXACT_MODE_LIMIT = original
