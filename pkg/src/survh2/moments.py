"""Streaming moment accumulation and normal-equation assembly.

The variance components solve a (K+1) x (K+1) linear system whose
coefficients are traces of products of partition relationship matrices
K_k = X_k X_k'/M_k with the residual projector V. Nothing n x n is ever
formed: the randomized path estimates every trace from B shared Gaussian
probes accumulated in one pass over the genotype stream, and the exact
path (small problems only) reduces per-column gram products instead.

Per accumulator cell (one nonempty partition x jackknife-block pair) the
streaming pass collects

* ``gram_probes``      X X' z            (n x B)
* ``gram_probes_proj`` X X' (H H' z)     (n x B)
* ``gram_trait``       X X' y1           (n,)
* ``overlap_sq``       ||X' H||_F^2
* ``overlap_weighted`` <X' H, X' D H>
* ``weighted_colnorms`` sum_c x_c' D x_c
* ``proj_trait_sq``    ||X' (H H' y1)||^2

where X is the cell's standardized column block, y1/D come from the
synthetic decomposition, and H is the covariate basis. Leave-one-block-out
systems are assembled by subtracting cell contributions from the totals,
which is what makes the jackknife a single-pass affair.

The two large per-cell arrays are kept in RAM when they fit a configurable
budget and are otherwise memory-mapped in a scratch directory (raw
little-endian float64 plus a JSON sidecar describing shape, dtype, and
role). Scratch files are removed on close unless told otherwise.
"""

from __future__ import annotations

import json
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .censoring import SyntheticDecomposition
from .errors import InputFormatError, NumericalError
from .genotype import GenotypeSource, stream_blocks
from .projection import CovariateBasis

__all__ = [
    "ProbeSet",
    "WorkingArrays",
    "NormalEquationSystem",
    "make_probes",
    "accumulate",
    "assemble_system",
    "exact_system",
    "DEFAULT_MEMORY_BUDGET",
    "EXACT_MODE_LIMIT",
]

DEFAULT_MEMORY_BUDGET = 1 << 30
EXACT_MODE_LIMIT = 10_000_000


@dataclass(frozen=True)
class ProbeSet:
    """Shared Gaussian probes and their covariate-span projections.

    ``z_proj`` is H H' z (the projection onto the covariate span, so a
    residual-projected probe is ``z - z_proj``), and ``z_proj_weighted``
    is H H' (d * z), needed for the projected diagonal trace term.
    """

    z: np.ndarray
    z_proj: np.ndarray
    z_proj_weighted: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def b(self) -> int:
        return self.z.shape[1]


def make_probes(
    n: int,
    b: int,
    basis: CovariateBasis,
    d: np.ndarray,
    seed: int,
) -> ProbeSet:
    """Draw B standard normal probe vectors and project them once.

    The same probes are shared by every trace estimate in the fit, full
    and jackknife alike, so a fit is reproducible from (data, seed).
    """
    if b < 1:
        raise InputFormatError("need at least one probe vector")
    if basis.n != n:
        raise InputFormatError("basis size does not match probe dimension")
    d = np.asarray(d, dtype=float)
    if d.shape != (n,):
        raise InputFormatError(f"expected diagonal of length {n}, got {d.shape}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, b))
    if basis.rank == 0:
        z_proj = np.zeros_like(z)
        z_proj_weighted = np.zeros_like(z)
    else:
        h = basis.h
        z_proj = h @ (h.T @ z)
        z_proj_weighted = h @ (h.T @ (d[:, None] * z))
    return ProbeSet(z=z, z_proj=z_proj, z_proj_weighted=z_proj_weighted, seed=seed)


class ArrayStore:
    """Named float64 arrays, RAM-backed or spilled to memory-mapped files.

    Arrays spill together whenever their combined size exceeds the
    budget. Spilled files are raw little-endian float64 next to a JSON
    sidecar with shape, dtype, and role; everything is deleted on close
    unless ``keep_scratch`` was set.
    """

    def __init__(self, specs, budget_bytes, scratch_dir=None, keep_scratch=False):
        self._arrays = {}
        self.keep_scratch = keep_scratch
        total = sum(int(np.prod(shape)) * 8 for shape, _ in specs.values())
        self.spilled = total > budget_bytes
        self.scratch_path = None
        if self.spilled:
            base = Path(scratch_dir) if scratch_dir is not None else None
            if base is not None:
                base.mkdir(parents=True, exist_ok=True)
            self.scratch_path = Path(tempfile.mkdtemp(prefix="survh2-", dir=base))
            for name, (shape, role) in specs.items():
                path = self.scratch_path / f"{name}.f64"
                arr = np.memmap(path, dtype="<f8", mode="w+", shape=shape)
                arr[:] = 0.0
                sidecar = {"shape": list(shape), "dtype": "<f8", "role": role}
                (self.scratch_path / f"{name}.json").write_text(json.dumps(sidecar, indent=1))
                self._arrays[name] = arr
        else:
            for name, (shape, _) in specs.items():
                self._arrays[name] = np.zeros(shape)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def close(self) -> None:
        for arr in self._arrays.values():
            if isinstance(arr, np.memmap):
                arr.flush()
        self._arrays.clear()
        if self.scratch_path is not None and not self.keep_scratch:
            shutil.rmtree(self.scratch_path, ignore_errors=True)


@dataclass
class WorkingArrays:
    """Per-cell accumulators from one streaming pass (see module docstring)."""

    store: ArrayStore
    gram_trait: np.ndarray
    overlap_sq: np.ndarray
    overlap_weighted: np.ndarray
    weighted_colnorms: np.ndarray
    proj_trait_sq: np.ndarray
    m_cell: np.ndarray
    cell_partition: np.ndarray
    cell_block: np.ndarray
    n: int
    b: int
    n_partitions: int
    n_blocks: int

    @property
    def gram_probes(self) -> np.ndarray:
        return self.store["gram_probes"]

    @property
    def gram_probes_proj(self) -> np.ndarray:
        return self.store["gram_probes_proj"]

    @property
    def n_cells(self) -> int:
        return int(self.cell_partition.size)

    def close(self) -> None:
        self.store.close()


@dataclass(frozen=True)
class NormalEquationSystem:
    """Mixed-moment system [[T, b], [b', n - r]] (sigma; sigma_e) = rhs.

    ``variants_t``/``variants_rhs`` hold the J leave-one-block-out
    systems (empty when J < 2); ``m_k``/``m_k_variants`` are the
    partition sizes backing each system's normalization.
    """

    t_mat: np.ndarray
    rhs: np.ndarray
    variants_t: np.ndarray
    variants_rhs: np.ndarray
    m_k: np.ndarray
    m_k_variants: np.ndarray
    n: int
    rank: int

    @property
    def n_partitions(self) -> int:
        return int(self.m_k.size)

    @property
    def n_blocks(self) -> int:
        return int(self.variants_t.shape[0])


def _group_columns(cells: np.ndarray):
    """Yield (cell_id, column_indices) groups for one streamed block."""
    order = np.argsort(cells, kind="stable")
    sorted_cells = cells[order]
    edges = np.flatnonzero(np.diff(sorted_cells)) + 1
    for idx in np.split(order, edges):
        yield int(cells[idx[0]]), idx


def accumulate(
    source: GenotypeSource,
    basis: CovariateBasis,
    syn: SyntheticDecomposition,
    probes: ProbeSet,
    memory_budget: int | None = None,
    scratch_dir=None,
    keep_scratch: bool = False,
) -> WorkingArrays:
    """Run the single streaming pass that fills every accumulator cell.

    The genotype payload is read exactly once. Requires partitions and
    jackknife blocks to be assigned on ``source``.
    """
    if source.cell_of_snp is None:
        raise InputFormatError("assign partitions and jackknife blocks before accumulating")
    n = source.n_subjects
    if basis.n != n or probes.n != n or syn.y1.shape != (n,):
        raise InputFormatError("subjects, basis, probes, and synthetic values disagree on n")
    if memory_budget is None:
        memory_budget = DEFAULT_MEMORY_BUDGET

    n_cells = source.n_cells
    b = probes.b
    store = ArrayStore(
        {
            "gram_probes": ((n_cells, n, b), "per-cell X X' z against shared probes"),
            "gram_probes_proj": ((n_cells, n, b), "per-cell X X' (H H' z)"),
        },
        budget_bytes=memory_budget,
        scratch_dir=scratch_dir,
        keep_scratch=keep_scratch,
    )
    arr = WorkingArrays(
        store=store,
        gram_trait=np.zeros((n_cells, n)),
        overlap_sq=np.zeros(n_cells),
        overlap_weighted=np.zeros(n_cells),
        weighted_colnorms=np.zeros(n_cells),
        proj_trait_sq=np.zeros(n_cells),
        m_cell=np.bincount(source.cell_of_snp, minlength=n_cells).astype(int),
        cell_partition=source.cell_partition.copy(),
        cell_block=source.cell_block.copy(),
        n=n,
        b=b,
        n_partitions=source.n_partitions,
        n_blocks=source.n_jackknife_blocks,
    )

    h = basis.h
    d = syn.d
    y1 = syn.y1
    dh = d[:, None] * h if basis.rank else np.zeros((n, 0))
    py1 = h @ (h.T @ y1) if basis.rank else np.zeros(n)

    u = store["gram_probes"]
    ut = store["gram_probes_proj"]
    for blk in stream_blocks(source):
        x = blk.x
        a = x.T @ probes.z
        at = x.T @ probes.z_proj
        ah = x.T @ h
        adh = x.T @ dh
        ay = x.T @ y1
        apy = x.T @ py1
        colnorm_d = np.einsum("i,ic,ic->c", d, x, x)
        for cell, idx in _group_columns(blk.cells):
            xg = x[:, idx]
            u[cell] += xg @ a[idx]
            ut[cell] += xg @ at[idx]
            arr.gram_trait[cell] += xg @ ay[idx]
            arr.overlap_sq[cell] += float(np.einsum("cr,cr->", ah[idx], ah[idx]))
            arr.overlap_weighted[cell] += float(np.einsum("cr,cr->", ah[idx], adh[idx]))
            arr.weighted_colnorms[cell] += float(colnorm_d[idx].sum())
            arr.proj_trait_sq[cell] += float(apy[idx] @ apy[idx])
    return arr


def _corner(basis: CovariateBasis, syn: SyntheticDecomposition) -> float:
    """tr(Y* V) = sum y2 - tr(H H' D) - y1' H H' y1, all rank-r pieces."""
    total = float(syn.y2.sum())
    if basis.rank:
        row_sq = np.einsum("ir,ir->i", basis.h, basis.h)
        total -= float(syn.d @ row_sq)
        hy1 = basis.h.T @ syn.y1
        total -= float(hy1 @ hy1)
    return total


def _aggregate_by(labels: np.ndarray, k: int, values: np.ndarray) -> np.ndarray:
    """Sum per-cell values (any trailing shape) into k partition totals."""
    out = np.zeros((k,) + values.shape[1:])
    np.add.at(out, labels, values)
    return out


def assemble_system(
    arr: WorkingArrays,
    syn: SyntheticDecomposition,
    basis: CovariateBasis,
    probes: ProbeSet,
) -> NormalEquationSystem:
    """Turn accumulated cells into the full and leave-one-block-out systems.

    The T block is the randomized trace estimate symmetrized after
    assembly; b and the corner are exact; the rhs mixes exact pieces with
    one probe-estimated projected-diagonal term.
    """
    n, b_probes = arr.n, arr.b
    k_parts = arr.n_partitions
    j_blocks = arr.n_blocks
    h = basis.h
    y1 = syn.y1
    py1 = h @ (h.T @ y1) if basis.rank else np.zeros(n)
    z2 = probes.z_proj_weighted

    parts = arr.cell_partition
    m_k = _aggregate_by(parts, k_parts, arr.m_cell.astype(float))
    if (m_k == 0).any():
        raise NumericalError("a partition has no SNPs")

    # Partition totals of every accumulator.
    u = arr.gram_probes
    ut = arr.gram_probes_proj
    u0 = np.zeros((k_parts, n, b_probes))
    ut0 = np.zeros((k_parts, n, b_probes))
    for c in range(arr.n_cells):
        u0[parts[c]] += u[c]
        ut0[parts[c]] += ut[c]
    q0 = _aggregate_by(parts, k_parts, arr.gram_trait)
    l0 = _aggregate_by(parts, k_parts, arr.overlap_sq)
    r0 = _aggregate_by(parts, k_parts, arr.overlap_weighted)
    f0 = _aggregate_by(parts, k_parts, arr.weighted_colnorms)
    v0 = _aggregate_by(parts, k_parts, arr.proj_trait_sq)

    e0 = u0 - ut0
    hu0 = np.einsum("nr,knb->krb", h, u0) if basis.rank else np.zeros((k_parts, 0, b_probes))
    he0 = np.einsum("nr,knb->krb", h, e0) if basis.rank else np.zeros((k_parts, 0, b_probes))
    # Unnormalized probe cross-products: S[k, l] ~ B * M_k * M_l * T_kl.
    s_raw = np.einsum("knb,lnb->kl", u0, e0) - np.einsum("krb,lrb->kl", hu0, he0)
    w0 = np.einsum("knb,nb->k", ut0, z2)
    q0y = q0 @ y1
    q0py = q0 @ py1

    corner = _corner(basis, syn)
    trace_v = float(basis.trace_v)

    def build(m_vec, s_mat, l_vec, f_vec, r_vec, v_vec, qy_vec, qpy_vec, w_vec):
        t_est = s_mat / (b_probes * np.outer(m_vec, m_vec))
        t_sym = (t_est + t_est.T) / 2.0
        b_vec = (n * m_vec - l_vec) / m_vec
        c_vec = (
            f_vec + qy_vec - 2.0 * (r_vec + qpy_vec) + v_vec + w_vec / b_probes
        ) / m_vec
        t_mat = np.zeros((k_parts + 1, k_parts + 1))
        t_mat[:k_parts, :k_parts] = t_sym
        t_mat[:k_parts, k_parts] = b_vec
        t_mat[k_parts, :k_parts] = b_vec
        t_mat[k_parts, k_parts] = trace_v
        rhs = np.concatenate([c_vec, [corner]])
        return t_mat, rhs

    t_full, rhs_full = build(m_k, s_raw, l0, f0, r0, v0, q0y, q0py, w0)

    if j_blocks < 2:
        variants_t = np.zeros((0, k_parts + 1, k_parts + 1))
        variants_rhs = np.zeros((0, k_parts + 1))
        m_k_variants = np.zeros((0, k_parts))
    else:
        variants_t = np.zeros((j_blocks, k_parts + 1, k_parts + 1))
        variants_rhs = np.zeros((j_blocks, k_parts + 1))
        m_k_variants = np.zeros((j_blocks, k_parts))
        cells_of_block = [
            np.flatnonzero(arr.cell_block == j) for j in range(j_blocks)
        ]
        for j in range(j_blocks):
            cells_j = cells_of_block[j]
            affected = np.unique(parts[cells_j])
            du = np.zeros((affected.size, n, b_probes))
            dut = np.zeros((affected.size, n, b_probes))
            dq = np.zeros((affected.size, n))
            d_small = np.zeros((affected.size, 5))  # l, r, f, v, m
            pos_of = {int(p): i for i, p in enumerate(affected)}
            for c in cells_j:
                i = pos_of[int(parts[c])]
                du[i] += u[c]
                dut[i] += ut[c]
                dq[i] += arr.gram_trait[c]
                d_small[i] += (
                    arr.overlap_sq[c],
                    arr.overlap_weighted[c],
                    arr.weighted_colnorms[c],
                    arr.proj_trait_sq[c],
                    arr.m_cell[c],
                )
            m_j = m_k.copy()
            m_j[affected] -= d_small[:, 4]
            if (m_j == 0).any():
                raise NumericalError(
                    f"jackknife block {j} removes partition "
                    f"{affected[np.flatnonzero(m_j[affected] == 0)].tolist()} entirely; "
                    "use more blocks per partition"
                )
            de = du - dut
            s_j = s_raw.copy()
            # Rows of affected partitions lose <du, e0>, columns lose
            # <u0, de>, and the doubly affected entries regain <du, de>.
            s_j[affected, :] -= np.einsum("anb,lnb->al", du, e0)
            s_j[:, affected] -= np.einsum("knb,anb->ka", u0, de)
            s_j[np.ix_(affected, affected)] += np.einsum("anb,cnb->ac", du, de)
            if basis.rank:
                hdu = np.einsum("nr,anb->arb", h, du)
                hde = np.einsum("nr,anb->arb", h, de)
                s_j[affected, :] += np.einsum("arb,lrb->al", hdu, he0)
                s_j[:, affected] += np.einsum("krb,arb->ka", hu0, hde)
                s_j[np.ix_(affected, affected)] -= np.einsum("arb,crb->ac", hdu, hde)
            l_j = l0.copy()
            r_j = r0.copy()
            f_j = f0.copy()
            v_j = v0.copy()
            l_j[affected] -= d_small[:, 0]
            r_j[affected] -= d_small[:, 1]
            f_j[affected] -= d_small[:, 2]
            v_j[affected] -= d_small[:, 3]
            qy_j = q0y.copy()
            qpy_j = q0py.copy()
            qy_j[affected] -= dq @ y1
            qpy_j[affected] -= dq @ py1
            w_j = w0.copy()
            w_j[affected] -= np.einsum("anb,nb->a", dut, z2)
            variants_t[j], variants_rhs[j] = build(
                m_j, s_j, l_j, f_j, r_j, v_j, qy_j, qpy_j, w_j
            )
            m_k_variants[j] = m_j

    return NormalEquationSystem(
        t_mat=t_full,
        rhs=rhs_full,
        variants_t=variants_t,
        variants_rhs=variants_rhs,
        m_k=m_k,
        m_k_variants=m_k_variants,
        n=n,
        rank=basis.rank,
    )


def exact_system(
    source: GenotypeSource,
    basis: CovariateBasis,
    syn: SyntheticDecomposition,
) -> NormalEquationSystem:
    """Probe-free system for small problems (n * m <= 10^7).

    Materializes the residual-projected genotype matrix once and reduces
    per-column gram products, so every trace is exact and the result is
    deterministic. Jackknife variants come from cell-level partial sums
    of the same per-column quantities, which keeps them bit-consistent
    with a from-scratch run on a physically reduced file.
    """
    if source.cell_of_snp is None:
        raise InputFormatError("assign partitions and jackknife blocks before assembling")
    n, m = source.n_subjects, source.n_snps
    if n * m > EXACT_MODE_LIMIT:
        raise NumericalError(
            f"exact mode materializes n x m = {n * m} values; "
            f"limit is {EXACT_MODE_LIMIT} (use the randomized path)"
        )
    if basis.n != n or syn.y1.shape != (n,):
        raise InputFormatError("basis or synthetic values disagree with subject count")

    k_parts = source.n_partitions
    j_blocks = source.n_jackknife_blocks
    n_cells = source.n_cells
    cell_parts = source.cell_partition
    cells = source.cell_of_snp
    y1 = syn.y1
    d = syn.d

    vx = np.empty((n, m))
    for blk in stream_blocks(source):
        piece = blk.x
        if basis.rank:
            piece = piece - basis.h @ (basis.h.T @ piece)
        vx[:, blk.start : blk.stop] = piece

    colsq = np.einsum("ic,ic->c", vx, vx)
    col_d = np.einsum("i,ic,ic->c", d, vx, vx)
    col_y = vx.T @ y1
    col_c = col_d + col_y * col_y

    cell_b = np.bincount(cells, weights=colsq, minlength=n_cells)
    cell_c = np.bincount(cells, weights=col_c, minlength=n_cells)
    m_cell = np.bincount(cells, minlength=n_cells).astype(float)

    # R2[a, c] = squared Frobenius norm of the (cell a) x (cell c) slab of
    # the projected gram matrix; everything T-like reduces over it.
    r2 = np.zeros((n_cells, n_cells))
    chunk = max(1, (1 << 22) // max(n, 1))
    onehot = np.zeros((m, n_cells))
    onehot[np.arange(m), cells] = 1.0
    for c0 in range(0, m, chunk):
        c1 = min(c0 + chunk, m)
        g = vx[:, c0:c1].T @ vx
        g *= g
        r2 += onehot[c0:c1].T @ (g @ onehot)

    m_k = np.bincount(cell_parts, weights=m_cell, minlength=k_parts)
    if (m_k == 0).any():
        raise NumericalError("a partition has no SNPs")
    part_onehot = np.zeros((n_cells, k_parts))
    part_onehot[np.arange(n_cells), cell_parts] = 1.0
    s_parts = part_onehot.T @ r2 @ part_onehot
    b_parts = np.bincount(cell_parts, weights=cell_b, minlength=k_parts)
    c_parts = np.bincount(cell_parts, weights=cell_c, minlength=k_parts)

    corner = _corner(basis, syn)
    trace_v = float(basis.trace_v)

    def build(m_vec, s_mat, b_raw, c_raw):
        t_mat = np.zeros((k_parts + 1, k_parts + 1))
        t_mat[:k_parts, :k_parts] = s_mat / np.outer(m_vec, m_vec)
        t_mat[:k_parts, k_parts] = b_raw / m_vec
        t_mat[k_parts, :k_parts] = b_raw / m_vec
        t_mat[k_parts, k_parts] = trace_v
        return t_mat, np.concatenate([c_raw / m_vec, [corner]])

    t_full, rhs_full = build(m_k, s_parts, b_parts, c_parts)

    if j_blocks < 2:
        variants_t = np.zeros((0, k_parts + 1, k_parts + 1))
        variants_rhs = np.zeros((0, k_parts + 1))
        m_k_variants = np.zeros((0, k_parts))
    else:
        variants_t = np.zeros((j_blocks, k_parts + 1, k_parts + 1))
        variants_rhs = np.zeros((j_blocks, k_parts + 1))
        m_k_variants = np.zeros((j_blocks, k_parts))
        row_by_part = r2 @ part_onehot  # (cells, K): sum over columns by partition
        col_by_part = part_onehot.T @ r2  # (K, cells): sum over rows by partition
        for j in range(j_blocks):
            cells_j = np.flatnonzero(source.cell_block == j)
            affected = np.unique(cell_parts[cells_j])
            m_j = m_k.copy()
            removed = np.bincount(
                cell_parts[cells_j], weights=m_cell[cells_j], minlength=k_parts
            )
            m_j -= removed
            if (m_j == 0).any():
                raise NumericalError(
                    f"jackknife block {j} removes a partition entirely; "
                    "use more blocks per partition"
                )
            s_j = s_parts.copy()
            drop_rows = np.zeros((k_parts, k_parts))
            np.add.at(drop_rows, cell_parts[cells_j], row_by_part[cells_j])
            drop_cols = np.zeros((k_parts, k_parts))
            np.add.at(drop_cols.T, cell_parts[cells_j], col_by_part[:, cells_j].T)
            both = part_onehot[cells_j].T @ r2[np.ix_(cells_j, cells_j)] @ part_onehot[cells_j]
            s_j -= drop_rows + drop_cols - both
            b_j = b_parts - np.bincount(
                cell_parts[cells_j], weights=cell_b[cells_j], minlength=k_parts
            )
            c_j = c_parts - np.bincount(
                cell_parts[cells_j], weights=cell_c[cells_j], minlength=k_parts
            )
            variants_t[j], variants_rhs[j] = build(m_j, s_j, b_j, c_j)
            m_k_variants[j] = m_j

    return NormalEquationSystem(
        t_mat=t_full,
        rhs=rhs_full,
        variants_t=variants_t,
        variants_rhs=variants_rhs,
        m_k=m_k,
        m_k_variants=m_k_variants,
        n=n,
        rank=basis.rank,
    )
