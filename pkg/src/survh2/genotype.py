"""Bit-packed genotype access, streaming standardization, and SNP grouping.

Genotypes live in PLINK 1.9 triplets (.bed/.bim/.fam). The .bed payload is
SNP-major: each SNP occupies ceil(n/4) bytes, four subjects per byte, two
bits each. Decoding goes through a 256-entry lookup table; dosages count
copies of the first allele listed in the .bim row.

Columns are standardized on the fly: missing calls are imputed to the
observed mean and the imputed column is divided by its population
standard deviation (denominator n), so every retained column has squared
norm exactly n. Monomorphic and all-missing SNPs are dropped at load.

SNPs are grouped twice: into variance-component partitions and into
jackknife blocks. The pair (partition, block) defines an accumulator
cell; only nonempty cells are materialized downstream, which keeps the
working set proportional to the number of blocks when blocks never
straddle partitions.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InputFormatError

__all__ = [
    "SnpMeta",
    "PartitionScheme",
    "GenotypeBlock",
    "GenotypeSource",
    "BedWriter",
    "open_genotypes",
    "stream_blocks",
    "assign_partitions",
    "assign_jackknife_blocks",
    "write_plink",
]

logger = logging.getLogger(__name__)

_BED_MAGIC = bytes([0x6C, 0x1B, 0x01])

# Two-bit code -> dosage (count of the first .bim allele); -1 marks missing.
_CODE_DOSAGE = np.array([2, -1, 1, 0], dtype=np.int8)
_BYTE_LUT = np.zeros((256, 4), dtype=np.int8)
for _byte in range(256):
    for _slot in range(4):
        _BYTE_LUT[_byte, _slot] = _CODE_DOSAGE[(_byte >> (2 * _slot)) & 0b11]

# Dosage (or -1 for missing) -> two-bit code, indexed by dosage + 1.
_DOSAGE_CODE = np.array([1, 3, 2, 0], dtype=np.uint8)

_DEFAULT_MAF_KNOTS = (0.01, 0.02, 0.03, 0.04, 0.05)


@dataclass(frozen=True)
class SnpMeta:
    """Per-SNP record: identifier, imputation/standardization statistics,
    and group memberships (-1 until the corresponding assignment ran)."""

    id: str
    mean: float
    std: float
    partition: int
    jackknife_block: int


@dataclass(frozen=True)
class PartitionScheme:
    """How SNPs map to variance-component partitions.

    kind ``explicit``: ``assignments`` maps SNP id -> partition index,
    dense in 0..K-1. kind ``maf-ld-grid``: the cross of minor-allele
    frequency intervals (cut at ``maf_knots``) with ``n_ld_quantiles``
    equal-count LD-weight groups; partition = ld_group * n_maf_bins +
    maf_bin. kind ``contiguous``: ``n_partitions`` near-equal runs in
    file order.
    """

    kind: str
    assignments: dict | None = None
    n_partitions: int | None = None
    maf_knots: tuple = _DEFAULT_MAF_KNOTS
    n_ld_quantiles: int = 4

    def __post_init__(self) -> None:
        if self.kind not in ("explicit", "maf-ld-grid", "contiguous"):
            raise InputFormatError(f"unknown partition scheme kind {self.kind!r}")
        if self.kind == "explicit" and not self.assignments:
            raise InputFormatError("explicit scheme needs an id -> partition mapping")
        if self.kind == "contiguous" and (self.n_partitions is None or self.n_partitions < 1):
            raise InputFormatError("contiguous scheme needs a positive partition count")
        if self.kind == "maf-ld-grid":
            knots = tuple(self.maf_knots)
            if len(knots) == 0 or any(b <= a for a, b in zip(knots, knots[1:])):
                raise InputFormatError("maf knots must be strictly increasing")
            if self.n_ld_quantiles < 1:
                raise InputFormatError("need at least one LD quantile group")


@dataclass
class GenotypeBlock:
    """One streamed block of standardized genotypes (subjects x SNPs)."""

    x: np.ndarray
    start: int
    stop: int
    partitions: np.ndarray | None
    jackknife: np.ndarray | None
    cells: np.ndarray | None


class _IoCounter:
    """Mutable byte count shared by a source and every copy derived from
    it, so reads made through an assignment helper's copy stay visible."""

    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0


@dataclass
class GenotypeSource:
    """Handle on a validated genotype triplet plus per-SNP statistics.

    Treated as immutable after load; the assignment helpers return
    modified copies. ``io_bytes`` is a diagnostic counter of payload
    bytes decoded from the .bed file, shared with those copies.
    """

    bed_path: Path
    stride: int
    n_fam: int
    subject_ids: list
    subject_index: np.ndarray
    snp_ids: np.ndarray
    file_rows: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    block_width: int
    n_dropped_all_missing: int = 0
    n_dropped_monomorphic: int = 0
    partitions: np.ndarray | None = None
    jackknife_blocks: np.ndarray | None = None
    n_partitions: int = 0
    n_jackknife_blocks: int = 0
    cell_of_snp: np.ndarray | None = None
    cell_partition: np.ndarray | None = None
    cell_block: np.ndarray | None = None
    io: _IoCounter = field(default_factory=_IoCounter, repr=False)

    @property
    def io_bytes(self) -> int:
        return self.io.count

    @io_bytes.setter
    def io_bytes(self, value: int) -> None:
        self.io.count = int(value)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_snps(self) -> int:
        return int(self.snp_ids.size)

    @property
    def n_cells(self) -> int:
        return 0 if self.cell_partition is None else int(self.cell_partition.size)

    @property
    def mafs(self) -> np.ndarray:
        """Folded minor-allele frequencies from the observed means."""
        freq = self.means / 2.0
        return np.minimum(freq, 1.0 - freq)

    @property
    def partition_sizes(self) -> np.ndarray:
        if self.partitions is None:
            raise InputFormatError("partitions not assigned yet")
        return np.bincount(self.partitions, minlength=self.n_partitions)

    @property
    def snps(self) -> list:
        parts = self.partitions if self.partitions is not None else np.full(self.n_snps, -1)
        blocks = (
            self.jackknife_blocks
            if self.jackknife_blocks is not None
            else np.full(self.n_snps, -1)
        )
        return [
            SnpMeta(
                id=str(self.snp_ids[i]),
                mean=float(self.means[i]),
                std=float(self.stds[i]),
                partition=int(parts[i]),
                jackknife_block=int(blocks[i]),
            )
            for i in range(self.n_snps)
        ]

    def _decode_rows(self, row0: int, row1: int) -> np.ndarray:
        """Decode bed rows [row0, row1) to dosages for kept subjects,
        shape (rows, n_subjects) int8 with -1 for missing."""
        n_rows = row1 - row0
        raw = np.fromfile(
            self.bed_path,
            dtype=np.uint8,
            count=n_rows * self.stride,
            offset=3 + row0 * self.stride,
        )
        if raw.size != n_rows * self.stride:
            raise InputFormatError(f"could not read rows {row0}:{row1} from {self.bed_path}")
        self.io.count += raw.size
        codes = _BYTE_LUT[raw.reshape(n_rows, self.stride)]
        return codes.reshape(n_rows, self.stride * 4)[:, self.subject_index]


def _read_fam(fam_path: Path) -> list:
    fam = pd.read_csv(fam_path, sep=r"\s+", header=None, dtype=str)
    if fam.shape[1] < 2:
        raise InputFormatError(f"{fam_path}: expected at least 2 whitespace-separated columns")
    ids = fam.iloc[:, 1].tolist()
    if len(set(ids)) != len(ids):
        raise InputFormatError(f"{fam_path}: duplicate subject ids")
    return ids


def _read_bim(bim_path: Path) -> np.ndarray:
    bim = pd.read_csv(bim_path, sep=r"\s+", header=None, dtype=str)
    if bim.shape[1] < 6:
        raise InputFormatError(f"{bim_path}: expected 6 whitespace-separated columns")
    return bim.iloc[:, 1].to_numpy(dtype=object)


def open_genotypes(
    bed_path,
    bim_path=None,
    fam_path=None,
    keep_ids=None,
    block_width: int = 1024,
) -> GenotypeSource:
    """Validate a genotype triplet and compute per-SNP statistics.

    Runs a single full pass over the .bed payload to collect observed
    means and population standard deviations of the mean-imputed columns.
    SNPs that are all-missing or monomorphic among kept subjects are
    dropped with a logged warning.

    ``bim_path``/``fam_path`` default to the .bed path with swapped
    suffixes. ``keep_ids`` restricts and orders subjects: the kept set
    follows .fam (file) order regardless of the order given.
    """
    bed_path = Path(bed_path)
    bim_path = Path(bim_path) if bim_path is not None else bed_path.with_suffix(".bim")
    fam_path = Path(fam_path) if fam_path is not None else bed_path.with_suffix(".fam")
    for p in (bed_path, bim_path, fam_path):
        if not p.exists():
            raise FileNotFoundError(str(p))
    if block_width < 1:
        raise InputFormatError("block width must be positive")

    fam_ids = _read_fam(fam_path)
    snp_ids = _read_bim(bim_path)
    n_fam = len(fam_ids)
    m_total = snp_ids.size
    stride = (n_fam + 3) // 4

    with open(bed_path, "rb") as fh:
        magic = fh.read(3)
    if magic != _BED_MAGIC:
        raise InputFormatError(f"{bed_path}: bad magic bytes; not a SNP-major PLINK 1.9 file")
    actual = bed_path.stat().st_size
    expected = 3 + m_total * stride
    if actual != expected:
        raise InputFormatError(
            f"{bed_path}: size {actual} does not match {expected} "
            f"for {m_total} SNPs x {n_fam} subjects"
        )

    if keep_ids is None:
        subject_index = np.arange(n_fam)
        subject_ids = list(fam_ids)
    else:
        keep = set(keep_ids)
        missing = keep - set(fam_ids)
        if missing:
            raise InputFormatError(f"{len(missing)} requested subject ids absent from {fam_path}")
        subject_index = np.array([i for i, sid in enumerate(fam_ids) if sid in keep], dtype=int)
        subject_ids = [fam_ids[i] for i in subject_index]
    n = len(subject_ids)
    if n == 0:
        raise InputFormatError("no subjects retained")

    src = GenotypeSource(
        bed_path=bed_path,
        stride=stride,
        n_fam=n_fam,
        subject_ids=subject_ids,
        subject_index=subject_index,
        snp_ids=snp_ids,
        file_rows=np.arange(m_total),
        means=np.zeros(m_total),
        stds=np.zeros(m_total),
        block_width=block_width,
    )

    means = np.zeros(m_total)
    stds = np.zeros(m_total)
    n_obs = np.zeros(m_total, dtype=np.int64)
    for row0 in range(0, m_total, block_width):
        row1 = min(row0 + block_width, m_total)
        dos = src._decode_rows(row0, row1)
        observed = dos >= 0
        cnt = observed.sum(axis=1)
        s1 = np.sum(dos, axis=1, where=observed, dtype=np.int64)
        s2 = np.sum((dos * dos).astype(np.int64), axis=1, where=observed)
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = np.where(cnt > 0, s1 / np.maximum(cnt, 1), 0.0)
        var = np.maximum(s2 - cnt * mu * mu, 0.0) / n
        means[row0:row1] = mu
        stds[row0:row1] = np.sqrt(var)
        n_obs[row0:row1] = cnt

    all_missing = n_obs == 0
    monomorphic = ~all_missing & (stds == 0.0)
    keep_mask = ~(all_missing | monomorphic)
    if all_missing.any():
        logger.warning("dropping %d SNPs with no observed calls", int(all_missing.sum()))
    if monomorphic.any():
        logger.warning("dropping %d monomorphic SNPs", int(monomorphic.sum()))
    if not keep_mask.any():
        raise InputFormatError("no usable SNPs after dropping all-missing and monomorphic ones")

    src.snp_ids = snp_ids[keep_mask]
    src.file_rows = np.flatnonzero(keep_mask)
    src.means = means[keep_mask]
    src.stds = stds[keep_mask]
    src.n_dropped_all_missing = int(all_missing.sum())
    src.n_dropped_monomorphic = int(monomorphic.sum())
    return src


def stream_blocks(source: GenotypeSource):
    """Yield standardized genotype blocks in file order.

    Each yielded :class:`GenotypeBlock` carries an (n x w) float64 matrix
    whose columns are mean-imputed and scaled to squared norm n, plus the
    per-column group labels when assignments have run.
    """
    m = source.n_snps
    width = source.block_width
    for start in range(0, m, width):
        stop = min(start + width, m)
        rows = source.file_rows[start:stop]
        row0, row1 = int(rows[0]), int(rows[-1]) + 1
        dos = source._decode_rows(row0, row1)
        if row1 - row0 != stop - start:
            dos = dos[rows - row0]
        x = dos.T.astype(np.float64)
        missing = x < 0
        if missing.any():
            mu_cols = np.broadcast_to(source.means[start:stop], x.shape)
            x[missing] = mu_cols[missing]
        x -= source.means[start:stop]
        x /= source.stds[start:stop]
        yield GenotypeBlock(
            x=x,
            start=start,
            stop=stop,
            partitions=None if source.partitions is None else source.partitions[start:stop],
            jackknife=(
                None
                if source.jackknife_blocks is None
                else source.jackknife_blocks[start:stop]
            ),
            cells=None if source.cell_of_snp is None else source.cell_of_snp[start:stop],
        )


def _dense_partition_check(labels: np.ndarray, k: int, what: str) -> None:
    sizes = np.bincount(labels, minlength=k)
    if (sizes == 0).any():
        empty = np.flatnonzero(sizes == 0)
        raise InputFormatError(f"{what} {empty.tolist()} would be empty")


def assign_partitions(
    source: GenotypeSource,
    scheme: PartitionScheme,
    ld_weights=None,
) -> GenotypeSource:
    """Return a copy of ``source`` with variance-component partitions set.

    ``ld_weights`` (per retained SNP, file order) are required by the
    maf-ld-grid scheme and ignored otherwise. Any previously assigned
    jackknife blocks are cleared because block placement depends on the
    partition structure.
    """
    m = source.n_snps
    if scheme.kind == "contiguous":
        k = int(scheme.n_partitions)
        if k > m:
            raise InputFormatError(f"cannot cut {m} SNPs into {k} partitions")
        labels = _balanced_contiguous_labels(m, k)
    elif scheme.kind == "explicit":
        ids = source.snp_ids
        if len(set(ids.tolist())) != m:
            raise InputFormatError("explicit partition mapping needs unique SNP ids")
        try:
            labels = np.array([scheme.assignments[str(s)] for s in ids], dtype=int)
        except KeyError as exc:
            raise InputFormatError(f"SNP {exc.args[0]!r} missing from partition mapping") from exc
        k = int(labels.max()) + 1 if m else 0
        if labels.min() < 0:
            raise InputFormatError("partition indices must be non-negative")
        _dense_partition_check(labels, k, "partitions")
    else:
        knots = np.asarray(scheme.maf_knots, dtype=float)
        n_maf_bins = knots.size + 1
        maf_bin = np.searchsorted(knots, source.mafs, side="right")
        q = scheme.n_ld_quantiles
        if q > 1:
            if ld_weights is None:
                raise InputFormatError("maf-ld-grid scheme needs per-SNP LD weights")
            w = np.asarray(ld_weights, dtype=float)
            if w.shape != (m,):
                raise InputFormatError(f"expected {m} LD weights, got shape {w.shape}")
            order = np.argsort(w, kind="stable")
            rank = np.empty(m, dtype=int)
            rank[order] = np.arange(m)
            ld_group = (rank * q) // m
        else:
            ld_group = np.zeros(m, dtype=int)
        labels = ld_group * n_maf_bins + maf_bin
        k = n_maf_bins * q
        occupied = np.unique(labels)
        if occupied.size < k:
            # Empty grid cells cannot be estimated; renumber the occupied
            # ones densely (order-preserving) instead of failing.
            logger.warning(
                "collapsing %d empty maf-ld grid cells; %d partitions remain",
                k - occupied.size,
                occupied.size,
            )
            remap = np.zeros(k, dtype=int)
            remap[occupied] = np.arange(occupied.size)
            labels = remap[labels]
            k = int(occupied.size)

    out = dataclasses.replace(
        source,
        partitions=labels,
        n_partitions=k,
        jackknife_blocks=None,
        n_jackknife_blocks=0,
        cell_of_snp=None,
        cell_partition=None,
        cell_block=None,
    )
    return out


def _balanced_contiguous_labels(m: int, k: int) -> np.ndarray:
    """Split m items into k contiguous runs with sizes differing by <= 1;
    longer runs come first."""
    base, extra = divmod(m, k)
    sizes = np.full(k, base, dtype=int)
    sizes[:extra] += 1
    return np.repeat(np.arange(k), sizes)


def _apportion(j_blocks: int, sizes: np.ndarray) -> np.ndarray:
    """Largest-remainder split of j_blocks across partitions, at least one
    block each and never more blocks than SNPs."""
    k = sizes.size
    m = int(sizes.sum())
    if j_blocks < k:
        raise InputFormatError(f"need at least {k} jackknife blocks for {k} partitions")
    if j_blocks > m:
        raise InputFormatError(f"cannot cut {m} SNPs into {j_blocks} blocks")
    quota = j_blocks * sizes / m
    counts = np.maximum(np.floor(quota).astype(int), 1)
    counts = np.minimum(counts, sizes)
    while counts.sum() > j_blocks:
        # Over-allocated because of the one-block floor; trim the largest.
        cand = np.flatnonzero(counts > 1)
        counts[cand[np.argmax(counts[cand] - quota[cand])]] -= 1
    if counts.sum() < j_blocks:
        frac = quota - counts
        frac[counts >= sizes] = -np.inf
        for _ in range(j_blocks - int(counts.sum())):
            i = int(np.argmax(frac))
            counts[i] += 1
            frac[i] -= 1.0
            if counts[i] >= sizes[i]:
                frac[i] = -np.inf
    return counts


def assign_jackknife_blocks(
    source: GenotypeSource,
    j_blocks: int,
    scheme: str = "within-partition",
) -> GenotypeSource:
    """Return a copy of ``source`` with jackknife block labels set.

    ``within-partition`` apportions the blocks to partitions by size
    (largest remainder) and splits each partition's SNP run contiguously,
    so no block straddles a partition; ``global`` splits the whole file
    order contiguously regardless of partitions. Block sizes within one
    partition (or globally) differ by at most one.
    """
    if scheme not in ("within-partition", "global"):
        raise InputFormatError(f"unknown jackknife scheme {scheme!r}")
    m = source.n_snps
    if j_blocks < 1:
        raise InputFormatError("need at least one jackknife block")
    parts = source.partitions
    n_parts = source.n_partitions
    if parts is None:
        parts = np.zeros(m, dtype=int)
        n_parts = 1

    labels = np.empty(m, dtype=int)
    if scheme == "global" or n_parts == 1:
        if j_blocks > m:
            raise InputFormatError(f"cannot cut {m} SNPs into {j_blocks} blocks")
        labels[:] = _balanced_contiguous_labels(m, j_blocks)
    else:
        sizes = np.bincount(parts, minlength=n_parts)
        counts = _apportion(j_blocks, sizes)
        next_block = 0
        for k in range(n_parts):
            members = np.flatnonzero(parts == k)
            labels[members] = next_block + _balanced_contiguous_labels(members.size, counts[k])
            next_block += counts[k]

    out = dataclasses.replace(
        source,
        partitions=source.partitions,
        jackknife_blocks=labels,
        n_jackknife_blocks=j_blocks,
    )
    _rebuild_cells(out)
    return out


def _rebuild_cells(source: GenotypeSource) -> None:
    """Index the nonempty (partition, block) cells in file order."""
    parts = source.partitions
    if parts is None:
        parts = np.zeros(source.n_snps, dtype=int)
    key = parts * source.n_jackknife_blocks + source.jackknife_blocks
    uniq, inverse = np.unique(key, return_inverse=True)
    source.cell_of_snp = inverse.astype(int)
    source.cell_partition = (uniq // source.n_jackknife_blocks).astype(int)
    source.cell_block = (uniq % source.n_jackknife_blocks).astype(int)


class BedWriter:
    """Incremental SNP-major .bed writer; append dosage rows, then close."""

    def __init__(self, bed_path, n_subjects: int):
        self.path = Path(bed_path)
        self.n = n_subjects
        self._fh = open(self.path, "wb")
        self._fh.write(_BED_MAGIC)
        self.rows_written = 0

    def append(self, dosages) -> None:
        """Write a (w, n_subjects) block of dosages in {-1, 0, 1, 2}."""
        dos = np.asarray(dosages)
        if dos.ndim == 1:
            dos = dos[None, :]
        if dos.shape[1] != self.n:
            raise InputFormatError(f"expected {self.n} subjects per row, got {dos.shape[1]}")
        if dos.min() < -1 or dos.max() > 2:
            raise InputFormatError("dosages must lie in {-1, 0, 1, 2}")
        w = dos.shape[0]
        pad = (-self.n) % 4
        codes = _DOSAGE_CODE[dos.astype(np.int64) + 1]
        if pad:
            filler = np.ones((w, pad), dtype=np.uint8)  # code 01 = missing padding
            codes = np.concatenate([codes, filler], axis=1)
        quads = codes.reshape(w, -1, 4).astype(np.uint8)
        packed = quads[:, :, 0] | quads[:, :, 1] << 2 | quads[:, :, 2] << 4 | quads[:, :, 3] << 6
        self._fh.write(packed.astype(np.uint8).tobytes())
        self.rows_written += w

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_plink(
    prefix,
    dosages,
    snp_ids=None,
    subject_ids=None,
    chrom: int = 1,
    positions=None,
    a1: str = "A",
    a2: str = "G",
):
    """Write an (n_subjects, n_snps) dosage matrix as a PLINK triplet.

    Dosages count copies of ``a1``; -1 encodes a missing call. Returns
    the (bed, bim, fam) paths.
    """
    dosages = np.asarray(dosages)
    if dosages.ndim != 2:
        raise InputFormatError("dosages must be a 2-d subjects x SNPs matrix")
    n, m = dosages.shape
    prefix = Path(prefix)
    if snp_ids is None:
        snp_ids = [f"snp{j}" for j in range(m)]
    if subject_ids is None:
        subject_ids = [f"s{i}" for i in range(n)]
    if positions is None:
        positions = np.arange(1, m + 1)
    if len(snp_ids) != m or len(subject_ids) != n:
        raise InputFormatError("id lists do not match the dosage matrix shape")

    bed_path = prefix.with_suffix(".bed")
    bim_path = prefix.with_suffix(".bim")
    fam_path = prefix.with_suffix(".fam")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with BedWriter(bed_path, n) as writer:
        step = max(1, (1 << 22) // max(n, 1))
        for j0 in range(0, m, step):
            writer.append(dosages[:, j0 : j0 + step].T)
    write_bim(bim_path, snp_ids, chrom=chrom, positions=positions, a1=a1, a2=a2)
    write_fam(fam_path, subject_ids)
    return bed_path, bim_path, fam_path


def write_bim(bim_path, snp_ids, chrom: int = 1, positions=None, a1: str = "A", a2: str = "G"):
    if positions is None:
        positions = np.arange(1, len(snp_ids) + 1)
    with open(bim_path, "w") as fh:
        for j, sid in enumerate(snp_ids):
            fh.write(f"{chrom}\t{sid}\t0\t{int(positions[j])}\t{a1}\t{a2}\n")


def write_fam(fam_path, subject_ids):
    with open(fam_path, "w") as fh:
        for sid in subject_ids:
            fh.write(f"{sid} {sid} 0 0 0 -9\n")
