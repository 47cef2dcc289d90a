"""Learn / compress / decompress orchestration over snapshot series.

The basis is learned once from the first snapshot of each variable and
reused for the whole series.  Compression of a snapshot is patch-parallel:
the projection runs as one full-block operation and all later stages are
row-local, so archives and reconstructions are byte-identical for any
worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import basis as basis_mod
from . import codec, container
from .basis import BasisKind, PatchBasis
from .errors import DegenerateNormError, DimensionMismatchError, FormatError
from .field import (
    Field,
    PatchLayout,
    assemble_matrix,
    load_field,
    make_layout,
    patch_matrix,
    sample_patches,
    save_field,
)

BASIS_KIND_NAMES = {BasisKind.SVD: "svd", BasisKind.COSINE: "dct", BasisKind.RANDOM: "random"}
_KIND_BY_NAME = {name: kind for kind, name in BASIS_KIND_NAMES.items()}

SWEEP_CSV_HEADER = "m,lambda,basis,eps_t_pct,nrmse_pct,cr,cr_with_basis,wall_s,throughput_MBps"


def parse_basis_kind(name: str) -> BasisKind:
    try:
        return _KIND_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown basis kind {name!r}; expected one of {sorted(_KIND_BY_NAME)}")


@dataclass(frozen=True)
class CompressionJob:
    """One compression run: per-variable snapshot series plus knobs."""

    inputs: Mapping[str, Sequence[str | Path]]  # label -> ordered snapshot paths
    archives: Mapping[str, str | Path]  # label -> output archive path
    m: int
    eps_t: float
    basis_kind: BasisKind = BasisKind.SVD
    seed: int = 0
    batch_size: int = container.DEFAULT_BATCH_SIZE
    workers: int = 1
    raw_dims: tuple[int, int, int] | None = None

    def __post_init__(self) -> None:
        if self.eps_t < 0:
            raise ValueError("target error must be >= 0")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        if not self.inputs:
            raise ValueError("job has no input series")


@dataclass(frozen=True)
class SnapshotReport:
    """Per-snapshot compress metrics; nrmse_pct is the coefficient-space bound."""

    index: int
    nrmse_pct: float
    kept_mean: float
    kept_max: int


@dataclass(frozen=True)
class Metrics:
    label: str
    m: int
    eps_t: float
    coarsening: float
    snapshots: tuple[SnapshotReport, ...]
    cr: float  # payload + header only
    cr_with_basis: float
    wall_s: float
    throughput_mbps: float

    @property
    def max_nrmse_pct(self) -> float:
        return max(r.nrmse_pct for r in self.snapshots)

    @property
    def conservatism(self) -> float | None:
        """How far below target the worst snapshot stayed; None when exact."""
        worst = self.max_nrmse_pct
        return self.eps_t / worst if worst > 0 else None


def load_series(
    paths: Sequence[str | Path], raw_dims: tuple[int, int, int] | None = None
) -> list[Field]:
    """Load an ordered snapshot series, enforcing uniform dims and label."""
    if not paths:
        raise ValueError("empty snapshot series")
    fields = [load_field(p, expected_dims=raw_dims) for p in paths]
    first = fields[0]
    for f, p in zip(fields, paths):
        if f.dims != first.dims:
            raise DimensionMismatchError(
                f"{p}: dims {f.dims} differ from first snapshot {first.dims}"
            )
        if f.label != first.label:
            raise FormatError(f"{p}: label {f.label!r} differs from series label {first.label!r}")
    return fields


def learn(job: CompressionJob) -> dict[str, PatchBasis]:
    """Build one basis per variable from that variable's first snapshot."""
    bases: dict[str, PatchBasis] = {}
    for label, paths in job.inputs.items():
        if not paths:
            raise ValueError(f"variable {label!r} has no snapshots")
        if job.basis_kind == BasisKind.COSINE:
            bases[label] = basis_mod.build_cosine_basis(job.m)
        elif job.basis_kind == BasisKind.RANDOM:
            bases[label] = basis_mod.build_random_basis(job.m, seed=job.seed)
        else:
            training = load_field(paths[0], expected_dims=job.raw_dims)
            q = sample_patches(training, job.m, seed=job.seed)
            bases[label] = basis_mod.build_svd_basis(
                q, seed=job.seed, training_digest=training.digest()
            )
    return bases


def _compress_snapshot(
    basis: PatchBasis, rows: np.ndarray, eps_l: float, workers: int
) -> tuple[list[codec.PatchCode], np.ndarray]:
    """Patch-parallel select+groom; the projection runs once, unsliced."""
    alphas = codec.project_block(basis, rows)
    n = alphas.shape[0]
    if workers <= 1 or n < 2:
        return codec.compress_coefficients(alphas, eps_l)
    part = container.partition_work(n, workers)
    slices = [part.range_of(p) for p in range(workers) if part.counts[p]]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(lambda r: codec.compress_coefficients(alphas[r.start : r.stop], eps_l), slices)
        )
    codes: list[codec.PatchCode] = []
    err_sq = np.empty(n, dtype=np.float64)
    for r, (chunk_codes, chunk_err) in zip(slices, results):
        codes.extend(chunk_codes)
        err_sq[r.start : r.stop] = chunk_err
    return codes, err_sq


def compress(job: CompressionJob, bases: Mapping[str, PatchBasis]) -> dict[str, Metrics]:
    """Compress every variable's series to its archive; returns per-label metrics."""
    out: dict[str, Metrics] = {}
    for label, paths in job.inputs.items():
        if label not in bases:
            raise ValueError(f"no basis supplied for variable {label!r}")
        basis = bases[label]
        if basis.m != job.m:
            raise DimensionMismatchError(f"basis edge {basis.m} != job edge {job.m}")
        t0 = time.perf_counter()
        fields = load_series(paths, raw_dims=job.raw_dims)
        dims = fields[0].dims
        layout = make_layout(*dims, job.m)
        total_points = layout.padded_size
        big_m = layout.values_per_patch

        reports = []
        snapshots_codes = []
        norms = []
        for t, f in enumerate(fields):
            norm = f.l2_norm()
            budget = codec.make_budget(job.eps_t, norm, total_points, big_m)
            rows = patch_matrix(f, layout)
            codes, err_sq = _compress_snapshot(basis, rows, budget.eps_l, job.workers)
            err = float(np.sqrt(np.sum(err_sq)))
            nrmse_pct = 100.0 * err / norm if norm > 0 else 0.0
            kept = np.array([c.n for c in codes])
            reports.append(
                SnapshotReport(
                    index=t,
                    nrmse_pct=nrmse_pct,
                    kept_mean=float(kept.mean()),
                    kept_max=int(kept.max()),
                )
            )
            snapshots_codes.append(codes)
            norms.append(norm)

        archive = Path(job.archives[label])
        container.write_container(
            archive,
            dims=dims,
            m=job.m,
            label=label,
            eps_t=job.eps_t,
            norms=norms,
            snapshots_codes=snapshots_codes,
            batch_size=job.batch_size,
            workers=job.workers,
        )
        wall = time.perf_counter() - t0

        report = container.compressed_size_report(archive)
        stored = report.payload_bytes + report.header_bytes
        basis_bytes = basis_mod.basis_file_bytes(job.m)
        input_bytes = report.original_bytes
        out[label] = Metrics(
            label=label,
            m=job.m,
            eps_t=job.eps_t,
            coarsening=coarsening_factor(dims, job.m),
            snapshots=tuple(reports),
            cr=input_bytes / stored,
            cr_with_basis=input_bytes / (stored + basis_bytes),
            wall_s=wall,
            throughput_mbps=input_bytes / 1e6 / wall if wall > 0 else 0.0,
        )
    return out


def decompress(
    archive: str | Path,
    basis: PatchBasis,
    out_dir: str | Path | None = None,
    snapshot: int | None = None,
    workers: int = 1,
) -> list[tuple[int, Field]]:
    """Reconstruct snapshots from an archive; optionally write FLD1 files.

    Output is byte-identical for any worker count: reconstruction is
    gathered per patch and only sliced across workers.
    """
    reader = container.read_container(archive)
    h = reader.header
    if basis.m != h.m:
        raise DimensionMismatchError(
            f"basis edge {basis.m} does not match archive edge {h.m}"
        )
    layout = make_layout(*h.dims, h.m)
    if layout.patch_count != h.patches_per_snapshot:
        raise FormatError(
            f"archive claims {h.patches_per_snapshot} patches but dims {h.dims} tile into "
            f"{layout.patch_count}"
        )
    indices = range(h.snapshots) if snapshot is None else [snapshot]
    results = []
    for j in indices:
        codes = reader.read_snapshot(j)
        rows = _reconstruct_rows(basis, codes, workers)
        f = assemble_matrix(rows, layout, h.dims, label=h.label)
        if out_dir is not None:
            out = Path(out_dir) / f"{h.label}_{j:04d}.fld"
            save_field(f, out)
        results.append((j, f))
    return results


def _reconstruct_rows(
    basis: PatchBasis, codes: Sequence[codec.PatchCode], workers: int
) -> np.ndarray:
    n = len(codes)
    if workers <= 1 or n < 2:
        return codec.reconstruct_block(basis, codes)
    part = container.partition_work(n, workers)
    slices = [part.range_of(p) for p in range(workers) if part.counts[p]]
    rows = np.zeros((n, basis.values_per_patch), dtype=np.float64)

    def run(r: range) -> None:
        rows[r.start : r.stop] = codec.reconstruct_block(basis, codes[r.start : r.stop])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, slices))
    return rows


def nrmse(original: Field, reconstructed: Field) -> float:
    """Relative L2 reconstruction error in percent, over the unpadded domain."""
    if original.dims != reconstructed.dims:
        raise DimensionMismatchError(
            f"dims {original.dims} vs {reconstructed.dims} do not match"
        )
    norm = original.l2_norm()
    err = float(np.linalg.norm(original.data - reconstructed.data))
    if norm == 0.0:
        if err == 0.0:
            return 0.0
        raise DegenerateNormError("original field has zero norm but reconstruction differs")
    return 100.0 * err / norm


def evaluate_series(
    orig_paths: Sequence[str | Path],
    recon_paths: Sequence[str | Path],
    raw_dims: tuple[int, int, int] | None = None,
) -> list[tuple[int, float]]:
    """Per-snapshot NRMSE between two equally long snapshot series."""
    if len(orig_paths) != len(recon_paths):
        raise ValueError(
            f"series lengths differ: {len(orig_paths)} original vs {len(recon_paths)} reconstructed"
        )
    if not orig_paths:
        raise ValueError("empty series")
    rows = []
    for t, (a, b) in enumerate(zip(orig_paths, recon_paths)):
        fa = load_field(a, expected_dims=raw_dims)
        fb = load_field(b, expected_dims=raw_dims)
        rows.append((t, nrmse(fa, fb)))
    return rows


def coarsening_factor(dims: tuple[int, int, int], m: int) -> float:
    """High-fidelity points per patch of the padded tiling."""
    layout = make_layout(*dims, m)
    return (dims[0] * dims[1] * dims[2]) / layout.patch_count


@dataclass(frozen=True)
class SweepRow:
    m: int
    coarsening: float
    basis: str
    eps_t: float
    nrmse_pct: float  # max measured over snapshots, from actual reconstruction
    cr: float
    cr_with_basis: float
    wall_s: float
    throughput_mbps: float

    def csv_line(self, include_timing: bool = True) -> str:
        wall = self.wall_s if include_timing else 0.0
        tput = self.throughput_mbps if include_timing else 0.0
        return (
            f"{self.m},{self.coarsening:.6g},{self.basis},{self.eps_t:.6g},"
            f"{self.nrmse_pct:.6g},{self.cr:.6g},{self.cr_with_basis:.6g},"
            f"{wall:.6g},{tput:.6g}"
        )


def sweep(
    inputs: Sequence[str | Path],
    m_list: Sequence[int],
    eps_list: Sequence[float],
    basis_kinds: Sequence[BasisKind],
    work_dir: str | Path,
    seed: int = 0,
    batch_size: int = container.DEFAULT_BATCH_SIZE,
    workers: int = 1,
    raw_dims: tuple[int, int, int] | None = None,
) -> list[SweepRow]:
    """Rate-distortion grid over patch edge, basis kind and target error.

    One row per combination, in (m, basis, eps_t) nesting order.  NRMSE is
    measured from real reconstructions, not the compress-time bound.  Bases
    are learned once per (m, kind) and reused across error levels.
    """
    fields = load_series(inputs, raw_dims=raw_dims)
    label = fields[0].label
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for m in m_list:
        for kind in basis_kinds:
            job_proto = CompressionJob(
                inputs={label: list(inputs)},
                archives={label: work_dir / f"sweep_{label}_{m}_{BASIS_KIND_NAMES[kind]}.ddls"},
                m=m,
                eps_t=0.0,
                basis_kind=kind,
                seed=seed,
                batch_size=batch_size,
                workers=workers,
                raw_dims=raw_dims,
            )
            basis = learn(job_proto)[label]
            for eps_t in eps_list:
                job = CompressionJob(
                    inputs=job_proto.inputs,
                    archives=job_proto.archives,
                    m=m,
                    eps_t=eps_t,
                    basis_kind=kind,
                    seed=seed,
                    batch_size=batch_size,
                    workers=workers,
                    raw_dims=raw_dims,
                )
                metrics = compress(job, {label: basis})[label]
                archive = job.archives[label]
                recon = decompress(archive, basis, workers=workers)
                measured = max(nrmse(f, r) for f, (_, r) in zip(fields, recon))
                rows.append(
                    SweepRow(
                        m=m,
                        coarsening=metrics.coarsening,
                        basis=BASIS_KIND_NAMES[kind],
                        eps_t=eps_t,
                        nrmse_pct=measured,
                        cr=metrics.cr,
                        cr_with_basis=metrics.cr_with_basis,
                        wall_s=metrics.wall_s,
                        throughput_mbps=metrics.throughput_mbps,
                    )
                )
    return rows


def write_sweep_csv(
    rows: Sequence[SweepRow], path: str | Path, include_timing: bool = True
) -> None:
    """Write the sweep table (UTF-8, LF line endings)."""
    lines = [SWEEP_CSV_HEADER] + [r.csv_line(include_timing) for r in rows]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
