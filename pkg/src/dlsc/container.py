"""On-disk archive for compressed snapshot series, plus work partitioning.

An archive holds one variable's whole time series: a fixed-size addressable
header (sized purely by snapshot count, patch count and batch size) followed
by tightly packed raw-DEFLATE payloads, one stream per batch of patch
records.  Batches never span snapshots, so any snapshot or batch is
independently decodable.
"""

from __future__ import annotations

import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .codec import PatchCode, decode_stream, encode_patch
from .errors import FormatError, TruncatedFileError

DDLS_MAGIC = b"DDLS"
DDLS_VERSION = 1
DEFAULT_BATCH_SIZE = 1000
DEFLATE_LEVEL = 6
LABEL_BYTES = 16

_FIXED = struct.Struct("<4sII QQQ II 16s d QQQ")
FIXED_HEADER_BYTES = _FIXED.size  # 92
_BATCH_ENTRY = struct.Struct("<QQQ")


@dataclass(frozen=True)
class BatchEntry:
    offset: int
    compressed_bytes: int
    raw_bytes: int


@dataclass(frozen=True)
class ContainerHeader:
    dtype: int
    dims: tuple[int, int, int]
    m: int
    padding_mode: int
    label: str
    eps_t: float
    snapshots: int
    patches_per_snapshot: int
    batch_size: int
    norms: tuple[float, ...]
    batches: tuple[BatchEntry, ...]

    @property
    def batches_per_snapshot(self) -> int:
        return math.ceil(self.patches_per_snapshot / self.batch_size)

    @property
    def values_per_patch(self) -> int:
        return self.m ** 3

    def header_bytes(self) -> int:
        return header_size(self.snapshots, self.patches_per_snapshot, self.batch_size)


def header_size(snapshots: int, patches_per_snapshot: int, batch_size: int) -> int:
    """Archive header length; a pure function of (T, N, B) by design."""
    per_snapshot = math.ceil(patches_per_snapshot / batch_size)
    return (
        FIXED_HEADER_BYTES
        + 8 * snapshots
        + _BATCH_ENTRY.size * snapshots * per_snapshot
    )


@dataclass(frozen=True)
class WorkPartition:
    """Contiguous near-equal item ranges, one per worker."""

    counts: tuple[int, ...]
    starts: tuple[int, ...]

    def range_of(self, worker: int) -> range:
        return range(self.starts[worker], self.starts[worker] + self.counts[worker])


def partition_work(total: int, workers: int) -> WorkPartition:
    """Split ``total`` items across workers, earlier workers take the remainder.

    counts[p] = floor(total/workers) + (1 if p < total mod workers else 0)
    starts[p] = floor(total/workers) * p + min(p, total mod workers)
    """
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    if total < 0:
        raise ValueError("item count must be >= 0")
    div, rem = divmod(total, workers)
    counts = tuple(div + (1 if p < rem else 0) for p in range(workers))
    starts = tuple(div * p + min(p, rem) for p in range(workers))
    return WorkPartition(counts=counts, starts=starts)


def _deflate(data: bytes, level: int = DEFLATE_LEVEL) -> bytes:
    comp = zlib.compressobj(level, zlib.DEFLATED, -15)
    return comp.compress(data) + comp.flush()


def _inflate(data: bytes, expected: int) -> bytes:
    try:
        decomp = zlib.decompressobj(-15)
        out = decomp.decompress(data) + decomp.flush()
        if not decomp.eof:
            raise FormatError("DEFLATE stream ended prematurely")
    except zlib.error as exc:
        raise FormatError(f"DEFLATE stream corrupt: {exc}") from exc
    if len(out) != expected:
        raise FormatError(
            f"batch inflated to {len(out)} bytes, header says {expected}"
        )
    return out


def write_container(
    path: str | Path,
    *,
    dims: tuple[int, int, int],
    m: int,
    label: str,
    eps_t: float,
    norms: Sequence[float],
    snapshots_codes: Sequence[Sequence[PatchCode]],
    batch_size: int = DEFAULT_BATCH_SIZE,
    padding_mode: int = 0,
    dtype: int = 0,
    workers: int = 1,
) -> ContainerHeader:
    """Write a whole series of patch codes as one archive.

    Every batch is the concatenation of its patch records compressed as one
    raw-DEFLATE stream; batch payload offsets come from a prefix scan over
    the compressed lengths.  Output bytes are identical for any worker
    count.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    snapshots = len(snapshots_codes)
    if snapshots == 0:
        raise ValueError("need at least one snapshot")
    if len(norms) != snapshots:
        raise ValueError(f"got {len(norms)} norms for {snapshots} snapshots")
    patch_count = len(snapshots_codes[0])
    for j, codes in enumerate(snapshots_codes):
        if len(codes) != patch_count:
            raise ValueError(
                f"snapshot {j} has {len(codes)} patch codes, expected {patch_count}"
            )
    label_bytes = label.encode("utf-8")
    if len(label_bytes) > LABEL_BYTES:
        raise ValueError(f"label {label!r} exceeds {LABEL_BYTES} bytes")

    raw_batches: list[bytes] = []
    for codes in snapshots_codes:
        for start in range(0, patch_count, batch_size):
            chunk = codes[start : start + batch_size]
            raw_batches.append(b"".join(encode_patch(c) for c in chunk))

    if workers > 1 and len(raw_batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            payloads = list(pool.map(_deflate, raw_batches))
    else:
        payloads = [_deflate(raw) for raw in raw_batches]

    start = header_size(snapshots, patch_count, batch_size)
    entries = []
    for raw, payload in zip(raw_batches, payloads):
        entries.append(BatchEntry(offset=start, compressed_bytes=len(payload), raw_bytes=len(raw)))
        start += len(payload)

    header = ContainerHeader(
        dtype=dtype,
        dims=tuple(dims),
        m=m,
        padding_mode=padding_mode,
        label=label,
        eps_t=eps_t,
        snapshots=snapshots,
        patches_per_snapshot=patch_count,
        batch_size=batch_size,
        norms=tuple(float(v) for v in norms),
        batches=tuple(entries),
    )
    with open(path, "wb") as fh:
        fh.write(
            _FIXED.pack(
                DDLS_MAGIC,
                DDLS_VERSION,
                dtype,
                dims[0],
                dims[1],
                dims[2],
                m,
                padding_mode,
                label_bytes,
                eps_t,
                snapshots,
                patch_count,
                batch_size,
            )
        )
        fh.write(struct.pack(f"<{snapshots}d", *header.norms))
        for entry in entries:
            fh.write(_BATCH_ENTRY.pack(entry.offset, entry.compressed_bytes, entry.raw_bytes))
        for payload in payloads:
            fh.write(payload)
    return header


class ContainerReader:
    """Lazy random-access view of an archive; payloads are read per batch."""

    def __init__(self, path: str | Path, header: ContainerHeader) -> None:
        self.path = Path(path)
        self.header = header

    def _batch_index(self, snapshot: int, batch: int) -> int:
        h = self.header
        if not 0 <= snapshot < h.snapshots:
            raise IndexError(f"snapshot {snapshot} out of range [0, {h.snapshots})")
        if not 0 <= batch < h.batches_per_snapshot:
            raise IndexError(f"batch {batch} out of range [0, {h.batches_per_snapshot})")
        return snapshot * h.batches_per_snapshot + batch

    def batch_code_count(self, batch: int) -> int:
        h = self.header
        start = batch * h.batch_size
        return min(h.batch_size, h.patches_per_snapshot - start)

    def read_batch(self, snapshot: int, batch: int) -> list[PatchCode]:
        h = self.header
        entry = h.batches[self._batch_index(snapshot, batch)]
        with open(self.path, "rb") as fh:
            fh.seek(entry.offset)
            payload = fh.read(entry.compressed_bytes)
        if len(payload) != entry.compressed_bytes:
            raise TruncatedFileError(
                f"{self.path}: batch payload truncated at offset {entry.offset}"
            )
        raw = _inflate(payload, entry.raw_bytes)
        return decode_stream(raw, h.values_per_patch, self.batch_code_count(batch))

    def read_snapshot(self, snapshot: int) -> list[PatchCode]:
        codes: list[PatchCode] = []
        for b in range(self.header.batches_per_snapshot):
            codes.extend(self.read_batch(snapshot, b))
        return codes

    def read_all(self) -> list[list[PatchCode]]:
        return [self.read_snapshot(j) for j in range(self.header.snapshots)]


def read_container(path: str | Path) -> ContainerReader:
    """Parse and validate the header without touching any payload bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        fixed = fh.read(FIXED_HEADER_BYTES)
        if len(fixed) < FIXED_HEADER_BYTES:
            raise TruncatedFileError(f"{path}: truncated archive header")
        (
            magic,
            version,
            dtype,
            nx,
            ny,
            nz,
            m,
            padding_mode,
            label_bytes,
            eps_t,
            snapshots,
            patch_count,
            batch_size,
        ) = _FIXED.unpack(fixed)
        if magic != DDLS_MAGIC:
            raise FormatError(f"{path}: not a DDLS archive")
        if version != DDLS_VERSION:
            raise FormatError(f"{path}: unsupported archive version {version}")
        if batch_size < 1 or snapshots < 1 or patch_count < 1:
            raise FormatError(f"{path}: nonsensical header counts")
        norms_raw = fh.read(8 * snapshots)
        if len(norms_raw) < 8 * snapshots:
            raise TruncatedFileError(f"{path}: truncated norm table")
        norms = struct.unpack(f"<{snapshots}d", norms_raw)
        n_batches = snapshots * math.ceil(patch_count / batch_size)
        table_raw = fh.read(_BATCH_ENTRY.size * n_batches)
        if len(table_raw) < _BATCH_ENTRY.size * n_batches:
            raise TruncatedFileError(f"{path}: truncated batch table")
        entries = tuple(
            BatchEntry(*_BATCH_ENTRY.unpack_from(table_raw, k * _BATCH_ENTRY.size))
            for k in range(n_batches)
        )

    expected_offset = header_size(snapshots, patch_count, batch_size)
    for k, entry in enumerate(entries):
        if entry.offset != expected_offset:
            raise FormatError(
                f"{path}: batch {k} offset {entry.offset} breaks contiguity "
                f"(expected {expected_offset})"
            )
        expected_offset += entry.compressed_bytes

    header = ContainerHeader(
        dtype=dtype,
        dims=(nx, ny, nz),
        m=m,
        padding_mode=padding_mode,
        label=label_bytes.rstrip(b"\x00").decode("utf-8"),
        eps_t=eps_t,
        snapshots=snapshots,
        patches_per_snapshot=patch_count,
        batch_size=batch_size,
        norms=norms,
        batches=entries,
    )
    return ContainerReader(path, header)


@dataclass(frozen=True)
class SizeReport:
    """Byte accounting for compression-ratio reporting."""

    payload_bytes: int
    header_bytes: int
    basis_bytes: int
    original_bytes: int

    @property
    def cr(self) -> float:
        return self.original_bytes / (self.payload_bytes + self.header_bytes + self.basis_bytes)

    @property
    def cr_without_basis(self) -> float:
        return self.original_bytes / (self.payload_bytes + self.header_bytes)


def compressed_size_report(
    path: str | Path, basis_paths: Sequence[str | Path] = ()
) -> SizeReport:
    """Size breakdown of an archive; CR counts basis storage when given.

    Original bytes are the unpadded binary64 footprint of the whole series.
    """
    reader = read_container(path)
    h = reader.header
    payload = sum(entry.compressed_bytes for entry in h.batches)
    basis_bytes = 0
    for p in basis_paths:
        p = Path(p)
        if not p.is_file():
            raise FileNotFoundError(f"basis file not found: {p}")
        basis_bytes += p.stat().st_size
    nx, ny, nz = h.dims
    original = h.snapshots * nx * ny * nz * 8
    return SizeReport(
        payload_bytes=payload,
        header_bytes=h.header_bytes(),
        basis_bytes=basis_bytes,
        original_bytes=original,
    )
