"""Per-patch transform coding under a local L2 error budget.

The chain for one patch is: project onto an orthonormal basis, keep the
fewest coefficients whose dropped tail stays within the local tolerance,
quantize the kept values by zeroing low mantissa bits inside the remaining
slack (bit grooming), and serialize to a compact record.  Because the basis
is orthonormal, the L2 error of dropping a coefficient set equals the L2
norm of that set (Parseval), so selection never needs an explicit
reconstruction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import PatchBasis
from .errors import FormatError, TruncatedFileError

GROOM_SAFETY = 0.99
MANTISSA_BITS = 52

_SIGN_MASK = np.uint64(0x8000000000000000)
_MAG_MASK = np.uint64(0x7FFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class ToleranceBudget:
    """Global target error resolved into a per-patch L2 allowance.

    ``eps`` is the absolute global budget (eps_t percent of the snapshot
    norm); splitting it as eps_l = eps * sqrt(M / K) over K/M patches makes
    the patch-wise budgets add back up to eps exactly: N * eps_l^2 = eps^2.
    """

    eps_t: float
    u_norm: float
    eps: float
    eps_l: float
    total_points: int
    values_per_patch: int

    @property
    def patch_count(self) -> int:
        return self.total_points // self.values_per_patch


def make_budget(
    eps_t: float, field_norm: float, total_points: int, values_per_patch: int
) -> ToleranceBudget:
    """Derive the per-patch budget from a target error in percent of ||u||."""
    if eps_t < 0:
        raise ValueError(f"target error must be >= 0, got {eps_t}")
    if field_norm < 0:
        raise ValueError("field norm must be >= 0")
    if total_points <= 0 or values_per_patch <= 0:
        raise ValueError("point counts must be positive")
    if total_points % values_per_patch != 0:
        raise ValueError(
            f"total point count {total_points} is not a multiple of patch size {values_per_patch}"
        )
    eps = eps_t * field_norm / 100.0
    eps_l = eps * np.sqrt(values_per_patch / total_points)
    return ToleranceBudget(
        eps_t=eps_t,
        u_norm=field_norm,
        eps=eps,
        eps_l=float(eps_l),
        total_points=total_points,
        values_per_patch=values_per_patch,
    )


def project(basis: PatchBasis, values: np.ndarray) -> np.ndarray:
    """Coefficients of one patch: alpha = C^T p."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size != basis.values_per_patch:
        raise ValueError(
            f"patch has {values.size} values, basis expects {basis.values_per_patch}"
        )
    return basis.modes.T @ values


def project_block(basis: PatchBasis, rows: np.ndarray) -> np.ndarray:
    """Coefficients for a block of patches, one row per patch."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != basis.values_per_patch:
        raise ValueError(f"expected (N, {basis.values_per_patch}) patch rows, got {rows.shape}")
    return rows @ basis.modes


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Smallest coefficient set meeting the budget, plus the dropped tail."""

    n: int
    indices: np.ndarray  # ascending mode ids of kept coefficients
    values: np.ndarray  # exact (ungroomed) kept coefficients
    tail_l2: float

    @property
    def kept(self) -> list[tuple[int, float]]:
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]


def _selection_arrays(alphas: np.ndarray, eps_l: float):
    """Vectorized minimal-n selection over rows of coefficients.

    Returns (counts, order, tails): per-row retained count, the descending
    |alpha| ordering (ties keep the lower index first), and the L2 norm of
    each row's dropped suffix.  Suffix norms are accumulated smallest-first
    for accuracy, and identically to any bisection over the same sorted
    prefix.
    """
    n_rows, n_cols = alphas.shape
    order = np.argsort(-np.abs(alphas), axis=1, kind="stable")
    sorted_vals = np.take_along_axis(alphas, order, axis=1)
    squares = sorted_vals * sorted_vals
    suffix = np.zeros((n_rows, n_cols + 1), dtype=np.float64)
    suffix[:, :n_cols] = np.cumsum(squares[:, ::-1], axis=1)[:, ::-1]
    tails = np.sqrt(suffix)
    counts = np.argmax(tails <= eps_l, axis=1)  # first feasible n; n = M always is
    tail_l2 = tails[np.arange(n_rows), counts]
    return counts, order, tail_l2


def select_coefficients(alpha: np.ndarray, eps_l: float) -> SelectionResult:
    """Keep the fewest coefficients whose dropped L2 tail is <= eps_l.

    Coefficients are ranked by descending magnitude; for an orthonormal
    basis this prefix is the L2-optimal subset of its size.
    """
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if not np.isfinite(alpha).all():
        raise ValueError("coefficients must be finite")
    if eps_l < 0:
        raise ValueError("budget must be >= 0")
    counts, order, tails = _selection_arrays(alpha.reshape(1, -1), eps_l)
    n = int(counts[0])
    idx = np.sort(order[0, :n])
    return SelectionResult(
        n=n,
        indices=idx.astype(np.int64),
        values=alpha[idx],
        tail_l2=float(tails[0]),
    )


def _round_at_bits(bits: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Round-to-nearest at mantissa bit z (ties away from zero), per element.

    Operates on magnitude bits so carries propagate cleanly across binade
    boundaries; z = 0 is the identity.
    """
    z = z.astype(np.uint64)
    one = np.uint64(1)
    active = z > 0
    shift = np.where(active, z - one, np.uint64(0)).astype(np.uint64)
    half = np.where(active, one << shift, np.uint64(0))
    mask = np.where(active, (one << z) - one, np.uint64(0))
    sign = bits & _SIGN_MASK
    mag = bits & _MAG_MASK
    rounded = (mag + half) & ~mask
    return sign | rounded


def groom_values(values: np.ndarray, deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero as many low mantissa bits as each per-value allowance permits.

    For each value the zeroed-bit count z is the largest one whose
    round-to-nearest error stays <= delta; the error is monotone in z, so a
    binary search over z in [0, 52] finds it exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    deltas = np.broadcast_to(np.asarray(deltas, dtype=np.float64), values.shape)
    if values.size == 0:
        return values.copy(), np.zeros(0, dtype=np.int64)
    bits = values.view(np.uint64)
    lo = np.zeros(values.shape, dtype=np.uint64)
    hi = np.full(values.shape, MANTISSA_BITS, dtype=np.uint64)
    while True:
        undecided = lo < hi
        if not undecided.any():
            break
        mid = (lo + hi + np.uint64(1)) >> np.uint64(1)
        candidate = _round_at_bits(bits, mid).view(np.float64)
        ok = np.abs(candidate - values) <= deltas
        lo = np.where(undecided & ok, mid, lo)
        hi = np.where(undecided & ~ok, mid - np.uint64(1), hi)
    groomed = _round_at_bits(bits, lo).view(np.float64)
    return groomed, lo.astype(np.int64)


def groom_coefficients(
    values: np.ndarray, slack: float
) -> tuple[np.ndarray, np.ndarray]:
    """Groom a kept-coefficient vector within an extra L2 error of ``slack``.

    The allowance is split uniformly: delta = 0.99 * slack / sqrt(n), so the
    added L2 error is at most 0.99 * slack and the patch still meets its
    budget.  Returns (groomed values, zeroed-bit counts).
    """
    if slack < 0:
        raise ValueError("slack must be >= 0")
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 0:
        return values.copy(), np.zeros(0, dtype=np.int64)
    delta = GROOM_SAFETY * slack / np.sqrt(n)
    return groom_values(values, np.full(n, delta))


@dataclass(frozen=True, eq=False)
class PatchCode:
    """Compressed record of one patch: kept mode ids and groomed values."""

    indices: np.ndarray  # u16-range ints, strictly ascending
    coeffs: np.ndarray  # binary64, aligned with indices

    def __post_init__(self) -> None:
        indices = np.ascontiguousarray(self.indices, dtype=np.uint16).reshape(-1)
        coeffs = np.ascontiguousarray(self.coeffs, dtype=np.float64).reshape(-1)
        if indices.size != coeffs.size:
            raise ValueError("indices and coefficients must have equal length")
        if indices.size > 1 and not (np.diff(indices.astype(np.int64)) > 0).all():
            raise ValueError("indices must be strictly ascending")
        if not np.isfinite(coeffs).all():
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n(self) -> int:
        return int(self.indices.size)

    def encoded_size(self) -> int:
        return 2 + 10 * self.n


def encode_patch(code: PatchCode) -> bytes:
    """Record layout: u16 n, n ascending u16 indices, n binary64 values."""
    return (
        struct.pack("<H", code.n)
        + code.indices.astype("<u2").tobytes()
        + code.coeffs.astype("<f8").tobytes()
    )


def _decode_one(buf: bytes, offset: int, values_per_patch: int) -> tuple[PatchCode, int]:
    if offset + 2 > len(buf):
        raise TruncatedFileError("patch record truncated before count field")
    (n,) = struct.unpack_from("<H", buf, offset)
    offset += 2
    end = offset + 10 * n
    if end > len(buf):
        raise TruncatedFileError(f"patch record truncated: needs {end - len(buf)} more bytes")
    if n > values_per_patch:
        raise FormatError(f"patch keeps {n} coefficients but patches have {values_per_patch}")
    indices = np.frombuffer(buf, dtype="<u2", count=n, offset=offset)
    offset += 2 * n
    coeffs = np.frombuffer(buf, dtype="<f8", count=n, offset=offset)
    offset += 8 * n
    if n and int(indices[-1]) >= values_per_patch:
        raise FormatError(f"mode index {int(indices[-1])} out of range [0, {values_per_patch})")
    if n > 1 and not (np.diff(indices.astype(np.int64)) > 0).all():
        raise FormatError("mode indices are not strictly ascending")
    return PatchCode(indices=indices, coeffs=coeffs), offset


def decode_patch(buf: bytes, values_per_patch: int) -> PatchCode:
    """Decode exactly one patch record; trailing bytes are an error."""
    code, offset = _decode_one(buf, 0, values_per_patch)
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after patch record")
    return code


def decode_stream(buf: bytes, values_per_patch: int, count: int) -> list[PatchCode]:
    """Decode ``count`` back-to-back patch records from a buffer."""
    codes = []
    offset = 0
    for _ in range(count):
        code, offset = _decode_one(buf, offset, values_per_patch)
        codes.append(code)
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after {count} patch records")
    return codes


def reconstruct_patch(basis: PatchBasis, code: PatchCode) -> np.ndarray:
    """Rebuild one patch as the kept-mode linear combination."""
    big_m = basis.values_per_patch
    if code.n == 0:
        return np.zeros(big_m, dtype=np.float64)
    idx = code.indices.astype(np.int64)
    if int(idx[-1]) >= big_m:
        raise IndexError(f"mode index {int(idx[-1])} out of range [0, {big_m})")
    return basis.modes[:, idx] @ code.coeffs


def compress_coefficients(
    alphas: np.ndarray, eps_l: float
) -> tuple[list[PatchCode], np.ndarray]:
    """Select and groom rows of coefficients under one local budget.

    Returns the patch codes and the exact squared L2 error committed per
    patch (dropped tail plus grooming perturbation), which by Parseval is
    the reconstruction error of each patch up to basis orthonormality slop.
    All arithmetic is row-local, so slicing rows across workers cannot
    change any output bit.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    counts, order, tails = _selection_arrays(alphas, eps_l)
    n_rows = alphas.shape[0]

    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])

    kept_idx = np.empty(total, dtype=np.int64)
    kept_vals = np.empty(total, dtype=np.float64)
    patch_of = np.empty(total, dtype=np.int64)
    for i in range(n_rows):
        n = int(counts[i])
        if n == 0:
            continue
        idx = np.sort(order[i, :n])
        sl = slice(offsets[i], offsets[i + 1])
        kept_idx[sl] = idx
        kept_vals[sl] = alphas[i, idx]
        patch_of[sl] = i

    slack = np.sqrt(np.maximum(0.0, eps_l * eps_l - tails * tails))
    safe_counts = np.maximum(counts, 1)
    deltas = GROOM_SAFETY * slack / np.sqrt(safe_counts)
    groomed, _ = groom_values(kept_vals, deltas[patch_of])

    groom_sq = np.bincount(
        patch_of, weights=(groomed - kept_vals) ** 2, minlength=n_rows
    )
    err_sq = tails * tails + groom_sq

    codes = [
        PatchCode(
            indices=kept_idx[offsets[i] : offsets[i + 1]],
            coeffs=groomed[offsets[i] : offsets[i + 1]],
        )
        for i in range(n_rows)
    ]
    return codes, err_sq


def compress_block(
    basis: PatchBasis, rows: np.ndarray, eps_l: float
) -> tuple[list[PatchCode], np.ndarray]:
    """Project, select and groom a block of patches under one local budget."""
    return compress_coefficients(project_block(basis, rows), eps_l)


def reconstruct_block(basis: PatchBasis, codes: Sequence[PatchCode]) -> np.ndarray:
    """Rebuild a block of patches, one row per code.

    Reconstruction is gathered per patch so the arithmetic (and therefore
    the output bits) is independent of how callers slice work across
    workers.
    """
    rows = np.zeros((len(codes), basis.values_per_patch), dtype=np.float64)
    for i, code in enumerate(codes):
        if code.n:
            rows[i] = reconstruct_patch(basis, code)
    return rows
