"""Orthonormal patch bases: data-learned (SVD), fixed cosine, and random.

The compression transform is an M x M orthonormal matrix whose columns are
modes; every patch is representable exactly when all M modes are kept, which
is what makes the codec's error budget exact.  The SVD basis is learned from
a sample matrix of patches; the cosine and random bases exist for comparison
runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedFileError

ORTHONORMALITY_TOL = 1e-10
RANK_TOL = 1e-12
DLSB_MAGIC = b"DLSB"
DLSB_VERSION = 1
DIGEST_BYTES = 32

_DLSB_HEADER = struct.Struct("<4sIII QQ 32s")
DLSB_HEADER_BYTES = _DLSB_HEADER.size  # 64


class BasisKind(IntEnum):
    SVD = 0
    COSINE = 1
    RANDOM = 2


@dataclass(frozen=True, eq=False)
class PatchBasis:
    """An orthonormal M x M mode matrix plus provenance."""

    m: int
    kind: BasisKind
    modes: np.ndarray
    seed: int = 0
    sample_count: int = 0
    training_digest: bytes = b"\x00" * DIGEST_BYTES

    def __post_init__(self) -> None:
        modes = np.ascontiguousarray(self.modes, dtype=np.float64)
        big_m = self.m ** 3
        if modes.shape != (big_m, big_m):
            raise ValueError(f"modes must be {big_m}x{big_m}, got {modes.shape}")
        if len(self.training_digest) != DIGEST_BYTES:
            raise ValueError(f"training digest must be {DIGEST_BYTES} bytes")
        object.__setattr__(self, "modes", modes)

    @property
    def values_per_patch(self) -> int:
        return self.m ** 3

    def orthonormality_defect(self) -> float:
        gram = self.modes.T @ self.modes
        return float(np.abs(gram - np.eye(self.modes.shape[0])).max())

    def check_orthonormal(self, tol: float = ORTHONORMALITY_TOL) -> None:
        defect = self.orthonormality_defect()
        if defect > tol:
            raise FormatError(f"basis fails orthonormality check: defect {defect:.3e} > {tol:.0e}")


def _infer_edge(big_m: int) -> int:
    m = round(big_m ** (1.0 / 3.0))
    for candidate in (m - 1, m, m + 1):
        if candidate >= 2 and candidate ** 3 == big_m:
            return candidate
    raise ValueError(f"column count {big_m} is not a cube of an edge >= 2")


def _fix_column_signs(modes: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is non-negative.

    Ties on magnitude resolve to the lowest index (argmax does this).
    """
    pivot = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[pivot, np.arange(modes.shape[1])])
    signs[signs == 0] = 1.0
    return modes * signs


def _complete_orthonormal(columns: np.ndarray, big_m: int, seed: int) -> np.ndarray:
    """Extend ``columns`` (orthonormal, possibly empty) to a full M x M basis.

    Trailing directions come from seeded Gaussian draws orthogonalized with
    two Gram-Schmidt passes, so the completion is deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    cols = [columns[:, j] for j in range(columns.shape[1])]
    while len(cols) < big_m:
        v = rng.standard_normal(big_m)
        for _ in range(2):
            for q in cols:
                v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            cols.append(v / norm)
    return np.stack(cols, axis=1)


def build_svd_basis(
    q: np.ndarray,
    seed: int = 0,
    training_digest: bytes = b"\x00" * DIGEST_BYTES,
) -> PatchBasis:
    """Learn a full orthonormal basis from an S x M sample matrix.

    Modes are the right singular vectors ordered by descending singular
    value; all M are retained.  If the samples are rank-deficient the null
    directions are filled by a seeded orthonormal completion so every patch
    stays exactly representable.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.ndim != 2:
        raise ValueError("sample matrix must be 2-D")
    s_count, big_m = q.shape
    if s_count < big_m:
        raise ValueError(f"need at least {big_m} samples for a full-rank basis, got {s_count}")
    if not np.isfinite(q).all():
        raise ValueError("sample matrix contains non-finite values")
    m = _infer_edge(big_m)

    _, sigma, vt = np.linalg.svd(q, full_matrices=False)
    modes = vt.T
    if sigma[0] > 0:
        rank = int(np.count_nonzero(sigma > RANK_TOL * sigma[0]))
    else:
        rank = 0
    if rank < big_m:
        modes = _complete_orthonormal(modes[:, :rank], big_m, seed)
    modes = _fix_column_signs(modes)

    basis = PatchBasis(
        m=m,
        kind=BasisKind.SVD,
        modes=modes,
        seed=seed,
        sample_count=s_count,
        training_digest=training_digest,
    )
    basis.check_orthonormal()
    return basis


def dct_factor(m: int) -> np.ndarray:
    """Orthonormal 1-D DCT-II matrix; row k is the mode of wavenumber k."""
    x = np.arange(m)
    k = np.arange(m).reshape(-1, 1)
    factor = np.cos(np.pi * (2 * x + 1) * k / (2 * m))
    scale = np.full((m, 1), np.sqrt(2.0 / m))
    scale[0, 0] = np.sqrt(1.0 / m)
    return scale * factor


def build_cosine_basis(m: int) -> PatchBasis:
    """Fixed tensor-product 3-D DCT-II basis.

    Columns are ordered by ascending total wavenumber k1+k2+k3 (ties broken
    lexicographically) so significance roughly decreases with column index.
    """
    if m < 2:
        raise ValueError(f"patch edge must be >= 2, got {m}")
    big_m = m ** 3
    g = dct_factor(m)
    keys = sorted(
        ((k1, k2, k3) for k1 in range(m) for k2 in range(m) for k3 in range(m)),
        key=lambda k: (sum(k), k),
    )
    modes = np.empty((big_m, big_m), dtype=np.float64)
    for col, (k1, k2, k3) in enumerate(keys):
        # local x-fastest flattening of mode(z, y, x) = g[k3, z] g[k2, y] g[k1, x]
        cube = g[k3][:, None, None] * g[k2][None, :, None] * g[k1][None, None, :]
        modes[:, col] = cube.reshape(-1)
    basis = PatchBasis(m=m, kind=BasisKind.COSINE, modes=modes)
    basis.check_orthonormal()
    return basis


def build_random_basis(m: int, seed: int = 0) -> PatchBasis:
    """QR-orthonormalized seeded Gaussian basis (the data-blind control)."""
    if m < 2:
        raise ValueError(f"patch edge must be >= 2, got {m}")
    big_m = m ** 3
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((big_m, big_m))
    q, r = np.linalg.qr(raw)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    basis = PatchBasis(m=m, kind=BasisKind.RANDOM, modes=q * signs, seed=seed)
    basis.check_orthonormal()
    return basis


def save_basis(basis: PatchBasis, path: str | Path) -> None:
    """Write a DLSB basis file (column-major binary64 modes)."""
    header = _DLSB_HEADER.pack(
        DLSB_MAGIC,
        DLSB_VERSION,
        int(basis.kind),
        basis.m,
        basis.seed,
        basis.sample_count,
        basis.training_digest,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(basis.modes.tobytes(order="F"))


def load_basis(path: str | Path) -> PatchBasis:
    """Read a DLSB basis file and revalidate orthonormality."""
    raw = Path(path).read_bytes()
    if raw[:4] != DLSB_MAGIC:
        raise FormatError(f"{path}: not a DLSB basis file")
    if len(raw) < DLSB_HEADER_BYTES:
        raise TruncatedFileError(f"{path}: truncated DLSB header")
    _, version, kind, m, seed, sample_count, digest = _DLSB_HEADER.unpack_from(raw)
    if version != DLSB_VERSION:
        raise FormatError(f"{path}: unsupported DLSB version {version}")
    try:
        kind = BasisKind(kind)
    except ValueError as exc:
        raise FormatError(f"{path}: unknown basis kind code {kind}") from exc
    big_m = m ** 3
    payload = raw[DLSB_HEADER_BYTES:]
    if len(payload) != big_m * big_m * 8:
        raise TruncatedFileError(
            f"{path}: modes payload has {len(payload)} bytes, expected {big_m * big_m * 8}"
        )
    modes = np.frombuffer(payload, dtype="<f8").reshape((big_m, big_m), order="F")
    basis = PatchBasis(
        m=m,
        kind=kind,
        modes=modes,
        seed=seed,
        sample_count=sample_count,
        training_digest=digest,
    )
    basis.check_orthonormal()
    return basis


def basis_file_bytes(m: int) -> int:
    """On-disk size of a DLSB file for patch edge m (used in CR accounting)."""
    return DLSB_HEADER_BYTES + (m ** 3) ** 2 * 8
