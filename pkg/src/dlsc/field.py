"""Structured-grid scalar fields: snapshot I/O, patch tiling, synthetic data.

A field is a 3D lattice of binary64 samples stored x-fastest.  Fields are
tiled into cubic patches of edge ``m`` for compression; grids whose extents
are not multiples of ``m`` are padded at the high end of each axis by edge
replication, and the padding is discarded again on reassembly.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    FormatError,
    NonFiniteDataError,
    TruncatedFileError,
)
from .rng import Xoshiro256StarStar

FLD1_MAGIC = b"FLD1"
FLD1_VERSION = 1
DTYPE_F64 = 0
DTYPE_F32 = 1
LABEL_BYTES = 16

# header: magic, version, dtype, nx, ny, nz, label
_FLD1_HEADER = struct.Struct("<4sII QQQ 16s")
FLD1_HEADER_BYTES = _FLD1_HEADER.size  # 52

# u16 mode indices in patch records cap the patch size
MAX_PATCH_VALUES = 65536

PADDING_EDGE_REPLICATE = 0

SYNTHETIC_KINDS = ("taylor", "multisine", "smooth")


@dataclass(frozen=True, eq=False)
class Field:
    """A 3D scalar lattice with x-fastest binary64 storage.

    ``data`` has length ``nx*ny*nz`` and must be finite everywhere.
    """

    nx: int
    ny: int
    nz: int
    data: np.ndarray
    label: str = "u"

    def __post_init__(self) -> None:
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("grid extents must be positive")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != self.nx * self.ny * self.nz:
            raise DimensionMismatchError(
                f"data length {data.size} != nx*ny*nz = {self.nx * self.ny * self.nz}"
            )
        if not np.isfinite(data).all():
            raise NonFiniteDataError("field contains NaN or Inf values")
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    def as_3d(self) -> np.ndarray:
        """View as a (nz, ny, nx) array; C order matches x-fastest storage."""
        return self.data.reshape(self.nz, self.ny, self.nx)

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def digest(self) -> bytes:
        """SHA-256 over label, extents and raw sample bytes."""
        h = hashlib.sha256()
        h.update(self.label.encode("utf-8"))
        h.update(struct.pack("<QQQ", self.nx, self.ny, self.nz))
        h.update(self.data.tobytes())
        return h.digest()


@dataclass(frozen=True)
class PatchLayout:
    """Deterministic tiling of a (possibly padded) grid into m^3 patches."""

    m: int
    px: int
    py: int
    pz: int
    pad_x: int
    pad_y: int
    pad_z: int
    padding_mode: int = PADDING_EDGE_REPLICATE

    @property
    def patch_count(self) -> int:
        return self.px * self.py * self.pz

    @property
    def values_per_patch(self) -> int:
        return self.m ** 3

    @property
    def padded_dims(self) -> tuple[int, int, int]:
        return (self.px * self.m, self.py * self.m, self.pz * self.m)

    @property
    def padded_size(self) -> int:
        x, y, z = self.padded_dims
        return x * y * z


@dataclass(frozen=True, eq=False)
class Patch:
    """One flattened m^3 patch; ``values`` are in local x-fastest order."""

    index: int
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", values)


def make_layout(nx: int, ny: int, nz: int, m: int) -> PatchLayout:
    """Tile an (nx, ny, nz) grid with edge-replicated padding to multiples of m."""
    if m < 2:
        raise ValueError(f"patch edge must be >= 2, got {m}")
    if m ** 3 > MAX_PATCH_VALUES:
        raise ValueError(f"patch size {m}^3 exceeds the u16 index limit {MAX_PATCH_VALUES}")
    if min(nx, ny, nz) < 1:
        raise ValueError("grid extents must be positive")
    pads = [(m - (n % m)) % m for n in (nx, ny, nz)]
    counts = [(n + p) // m for n, p in zip((nx, ny, nz), pads)]
    return PatchLayout(
        m=m,
        px=counts[0],
        py=counts[1],
        pz=counts[2],
        pad_x=pads[0],
        pad_y=pads[1],
        pad_z=pads[2],
    )


def _padded_3d(field: Field, layout: PatchLayout) -> np.ndarray:
    return np.pad(
        field.as_3d(),
        ((0, layout.pad_z), (0, layout.pad_y), (0, layout.pad_x)),
        mode="edge",
    )


def patch_matrix(field: Field, layout: PatchLayout) -> np.ndarray:
    """All patches of a field as an (N, M) matrix, rows in patch-id order.

    Patch ids run x-fastest over the (px, py, pz) tiling grid; row contents
    are the patch values in local x-fastest order.
    """
    m = layout.m
    cube = _padded_3d(field, layout)
    blocks = cube.reshape(layout.pz, m, layout.py, m, layout.px, m)
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(blocks.reshape(layout.patch_count, m ** 3))


def extract_patch(field: Field, layout: PatchLayout, index: int) -> Patch:
    """Read one patch; out-of-domain cells replicate the nearest edge value."""
    n = layout.patch_count
    if not 0 <= index < n:
        raise IndexError(f"patch index {index} out of range [0, {n})")
    m = layout.m
    kx = index % layout.px
    ky = (index // layout.px) % layout.py
    kz = index // (layout.px * layout.py)
    xs = np.minimum(np.arange(kx * m, (kx + 1) * m), field.nx - 1)
    ys = np.minimum(np.arange(ky * m, (ky + 1) * m), field.ny - 1)
    zs = np.minimum(np.arange(kz * m, (kz + 1) * m), field.nz - 1)
    window = field.as_3d()[np.ix_(zs, ys, xs)]
    return Patch(index=index, values=window.reshape(-1))


def assemble_matrix(
    matrix: np.ndarray,
    layout: PatchLayout,
    dims: tuple[int, int, int],
    label: str = "u",
) -> Field:
    """Inverse of :func:`patch_matrix`: stitch rows back and drop the padding."""
    nx, ny, nz = dims
    m = layout.m
    n = layout.patch_count
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (n, m ** 3):
        raise ValueError(
            f"expected {n} patches of {m ** 3} values, got array of shape {matrix.shape}"
        )
    expected = make_layout(nx, ny, nz, m)
    if (expected.px, expected.py, expected.pz) != (layout.px, layout.py, layout.pz):
        raise DimensionMismatchError(f"layout does not tile dims {dims}")
    blocks = matrix.reshape(layout.pz, layout.py, layout.px, m, m, m)
    cube = blocks.transpose(0, 3, 1, 4, 2, 5).reshape(
        layout.pz * m, layout.py * m, layout.px * m
    )
    return Field(nx=nx, ny=ny, nz=nz, data=cube[:nz, :ny, :nx].reshape(-1), label=label)


def assemble_field(
    patches: Sequence[Patch],
    layout: PatchLayout,
    dims: tuple[int, int, int],
    label: str = "u",
) -> Field:
    """Assemble a full field from exactly one patch per tile."""
    n = layout.patch_count
    if len(patches) != n:
        raise ValueError(f"expected {n} patches, got {len(patches)}")
    m3 = layout.values_per_patch
    matrix = np.empty((n, m3), dtype=np.float64)
    for patch in patches:
        if not 0 <= patch.index < n:
            raise ValueError(f"patch index {patch.index} out of range")
        if patch.values.size != m3:
            raise ValueError(
                f"patch {patch.index} has {patch.values.size} values, expected {m3}"
            )
        matrix[patch.index] = patch.values
    return assemble_matrix(matrix, layout, dims, label=label)


def sample_anchors(
    dims: tuple[int, int, int], m: int, count: int, seed: int
) -> np.ndarray:
    """Deterministic anchor corners for window sampling, shape (count, 3).

    Anchors are drawn uniformly with replacement from all in-domain window
    positions; draw order is (x, y, z) per row so the stream is reproducible
    from the seed alone.
    """
    nx, ny, nz = dims
    if min(nx, ny, nz) < m:
        raise ValueError(f"grid {dims} has no {m}^3 window")
    rng = Xoshiro256StarStar(seed)
    anchors = np.empty((count, 3), dtype=np.int64)
    for row in range(count):
        anchors[row, 0] = rng.randrange(nx - m + 1)
        anchors[row, 1] = rng.randrange(ny - m + 1)
        anchors[row, 2] = rng.randrange(nz - m + 1)
    return anchors


def sample_patches(
    field: Field, m: int, count: int | None = None, seed: int = 0
) -> np.ndarray:
    """Random patch windows as an (S, m^3) sample matrix.

    The default S = 4 m^3 oversamples the patch space fourfold, enough for a
    full-rank basis fit.  Rows are verbatim windows of the field at the
    anchors produced by :func:`sample_anchors`.
    """
    big_m = m ** 3
    if count is None:
        count = 4 * big_m
    if count < big_m:
        raise ValueError(f"sample count {count} < patch size {big_m}: basis would be rank-deficient")
    anchors = sample_anchors(field.dims, m, count, seed)
    cube = field.as_3d()
    out = np.empty((count, big_m), dtype=np.float64)
    for row, (ax, ay, az) in enumerate(anchors):
        out[row] = cube[az : az + m, ay : ay + m, ax : ax + m].reshape(-1)
    return out


# ---------------------------------------------------------------------------
# FLD1 snapshot files


def save_field(field: Field, path: str | Path) -> None:
    """Write a field as an FLD1 file (always binary64 payload)."""
    label = field.label.encode("utf-8")
    if len(label) > LABEL_BYTES:
        raise ValueError(f"label {field.label!r} exceeds {LABEL_BYTES} bytes")
    header = _FLD1_HEADER.pack(
        FLD1_MAGIC, FLD1_VERSION, DTYPE_F64, field.nx, field.ny, field.nz, label
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(field.data.tobytes())


def load_field(
    path: str | Path, expected_dims: tuple[int, int, int] | None = None
) -> Field:
    """Read an FLD1 file, or a headerless raw value stream if dims are given.

    Raw binary32 streams are widened to binary64; the stream width is
    inferred from the file size.
    """
    raw = Path(path).read_bytes()
    if raw[:4] == FLD1_MAGIC:
        if len(raw) < FLD1_HEADER_BYTES:
            raise TruncatedFileError(f"{path}: truncated FLD1 header")
        magic, version, dtype, nx, ny, nz, label = _FLD1_HEADER.unpack_from(raw)
        if version != FLD1_VERSION:
            raise FormatError(f"{path}: unsupported FLD1 version {version}")
        if dtype not in (DTYPE_F64, DTYPE_F32):
            raise FormatError(f"{path}: unknown dtype code {dtype}")
        count = nx * ny * nz
        width = 8 if dtype == DTYPE_F64 else 4
        payload = raw[FLD1_HEADER_BYTES:]
        if len(payload) < count * width:
            raise TruncatedFileError(
                f"{path}: payload has {len(payload)} bytes, expected {count * width}"
            )
        if len(payload) > count * width:
            raise FormatError(f"{path}: {len(payload) - count * width} trailing bytes")
        if dtype == DTYPE_F64:
            data = np.frombuffer(payload, dtype="<f8")
        else:
            data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if expected_dims is not None and tuple(expected_dims) != (nx, ny, nz):
            raise DimensionMismatchError(
                f"{path}: file dims {(nx, ny, nz)} != expected {tuple(expected_dims)}"
            )
        text = label.rstrip(b"\x00").decode("utf-8")
        return Field(nx=nx, ny=ny, nz=nz, data=data, label=text)

    if expected_dims is None:
        raise FormatError(f"{path}: not an FLD1 file and no dims given for raw mode")
    nx, ny, nz = expected_dims
    count = nx * ny * nz
    if len(raw) == count * 8:
        data = np.frombuffer(raw, dtype="<f8")
    elif len(raw) == count * 4:
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise TruncatedFileError(
            f"{path}: {len(raw)} bytes cannot hold {count} raw values (f64 or f32)"
        )
    return Field(nx=nx, ny=ny, nz=nz, data=data)


# ---------------------------------------------------------------------------
# Synthetic test fields


def _normalized_coords(dims: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nx, ny, nz = dims
    xh = (np.arange(nx) / nx).reshape(1, 1, nx)
    yh = (np.arange(ny) / ny).reshape(1, ny, 1)
    zh = (np.arange(nz) / nz).reshape(nz, 1, 1)
    return xh, yh, zh


def _taylor(dims, params, seed):  # noqa: ARG001 - analytic, seed unused
    amp = float(params.get("amplitude", 1.0))
    k = float(params.get("wavenumber", 1.0))
    comp = int(params.get("component", 0))
    t = float(params.get("time", 0.0))
    nu = float(params.get("viscosity", 0.01))
    drift = float(params.get("drift", 0.05))
    xh, yh, zh = _normalized_coords(dims)
    decay = math.exp(-2.0 * nu * (2.0 * math.pi * k) ** 2 * t)
    phase = 2.0 * math.pi * drift * t
    two_pi_k = 2.0 * math.pi * k
    if comp == 0:
        cube = np.sin(two_pi_k * xh + phase) * np.cos(two_pi_k * yh + phase) * np.cos(two_pi_k * zh)
    elif comp == 1:
        cube = -np.cos(two_pi_k * xh + phase) * np.sin(two_pi_k * yh + phase) * np.cos(two_pi_k * zh)
    else:
        cube = np.zeros((dims[2], dims[1], dims[0]))
    return amp * decay * np.broadcast_to(cube, (dims[2], dims[1], dims[0]))


def _multisine(dims, params, seed):
    octaves = int(params.get("octaves", 4))
    decay = float(params.get("decay", 0.5))
    t = float(params.get("time", 0.0))
    freq = float(params.get("freq", 0.25))
    nz, ny, nx = dims[2], dims[1], dims[0]
    if octaves <= 0:
        return np.zeros((nz, ny, nx))
    xh, yh, zh = _normalized_coords(dims)
    rng = np.random.default_rng(seed)
    cube = np.zeros((nz, ny, nx))
    total = 0.0
    for o in range(octaves):
        direction = rng.integers(1, 4, size=3)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        amp = decay ** o
        arg = (
            2.0 * math.pi * (2 ** o) * (direction[0] * xh + direction[1] * yh + direction[2] * zh)
            + phi
            + 2.0 * math.pi * freq * (o + 1) * t
        )
        cube += amp * np.sin(arg)
        total += amp
    return cube / total


def _smooth(dims, params, seed):
    passes = int(params.get("passes", 2))
    t = float(params.get("time", 0.0))
    nz, ny, nx = dims[2], dims[1], dims[0]
    rng = np.random.default_rng(seed + int(round(t)))
    cube = rng.standard_normal((nz, ny, nx))
    for _ in range(passes):
        for axis in range(3):
            if cube.shape[axis] < 2:
                continue
            padded = np.pad(
                cube, [(1, 1) if a == axis else (0, 0) for a in range(3)], mode="edge"
            )
            lo = np.take(padded, range(0, cube.shape[axis]), axis=axis)
            mid = cube
            hi = np.take(padded, range(2, cube.shape[axis] + 2), axis=axis)
            cube = (lo + mid + hi) / 3.0
    return cube


_GENERATORS = {"taylor": _taylor, "multisine": _multisine, "smooth": _smooth}


def gen_synthetic(
    kind: str,
    dims: tuple[int, int, int],
    params: Mapping[str, float] | None = None,
    seed: int = 0,
    label: str = "u",
) -> Field:
    """Deterministic synthetic field of the requested kind.

    ``taylor`` is a decaying, slowly drifting Taylor-Green vortex component
    (max |value| <= amplitude); ``multisine`` sums octaves of sinusoids with
    geometrically decaying amplitudes; ``smooth`` is seeded white noise put
    through iterated 3-point averaging.  The ``time`` param animates a series.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if min(dims) < 1:
        raise ValueError("dims must be positive")
    cube = _GENERATORS[kind](tuple(dims), dict(params or {}), seed)
    return Field(nx=dims[0], ny=dims[1], nz=dims[2], data=np.asarray(cube).reshape(-1), label=label)


def synthetic_series(
    kind: str,
    dims: tuple[int, int, int],
    snapshots: int,
    seed: int = 0,
    labels: Sequence[str] = ("u",),
    params: Mapping[str, float] | None = None,
) -> Iterator[tuple[int, str, Field]]:
    """Yield (t, label, field) for a deterministic multi-variable time series."""
    if snapshots < 1:
        raise ValueError("snapshot count must be positive")
    base = dict(params or {})
    for t in range(snapshots):
        for idx, label in enumerate(labels):
            p = dict(base)
            p["time"] = float(t)
            if kind == "taylor":
                p.setdefault("component", idx)
            yield t, label, gen_synthetic(
                kind, dims, params=p, seed=seed + 1009 * idx, label=label
            )
