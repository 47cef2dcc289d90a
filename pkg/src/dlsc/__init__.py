"""Error-bounded lossy compression of 3D structured-grid scalar fields.

The codec learns an orthonormal patch basis from the data itself (SVD of
randomly sampled patches), keeps per patch only the coefficients needed to
meet a local L2 budget derived from a user's global target error, grooms
low mantissa bits inside the remaining slack, and packs everything into a
random-access archive.  Reconstruction carries a hard guarantee: snapshot
NRMSE never exceeds the target.
"""

__version__ = "0.1.0"

from .basis import (
    BasisKind,
    PatchBasis,
    build_cosine_basis,
    build_random_basis,
    build_svd_basis,
    load_basis,
    save_basis,
)
from .codec import (
    PatchCode,
    SelectionResult,
    ToleranceBudget,
    decode_patch,
    encode_patch,
    groom_coefficients,
    make_budget,
    project,
    reconstruct_patch,
    select_coefficients,
)
from .container import (
    ContainerHeader,
    WorkPartition,
    compressed_size_report,
    partition_work,
    read_container,
    write_container,
)
from .errors import (
    DegenerateNormError,
    DimensionMismatchError,
    DlscError,
    FormatError,
    NonFiniteDataError,
    TruncatedFileError,
)
from .field import (
    Field,
    Patch,
    PatchLayout,
    assemble_field,
    extract_patch,
    gen_synthetic,
    load_field,
    make_layout,
    sample_patches,
    save_field,
)
from .pipeline import (
    CompressionJob,
    Metrics,
    coarsening_factor,
    compress,
    decompress,
    learn,
    nrmse,
    sweep,
)

__all__ = [
    "BasisKind",
    "CompressionJob",
    "ContainerHeader",
    "DegenerateNormError",
    "DimensionMismatchError",
    "DlscError",
    "Field",
    "FormatError",
    "Metrics",
    "NonFiniteDataError",
    "Patch",
    "PatchBasis",
    "PatchCode",
    "PatchLayout",
    "SelectionResult",
    "ToleranceBudget",
    "TruncatedFileError",
    "WorkPartition",
    "assemble_field",
    "build_cosine_basis",
    "build_random_basis",
    "build_svd_basis",
    "coarsening_factor",
    "compress",
    "compressed_size_report",
    "decode_patch",
    "decompress",
    "encode_patch",
    "extract_patch",
    "gen_synthetic",
    "groom_coefficients",
    "learn",
    "load_basis",
    "load_field",
    "make_budget",
    "make_layout",
    "nrmse",
    "partition_work",
    "project",
    "read_container",
    "reconstruct_patch",
    "sample_patches",
    "save_basis",
    "save_field",
    "select_coefficients",
    "sweep",
    "write_container",
]
