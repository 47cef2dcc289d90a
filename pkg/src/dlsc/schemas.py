"""Request/response models for the HTTP service.

All file references are server-side paths; the service is meant to run next
to the data (localhost or a shared filesystem).
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

Dims = tuple[int, int, int]
BasisName = Literal["svd", "dct", "random"]
SyntheticName = Literal["taylor", "multisine", "smooth"]
WindowName = Literal["none", "hann"]


class GenerateRequest(BaseModel):
    kind: SyntheticName
    dims: Dims
    snapshots: int = Field(ge=1)
    out_dir: str
    seed: int = 0
    labels: list[str] = ["u"]
    params: dict[str, float] = {}


class GenerateResponse(BaseModel):
    files: list[str]


class LearnRequest(BaseModel):
    inputs: list[str] = Field(min_length=1)
    m: int = Field(ge=2)
    out: str
    basis: BasisName = "svd"
    seed: int = 0
    raw_dims: Optional[Dims] = None


class LearnResponse(BaseModel):
    basis_path: str
    label: str
    m: int
    kind: BasisName
    sample_count: int
    training_digest: str


class SnapshotMetricsModel(BaseModel):
    snapshot: int
    nrmse_pct: float
    kept_mean: float
    kept_max: int


class CompressRequest(BaseModel):
    inputs: list[str] = Field(min_length=1)
    basis: str
    eps_t: float = Field(ge=0)
    out: str
    batch: int = Field(default=1000, ge=1)
    workers: int = Field(default=1, ge=1)
    raw_dims: Optional[Dims] = None


class CompressResponse(BaseModel):
    archive: str
    label: str
    m: int
    coarsening: float
    eps_t: float
    snapshots: list[SnapshotMetricsModel]
    cr: float
    cr_with_basis: float
    conservatism: Optional[float]
    wall_s: float
    throughput_mbps: float


class DecompressRequest(BaseModel):
    archive: str
    basis: str
    out_dir: str
    snapshot: Optional[int] = None
    workers: int = Field(default=1, ge=1)


class DecompressResponse(BaseModel):
    files: list[str]
    label: str
    snapshots: list[int]


class EvaluateRequest(BaseModel):
    orig: list[str] = Field(min_length=1)
    recon: list[str] = Field(min_length=1)
    raw_dims: Optional[Dims] = None


class EvaluateRow(BaseModel):
    snapshot: int
    nrmse_pct: float


class EvaluateResponse(BaseModel):
    rows: list[EvaluateRow]
    mean_nrmse_pct: float
    max_nrmse_pct: float


class SweepRequest(BaseModel):
    inputs: list[str] = Field(min_length=1)
    m_list: list[int] = Field(min_length=1)
    eps_list: list[float] = Field(min_length=1)
    basis_list: list[BasisName] = ["svd"]
    seed: int = 0
    batch: int = Field(default=1000, ge=1)
    workers: int = Field(default=1, ge=1)
    out_csv: Optional[str] = None
    include_timing: bool = True
    raw_dims: Optional[Dims] = None


class SweepRowModel(BaseModel):
    m: int
    coarsening: float
    basis: BasisName
    eps_t_pct: float
    nrmse_pct: float
    cr: float
    cr_with_basis: float
    wall_s: float
    throughput_mbps: float


class SweepResponse(BaseModel):
    rows: list[SweepRowModel]
    csv_text: str
    csv_path: Optional[str]


class DiagnosticsRequest(BaseModel):
    orig: list[str] = Field(min_length=1)
    recon: list[str] = Field(min_length=1)
    variables: list[str] = ["u", "v", "w"]
    probes: list[Dims] = Field(min_length=1)
    dt: float = Field(gt=0)
    out_dir: Optional[str] = None
    window: WindowName = "none"
    probe_var: str = "u"


class ProbeResultModel(BaseModel):
    probe: Dims
    dominant_bin_orig: int
    dominant_bin_recon: int
    frequency_orig: float
    match: bool


class DiagnosticsResponse(BaseModel):
    ke_recovery_pct: float
    tke_recovery_pct: float
    probes: list[ProbeResultModel]
    csv_files: list[str]


class InspectRequest(BaseModel):
    archive: str


class BatchInfoModel(BaseModel):
    snapshot: int
    batch: int
    offset: int
    compressed_bytes: int
    raw_bytes: int


class InspectResponse(BaseModel):
    archive: str
    dims: Dims
    m: int
    padding_mode: int
    label: str
    eps_t: float
    snapshots: int
    patches_per_snapshot: int
    batch_size: int
    header_bytes: int
    payload_bytes: int
    norms: list[float]
    batches: list[BatchInfoModel]


class HealthResponse(BaseModel):
    status: str
    version: str
