"""FastAPI service exposing the compression pipeline.

Every endpoint wraps a pipeline call on server-side paths.  Domain errors
(bad files, mismatched dims, corrupt archives) map to HTTP 400 with a
detail message; schema violations are FastAPI's usual 422.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__, basis as basis_mod, container, diagnostics, pipeline, schemas
from .errors import DlscError
from .field import load_field, save_field, synthetic_series
from .pipeline import BASIS_KIND_NAMES, CompressionJob, parse_basis_kind


def _group_by_label(paths: list[str], raw_dims=None):
    """Load a mixed-variable file list into per-label ordered series."""
    by_label: dict[str, list] = {}
    for p in paths:
        f = load_field(p, expected_dims=raw_dims)
        by_label.setdefault(f.label, []).append(f)
    counts = {label: len(fs) for label, fs in by_label.items()}
    if len(set(counts.values())) > 1:
        raise ValueError(f"variables have unequal snapshot counts: {counts}")
    return by_label


def create_app() -> FastAPI:
    app = FastAPI(title="dlsc", version=__version__)

    @app.exception_handler(DlscError)
    async def _domain_error(_: Request, exc: DlscError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={"detail": str(exc), "error_type": type(exc).__name__},
        )

    @app.exception_handler(ValueError)
    async def _value_error(_: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"detail": str(exc), "error_type": "ValueError"}
        )

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(_: Request, exc: FileNotFoundError) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"detail": str(exc), "error_type": "FileNotFoundError"}
        )

    @app.exception_handler(IndexError)
    async def _index_error(_: Request, exc: IndexError) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"detail": str(exc), "error_type": "IndexError"}
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/v1/gen", response_model=schemas.GenerateResponse)
    def gen(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = []
        for t, label, f in synthetic_series(
            req.kind, req.dims, req.snapshots, seed=req.seed,
            labels=req.labels, params=req.params,
        ):
            path = out_dir / f"{label}_{t:04d}.fld"
            save_field(f, path)
            files.append(str(path))
        return schemas.GenerateResponse(files=sorted(files))

    @app.post("/v1/learn", response_model=schemas.LearnResponse)
    def learn(req: schemas.LearnRequest) -> schemas.LearnResponse:
        series = pipeline.load_series(req.inputs, raw_dims=req.raw_dims)
        label = series[0].label
        job = CompressionJob(
            inputs={label: list(req.inputs)},
            archives={label: ""},
            m=req.m,
            eps_t=0.0,
            basis_kind=parse_basis_kind(req.basis),
            seed=req.seed,
            raw_dims=req.raw_dims,
        )
        basis = pipeline.learn(job)[label]
        basis_mod.save_basis(basis, req.out)
        return schemas.LearnResponse(
            basis_path=req.out,
            label=label,
            m=basis.m,
            kind=BASIS_KIND_NAMES[basis.kind],
            sample_count=basis.sample_count,
            training_digest=basis.training_digest.hex(),
        )

    @app.post("/v1/compress", response_model=schemas.CompressResponse)
    def compress(req: schemas.CompressRequest) -> schemas.CompressResponse:
        basis = basis_mod.load_basis(req.basis)
        series = pipeline.load_series(req.inputs, raw_dims=req.raw_dims)
        label = series[0].label
        job = CompressionJob(
            inputs={label: list(req.inputs)},
            archives={label: req.out},
            m=basis.m,
            eps_t=req.eps_t,
            basis_kind=basis.kind,
            seed=basis.seed,
            batch_size=req.batch,
            workers=req.workers,
            raw_dims=req.raw_dims,
        )
        metrics = pipeline.compress(job, {label: basis})[label]
        return schemas.CompressResponse(
            archive=req.out,
            label=label,
            m=metrics.m,
            coarsening=metrics.coarsening,
            eps_t=metrics.eps_t,
            snapshots=[
                schemas.SnapshotMetricsModel(
                    snapshot=r.index,
                    nrmse_pct=r.nrmse_pct,
                    kept_mean=r.kept_mean,
                    kept_max=r.kept_max,
                )
                for r in metrics.snapshots
            ],
            cr=metrics.cr,
            cr_with_basis=metrics.cr_with_basis,
            conservatism=metrics.conservatism,
            wall_s=metrics.wall_s,
            throughput_mbps=metrics.throughput_mbps,
        )

    @app.post("/v1/decompress", response_model=schemas.DecompressResponse)
    def decompress(req: schemas.DecompressRequest) -> schemas.DecompressResponse:
        basis = basis_mod.load_basis(req.basis)
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        results = pipeline.decompress(
            req.archive, basis, out_dir=out_dir, snapshot=req.snapshot, workers=req.workers
        )
        label = results[0][1].label if results else ""
        return schemas.DecompressResponse(
            files=[str(out_dir / f"{label}_{j:04d}.fld") for j, _ in results],
            label=label,
            snapshots=[j for j, _ in results],
        )

    @app.post("/v1/eval", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
        rows = pipeline.evaluate_series(req.orig, req.recon, raw_dims=req.raw_dims)
        values = [v for _, v in rows]
        return schemas.EvaluateResponse(
            rows=[schemas.EvaluateRow(snapshot=t, nrmse_pct=v) for t, v in rows],
            mean_nrmse_pct=sum(values) / len(values),
            max_nrmse_pct=max(values),
        )

    @app.post("/v1/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
        import tempfile

        kinds = [parse_basis_kind(name) for name in req.basis_list]
        with tempfile.TemporaryDirectory(prefix="dlsc-sweep-") as work:
            rows = pipeline.sweep(
                req.inputs,
                req.m_list,
                req.eps_list,
                kinds,
                work_dir=work,
                seed=req.seed,
                batch_size=req.batch,
                workers=req.workers,
                raw_dims=req.raw_dims,
            )
        lines = [pipeline.SWEEP_CSV_HEADER] + [r.csv_line(req.include_timing) for r in rows]
        csv_text = "\n".join(lines) + "\n"
        if req.out_csv:
            Path(req.out_csv).parent.mkdir(parents=True, exist_ok=True)
            pipeline.write_sweep_csv(rows, req.out_csv, include_timing=req.include_timing)
        return schemas.SweepResponse(
            rows=[
                schemas.SweepRowModel(
                    m=r.m,
                    coarsening=r.coarsening,
                    basis=r.basis,
                    eps_t_pct=r.eps_t,
                    nrmse_pct=r.nrmse_pct,
                    cr=r.cr,
                    cr_with_basis=r.cr_with_basis,
                    wall_s=r.wall_s if req.include_timing else 0.0,
                    throughput_mbps=r.throughput_mbps if req.include_timing else 0.0,
                )
                for r in rows
            ],
            csv_text=csv_text,
            csv_path=req.out_csv,
        )

    @app.post("/v1/diag", response_model=schemas.DiagnosticsResponse)
    def diag(req: schemas.DiagnosticsRequest) -> schemas.DiagnosticsResponse:
        orig_by_label = _group_by_label(req.orig)
        recon_by_label = _group_by_label(req.recon)
        for variables, side in ((orig_by_label, "original"), (recon_by_label, "reconstructed")):
            missing = [v for v in req.variables if v not in variables]
            if missing:
                raise ValueError(f"{side} series is missing variables {missing}")
        t_count = len(orig_by_label[req.variables[0]])
        orig_series = [
            {v: orig_by_label[v][t] for v in req.variables} for t in range(t_count)
        ]
        recon_series = [
            {v: recon_by_label[v][t] for v in req.variables}
            for t in range(len(recon_by_label[req.variables[0]]))
        ]
        if len(recon_series) != t_count:
            raise ValueError(
                f"series lengths differ: {t_count} original vs {len(recon_series)} reconstructed"
            )
        probes = [tuple(p) for p in req.probes]
        stats_orig = diagnostics.series_stats(orig_series, probes, req.dt, probe_var=req.probe_var)
        stats_recon = diagnostics.series_stats(recon_series, probes, req.dt, probe_var=req.probe_var)
        report = diagnostics.compare_series(stats_orig, stats_recon, window=req.window)
        csv_files: list[str] = []
        if req.out_dir:
            written = diagnostics.write_diagnostics_csvs(
                stats_orig, stats_recon, req.out_dir, window=req.window
            )
            csv_files = [str(p) for p in written]
        return schemas.DiagnosticsResponse(
            ke_recovery_pct=report.ke_recovery_pct,
            tke_recovery_pct=report.tke_recovery_pct,
            probes=[
                schemas.ProbeResultModel(
                    probe=p.probe,
                    dominant_bin_orig=p.dominant_bin_orig,
                    dominant_bin_recon=p.dominant_bin_recon,
                    frequency_orig=p.frequency_orig,
                    match=p.match,
                )
                for p in report.probes
            ],
            csv_files=csv_files,
        )

    @app.post("/v1/inspect", response_model=schemas.InspectResponse)
    def inspect(req: schemas.InspectRequest) -> schemas.InspectResponse:
        reader = container.read_container(req.archive)
        h = reader.header
        per = h.batches_per_snapshot
        return schemas.InspectResponse(
            archive=req.archive,
            dims=h.dims,
            m=h.m,
            padding_mode=h.padding_mode,
            label=h.label,
            eps_t=h.eps_t,
            snapshots=h.snapshots,
            patches_per_snapshot=h.patches_per_snapshot,
            batch_size=h.batch_size,
            header_bytes=h.header_bytes(),
            payload_bytes=sum(e.compressed_bytes for e in h.batches),
            norms=list(h.norms),
            batches=[
                schemas.BatchInfoModel(
                    snapshot=k // per,
                    batch=k % per,
                    offset=e.offset,
                    compressed_bytes=e.compressed_bytes,
                    raw_bytes=e.raw_bytes,
                )
                for k, e in enumerate(h.batches)
            ],
        )

    return app


app = create_app()
