"""Command-line front end; a thin client of the HTTP service.

By default each command drives an in-process copy of the service app, so no
daemon is required; ``--server URL`` points the same commands at a running
instance instead.  Exit codes: 0 success, 1 runtime or data error, 2 usage
error.  Machine-readable results go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import httpx

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version dependent
    import tomli as tomllib

from . import __version__

log = logging.getLogger("dlsc.cli")

SYNTH_KINDS = ("taylor", "multisine", "smooth")
BASIS_NAMES = ("svd", "dct", "random")
_GLOBAL_KEYS = {"server", "config", "verbose", "quiet"}


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # starlette's test client warns about its httpx dependency; it is the
        # supported way to drive an ASGI app synchronously in-process.
        warnings.simplefilter("ignore", UserWarning)
        from starlette.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _post(args: argparse.Namespace, route: str, payload: dict[str, Any]) -> dict[str, Any]:
    """POST to the service; non-2xx responses raise CommandError (exit 1)."""
    with _client(args.server) as client:
        try:
            resp = client.post(route, json=payload)
        except httpx.HTTPError as exc:
            raise CommandError(f"cannot reach server {args.server}: {exc}")
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise CommandError(str(detail))
    return resp.json()


class CommandError(Exception):
    """Runtime/data failure; maps to exit code 1."""


def _parse_dims(text: str, parser: argparse.ArgumentParser) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        parser.error(f"dims must be NX,NY,NZ, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        parser.error(f"dims must be integers, got {text!r}")
    if min(dims) < 1:
        parser.error(f"dims must be positive, got {text!r}")
    return dims  # type: ignore[return-value]


def _parse_probes(text: str, parser: argparse.ArgumentParser) -> list[tuple[int, int, int]]:
    probes = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        coords = part.split(",")
        if len(coords) != 3:
            parser.error(f"probe must be i,j,k, got {part!r}")
        try:
            probes.append(tuple(int(c) for c in coords))
        except ValueError:
            parser.error(f"probe coordinates must be integers, got {part!r}")
    if not probes:
        parser.error("at least one probe is required")
    return probes


def _parse_params(text: str, parser: argparse.ArgumentParser) -> dict[str, float]:
    params: dict[str, float] = {}
    if not text:
        return params
    for item in text.split(","):
        if "=" not in item:
            parser.error(f"params must be key=value pairs, got {item!r}")
        key, value = item.split("=", 1)
        try:
            params[key.strip()] = float(value)
        except ValueError:
            parser.error(f"param {key!r} has non-numeric value {value!r}")
    return params


def _expand_glob(pattern: str) -> list[str]:
    """Snapshot ordering contract: glob results sorted lexicographically."""
    matches = sorted(glob.glob(pattern))
    if not matches:
        raise CommandError(f"no files match {pattern!r}")
    return matches


def _require(args: argparse.Namespace, parser: argparse.ArgumentParser, *names: str) -> None:
    for name in names:
        if getattr(args, name.replace("-", "_"), None) in (None, ""):
            parser.error(f"--{name} is required")


def _emit(obj: Any) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_gen(args, parser) -> int:
    _require(args, parser, "kind", "dims", "out")
    if args.snapshots < 1:
        parser.error("--snapshots must be >= 1 (EmptySeries)")
    dims = _parse_dims(args.dims, parser)
    payload = {
        "kind": args.kind,
        "dims": dims,
        "snapshots": args.snapshots,
        "seed": args.seed,
        "out_dir": args.out,
        "labels": args.vars.split(","),
        "params": _parse_params(args.params, parser),
    }
    result = _post(args, "/v1/gen", payload)
    for path in result["files"]:
        print(path)
    return 0


def _cmd_learn(args, parser) -> int:
    _require(args, parser, "in", "m", "out")
    if args.m < 2:
        parser.error("--m must be >= 2")
    payload = {
        "inputs": _expand_glob(getattr(args, "in")),
        "m": args.m,
        "basis": args.basis,
        "seed": args.seed,
        "out": args.out,
        "raw_dims": _parse_dims(args.raw_dims, parser) if args.raw_dims else None,
    }
    _emit(_post(args, "/v1/learn", payload))
    return 0


def _cmd_compress(args, parser) -> int:
    _require(args, parser, "in", "basis", "eps-t", "out")
    if args.eps_t < 0:
        parser.error("--eps-t must be >= 0")
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    if args.batch < 1:
        parser.error("--batch must be >= 1")
    payload = {
        "inputs": _expand_glob(getattr(args, "in")),
        "basis": args.basis,
        "eps_t": args.eps_t,
        "batch": args.batch,
        "workers": args.workers,
        "out": args.out,
        "raw_dims": _parse_dims(args.raw_dims, parser) if args.raw_dims else None,
    }
    result = _post(args, "/v1/compress", payload)
    for snap in result["snapshots"]:
        _emit({"snapshot": snap["snapshot"], "nrmse_pct": snap["nrmse_pct"],
               "kept_mean": snap["kept_mean"], "kept_max": snap["kept_max"]})
    summary = {
        "archive": result["archive"],
        "label": result["label"],
        "m": result["m"],
        "lambda": result["coarsening"],
        "eps_t_pct": result["eps_t"],
        "cr": result["cr"],
        "cr_with_basis": result["cr_with_basis"],
        "conservatism": result["conservatism"],
    }
    if not args.no_timing:
        summary["wall_s"] = result["wall_s"]
        summary["throughput_MBps"] = result["throughput_mbps"]
    _emit(summary)
    return 0


def _cmd_decompress(args, parser) -> int:
    _require(args, parser, "archive", "basis", "out")
    payload = {
        "archive": args.archive,
        "basis": args.basis,
        "out_dir": args.out,
        "snapshot": args.snapshot,
        "workers": args.workers,
    }
    result = _post(args, "/v1/decompress", payload)
    for path in result["files"]:
        print(path)
    return 0


def _cmd_eval(args, parser) -> int:
    _require(args, parser, "orig", "recon")
    payload = {
        "orig": _expand_glob(args.orig),
        "recon": _expand_glob(args.recon),
        "raw_dims": _parse_dims(args.raw_dims, parser) if args.raw_dims else None,
    }
    result = _post(args, "/v1/eval", payload)
    print("snapshot,nrmse_pct")
    for row in result["rows"]:
        print(f"{row['snapshot']},{row['nrmse_pct']:.10g}")
    print(f"mean,{result['mean_nrmse_pct']:.10g}")
    print(f"max,{result['max_nrmse_pct']:.10g}")
    return 0


def _cmd_sweep(args, parser) -> int:
    _require(args, parser, "in", "m-list", "eps-list")
    try:
        m_list = [int(v) for v in str(args.m_list).split(",")]
        eps_list = [float(v) for v in str(args.eps_list).split(",")]
    except ValueError:
        parser.error("--m-list and --eps-list must be comma-separated numbers")
    basis_list = str(args.basis_list).split(",")
    for name in basis_list:
        if name not in BASIS_NAMES:
            parser.error(f"unknown basis {name!r} in --basis-list")
    payload = {
        "inputs": _expand_glob(getattr(args, "in")),
        "m_list": m_list,
        "eps_list": eps_list,
        "basis_list": basis_list,
        "seed": args.seed,
        "batch": args.batch,
        "workers": args.workers,
        "out_csv": args.out,
        "include_timing": not args.no_timing,
    }
    result = _post(args, "/v1/sweep", payload)
    sys.stdout.write(result["csv_text"])
    return 0


def _cmd_diag(args, parser) -> int:
    _require(args, parser, "orig", "recon", "probes", "out")
    if args.dt <= 0:
        parser.error("--dt must be > 0")
    payload = {
        "orig": _expand_glob(args.orig),
        "recon": _expand_glob(args.recon),
        "variables": args.vars.split(","),
        "probes": _parse_probes(args.probes, parser),
        "dt": args.dt,
        "out_dir": args.out,
        "window": args.window,
        "probe_var": args.probe_var,
    }
    _emit(_post(args, "/v1/diag", payload))
    return 0


def _cmd_inspect(args, parser) -> int:
    _require(args, parser, "archive")
    result = _post(args, "/v1/inspect", {"archive": args.archive})
    if args.json:
        _emit(result)
        return 0
    nx, ny, nz = result["dims"]
    print(f"archive:       {result['archive']}")
    print(f"label:         {result['label']}")
    print(f"dims:          {nx} x {ny} x {nz}")
    print(f"patch edge:    {result['m']}  (padding mode {result['padding_mode']})")
    print(f"eps_t:         {result['eps_t']:g} %")
    print(f"snapshots:     {result['snapshots']}")
    print(f"patches/snap:  {result['patches_per_snapshot']}")
    print(f"batch size:    {result['batch_size']}")
    print(f"header bytes:  {result['header_bytes']}")
    print(f"payload bytes: {result['payload_bytes']}")
    print("batches:")
    for b in result["batches"]:
        print(
            f"  snapshot {b['snapshot']:4d} batch {b['batch']:4d}: "
            f"offset {b['offset']}, {b['compressed_bytes']} bytes "
            f"({b['raw_bytes']} raw)"
        )
    return 0


def _cmd_serve(args, parser) -> int:
    import uvicorn

    uvicorn.run("dlsc.service:app", host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlsc",
        description="Error-bounded patch-subspace compressor for 3D structured-grid fields.",
    )
    parser.add_argument("--version", action="version", version=f"dlsc {__version__}")
    parser.add_argument("--server", default=None, metavar="URL",
                        help="run against a remote service instead of in-process")
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="TOML config; tables per subcommand, keys mirror flags")
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    parser.add_argument("--quiet", action="store_true", help="log errors only")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen", help="generate synthetic FLD1 snapshot series")
    p.add_argument("--kind", choices=SYNTH_KINDS)
    p.add_argument("--dims", metavar="NX,NY,NZ")
    p.add_argument("--snapshots", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--vars", default="u", metavar="U[,V,W]")
    p.add_argument("--params", default="", metavar="K=V[,K=V]")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("learn", help="learn a patch basis from the first snapshot")
    p.add_argument("--in", dest="in", metavar="GLOB")
    p.add_argument("--m", type=int)
    p.add_argument("--basis", choices=BASIS_NAMES, default="svd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="BASIS")
    p.add_argument("--raw-dims", default=None, metavar="NX,NY,NZ")
    p.set_defaults(func=_cmd_learn)

    p = sub.add_parser("compress", help="compress a snapshot series to an archive")
    p.add_argument("--in", dest="in", metavar="GLOB")
    p.add_argument("--basis", metavar="BASIS")
    p.add_argument("--eps-t", type=float, default=None, metavar="PCT")
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", metavar="ARCHIVE")
    p.add_argument("--no-timing", action="store_true",
                   help="omit timing fields for deterministic output")
    p.add_argument("--raw-dims", default=None, metavar="NX,NY,NZ")
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct FLD1 snapshots from an archive")
    p.add_argument("--archive", metavar="ARCHIVE")
    p.add_argument("--basis", metavar="BASIS")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--snapshot", type=int, default=None, metavar="J")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("eval", help="per-snapshot NRMSE between two series")
    p.add_argument("--orig", metavar="GLOB")
    p.add_argument("--recon", metavar="GLOB")
    p.add_argument("--raw-dims", default=None, metavar="NX,NY,NZ")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="rate-distortion sweep over m, basis and eps_t")
    p.add_argument("--in", dest="in", metavar="GLOB")
    p.add_argument("--m-list", dest="m_list", metavar="M[,M...]")
    p.add_argument("--eps-list", dest="eps_list", metavar="PCT[,PCT...]")
    p.add_argument("--basis-list", dest="basis_list", default="svd", metavar="NAME[,NAME...]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, metavar="CSV")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("diag", help="energy and spectrum preservation report")
    p.add_argument("--orig", metavar="GLOB")
    p.add_argument("--recon", metavar="GLOB")
    p.add_argument("--vars", default="u,v,w", metavar="U,V,W")
    p.add_argument("--probes", metavar="I,J,K[;I,J,K...]")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--window", choices=("none", "hann"), default="none")
    p.add_argument("--probe-var", dest="probe_var", default="u")
    p.set_defaults(func=_cmd_diag)

    p = sub.add_parser("inspect", help="dump an archive header and batch table")
    p.add_argument("--archive", metavar="ARCHIVE")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8450)
    p.set_defaults(func=_cmd_serve)

    return parser


def _load_config(argv: Sequence[str], parser: argparse.ArgumentParser) -> dict[str, Any]:
    path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    if path is None:
        return {}
    if not Path(path).is_file():
        parser.error(f"config file not found: {path}")
    try:
        return tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        parser.error(f"config file {path} is not valid TOML: {exc}")
    return {}


def _apply_config(args: argparse.Namespace, config: dict[str, Any],
                  parser: argparse.ArgumentParser, explicit: set[str]) -> None:
    """Fill flags the user did not pass from the config's subcommand table."""
    section = config.get(args.command or "", {})
    if not isinstance(section, dict):
        parser.error(f"config section [{args.command}] must be a table")
    for key, value in section.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr) or attr in _GLOBAL_KEYS:
            parser.error(f"config key {key!r} is not a flag of {args.command!r}")
        if attr not in explicit:
            setattr(args, attr, value)


def _explicit_flags(argv: Sequence[str]) -> set[str]:
    names = set()
    for arg in argv:
        if arg.startswith("--"):
            names.add(arg[2:].split("=", 1)[0].replace("-", "_"))
    return names


def _setup_logging(args: argparse.Namespace) -> None:
    level_name = os.environ.get("DLS_LOG", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    if args.verbose:
        level = logging.INFO
    if args.quiet:
        level = logging.ERROR
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    config = _load_config(argv, parser)
    args = parser.parse_args(argv)
    if args.verbose and args.quiet:
        parser.error("--verbose conflicts with --quiet")
    if args.command is None:
        parser.error("a subcommand is required")
    _apply_config(args, config, parser, _explicit_flags(argv))
    _setup_logging(args)
    try:
        return args.func(args, parser)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
