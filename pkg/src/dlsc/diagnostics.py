"""Physics-preservation checks on reconstructed snapshot series.

Standard definitions are used throughout: point-mean kinetic energy,
turbulent kinetic energy as the kinetic energy of temporal-mean-removed
fluctuations, and a one-sided periodogram for probe spectra.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError
from .field import Field

log = logging.getLogger("dlsc.diagnostics")

VELOCITY_LABELS = ("u", "v", "w")
Probe = tuple[int, int, int]


def _check_same_dims(fields: Mapping[str, Field]) -> tuple[int, int, int]:
    dims = None
    for label, f in fields.items():
        if dims is None:
            dims = f.dims
        elif f.dims != dims:
            raise DimensionMismatchError(f"variable {label!r} dims {f.dims} != {dims}")
    if dims is None:
        raise ValueError("no variables given")
    return dims


def kinetic_energy(
    fields: Mapping[str, Field], expected: Sequence[str] = VELOCITY_LABELS
) -> float:
    """Point-mean kinetic energy (1 / 2K) sum(u^2 + v^2 + w^2).

    Variables listed in ``expected`` but absent are treated as zero, with a
    warning.
    """
    dims = _check_same_dims(fields)
    for label in expected:
        if label not in fields:
            log.warning("variable %r missing; treated as zero in kinetic energy", label)
    points = dims[0] * dims[1] * dims[2]
    total = 0.0
    for f in fields.values():
        total += float(np.dot(f.data, f.data))
    return total / (2.0 * points)


def turbulent_kinetic_energy(series: Sequence[Mapping[str, Field]]) -> list[float]:
    """Per-snapshot kinetic energy of temporal-mean-removed fluctuations."""
    t_count = len(series)
    if t_count < 2:
        raise ValueError("turbulent kinetic energy needs at least 2 snapshots")
    labels = sorted(series[0].keys())
    for snap in series:
        if sorted(snap.keys()) != labels:
            raise ValueError("variable set differs across snapshots")
        _check_same_dims(snap)
    dims = series[0][labels[0]].dims
    points = dims[0] * dims[1] * dims[2]

    totals = np.zeros(t_count)
    for label in labels:
        stack = np.stack([snap[label].data for snap in series])  # (T, points)
        if stack.shape[1] != points:
            raise DimensionMismatchError(f"variable {label!r} dims drift across snapshots")
        fluct = stack - stack.mean(axis=0)
        totals += np.einsum("tp,tp->t", fluct, fluct)
    return [float(v) / (2.0 * points) for v in totals]


def probe_psd(
    values: Sequence[float], dt: float, window: str = "none"
) -> tuple[np.ndarray, np.ndarray]:
    """One-sided periodogram of a probe time series.

    P(f_k) = 2 |DFT(w x)_k|^2 / (T f_s W) for interior bins, with DC and
    Nyquist unscaled by 2 and W the mean square of the window.  Frequencies
    are k / (T dt).
    """
    x = np.asarray(values, dtype=np.float64)
    t_count = x.size
    if t_count < 4:
        raise ValueError("probe spectra need at least 4 samples")
    if dt <= 0:
        raise ValueError("sample spacing must be positive")
    if window == "none":
        w = np.ones(t_count)
    elif window == "hann":
        w = np.hanning(t_count)
    else:
        raise ValueError(f"unknown window {window!r}; expected 'none' or 'hann'")
    fs = 1.0 / dt
    w_power = float(np.mean(w * w))
    spectrum = np.fft.rfft(w * x)
    power = np.abs(spectrum) ** 2 / (t_count * fs * w_power)
    if t_count % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    freqs = np.fft.rfftfreq(t_count, dt)
    return freqs, power


def dominant_bin(power: np.ndarray) -> int:
    """Index of the strongest nonzero-frequency bin."""
    if len(power) < 2:
        raise ValueError("spectrum has no nonzero-frequency bins")
    return int(np.argmax(power[1:]) + 1)


@dataclass(frozen=True)
class SeriesStats:
    """Energy and probe traces of one snapshot series."""

    ke: tuple[float, ...]
    tke: tuple[float, ...]
    probes: tuple[Probe, ...]
    probe_series: Mapping[Probe, np.ndarray]
    dt: float


def series_stats(
    series: Sequence[Mapping[str, Field]],
    probes: Sequence[Probe],
    dt: float,
    probe_var: str = "u",
) -> SeriesStats:
    """Collect KE, TKE and per-probe traces of ``probe_var`` over a series."""
    if not series:
        raise ValueError("empty series")
    if probe_var not in series[0]:
        raise ValueError(f"probe variable {probe_var!r} not present in series")
    ke = [kinetic_energy(snap, expected=()) for snap in series]
    tke = turbulent_kinetic_energy(series)
    dims = series[0][probe_var].dims
    traces: dict[Probe, np.ndarray] = {}
    for probe in probes:
        i, j, k = probe
        if not (0 <= i < dims[0] and 0 <= j < dims[1] and 0 <= k < dims[2]):
            raise IndexError(f"probe {probe} outside grid {dims}")
        traces[(i, j, k)] = np.array(
            [snap[probe_var].as_3d()[k, j, i] for snap in series]
        )
    return SeriesStats(
        ke=tuple(ke), tke=tuple(tke), probes=tuple(tuple(p) for p in probes),
        probe_series=traces, dt=dt,
    )


def _recovery_pct(a: Sequence[float], b: Sequence[float]) -> float:
    total = float(np.sum(a))
    diff = abs(float(np.sum(np.asarray(a) - np.asarray(b))))
    if total == 0.0:
        return 100.0 if diff == 0.0 else 0.0
    return 100.0 * (1.0 - diff / total)


@dataclass(frozen=True)
class ProbeComparison:
    probe: Probe
    dominant_bin_orig: int
    dominant_bin_recon: int
    frequency_orig: float
    match: bool


@dataclass(frozen=True)
class ComparisonReport:
    ke_recovery_pct: float
    tke_recovery_pct: float
    probes: tuple[ProbeComparison, ...]

    @property
    def all_probes_match(self) -> bool:
        return all(p.match for p in self.probes)


def compare_series(
    original: SeriesStats, reconstructed: SeriesStats, window: str = "none"
) -> ComparisonReport:
    """Energy recovery percentages and dominant-frequency agreement."""
    if len(original.ke) != len(reconstructed.ke):
        raise ValueError("series lengths differ")
    if original.probes != reconstructed.probes:
        raise ValueError("probe sets differ")
    comparisons = []
    for probe in original.probes:
        freqs, p_orig = probe_psd(original.probe_series[probe], original.dt, window)
        _, p_recon = probe_psd(reconstructed.probe_series[probe], reconstructed.dt, window)
        bin_orig = dominant_bin(p_orig)
        bin_recon = dominant_bin(p_recon)
        comparisons.append(
            ProbeComparison(
                probe=probe,
                dominant_bin_orig=bin_orig,
                dominant_bin_recon=bin_recon,
                frequency_orig=float(freqs[bin_orig]),
                match=bin_orig == bin_recon,
            )
        )
    return ComparisonReport(
        ke_recovery_pct=_recovery_pct(original.ke, reconstructed.ke),
        tke_recovery_pct=_recovery_pct(original.tke, reconstructed.tke),
        probes=tuple(comparisons),
    )


def write_diagnostics_csvs(
    original: SeriesStats,
    reconstructed: SeriesStats,
    out_dir: str | Path,
    window: str = "none",
) -> list[Path]:
    """Write ke.csv, tke.csv and one psd_<i>_<j>_<k>.csv per probe."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def dump(name: str, header: str, columns: Sequence[Sequence[float]]) -> None:
        lines = [header]
        for row in zip(*columns):
            lines.append(",".join(f"{v:.10g}" for v in row))
        path = out_dir / name
        path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
        written.append(path)

    t_axis = [t * original.dt for t in range(len(original.ke))]
    dump("ke.csv", "t,KE_orig,KE_recon", [t_axis, original.ke, reconstructed.ke])
    dump("tke.csv", "t,TKE_orig,TKE_recon", [t_axis, original.tke, reconstructed.tke])
    for probe in original.probes:
        freqs, p_orig = probe_psd(original.probe_series[probe], original.dt, window)
        _, p_recon = probe_psd(reconstructed.probe_series[probe], reconstructed.dt, window)
        i, j, k = probe
        dump(f"psd_{i}_{j}_{k}.csv", "f,P_orig,P_recon", [freqs, p_orig, p_recon])
    return written
