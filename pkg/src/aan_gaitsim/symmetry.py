"""Per-stride peak statistics, symmetry errors and session gait metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .oscillator import Side, wrap_half


class NoEstimateError(ValueError):
    """Peak estimate requested from an empty stride history."""


class MetricsError(ValueError):
    """A gait metric is undefined for the supplied session data."""


@dataclass(frozen=True)
class StrideRecord:
    index: int
    side: Side
    theta_pf: float
    phi_pf: float
    theta_pe: float
    phi_pe: float
    tau_hip_peak: float = math.nan
    time: float = math.nan


@dataclass(frozen=True)
class PeakEstimate:
    theta_pf: float
    phi_pf: float
    theta_pe: float
    phi_pe: float


@dataclass(frozen=True)
class SymmetryErrors:
    e_theta_fle: float
    e_phi_fle: float
    e_theta_ex: float
    e_phi_ex: float


@dataclass(frozen=True)
class GaitMetrics:
    sap_fle: float
    sap_ex: float
    tap_fle: float
    tap_ex: float
    si_rom: float
    si_toa: float
    hpi: Optional[float] = None
    strides: int = 0

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def circular_mean(phases: Sequence[float]) -> float:
    """Mean of cycle fractions on the unit circle, returned in [0, 1)."""
    if len(phases) == 0:
        raise NoEstimateError("no phases to average")
    s = sum(math.sin(2.0 * math.pi * p) for p in phases)
    c = sum(math.cos(2.0 * math.pi * p) for p in phases)
    m = math.atan2(s, c) / (2.0 * math.pi)
    m %= 1.0
    # atan2 of a tiny negative sine lands just below 1.0
    if m >= 1.0 - 1e-12:
        m = 0.0
    return m


def estimate_peaks(
    history: Sequence[StrideRecord], n_s: int = 3, peak: str = "flexion"
) -> tuple[float, float]:
    """Moving-average peak angle and circular-mean peak phase over the last ``n_s`` strides."""
    if not history:
        raise NoEstimateError("stride history is empty")
    recent = history[-n_s:]
    if peak == "flexion":
        angles = [r.theta_pf for r in recent]
        phases = [r.phi_pf for r in recent]
    elif peak == "extension":
        angles = [r.theta_pe for r in recent]
        phases = [r.phi_pe for r in recent]
    else:
        raise ValueError(f"peak must be 'flexion' or 'extension', got {peak!r}")
    return sum(angles) / len(angles), circular_mean(phases)


def peak_estimate(history: Sequence[StrideRecord], n_s: int = 3) -> PeakEstimate:
    th_f, ph_f = estimate_peaks(history, n_s, "flexion")
    th_e, ph_e = estimate_peaks(history, n_s, "extension")
    return PeakEstimate(th_f, ph_f, th_e, ph_e)


def symmetry_errors(hlth_est: PeakEstimate, imp_est: PeakEstimate) -> SymmetryErrors:
    """Healthy-minus-impaired peak angle and (wrapped) peak phase differences."""
    return SymmetryErrors(
        e_theta_fle=hlth_est.theta_pf - imp_est.theta_pf,
        e_phi_fle=wrap_half(hlth_est.phi_pf - imp_est.phi_pf),
        e_theta_ex=hlth_est.theta_pe - imp_est.theta_pe,
        e_phi_ex=wrap_half(hlth_est.phi_pe - imp_est.phi_pe),
    )


def resample_cycle(phi: Sequence[float], theta: Sequence[float], n_grid: int = 200) -> np.ndarray:
    """Linear resampling of one phase-indexed cycle onto ``n_grid`` uniform phases."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    order = np.argsort(phi, kind="stable")
    grid = np.arange(n_grid) / n_grid
    return np.interp(grid, phi[order], theta[order], period=1.0)


def si_toa(
    hlth_cycles: Sequence[tuple[Sequence[float], Sequence[float]]],
    imp_cycles: Sequence[tuple[Sequence[float], Sequence[float]]],
    n_grid: int = 200,
) -> float:
    """Variance-accounted-for symmetry of paired phase-indexed trajectories.

    Each entry is ``(phi, theta)`` for one gait cycle; cycles are paired in
    order. Both sides are resampled onto a common phase grid and the
    residual variance is taken relative to the healthy-side variance.
    """
    if len(hlth_cycles) != len(imp_cycles) or not hlth_cycles:
        raise MetricsError("need the same non-zero number of cycles on both sides")
    h = np.concatenate([resample_cycle(p, th, n_grid) for p, th in hlth_cycles])
    i = np.concatenate([resample_cycle(p, th, n_grid) for p, th in imp_cycles])
    var_h = float(np.var(h))
    if not var_h > 0.0:
        raise MetricsError("healthy trajectory has zero variance; SI_TOA undefined")
    return 1.0 - float(np.var(h - i)) / var_h


def si_rom(rom_hlth: float, rom_imp: float) -> float:
    avg = 0.5 * (rom_hlth + rom_imp)
    if avg == 0.0:
        raise MetricsError("zero average range of motion")
    return 100.0 * (rom_hlth - rom_imp) / avg


def compute_metrics(
    hlth_records: Sequence[StrideRecord],
    imp_records: Sequence[StrideRecord],
    hlth_cycles: Sequence[tuple[Sequence[float], Sequence[float]]],
    imp_cycles: Sequence[tuple[Sequence[float], Sequence[float]]],
    tau_hip_normal: Optional[float] = None,
    min_strides: int = 10,
    n_grid: int = 200,
) -> GaitMetrics:
    """Session-level SAP, TAP, SI_ROM, SI_TOA and (optionally) HPI.

    Peak statistics are session means of the stride records; phases use the
    circular mean. HPI is only reported when a NORMAL-session reference
    moment is supplied.
    """
    n = min(len(hlth_records), len(imp_records))
    if n < min_strides:
        raise MetricsError(f"need at least {min_strides} strides per side, got {n}")
    hl = peak_estimate(hlth_records, len(hlth_records))
    im = peak_estimate(imp_records, len(imp_records))
    err = symmetry_errors(hl, im)
    rom_h = hl.theta_pf - hl.theta_pe
    rom_i = im.theta_pf - im.theta_pe
    hpi = None
    if tau_hip_normal is not None:
        if tau_hip_normal == 0.0:
            raise MetricsError("NORMAL reference moment is zero; HPI undefined")
        tau = [r.tau_hip_peak for r in imp_records if math.isfinite(r.tau_hip_peak)]
        if tau:
            hpi = (sum(tau) / len(tau)) / tau_hip_normal
    return GaitMetrics(
        sap_fle=err.e_theta_fle,
        sap_ex=err.e_theta_ex,
        tap_fle=100.0 * err.e_phi_fle,
        tap_ex=100.0 * err.e_phi_ex,
        si_rom=si_rom(rom_h, rom_i),
        si_toa=si_toa(hlth_cycles, imp_cycles, n_grid),
        hpi=hpi,
        strides=n,
    )
