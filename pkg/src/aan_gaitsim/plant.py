"""Synthetic hemiplegic walker with a slacking human-effort model.

Both hips follow a two-harmonic nominal curve driven by one shared gait
clock (legs half a cycle apart). The impaired side loses flexion near its
peak, has that peak delayed by a local phase warp and lags on both limbs
in proportion to the flexion still missing; assistive torque and human
effort restore the lost flexion, and the healthy side compensates with
reduced extension. Deficits are shaped by the nominal curve itself,
weighted by how close it is to the flexion (or extension) peak, so every
limb stays monotone and no spurious extrema appear. Per-stride
amplitudes are latched where their weight is zero, which keeps the
trajectories continuous while the inputs change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .controller import TAU_MAX

TWO_PI = 2.0 * math.pi


class PlantConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WalkerConfig:
    cycle_period: float = 1.1  # s
    peak_flexion: float = 30.0  # deg
    peak_extension: float = -10.0  # deg
    phi_peak_flexion: float = 0.88
    phi_peak_extension: float = 0.53
    flexion_deficit: float = 12.1  # deg
    temporal_shift: float = 0.029  # cycle fraction
    coupling_coeff: float = 0.7
    assist_gain: float = 12.0  # deg of flexion restored per Nm, small-torque slope
    assist_ceiling: float = 10.5  # deg, most flexion the device can restore; inf = linear
    entrainment_gain: float = 2.0
    effort_gain: float = 0.25  # deg per unit effort
    noise_angle_sd: float = 1.0  # deg
    noise_period_sd: float = 0.02  # s
    meas_noise_sd: float = 0.2  # deg
    sample_rate: float = 400.0  # Hz
    shift_width: float = 0.3  # half-width of the phase warp, cycle fraction
    swing_delay: float = 0.07  # peak lag on the rising limb at full deficit, cycle fraction
    stance_delay: float = 0.12  # peak lag on the falling limb at full deficit, cycle fraction
    deficit_exponent: float = 2.0
    impaired: bool = True

    def __post_init__(self) -> None:
        if not self.cycle_period > 0:
            raise PlantConfigError("cycle_period must be > 0")
        if not self.peak_flexion > self.peak_extension:
            raise PlantConfigError("peak_flexion must exceed peak_extension")
        if not 0.0 <= self.coupling_coeff <= 1.0:
            raise PlantConfigError("coupling_coeff must lie in [0, 1]")
        for name in ("phi_peak_flexion", "phi_peak_extension"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise PlantConfigError(f"{name} must lie in [0, 1)")
        if not 0.0 < self.shift_width < 0.5:
            raise PlantConfigError("shift_width must lie in (0, 0.5)")
        if not self.deficit_exponent >= 1.0:
            raise PlantConfigError("deficit_exponent must be >= 1")
        # the warp must leave the extension peak untouched (stride latching happens there)
        gap = abs((self.phi_peak_extension - self.phi_peak_flexion + 0.5) % 1.0 - 0.5)
        if self.shift_width + abs(self.temporal_shift) >= gap:
            raise PlantConfigError("shift_width reaches the extension peak")
        for name in (
            "flexion_deficit",
            "assist_gain",
            "assist_ceiling",
            "entrainment_gain",
            "effort_gain",
            "noise_angle_sd",
            "noise_period_sd",
            "meas_noise_sd",
        ):
            if not getattr(self, name) >= 0:
                raise PlantConfigError(f"{name} must be >= 0")
        if not self.sample_rate > 0:
            raise PlantConfigError("sample_rate must be > 0")
        if self.swing_delay < 0 or self.stance_delay < 0:
            raise PlantConfigError("swing_delay and stance_delay must be >= 0")
        # the warp u = q - S*b(q) - limb lags must stay monotone
        rise = (self.phi_peak_flexion - self.phi_peak_extension) % 1.0
        peak_slope = abs(self.temporal_shift) * math.pi / (2.0 * self.shift_width)
        limb_slope = max(self.swing_delay * math.pi / rise, self.stance_delay * math.pi / (1.0 - rise))
        if peak_slope + limb_slope >= 1.0:
            raise PlantConfigError("phase warp too strong: temporal_shift or limb delays too large")


@dataclass(frozen=True)
class HumanConfig:
    enabled: bool = True
    slacking: float = 0.95  # f_s
    learning_gain: float = 0.02  # g_e, per deg
    u_max: float = 5.0
    tau_base: float = 0.8  # Nm/kg
    k_u: float = 0.002
    load_gain: float = 0.02  # Nm/kg per deg of impaired flexion against the impairment
    assist_share: float = 0.002  # Nm/kg of hip moment taken over per Nm of device torque

    def __post_init__(self) -> None:
        if not 0.0 <= self.slacking < 1.0:
            raise PlantConfigError("slacking factor must lie in [0, 1)")
        for name in ("learning_gain", "u_max", "tau_base", "k_u", "load_gain", "assist_share"):
            if not getattr(self, name) >= 0:
                raise PlantConfigError(f"{name} must be >= 0")


@dataclass(frozen=True)
class HumanState:
    u_h: float = 0.0
    tau_hip_peak: float = 0.8
    stride_index: int = 0


def human_adaptation_update(h: HumanState, e_theta_fle: float, cfg: HumanConfig) -> HumanState:
    """Error-driven effort with slacking; the moment is the baseline scaled by effort."""
    u = cfg.slacking * h.u_h + cfg.learning_gain * max(e_theta_fle, 0.0)
    u = min(max(u, 0.0), cfg.u_max)
    return HumanState(u_h=u, tau_hip_peak=cfg.tau_base * (1.0 + cfg.k_u * u), stride_index=h.stride_index + 1)


def hip_moment(
    h: HumanState, cfg: HumanConfig, theta_pf_imp: float, f_applied: float, impaired: bool
) -> float:
    """Peak hip flexion moment of the impaired side for one stride (Nm/kg).

    On top of the effort-scaled baseline, flexing against the impairment
    costs moment in proportion to the flexion reached, and device torque
    takes over part of the job.
    """
    tau = h.tau_hip_peak
    if impaired:
        tau += cfg.load_gain * max(theta_pf_imp, 0.0)
    tau -= cfg.assist_share * f_applied
    return max(tau, 0.0)


# --- nominal curve ----------------------------------------------------------


def _basis(phi: float, deriv: bool) -> list[float]:
    w = TWO_PI
    if not deriv:
        return [1.0, math.cos(w * phi), math.sin(w * phi), math.cos(2 * w * phi), math.sin(2 * w * phi)]
    return [
        0.0,
        -w * math.sin(w * phi),
        w * math.cos(w * phi),
        -2 * w * math.sin(2 * w * phi),
        2 * w * math.cos(2 * w * phi),
    ]


def fit_nominal(cfg: WalkerConfig, tol: float = 0.5) -> np.ndarray:
    """Two-harmonic coefficients with the prescribed extrema.

    Peak values and zero slopes at both peak phases fix four of the five
    coefficients; the remaining freedom goes to the smallest second
    harmonic. The fitted curve must actually attain its extrema there.
    """
    pf, pe = cfg.phi_peak_flexion, cfg.phi_peak_extension
    a = np.array([_basis(pf, False), _basis(pe, False), _basis(pf, True), _basis(pe, True)])
    b = np.array([cfg.peak_flexion, cfg.peak_extension, 0.0, 0.0])
    wi = np.diag(1.0 / np.array([1e-6, 1.0, 1.0, 3.0, 3.0]))
    try:
        c = wi @ a.T @ np.linalg.solve(a @ wi @ a.T, b)
    except np.linalg.LinAlgError as exc:
        raise PlantConfigError("peak constraints are degenerate") from exc
    grid = np.arange(4000) / 4000.0
    w = TWO_PI * grid
    th = c[0] + c[1] * np.cos(w) + c[2] * np.sin(w) + c[3] * np.cos(2 * w) + c[4] * np.sin(2 * w)
    resid = max(th.max() - cfg.peak_flexion, cfg.peak_extension - th.min())
    if resid > tol:
        raise PlantConfigError(f"nominal curve cannot meet the peak constraints (residual {resid:.3f} deg)")
    return c


def _eval(c: np.ndarray, phi: float) -> float:
    w = TWO_PI * phi
    c1, s1 = math.cos(w), math.sin(w)
    return c[0] + c[1] * c1 + c[2] * s1 + c[3] * (c1 * c1 - s1 * s1) + c[4] * (2.0 * s1 * c1)


def nominal_trajectory(phi: float, cfg: WalkerConfig, coeffs: Optional[np.ndarray] = None) -> float:
    if coeffs is None:
        coeffs = fit_nominal(cfg)
    return float(_eval(coeffs, phi))


def _limb_bump(x: float, length: float) -> float:
    """sin^2 bump over ``[0, length)``, zero with zero slope at both ends."""
    if 0.0 <= x < length:
        v = math.sin(math.pi * x / length)
        return v * v
    return 0.0


# --- walker -----------------------------------------------------------------


@dataclass(frozen=True)
class StrideTruth:
    """Ground truth for one completed impaired stride (extension peak to extension peak)."""

    index: int
    theta_pf_imp: float
    theta_pf_hlth: float
    e_theta: float
    f_applied: float
    u_h: float
    tau_hip_peak: float


@dataclass(frozen=True)
class PlantSample:
    t: float
    theta_imp: float
    theta_hlth: float
    theta_imp_true: float
    theta_hlth_true: float
    stride: Optional[StrideTruth] = None


@dataclass
class _Latch:
    """Amplitudes of one leg for the current stride."""

    k_flex: int = -(10**9)  # instance index of the flexion-side amplitude
    k_ext: int = -(10**9)
    flex: float = 0.0  # flexion lost (deg); negative means over-reach
    ext: float = 0.0  # extension lost (deg)
    shift: float = 0.0
    impaired: bool = False  # limb lags active this stride
    tau_run: float = 0.0
    restored: float = 0.0  # flexion restored by tau_run
    tau_peak: float = math.nan  # offset of the torque peak from the flexion peak
    theta_max: float = -math.inf


class Walker:
    """Stateful walker stepped at ``sample_rate``.

    Random streams (stride noise, period jitter, sensor noise) are spawned
    from one seed, so a run is a pure function of config and seed.
    """

    def __init__(
        self,
        cfg: WalkerConfig = WalkerConfig(),
        human: HumanConfig = HumanConfig(),
        seed: Union[int, np.random.SeedSequence] = 0,
        block: int = 4096,
    ) -> None:
        self.cfg = cfg
        self.human_cfg = human
        self.coeffs = tuple(float(c) for c in fit_nominal(cfg))
        self.rom = cfg.peak_flexion - cfg.peak_extension
        # keep |amplitude| * exponent / ROM below one so limbs stay monotone
        self._amp_lim = 0.9 * self.rom / cfg.deficit_exponent
        self._rise = (cfg.phi_peak_flexion - cfg.phi_peak_extension) % 1.0
        self._pe = cfg.peak_extension
        self._inv_rom = 1.0 / self.rom
        self._p = cfg.deficit_exponent
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        s_stride, s_period, s_meas = ss.spawn(3)
        self._rng_stride = np.random.default_rng(s_stride)
        self._rng_period = np.random.default_rng(s_period)
        self._rng_meas = np.random.default_rng(s_meas)
        self._block = block
        self._meas: list = []
        self._meas_i = 0
        self.dt = 1.0 / cfg.sample_rate
        self.n = 0
        self.q = 0.0  # unwrapped gait-clock cycles; impaired phase = q mod 1
        self._cycle = 0
        self.period = self._draw_period()
        self.human = HumanState(tau_hip_peak=human.tau_base)
        self._imp = _Latch()
        self._hl = _Latch()
        self._imp_started = False
        self._last_f = 0.0
        self._last_tpk = math.nan
        self._last_deficit = cfg.flexion_deficit if cfg.impaired else 0.0
        self._stride_count = 0

    @property
    def t(self) -> float:
        return self.n * self.dt

    def set_impaired(self, impaired: bool) -> None:
        """Switch the impairment; takes effect from each amplitude's next latch point."""
        self.cfg = replace(self.cfg, impaired=impaired)

    def _draw_period(self) -> float:
        sd = self.cfg.noise_period_sd
        p = self.cfg.cycle_period
        if sd > 0:
            p += float(self._rng_period.normal(0.0, sd))
        return max(p, 0.2 * self.cfg.cycle_period)

    def _draw_angle(self) -> float:
        sd = self.cfg.noise_angle_sd
        return float(self._rng_stride.normal(0.0, sd)) if sd > 0 else 0.0

    def _refill_meas(self) -> list:
        sd = self.cfg.meas_noise_sd
        if sd > 0:
            self._meas = self._rng_meas.normal(0.0, sd, self._block).tolist()
        else:
            self._meas = [0.0] * self._block
        self._meas_i = 0
        return self._meas

    def _clip_amp(self, a: float) -> float:
        lim = self._amp_lim
        return lim if a > lim else -lim if a < -lim else a

    def _restored(self, tau: float) -> float:
        """Flexion restored by a torque peak, saturating at the device ceiling."""
        g = self.cfg.assist_ceiling
        if tau <= 0.0:
            return 0.0
        if math.isinf(g):
            return self.cfg.assist_gain * tau
        if g <= 0.0:
            return 0.0
        return g * (1.0 - math.exp(-self.cfg.assist_gain * tau / g))

    def _shape(self, u: float, flex: float, ext: float) -> float:
        """Nominal angle at ``u`` minus weighted flexion loss plus weighted extension loss."""
        w = TWO_PI * u
        return self._shape_cs(math.cos(w), math.sin(w), flex, ext)

    def _shape_cs(self, co: float, si: float, flex: float, ext: float) -> float:
        """``_shape`` from the cosine and sine of the clock angle."""
        c0, c1, c2, c3, c4 = self.coeffs
        nom = c0 + c1 * co + c2 * si + c3 * (co * co - si * si) + c4 * (2.0 * si * co)
        s = (nom - self._pe) * self._inv_rom
        s = 0.0 if s < 0.0 else 1.0 if s > 1.0 else s
        p = self._p
        if p == 2.0:
            return nom - flex * s * s + ext * (1.0 - s) * (1.0 - s)
        return nom - flex * s**p + ext * (1.0 - s) ** p

    def _latch_imp_flex(self, k: int) -> Optional[StrideTruth]:
        cfg = self.cfg
        st = self._imp
        done = self._finish_imp_stride(st) if self._imp_started else None
        self._imp_started = True
        effort = cfg.effort_gain * self.human.u_h
        noise = self._draw_angle()
        if cfg.impaired:
            flex = cfg.flexion_deficit - effort - noise
            s = cfg.temporal_shift
            if math.isfinite(self._last_tpk) and self._last_f > 0:
                pull = cfg.entrainment_gain * min(self._last_f / TAU_MAX, 1.0)
                s = s + pull * (self._last_tpk - s)
        else:
            flex = -noise
            s = 0.0
        lim = 0.95 * 2.0 * cfg.shift_width / math.pi
        st.k_flex = k
        st.flex = flex
        st.shift = min(max(s, -lim), lim)
        st.impaired = cfg.impaired and cfg.flexion_deficit > 0
        st.tau_run = 0.0
        st.restored = 0.0
        st.tau_peak = math.nan
        st.theta_max = -math.inf
        return done

    def step(self, tau_actual: float) -> PlantSample:
        ti, th, ti_true, th_true, done = self.advance(tau_actual)
        return PlantSample(self.t, ti, th, ti_true, th_true, done)

    def advance(self, tau_actual: float) -> tuple[float, float, float, float, Optional[StrideTruth]]:
        """Hot-path step: ``(theta_imp, theta_hlth, true_imp, true_hlth, stride)``."""
        cfg = self.cfg
        self.n += 1
        q = self.q + self.dt / self.period
        self.q = q
        if q >= self._cycle + 1:
            self._cycle += 1
            self.period = self._draw_period()
        c_f = cfg.phi_peak_flexion
        c_e = cfg.phi_peak_extension
        done = None

        # impaired side: flexion amplitudes latch at the extension peak,
        # the extension amplitude at the (warped) flexion peak
        st = self._imp
        k = math.floor(q - c_e)
        if k != st.k_flex:
            done = self._latch_imp_flex(k)
        d = (q - c_f + 0.5) % 1.0 - 0.5
        if tau_actual > st.tau_run:
            st.tau_run = tau_actual
            st.tau_peak = d
            st.restored = self._restored(tau_actual)
        flex_eff = st.flex - st.restored
        u = q
        sw = cfg.shift_width
        if -sw < d < sw:
            u -= st.shift * 0.5 * (1.0 + math.cos(math.pi * d / sw))
        if st.impaired:
            # limbs slow down with the square of the flexion still missing;
            # both lags vanish at the peaks, so latches stay continuous
            r = flex_eff / cfg.flexion_deficit
            r = 0.0 if r < 0.0 else 1.0 if r > 1.0 else r * r
            if r > 0.0:
                x = (q - c_e) % 1.0
                rise = self._rise
                if x < rise:
                    u -= r * cfg.swing_delay * _limb_bump(x, rise)
                else:
                    u -= r * cfg.stance_delay * _limb_bump(x - rise, 1.0 - rise)
        ke = math.floor(u - c_f)
        if ke != st.k_ext:
            st.k_ext = ke
            st.ext = self._draw_angle()
        lim = self._amp_lim
        flex = lim if flex_eff > lim else -lim if flex_eff < -lim else flex_eff
        # the healthy clock is half a cycle ahead: its cosine and sine are negated
        w = TWO_PI * q
        co, si = math.cos(w), math.sin(w)
        if u != q:
            w = TWO_PI * u
            theta_imp = self._shape_cs(math.cos(w), math.sin(w), flex, st.ext)
        else:
            theta_imp = self._shape_cs(co, si, flex, st.ext)
        if theta_imp > st.theta_max:
            st.theta_max = theta_imp

        # healthy side runs half a cycle ahead
        hl = self._hl
        qh = q + 0.5
        kh = math.floor(qh - c_e)
        if kh != hl.k_flex:
            hl.k_flex = kh
            hl.flex = -self._draw_angle()
            hl.theta_max = -math.inf
        kh = math.floor(qh - c_f)
        if kh != hl.k_ext:
            hl.k_ext = kh
            coupling = cfg.coupling_coeff * max(self._last_deficit, 0.0) if cfg.impaired else 0.0
            hl.ext = self._clip_amp(coupling + self._draw_angle())
        theta_h = self._shape_cs(-co, -si, hl.flex, hl.ext)
        if theta_h > hl.theta_max:
            hl.theta_max = theta_h

        i = self._meas_i
        meas = self._meas
        if i + 2 > len(meas):
            meas = self._refill_meas()
            i = 0
        self._meas_i = i + 2
        return theta_imp + meas[i], theta_h + meas[i + 1], theta_imp, theta_h, done

    def _finish_imp_stride(self, st: _Latch) -> StrideTruth:
        hc = self.human_cfg
        # the healthy flexion peak half a cycle earlier is the reference
        e = self._hl.theta_max - st.theta_max
        if hc.enabled:
            self.human = human_adaptation_update(self.human, e, hc)
        else:
            self.human = HumanState(0.0, hc.tau_base, self.human.stride_index + 1)
        self._last_f = st.tau_run
        self._last_tpk = st.tau_peak
        self._last_deficit = st.flex - self._restored(st.tau_run)
        tau_hip = hip_moment(self.human, hc, st.theta_max, st.tau_run, self.cfg.impaired)
        self._stride_count += 1
        return StrideTruth(
            index=self._stride_count - 1,
            theta_pf_imp=st.theta_max,
            theta_pf_hlth=self._hl.theta_max,
            e_theta=e,
            f_applied=st.tau_run,
            u_h=self.human.u_h,
            tau_hip_peak=tau_hip,
        )


def plant_step(plant: Walker, tau_actual: float) -> tuple[float, float, Optional[StrideTruth]]:
    """Advance the walker one sample; returns measured angles and any completed stride."""
    s = plant.step(tau_actual)
    return s.theta_imp, s.theta_hlth, s.stride
