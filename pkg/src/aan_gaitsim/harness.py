"""Closed-loop simulation of the walker, estimator, controller and optimizer.

The loop runs at the control rate. Between control ticks the walker is
stepped at its own sample rate and the latest sample is held. Landmark
events re-anchor the healthy-hip phase estimator, whose phase shifted by
half a cycle serves the impaired leg; every impaired-side landmark closes
one gait cycle and triggers one learning update of the assist.
"""

from __future__ import annotations

import math
import time
from array import array
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Session, SimConfig
from .controller import (
    AssistState,
    GainSet,
    assistive_torque,
    commanded_magnitude,
    update_magnitude,
    update_start_phase,
)
from .optimizer import BayesOpt, EpisodeResult, Selection, check_stop, objective
from .oscillator import (
    ExtremumDetector,
    LandmarkDetector,
    LegPhaseEstimator,
    Side,
)
from .plant import Walker
from .symmetry import GaitMetrics, MetricsError, StrideRecord, compute_metrics, peak_estimate, symmetry_errors


class EstimatorLockError(RuntimeError):
    """No landmark event for longer than the configured timeout."""


ZERO_GAINS = GainSet(0.0, 0.0)


def impaired_phase(phi_hlth: float) -> float:
    p = phi_hlth + 0.5
    return p - 1.0 if p >= 1.0 else p


@dataclass(frozen=True)
class EpisodeRecord:
    index: int
    session: Session
    result: EpisodeResult
    t_start: float
    t_end: float
    exploration_fallback: bool = False


@dataclass
class Trace:
    t: array = field(default_factory=lambda: array("d"))
    theta_imp: array = field(default_factory=lambda: array("d"))
    theta_hlth: array = field(default_factory=lambda: array("d"))
    phi_imp: array = field(default_factory=lambda: array("d"))
    phi_hlth: array = field(default_factory=lambda: array("d"))
    tau_d: array = field(default_factory=lambda: array("d"))
    tau_actual: array = field(default_factory=lambda: array("d"))

    COLUMNS = ("t", "theta_imp", "theta_hlth", "phi_imp", "phi_hlth", "tau_d", "tau_actual")

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class TaggedStride:
    episode: int
    record: StrideRecord


@dataclass(frozen=True)
class Cycle:
    episode: int
    t_start: float
    phi: np.ndarray
    theta: np.ndarray


@dataclass
class SessionLog:
    trace: Trace = field(default_factory=Trace)
    strides: dict = field(default_factory=lambda: {Side.HEALTHY: [], Side.IMPAIRED: []})
    cycles: dict = field(default_factory=lambda: {Side.HEALTHY: [], Side.IMPAIRED: []})
    tau_hip: list = field(default_factory=list)  # (episode, Nm/kg) per impaired stride
    events: list = field(default_factory=list)  # LandmarkEvent per detected landmark
    episodes: list = field(default_factory=list)
    session_episodes: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)
    gp: Optional[dict] = None
    wall_time: float = 0.0


class Simulation:
    """All mutable state of one simulated subject."""

    def __init__(self, cfg: SimConfig, trace: bool = True) -> None:
        self.cfg = cfg
        pc = cfg.protocol
        ss = np.random.SeedSequence(pc.seed)
        plant_ss, proto_ss = ss.spawn(2)
        self.rng = np.random.default_rng(proto_ss)
        self.plant = Walker(cfg.plant, cfg.human, seed=plant_ss)
        self.plant.set_impaired(False)
        # one oscillator on the healthy hip; the impaired phase is that phase
        # shifted by half a cycle, so temporal errors share a single clock
        self.est = LegPhaseEstimator(Side.HEALTHY, cfg.oscillator)
        det = cfg.detector
        self.landmarks = LandmarkDetector(det.noise_floor, det.refractory_frac, det.smooth)
        self.peaks = {s: ExtremumDetector(det.noise_floor, det.refractory_frac, det.smooth) for s in Side}
        self._peaks_h = self.peaks[Side.HEALTHY]
        self._peaks_i = self.peaks[Side.IMPAIRED]
        self._last_pe: dict = {s: None for s in Side}
        self.history: dict = {s: [] for s in Side}
        self.assist = AssistState.initial(cfg.controller.curve)
        self.tau_actual = 0.0
        self.tau_d = 0.0
        self.log = SessionLog()
        self.keep_trace = trace
        self.dt = 1.0 / pc.control_rate
        self.n_tick = 0
        self.n_plant = 0
        self._ratio = cfg.plant.sample_rate / pc.control_rate
        lag = cfg.controller.tau_lag
        # per-tick factor of the first-order actuator lag (see actuator_response)
        self._lag_k = math.exp(-self.dt / lag) if lag > 0 else 0.0
        self.theta = (0.0, 0.0)
        self.t_last_event = 0.0
        self.episode = -1
        self._stride_n = {s: 0 for s in Side}
        self._cycle_buf = {s: (array("d"), array("d")) for s in Side}
        self._cycle_t0 = {s: math.nan for s in Side}
        self._prev_phi = {s: 0.0 for s in Side}
        self._latest_tau_hip = math.nan

    @property
    def t(self) -> float:
        return self.n_tick * self.dt

    # -- per-tick work -------------------------------------------------------

    def _advance_plant(self) -> None:
        target = self.n_tick * self._ratio
        plant = self.plant
        while self.n_plant + 1 <= target + 1e-9:
            th_i, th_h, _, _, stride = plant.advance(self.tau_actual)
            self.n_plant += 1
            self.theta = (th_i, th_h)
            if stride is not None:
                self._latest_tau_hip = stride.tau_hip_peak
                self.log.tau_hip.append((self.episode, stride.tau_hip_peak))

    def _on_peak(self, side: Side, hit: tuple) -> None:
        kind, t_ev, value, ph = hit
        if kind == "min":
            self._last_pe[side] = (value, ph)
            return
        pe = self._last_pe[side]
        if pe is None:
            return
        rec = StrideRecord(
            index=self._stride_n[side],
            side=side,
            theta_pf=value,
            phi_pf=ph,
            theta_pe=pe[0],
            phi_pe=pe[1],
            tau_hip_peak=self._latest_tau_hip if side is Side.IMPAIRED else math.nan,
            time=t_ev,
        )
        self._stride_n[side] += 1
        self.history[side].append(rec)
        del self.history[side][: -self.cfg.controller.n_s]
        self.log.strides[side].append(TaggedStride(self.episode, rec))

    def _new_cycle(self, side: Side, t: float) -> tuple[array, array]:
        ph, th = self._cycle_buf[side]
        if len(ph) >= 20 and math.isfinite(self._cycle_t0[side]):
            self.log.cycles[side].append(
                Cycle(self.episode, self._cycle_t0[side], np.frombuffer(ph, dtype=float).copy(), np.frombuffer(th, dtype=float).copy())
            )
        buf = (array("d"), array("d"))
        self._cycle_buf[side] = buf
        self._cycle_t0[side] = t
        return buf

    def _track_cycle(self, side: Side, t: float, theta: float, phi: float) -> None:
        ph, th = self._new_cycle(side, t) if phi < self._prev_phi[side] - 0.5 else self._cycle_buf[side]
        ph.append(phi)
        th.append(theta)
        self._prev_phi[side] = phi

    def tick(self, assist_on: bool) -> Optional[Side]:
        """One control period; returns the side of a landmark event, if any."""
        self.n_tick += 1
        t = self.n_tick * self.dt
        self._advance_plant()
        th_i, th_h = self.theta
        est = self.est
        phi_h = est.step(th_h, t)
        phi_i = impaired_phase(phi_h)
        period = est.state.period
        ev = self.landmarks.update(t, th_i - th_h, period, est.phi_raw)
        if ev is not None:
            est.on_event(ev)
            self.t_last_event = t
            self.log.events.append(ev)
        hit = self._peaks_h.update(t, th_h, period, phi_h)
        if hit is not None:
            self._on_peak(Side.HEALTHY, hit)
        hit = self._peaks_i.update(t, th_i, period, phi_i)
        if hit is not None:
            self._on_peak(Side.IMPAIRED, hit)
        self._track_cycle(Side.HEALTHY, t, th_h, phi_h)
        self._track_cycle(Side.IMPAIRED, t, th_i, phi_i)
        assist = self.assist
        if assist_on and assist.active and assist.f_mag > 0.0:
            tau_d = assistive_torque(phi_i, assist, self.cfg.controller.curve)
        else:
            tau_d = 0.0
        self.tau_d = tau_d
        self.tau_actual = tau_d + (self.tau_actual - tau_d) * self._lag_k
        if self.keep_trace:
            tr = self.log.trace
            tr.t.append(t)
            tr.theta_imp.append(th_i)
            tr.theta_hlth.append(th_h)
            tr.phi_imp.append(phi_i)
            tr.phi_hlth.append(phi_h)
            tr.tau_d.append(tau_d)
            tr.tau_actual.append(self.tau_actual)
        if t - self.t_last_event > self.cfg.protocol.lock_timeout:
            raise EstimatorLockError(
                f"no landmark event for {t - self.t_last_event:.2f} s at t = {t:.2f} s; "
                "check that both legs move and the impaired-minus-healthy angle exceeds the noise floor"
            )
        return ev.side if ev is not None else None

    def current_errors(self) -> Optional[tuple[float, float]]:
        """Flexion-peak spatial and temporal errors from the latest strides."""
        hh, hi = self.history[Side.HEALTHY], self.history[Side.IMPAIRED]
        if not hh or not hi:
            return None
        n_s = self.cfg.controller.n_s
        err = symmetry_errors(peak_estimate(hh, n_s), peak_estimate(hi, n_s))
        return err.e_theta_fle, err.e_phi_fle

    # -- episodes ------------------------------------------------------------

    def run_cycles(self, n: int, assist_on: bool, gains: GainSet, ilc: bool) -> list[tuple[float, float, float]]:
        """Run until ``n`` impaired-side landmark events; returns per-cycle (e_theta, e_phi, f_cmd)."""
        cc = self.cfg.controller
        stats = []
        while len(stats) < n:
            side = self.tick(assist_on)
            if side is not Side.IMPAIRED:
                continue
            err = self.current_errors()
            if err is None:
                e_th, e_ph = math.nan, math.nan
            else:
                e_th, e_ph = err
                if ilc:
                    a = update_magnitude(self.assist, e_th, cc.lambda_theta, gains)
                    self.assist = update_start_phase(a, e_ph, cc.lambda_phi, gains, cc.curve)
            f = commanded_magnitude(self.assist) if assist_on else 0.0
            stats.append((e_th, e_ph, f))
        return stats

    def run_episode(self, gains: GainSet, session: Session, assist_on: bool = True) -> EpisodeResult:
        pc = self.cfg.protocol
        self.episode += 1
        t0 = self.t
        stats = self.run_cycles(pc.episode_cycles, assist_on, gains, ilc=assist_on)
        tail = [s for s in stats[-pc.eval_cycles:] if math.isfinite(s[0])]
        if not tail:
            raise EstimatorLockError("no stride statistics available in the evaluation window")
        e_th = sum(s[0] for s in tail) / len(tail)
        e_ph = sum(s[1] for s in tail) / len(tail)
        f = sum(s[2] for s in tail) / len(tail)
        o = objective(e_th, e_ph, f, self.cfg.optimizer.weights)
        res = EpisodeResult(gains, o, e_th, e_ph, f, len(tail))
        self.log.episodes.append(EpisodeRecord(self.episode, session, res, t0, self.t))
        self.log.session_episodes.setdefault(session, []).append(self.episode)
        return res

    def warm_up(self) -> None:
        n = self.cfg.protocol.warmup_cycles
        if n > 0:
            self.run_cycles(n, False, ZERO_GAINS, ilc=False)


# --- protocol -----------------------------------------------------------------


def _subset(items, episodes: set, discard: int):
    sel = [x for x in items if x.episode in episodes]
    return sel[discard:]


def _pair_cycles(hl: list[Cycle], im: list[Cycle]) -> tuple[list, list]:
    out_h, out_i = [], []
    j = 0
    for c in hl:
        while j < len(im) and im[j].t_start <= c.t_start:
            j += 1
        if j >= len(im):
            break
        out_h.append((c.phi, c.theta))
        out_i.append((im[j].phi, im[j].theta))
        j += 1
    return out_h, out_i


def session_metrics(
    log: SessionLog, episodes: list[int], discard: int, tau_ref: Optional[float]
) -> Optional[GaitMetrics]:
    eps = set(episodes)
    hs = [s.record for s in _subset(log.strides[Side.HEALTHY], eps, discard)]
    is_ = [s.record for s in _subset(log.strides[Side.IMPAIRED], eps, discard)]
    hc, ic = _pair_cycles(
        _subset(log.cycles[Side.HEALTHY], eps, discard), _subset(log.cycles[Side.IMPAIRED], eps, discard)
    )
    try:
        return compute_metrics(hs, is_, hc, ic, tau_hip_normal=tau_ref)
    except MetricsError:
        return None


def mean_tau_hip(log: SessionLog, episodes: list[int], discard: int) -> Optional[float]:
    eps = set(episodes)
    vals = [v for e, v in log.tau_hip if e in eps][discard:]
    return sum(vals) / len(vals) if vals else None


def run_protocol(cfg: SimConfig, trace: bool = True) -> SessionLog:
    """Run the scripted multi-session protocol for one subject."""
    wall0 = time.perf_counter()
    pc = cfg.protocol
    oc = cfg.optimizer
    cc = cfg.controller
    sim = Simulation(cfg, trace=trace)
    log = sim.log
    sim.warm_up()
    bo = BayesOpt(region=oc.region, zeta=oc.zeta)
    selected: list[GainSet] = []
    converged = None
    n_pre = n_opt = 0
    default = GainSet(cc.k_theta, cc.k_phi)

    for session in pc.sessions:
        if session is Session.NORMAL:
            sim.plant.set_impaired(False)
            for _ in range(pc.normal_episodes):
                sim.run_episode(ZERO_GAINS, session, assist_on=False)
            continue
        sim.plant.set_impaired(True)
        if session is Session.IMPAIRED:
            for _ in range(pc.impaired_episodes):
                sim.run_episode(ZERO_GAINS, session, assist_on=False)
        elif session is Session.ASSIST_PREDEFINED:
            sets = oc.region.init_sets()
            order = sim.rng.permutation(len(sets))
            for i in order:
                g = sets[int(i)]
                r = sim.run_episode(g, session)
                bo.tell(g, r.objective)
                n_pre += 1
            bo.freeze_scaling()
        elif session is Session.ASSIST_OPTIMIZE:
            converged = False
            for _ in range(pc.max_bo_episodes):
                if bo.gains:
                    sel = bo.ask()
                else:
                    sel = Selection(default, 0.0, False)
                r = sim.run_episode(sel.gains, session)
                if sel.exploration_fallback:
                    rec = log.episodes[-1]
                    log.episodes[-1] = EpisodeRecord(rec.index, rec.session, rec.result, rec.t_start, rec.t_end, True)
                bo.tell(sel.gains, r.objective)
                selected.append(sel.gains)
                n_opt += 1
                if check_stop(selected, oc.region, oc.stop_tol, oc.stop_window):
                    converged = True
                    break
        elif session is Session.ASSIST_STABLE:
            g = selected[-1] if selected else default
            for _ in range(pc.stable_episodes):
                sim.run_episode(g, session)

    # session summaries
    ref = None
    if Session.NORMAL in log.session_episodes:
        ref = mean_tau_hip(log, log.session_episodes[Session.NORMAL], pc.discard_strides)
    groups = {s.value: log.session_episodes[s] for s in pc.sessions if s in log.session_episodes}
    if Session.ASSIST_OPTIMIZE in log.session_episodes:
        groups["ASSIST_OPTIMAL"] = log.session_episodes[Session.ASSIST_OPTIMIZE][-pc.optimal_tail:]
    for name, eps in groups.items():
        discard = 0 if name == "ASSIST_OPTIMAL" else pc.discard_strides
        m = session_metrics(log, eps, discard, ref)
        if m is not None:
            log.metrics[name] = m

    if converged is not None:
        log.convergence = {
            "converged": converged,
            "optimize_episodes": n_opt,
            "episodes": n_pre + n_opt,
            "gait_cycles": (n_pre + n_opt) * pc.episode_cycles,
            "final_gains": list(selected[-1].as_tuple()) if selected else None,
            "best_gains": list(bo.best_evaluated().as_tuple()) if bo.gains else None,
        }
    if bo.gains:
        bo._refit()
        h = bo.model.hyper
        log.gp = {
            "x": [list(g.as_tuple()) for g in bo.gains],
            "y": list(bo.raw),
            "y_center": bo._center,
            "y_scale": bo._scale,
            "hyperparams": {"sigma": h.sigma, "sigma_noise": h.sigma_noise, "l1": h.l1, "l2": h.l2},
            "jitter_used": bo.model.jitter_used,
            "hyper_fit_failed": bo.model.hyper_fit_failed,
        }
    log.wall_time = time.perf_counter() - wall0
    return log
