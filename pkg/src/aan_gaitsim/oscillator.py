"""Gait phase estimation with an adaptive oscillator per leg.

Each leg's hip angle drives an adaptive oscillator whose phase, frequency
and Fourier coefficients entrain to the periodic input. The raw phase is
then re-anchored to landmark events found on the inter-leg angle
difference: a leg's phase is pulled to 0 at its own landmark and to 0.5 at
the other leg's landmark.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional, Sequence

TWO_PI = 2.0 * math.pi


class SignalFault(ValueError):
    """A hip-angle sample was NaN or infinite."""


class Side(str, Enum):
    IMPAIRED = "impaired"
    HEALTHY = "healthy"


def wrap_half(x: float) -> float:
    """Wrap a cycle-fraction difference into (-0.5, 0.5]."""
    y = x - math.floor(x)
    if y > 0.5:
        y -= 1.0
    return y


@dataclass(frozen=True)
class AoConfig:
    psi_phase: float = 0.5  # 1/(deg s)
    psi_freq: float = 0.3  # rad/(deg s^2)
    epsilon: float = 1.0  # 1/s
    n_f: int = 6
    k_sync: float = 2.0  # 1/s
    dt: float = 1.0 / 250.0
    omega_init: float = TWO_PI * 0.9
    omega_floor: float = TWO_PI * 0.2

    def __post_init__(self) -> None:
        for name in ("psi_phase", "psi_freq", "epsilon", "k_sync", "dt", "omega_init", "omega_floor"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"AoConfig.{name} must be positive, got {value!r}")
        if int(self.n_f) != self.n_f or self.n_f < 1:
            raise ValueError(f"AoConfig.n_f must be an integer >= 1, got {self.n_f!r}")


@dataclass
class OscillatorState:
    rho: float
    omega: float
    alpha: list[float]
    beta: list[float]
    theta_rec: float = 0.0
    delta_phi: float = 0.0
    t_k: float = -math.inf
    e_phi: float = 0.0
    omega_clamped: bool = False

    @classmethod
    def initial(cls, cfg: AoConfig) -> "OscillatorState":
        n = cfg.n_f + 1
        return cls(rho=0.0, omega=cfg.omega_init, alpha=[0.0] * n, beta=[0.0] * n)

    def copy(self) -> "OscillatorState":
        return OscillatorState(
            self.rho,
            self.omega,
            list(self.alpha),
            list(self.beta),
            self.theta_rec,
            self.delta_phi,
            self.t_k,
            self.e_phi,
            self.omega_clamped,
        )

    @property
    def phi_raw(self) -> float:
        return (self.rho % TWO_PI) / TWO_PI

    @property
    def period(self) -> float:
        return TWO_PI / self.omega


def _reconstruct(rho: float, alpha: Sequence[float], beta: Sequence[float]) -> float:
    z = complex(math.cos(rho), math.sin(rho))
    zj = 1.0 + 0.0j
    total = 0.0
    for a, b in zip(alpha, beta):
        total += a * zj.real + b * zj.imag
        zj *= z
    return total


def advance_oscillator(state: OscillatorState, theta_m: float, cfg: AoConfig) -> float:
    """In-place explicit Euler step; returns the raw phase in [0, 1)."""
    if not math.isfinite(theta_m):
        raise SignalFault(f"non-finite hip angle sample: {theta_m!r}")
    dt = cfg.dt
    rho = state.rho
    e = theta_m - state.theta_rec
    alpha = state.alpha
    beta = state.beta
    if e != 0.0:
        s = math.sin(rho)
        new_rho = rho + dt * (state.omega - cfg.psi_phase * e * s)
        omega = state.omega - dt * cfg.psi_freq * e * s
        if omega < cfg.omega_floor:
            omega = cfg.omega_floor
            state.omega_clamped = True
        state.omega = omega
        # one pass: learn the coefficients at the old phase, reconstruct at the new one
        z = complex(math.cos(rho), s)
        w = complex(math.cos(new_rho), math.sin(new_rho))
        zj = 1.0 + 0.0j
        wj = 1.0 + 0.0j
        gain = dt * cfg.epsilon * e
        total = 0.0
        for j in range(len(alpha)):
            a = alpha[j] + gain * zj.real
            b = beta[j] + gain * zj.imag
            alpha[j] = a
            beta[j] = b
            total += a * wj.real + b * wj.imag
            zj *= z
            wj *= w
        state.rho = new_rho
        state.theta_rec = total
    else:
        state.rho = rho + dt * state.omega
        state.theta_rec = _reconstruct(state.rho, alpha, beta)
    return (state.rho % TWO_PI) / TWO_PI


def step_oscillator(
    state: OscillatorState, theta_m: float, cfg: AoConfig
) -> tuple[OscillatorState, float]:
    """One integration step of the adaptive oscillator.

    Returns a new state and the raw phase ``mod(rho, 2 pi) / 2 pi``. The input
    state is left untouched. Raises :class:`SignalFault` for NaN/inf input.
    """
    new = state.copy()
    phi = advance_oscillator(new, theta_m, cfg)
    return new, phi


@dataclass(frozen=True)
class LandmarkEvent:
    side: Side
    time: float
    phi_hlth_at_event: float
    phi_imp_at_event: Optional[float] = None


def sync_error(event: LandmarkEvent, leg: Side = Side.HEALTHY) -> float:
    """Phase-synchronization error for one leg at a landmark event.

    A leg's phase should read 0 at its own landmark and 0.5 at the other
    leg's landmark. The error is the recorded raw phase minus that target,
    wrapped into (-0.5, 0.5].
    """
    if leg is Side.HEALTHY:
        phase = event.phi_hlth_at_event
    else:
        if event.phi_imp_at_event is None:
            raise ValueError("event carries no impaired-side phase")
        phase = event.phi_imp_at_event
    target = 0.0 if event.side is leg else 0.5
    return wrap_half(phase - target)


def sync_rate(state: OscillatorState, e_phi: float, t: float, cfg: AoConfig) -> float:
    gap = wrap_half(e_phi - state.delta_phi)
    if gap == 0.0:
        return 0.0
    elapsed = t - state.t_k
    if elapsed < 0.0:
        elapsed = 0.0
    return cfg.k_sync * gap * math.exp(-state.omega * elapsed)


def update_sync_correction(
    state: OscillatorState, e_phi: float, t: float, cfg: AoConfig
) -> OscillatorState:
    """Integrate the phase offset one step toward the latched event error."""
    new = state.copy()
    new.delta_phi = wrap_half(state.delta_phi + cfg.dt * sync_rate(state, e_phi, t, cfg))
    return new


def corrected_phase(phi_raw: float, delta_phi: float) -> float:
    out = (phi_raw - delta_phi) % 1.0
    # float modulo can return exactly 1.0 for tiny negative inputs
    return 0.0 if out >= 1.0 else out


class _PeakTracker:
    """Tracks one kind of extremum; ``sign=-1`` turns maxima into minima."""

    __slots__ = ("sign", "last", "has_best", "best_t", "best_y", "best_payload", "base", "base_at_best")

    def __init__(self, sign: float) -> None:
        self.sign = sign
        self.last = -math.inf
        self.has_best = False
        self.best_t = 0.0
        self.best_y = -math.inf
        self.best_payload: Any = None
        self.base = math.inf
        self.base_at_best = math.inf

    def reset(self, y: float) -> None:
        self.has_best = False
        self.base = y

    def feed(self, t: float, x: float, payload: Any, floor: float) -> bool:
        """Feed one sample; True when it confirms the tracked extremum (``last``, ``best_*``)."""
        y = self.sign * x
        hit = False
        if not self.has_best or y > self.best_y:
            self.has_best = True
            self.best_t = t
            self.best_y = y
            self.best_payload = payload
            base = self.base
            self.base_at_best = base if base < y else y
        elif self.best_y - y >= floor:
            if self.best_y - self.base_at_best >= floor:
                hit = True
                self.last = self.best_t
            # confirmed or not prominent enough: start over from here
            self.has_best = False
            self.base = y
        if y < self.base:
            self.base = y
        return hit


class ExtremumDetector:
    """Streaming local-extremum detector with a prominence floor.

    A maximum is the highest sample since tracking restarted; it is
    confirmed once the signal has fallen ``noise_floor`` below it, provided
    it also rose ``noise_floor`` above the lowest sample before it. Minima
    are symmetric. After a confirmed extremum, further extrema of the same
    kind are suppressed for ``refractory_frac`` of the supplied period, and
    with ``alternate`` set a maximum must be followed by a minimum and vice
    versa. ``smooth`` > 1 runs the test on a centred moving average of that
    many samples, reporting the time and payload of the middle sample.
    """

    def __init__(
        self,
        noise_floor: float = 0.5,
        refractory_frac: float = 0.3,
        smooth: int = 1,
        alternate: bool = True,
    ) -> None:
        if int(smooth) < 1:
            raise ValueError(f"smooth must be >= 1, got {smooth!r}")
        self.noise_floor = noise_floor
        self.refractory_frac = refractory_frac
        self.smooth = int(smooth)
        self.alternate = alternate
        self._max = _PeakTracker(1.0)
        self._min = _PeakTracker(-1.0)
        self._last_kind: Optional[str] = None
        self._buf: deque = deque(maxlen=self.smooth)
        self._sum = 0.0

    def update(self, t: float, x: float, period: float, payload: Any = None) -> Optional[tuple[str, float, float, Any]]:
        """Feed one sample; returns ``(kind, t_event, value, payload)`` or None."""
        n = self.smooth
        if n > 1:
            buf = self._buf
            full = len(buf) == n
            if full:
                self._sum -= buf[0][1]
            buf.append((t, x, payload))
            self._sum += x
            if not full and len(buf) < n:
                return None
            t, _, payload = buf[n // 2]
            x = self._sum / n
        refractory = self.refractory_frac * period
        found = None
        last_kind = self._last_kind if self.alternate else None
        tr = self._max
        if t - tr.last < refractory or last_kind == "max":
            tr.has_best = False
            tr.base = x
        else:
            if tr.feed(t, x, payload, self.noise_floor):
                found = ("max", tr.best_t, tr.best_y, tr.best_payload)
        tr = self._min
        if t - tr.last < refractory or last_kind == "min":
            tr.has_best = False
            tr.base = -x
        else:
            if tr.feed(t, x, payload, self.noise_floor) and found is None:
                found = ("min", tr.best_t, -tr.best_y, tr.best_payload)
        if found is not None:
            self._last_kind = found[0]
        return found


class LandmarkDetector:
    """Landmark events from the impaired-minus-healthy hip angle difference.

    Maxima are impaired-side events, minima healthy-side events.
    """

    def __init__(
        self, noise_floor: float = 0.5, refractory_frac: float = 0.3, smooth: int = 1, alternate: bool = True
    ) -> None:
        self._ext = ExtremumDetector(noise_floor, refractory_frac, smooth, alternate)

    def update(
        self,
        t: float,
        delta_theta: float,
        period: float,
        phi_hlth: float = math.nan,
        phi_imp: Optional[float] = None,
    ) -> Optional[LandmarkEvent]:
        hit = self._ext.update(t, delta_theta, period, (phi_hlth, phi_imp))
        if hit is None:
            return None
        kind, t_ev, _, (ph, pi) = hit
        side = Side.IMPAIRED if kind == "max" else Side.HEALTHY
        return LandmarkEvent(side, t_ev, ph, pi)


def detect_landmark_event(
    delta_theta_window: Iterable[tuple[float, float]],
    period: Optional[float] = None,
    noise_floor: float = 0.5,
    refractory_frac: float = 0.3,
) -> Optional[LandmarkEvent]:
    """First landmark event in a window of ``(t, delta_theta)`` samples.

    ``period`` sets the refractory window; when omitted it is taken as the
    window duration. Windows shorter than three samples, or flatter than
    the noise floor, produce no event.
    """
    samples = [(float(t), float(x)) for t, x in delta_theta_window]
    if len(samples) < 3:
        return None
    values = [x for _, x in samples]
    if max(values) - min(values) < noise_floor:
        return None
    if period is None:
        period = samples[-1][0] - samples[0][0]
    det = LandmarkDetector(noise_floor, refractory_frac)
    for t, x in samples:
        ev = det.update(t, x, period)
        if ev is not None:
            return ev
    return None


@dataclass
class LegPhaseEstimator:
    """Oscillator plus sync correction for one leg, updated in place."""

    side: Side
    cfg: AoConfig = field(default_factory=AoConfig)
    state: OscillatorState = field(init=False)

    def __post_init__(self) -> None:
        self.state = OscillatorState.initial(self.cfg)

    def step(self, theta_m: float, t: float) -> float:
        st = self.state
        cfg = self.cfg
        phi = advance_oscillator(st, theta_m, cfg)
        d = st.delta_phi
        if st.t_k > -math.inf:
            rate = sync_rate(st, st.e_phi, t, cfg)
            if rate != 0.0:
                d = wrap_half(d + cfg.dt * rate)
                st.delta_phi = d
        return corrected_phase(phi, d)

    def on_event(self, event: LandmarkEvent) -> None:
        self.state.e_phi = sync_error(event, self.side)
        self.state.t_k = event.time

    @property
    def phase(self) -> float:
        return corrected_phase(self.state.phi_raw, self.state.delta_phi)

    @property
    def phi_raw(self) -> float:
        return self.state.phi_raw
