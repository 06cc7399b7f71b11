"""Assist-as-needed torque generation for the impaired hip.

Two per-cycle learning laws shape a unimodal torque bump: the magnitude
follows the spatial (peak angle) error and the start phase follows the
temporal (peak phase) error. The bump is then played out against the
impaired leg's gait phase every control tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

TAU_MAX = 19.8  # Nm


@dataclass(frozen=True)
class CurveConfig:
    a: float = 10.0
    d_phi_rise: float = 0.25
    phi_start_init: float = 0.55
    clamp: float = 0.05

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ValueError(f"curve slope a must be > 0, got {self.a!r}")
        if not 0.0 < self.d_phi_rise < 0.5:
            raise ValueError(f"d_phi_rise must lie in (0, 0.5), got {self.d_phi_rise!r}")
        if not 0.0 <= self.phi_start_init < 1.0:
            raise ValueError(f"phi_start_init must lie in [0, 1), got {self.phi_start_init!r}")
        if not self.clamp >= 0:
            raise ValueError(f"clamp must be >= 0, got {self.clamp!r}")


@dataclass(frozen=True)
class GainSet:
    k_theta: float
    k_phi: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.k_theta, self.k_phi)


@dataclass(frozen=True)
class AssistState:
    f_mag: float = 0.0
    phi_start: float = 0.55
    cycle_index: int = 0
    # False while the spatial error is negative: nothing is commanded that cycle
    active: bool = True

    @classmethod
    def initial(cls, cfg: CurveConfig) -> "AssistState":
        return cls(f_mag=0.0, phi_start=cfg.phi_start_init)


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def update_magnitude(
    state: AssistState, e_theta_fle: float, lambda_theta: float, gains: GainSet
) -> AssistState:
    """Forgetting-factor P-type update of the torque magnitude.

    A negative spatial error means the impaired side already over-reaches:
    nothing is commanded this cycle and the stored magnitude decays with
    zero drive, so assistance resumes smoothly once the error returns.
    """
    if not 0.0 <= lambda_theta < 1.0:
        raise ValueError(f"lambda_theta must lie in [0, 1), got {lambda_theta!r}")
    if e_theta_fle >= 0.0:
        f = lambda_theta * state.f_mag + (1.0 - lambda_theta) * gains.k_theta * e_theta_fle
        f = _clamp(f, 0.0, TAU_MAX)
        active = True
    else:
        f = lambda_theta * state.f_mag
        active = False
    return replace(state, f_mag=f, active=active, cycle_index=state.cycle_index + 1)


def update_start_phase(
    state: AssistState,
    e_phi_fle: float,
    lambda_phi: float,
    gains: GainSet,
    cfg: CurveConfig,
) -> AssistState:
    """Forgetting-factor update of the torque start phase, clamped around its initial value."""
    if not 0.0 <= lambda_phi < 1.0:
        raise ValueError(f"lambda_phi must lie in [0, 1), got {lambda_phi!r}")
    target = cfg.phi_start_init - gains.k_phi * e_phi_fle
    p = lambda_phi * state.phi_start + (1.0 - lambda_phi) * target
    p = _clamp(p, cfg.phi_start_init - cfg.clamp, cfg.phi_start_init + cfg.clamp)
    return replace(state, phi_start=p)


def torque_curve(phi: float, phi_start: float, cfg: CurveConfig) -> float:
    """Unimodal bump of height ``tanh(a/2)`` peaking at ``phi_start + d_phi_rise``.

    The phase lag ``phi - phi_start`` is taken modulo 1 and centred on the
    bump so the curve is periodic in ``phi``.
    """
    # centre the wrapped lag on the peak (kappa = 1) so both tails are reached
    lag = (phi - phi_start - cfg.d_phi_rise + 0.5) % 1.0 - 0.5 + cfg.d_phi_rise
    kappa = lag / cfg.d_phi_rise
    a = cfg.a
    h = 0.5 * (math.tanh(a * (kappa - 0.5)) - math.tanh(a * (kappa - 1.5)))
    return h if h > 0.0 else 0.0


def commanded_magnitude(state: AssistState) -> float:
    return state.f_mag if state.active else 0.0


def assistive_torque(phi_imp: float, state: AssistState, cfg: CurveConfig) -> float:
    tau = commanded_magnitude(state) * torque_curve(phi_imp, state.phi_start, cfg)
    return _clamp(tau, 0.0, TAU_MAX)


def actuator_response(tau_d: float, tau_actual_prev: float, dt: float, tau_lag: float) -> float:
    """Exact zero-order-hold discretization of a first-order torque lag."""
    if tau_lag < 0:
        raise ValueError(f"tau_lag must be >= 0, got {tau_lag!r}")
    if tau_lag == 0.0:
        return tau_d
    k = math.exp(-dt / tau_lag)
    return tau_d + (tau_actual_prev - tau_d) * k
