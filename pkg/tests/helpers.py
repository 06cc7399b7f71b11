"""Config builders shared by the test modules."""

import dataclasses

from aan_gaitsim.config import SimConfig


def quiet_config(cfg: SimConfig = SimConfig(), human: bool = False) -> SimConfig:
    """Noise-free plant; human adaptation off unless asked for."""
    plant = dataclasses.replace(cfg.plant, noise_angle_sd=0.0, noise_period_sd=0.0, meas_noise_sd=0.0)
    return dataclasses.replace(cfg, plant=plant, human=dataclasses.replace(cfg.human, enabled=human))


def short_protocol(cfg: SimConfig = SimConfig(), **kw) -> SimConfig:
    """A protocol small enough for functional tests: one episode per fixed session."""
    base = dict(normal_episodes=1, impaired_episodes=1, stable_episodes=1, max_bo_episodes=2, optimal_tail=1)
    base.update(kw)
    return dataclasses.replace(cfg, protocol=dataclasses.replace(cfg.protocol, **base))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict = {}


def report(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok
