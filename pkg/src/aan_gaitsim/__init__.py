"""Assist-as-needed hip exoskeleton control with human-in-the-loop gain optimization.

Modules: ``oscillator`` (gait phase), ``symmetry`` (stride errors and
metrics), ``controller`` (learning torque shaping), ``optimizer`` (GP
Bayesian optimization), ``plant`` (synthetic walker), ``harness``
(closed loop and protocol), ``export`` and ``cli``.
"""

from .config import SimConfig, load_config
from .controller import GainSet
from .harness import Simulation, run_protocol

__all__ = ["GainSet", "SimConfig", "Simulation", "load_config", "run_protocol"]
__version__ = "0.1.0"
