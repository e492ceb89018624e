"""Interacting-particle digital twin for stochastic optimal control."""

from .controller import ConfigError, DigitalTwin, TwinConfig, TwinStepError, step
from .ensemble import Ensemble
from .harness import PRESETS, RunRecord, discounted_cost, lorenz63_preset, pendulum_preset, run_experiment
from .models import MODELS, ControlledModel, lorenz63_model, pendulum_model
from .observation import ObservationModel

__all__ = [
    "ConfigError", "ControlledModel", "DigitalTwin", "Ensemble", "MODELS", "ObservationModel",
    "PRESETS", "RunRecord", "TwinConfig", "TwinStepError", "discounted_cost", "lorenz63_model",
    "lorenz63_preset", "pendulum_model", "pendulum_preset", "run_experiment", "step",
]
__version__ = "0.1.0"
