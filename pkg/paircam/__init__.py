"""Joint probability distributions of photon pairs from pixelated cameras."""

__version__ = "0.1.0"

from paircam.pipeline import Experiment, ExperimentConfig  # noqa: E402,F401
