"""Limited-angle CT toolkit: scan simulation, missing-wedge analysis,
directional wavelet decomposition, and residual-learning artifact removal."""

__version__ = "0.1.0"

from . import cli, dwt, io, metrics, models, nn, rng, spectrum, tomo  # noqa: F401
