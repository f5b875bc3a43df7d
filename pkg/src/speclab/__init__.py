"""speclab: a numerical laboratory for Dirichlet spectra on planar domains.

The package builds rectangle (analytic) and finite-difference spectra,
applies a two-scale eigenvalue reassignment with Haar-random block
rotations, assembles the resulting perturbed operators, and checks the
induced equidistribution, concentration, and heat-kernel predictions
with seeded, replayable Monte Carlo.
"""

__version__ = "0.1.0"

from .config import ConfigError, ExperimentConfig, default_config, load_config
from .geometry import Disk, Polygon, Rectangle, domain_from_config, l_shape
from .partition import build_partition, reassign_distinct, reassign_left
from .runner import run
from .spectral import Spectrum, fd_spectrum, rectangle_spectrum

__all__ = [
    "ConfigError",
    "Disk",
    "ExperimentConfig",
    "Polygon",
    "Rectangle",
    "Spectrum",
    "__version__",
    "build_partition",
    "default_config",
    "domain_from_config",
    "fd_spectrum",
    "l_shape",
    "load_config",
    "reassign_distinct",
    "reassign_left",
    "rectangle_spectrum",
    "run",
]
