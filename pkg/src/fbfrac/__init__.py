"""Forward-backward / fractional reaction-diffusion image restoration."""

__version__ = "0.1.0"

from .grid import ImageGrid, load_pgm, save_pgm
from .blur import BlurKernel, DegradationSpec, degrade
from .solver import RunResult, SolverConfig, StoppingPolicy
from .metrics import MetricsReport, psnr, ssim

__all__ = [
    "ImageGrid",
    "load_pgm",
    "save_pgm",
    "BlurKernel",
    "DegradationSpec",
    "degrade",
    "SolverConfig",
    "StoppingPolicy",
    "RunResult",
    "MetricsReport",
    "psnr",
    "ssim",
    "__version__",
]
