"""Spatial RFI/jamming detection for rectangular antenna arrays.

Pipeline: simulate array snapshots, form correlation-based dirty images
over azimuth/elevation, train an LSTM autoencoder on interference-free
image sequences, and flag interference as reconstruction anomalies.
"""

__version__ = "0.1.0"

from .geometry import ArrayGeometry, Direction, steering_vector
from .simulate import Scenario, SourceSpec, generate_snapshots, snr_to_power
from .correlate import collapse_to_lags, estimate_correlation
from .imaging import DirtyImage, angles_to_bin, bin_to_azimuth, bin_to_elevation, dirty_image

__all__ = [
    "ArrayGeometry",
    "Direction",
    "DirtyImage",
    "Scenario",
    "SourceSpec",
    "angles_to_bin",
    "bin_to_azimuth",
    "bin_to_elevation",
    "collapse_to_lags",
    "dirty_image",
    "estimate_correlation",
    "generate_snapshots",
    "snr_to_power",
    "steering_vector",
    "__version__",
]
