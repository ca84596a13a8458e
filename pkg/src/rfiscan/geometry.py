"""Uniform rectangular array geometry and steering vectors.

The array lies in the yz plane: element (n, m) sits at
(y, z) = (n * d_y, m * d_z) with 0 <= n < n_y and 0 <= m < n_z.
A plane wave from azimuth ``theta`` / elevation ``phi`` reaches element
(n, m) with an extra path length of

    n * d_y * cos(phi) * sin(theta) + m * d_z * sin(phi)

relative to the (0, 0) element, which fixes its phase at wavelength
``lambda``.  All angles are radians; conversion from degrees happens at
the CLI boundary.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class ArrayGeometry:
    """Rectangular grid of n_y x n_z elements.

    Parameters
    ----------
    n_y, n_z : int
        Element counts along y and z.
    d_y, d_z : float
        Element spacings in meters.
    wavelength : float
        Carrier wavelength in meters.
    """

    n_y: int
    n_z: int
    d_y: float
    d_z: float
    wavelength: float

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise ValueError("element counts must be >= 1")
        if self.d_y <= 0 or self.d_z <= 0:
            raise ValueError("element spacings must be > 0")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be > 0")
        half = self.wavelength / 2
        if self.d_y > half or self.d_z > half:
            warnings.warn(
                "element spacing exceeds half a wavelength; spatial aliasing "
                "(grating lobes) is possible",
                stacklevel=2,
            )

    @property
    def n_elements(self) -> int:
        return self.n_y * self.n_z

    def element_index(self, n: int, m: int) -> int:
        """Flat index of element (n, m): row-major over n with m fastest."""
        self._check_indices(n, m)
        return n * self.n_z + m

    def _check_indices(self, n: int, m: int) -> None:
        if not (0 <= n < self.n_y):
            raise IndexError(f"y index {n} out of range [0, {self.n_y})")
        if not (0 <= m < self.n_z):
            raise IndexError(f"z index {m} out of range [0, {self.n_z})")


@dataclass(frozen=True)
class Direction:
    """Angle of arrival: azimuth and elevation in radians, each in [-pi/2, pi/2]."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        for name, value in (("azimuth", self.azimuth), ("elevation", self.elevation)):
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            if abs(value) > HALF_PI + 1e-12:
                raise ValueError(f"{name}={value} outside [-pi/2, pi/2]")

    @classmethod
    def from_degrees(cls, azimuth_deg: float, elevation_deg: float) -> "Direction":
        return cls(math.radians(azimuth_deg), math.radians(elevation_deg))

    def to_degrees(self) -> tuple[float, float]:
        return math.degrees(self.azimuth), math.degrees(self.elevation)


def equivalent_distance(geom: ArrayGeometry, n: int, m: int, direction: Direction) -> float:
    """Extra path length (meters) of element (n, m) for a wave from ``direction``."""
    geom._check_indices(n, m)
    return n * geom.d_y * math.cos(direction.elevation) * math.sin(direction.azimuth) + (
        m * geom.d_z * math.sin(direction.elevation)
    )


def steering_element(geom: ArrayGeometry, n: int, m: int, direction: Direction) -> complex:
    """Unit-modulus phase factor of element (n, m) relative to element (0, 0)."""
    phase = 2 * math.pi / geom.wavelength * equivalent_distance(geom, n, m, direction)
    return complex(math.cos(phase), math.sin(phase))


def steering_vector(geom: ArrayGeometry, direction: Direction) -> np.ndarray:
    """Steering vector over all elements, ordered with the z index fastest.

    Entry ``n * n_z + m`` equals ``steering_element(geom, n, m, direction)``;
    the first entry is always 1.  The phases separate along the two axes, so
    the result is the Kronecker product of the two linear-array vectors.
    """
    k = 2 * math.pi / geom.wavelength
    phase_y = k * geom.d_y * math.cos(direction.elevation) * math.sin(direction.azimuth)
    phase_z = k * geom.d_z * math.sin(direction.elevation)
    a_y = np.exp(1j * phase_y * np.arange(geom.n_y))
    a_z = np.exp(1j * phase_z * np.arange(geom.n_z))
    return np.kron(a_y, a_z)
