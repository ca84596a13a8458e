"""Dirty-image formation and bin/angle conversion.

The lag matrix is zero-padded and Fourier transformed: the y-lag axis maps
to the azimuth bin ``u`` and the z-lag axis to the elevation bin ``v``,
both in centered layout (bin 0 at the image center).  The pixel value is
the magnitude of the transform divided by the element count, i.e. an
estimate of per-direction source power.  Finite aperture leaves sidelobes,
so a point source appears as a peak plus a sinc-like skirt.

Bins convert to bearings through

    elevation(v) = arcsin(v / v_fft * wavelength / d_z)
    azimuth(u)   = arcsin(u / u_fft * wavelength / d_y / cos(elevation))

Bins whose arcsine argument leaves [-1, 1] do not correspond to a physical
direction; they are masked to zero so images stay rectangular.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ArrayGeometry, Direction
from .correlate import LagCorrelation

_COS_EPS = 1e-12


def centered_bins(n_fft: int) -> np.ndarray:
    """Bin indices [-n_fft/2, ..., n_fft/2 - 1]."""
    return np.arange(-(n_fft // 2), n_fft // 2)


@dataclass
class DirtyImage:
    """Power image over (u, v) bins with angle annotation.

    ``pixels[i_u, i_v]`` is the power estimate at azimuth bin
    ``centered_bins(u_fft)[i_u]`` and elevation bin
    ``centered_bins(v_fft)[i_v]``; bins outside the visible region are zero.
    ``az_axis`` matches ``pixels`` in shape (azimuth depends on elevation)
    and ``el_axis`` has one entry per v bin; both are NaN where invalid.
    """

    pixels: np.ndarray
    u_fft: int
    v_fft: int
    az_axis: np.ndarray
    el_axis: np.ndarray
    valid_mask: np.ndarray


def _validate_fft_sizes(geom: ArrayGeometry, u_fft: int, v_fft: int) -> None:
    if u_fft % 2 or v_fft % 2:
        raise ValueError("FFT sizes must be even")
    if u_fft < geom.n_y or v_fft < geom.n_z:
        raise ValueError(
            f"FFT sizes ({u_fft}, {v_fft}) must be at least the lag extents "
            f"({geom.n_y}, {geom.n_z})"
        )


def bin_to_elevation(v: int, v_fft: int, geom: ArrayGeometry) -> float:
    """Elevation (radians) of bin v, or NaN if outside the visible region."""
    if not (-(v_fft // 2) <= v <= v_fft // 2 - 1):
        raise ValueError(f"v={v} outside centered range for v_fft={v_fft}")
    arg = v / v_fft * geom.wavelength / geom.d_z
    if abs(arg) > 1:
        return math.nan
    return math.asin(arg)


def bin_to_azimuth(u: int, u_fft: int, elevation: float, geom: ArrayGeometry) -> float:
    """Azimuth (radians) of bin u at a given elevation, or NaN if invisible."""
    if not (-(u_fft // 2) <= u <= u_fft // 2 - 1):
        raise ValueError(f"u={u} outside centered range for u_fft={u_fft}")
    if not math.isfinite(elevation) or abs(math.cos(elevation)) < _COS_EPS:
        return math.nan
    arg = u / u_fft * geom.wavelength / geom.d_y / math.cos(elevation)
    if abs(arg) > 1:
        return math.nan
    return math.asin(arg)


def angles_to_bin(
    direction: Direction, geom: ArrayGeometry, u_fft: int, v_fft: int
) -> tuple[int, int]:
    """Nearest (u, v) bins for a direction; raises if outside the visible grid."""
    v_exact = v_fft * math.sin(direction.elevation) * geom.d_z / geom.wavelength
    u_exact = (
        u_fft
        * math.cos(direction.elevation)
        * math.sin(direction.azimuth)
        * geom.d_y
        / geom.wavelength
    )
    u, v = round(u_exact), round(v_exact)
    if not (-(u_fft // 2) <= u <= u_fft // 2 - 1) or not (
        -(v_fft // 2) <= v <= v_fft // 2 - 1
    ):
        raise ValueError(
            f"direction (az={direction.azimuth:.4f}, el={direction.elevation:.4f}) "
            "maps outside the centered bin ranges"
        )
    return u, v


def dirty_image(
    lag: LagCorrelation, geom: ArrayGeometry, u_fft: int = 128, v_fft: int = 128
) -> DirtyImage:
    """Zero-padded 2D transform of the lag matrix, centered and masked.

    Equals the direct double sum

        |sum_{lz, lk} lags[lz, lk] / (n_y * n_z)
             * exp(-2j pi lk u / u_fft) * exp(-2j pi lz v / v_fft)|

    over centered bins, evaluated with a fast transform.
    """
    _validate_fft_sizes(geom, u_fft, v_fft)
    if lag.lags.shape != (geom.n_z, geom.n_y):
        raise ValueError("lag matrix shape does not match geometry")

    spectrum = np.fft.fftshift(np.fft.fft2(lag.lags, s=(v_fft, u_fft)))
    raw = np.abs(spectrum).T / geom.n_elements

    u_bins = centered_bins(u_fft)
    v_bins = centered_bins(v_fft)
    el_arg = v_bins / v_fft * geom.wavelength / geom.d_z
    el_valid = np.abs(el_arg) <= 1
    el_axis = np.where(el_valid, np.arcsin(np.clip(el_arg, -1, 1)), np.nan)

    cos_el = np.cos(el_axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        az_arg = (
            u_bins[:, None] / u_fft * geom.wavelength / geom.d_y / cos_el[None, :]
        )
        az_valid = el_valid[None, :] & (np.abs(cos_el)[None, :] >= _COS_EPS) & (
            np.abs(az_arg) <= 1
        )
        az_axis = np.where(az_valid, np.arcsin(np.clip(az_arg, -1, 1)), np.nan)

    pixels = np.where(az_valid, raw, 0.0)
    return DirtyImage(
        pixels=pixels,
        u_fft=u_fft,
        v_fft=v_fft,
        az_axis=az_axis,
        el_axis=el_axis,
        valid_mask=az_valid,
    )


def image_peak_bin(image: DirtyImage) -> tuple[int, int]:
    """(u, v) bin of the largest pixel."""
    i_u, i_v = np.unravel_index(np.argmax(image.pixels), image.pixels.shape)
    return int(i_u - image.u_fft // 2), int(i_v - image.v_fft // 2)


def direct_power_spectrum(
    lag: LagCorrelation, geom: ArrayGeometry, u_fft: int, v_fft: int
) -> np.ndarray:
    """Brute-force double-sum evaluation of the image (test oracle path).

    Same bins and scaling as ``dirty_image`` but no fast transform: the two
    exponential factors are materialized and contracted directly.
    """
    _validate_fft_sizes(geom, u_fft, v_fft)
    u_bins = centered_bins(u_fft)
    v_bins = centered_bins(v_fft)
    lag_k = np.arange(geom.n_y)
    lag_z = np.arange(geom.n_z)
    e_u = np.exp(-2j * np.pi * np.outer(lag_k, u_bins) / u_fft)
    e_v = np.exp(-2j * np.pi * np.outer(lag_z, v_bins) / v_fft)
    spectrum = np.einsum("zk,ku,zv->uv", lag.lags, e_u, e_v)
    return np.abs(spectrum) / geom.n_elements


def export_pgm(image: DirtyImage, path) -> None:
    """Write an 8-bit max-normalized PGM (rows top-down = decreasing v bin)."""
    peak = image.pixels.max()
    scaled = image.pixels / peak * 255.0 if peak > 0 else np.zeros_like(image.pixels)
    grid = np.flipud(np.rint(scaled.T).astype(np.uint8))
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.u_fft} {image.v_fft}\n255\n".encode("ascii"))
        fh.write(grid.tobytes())


def export_csv(image: DirtyImage, path) -> None:
    """Long-format dump: one row per bin with angles in degrees (blank if masked)."""
    u_bins = centered_bins(image.u_fft)
    v_bins = centered_bins(image.v_fft)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "azimuth_deg", "elevation_deg", "power"])
        for i_u, u in enumerate(u_bins):
            for i_v, v in enumerate(v_bins):
                if image.valid_mask[i_u, i_v]:
                    az = f"{math.degrees(image.az_axis[i_u, i_v]):.6f}"
                    el = f"{math.degrees(image.el_axis[i_v]):.6f}"
                else:
                    az = el = ""
                writer.writerow([u, v, az, el, f"{image.pixels[i_u, i_v]:.12g}"])


def render_frame(
    geom: ArrayGeometry,
    sources,
    frame: int,
    s_count: int,
    noise_power: float,
    seed,
    u_fft: int,
    v_fft: int,
) -> DirtyImage:
    """Full chain for one frame: snapshots -> correlation -> lags -> image."""
    from .simulate import generate_snapshots
    from .correlate import collapse_to_lags, estimate_correlation

    block = generate_snapshots(geom, sources, frame, s_count, noise_power, seed)
    lag = collapse_to_lags(estimate_correlation(block), geom)
    return dirty_image(lag, geom, u_fft, v_fft)
