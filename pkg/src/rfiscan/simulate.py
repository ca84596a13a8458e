"""Baseband snapshot simulation for the rectangular array.

Each snapshot is one complex sample per element: the sum of every active
emitter (its waveform sample times its steering vector) plus white
circular complex Gaussian noise.  Waveforms are i.i.d. circular complex
Gaussian with the configured per-element power, which is all the
correlation-based imaging chain can see anyway.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ArrayGeometry, Direction, steering_vector
from .seeding import rng_from

SOI = "soi"
RFI = "rfi"


class ScenarioConfigError(ValueError):
    """A source/scenario description that cannot be simulated."""


@dataclass(frozen=True)
class SourceSpec:
    """One emitter: the signal of interest or an interferer.

    ``trajectory`` holds one direction per frame; a single entry means the
    source is static.  ``lifetime`` restricts the frames in which the source
    transmits (``None`` = always active).  ``power`` is the per-element
    waveform variance, relative to unit noise power.
    """

    kind: str
    power: float
    trajectory: tuple[Direction, ...]
    lifetime: frozenset[int] | None = None

    def __post_init__(self):
        if self.kind not in (SOI, RFI):
            raise ValueError(f"kind must be '{SOI}' or '{RFI}', got {self.kind!r}")
        if not self.trajectory:
            raise ValueError("trajectory must be non-empty")
        if not (math.isfinite(self.power) and self.power >= 0):
            raise ValueError("power must be finite and >= 0")

    def active_in(self, frame: int) -> bool:
        return self.lifetime is None or frame in self.lifetime

    def direction_at(self, frame: int) -> Direction:
        if len(self.trajectory) == 1:
            return self.trajectory[0]
        if not (0 <= frame < len(self.trajectory)):
            raise ScenarioConfigError(
                f"source active in frame {frame} but trajectory has only "
                f"{len(self.trajectory)} entries"
            )
        return self.trajectory[frame]


@dataclass
class SnapshotBlock:
    """s_count x n_elements complex baseband samples for one image frame."""

    data: np.ndarray
    geometry: ArrayGeometry
    seed: tuple

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != self.geometry.n_elements:
            raise ValueError("data must be (s_count, n_elements)")
        if self.data.shape[0] < 1:
            raise ValueError("need at least one snapshot")
        if not np.all(np.isfinite(self.data.view(np.float64))):
            raise ValueError("snapshot data contains non-finite entries")


def snr_to_power(snr_db: float, noise_power: float) -> float:
    """Per-element source variance for a given SNR (or INR) in dB."""
    if noise_power <= 0:
        raise ValueError("noise_power must be > 0")
    return noise_power * 10.0 ** (snr_db / 10.0)


def _complex_gaussian(rng: np.random.Generator, variance: float, shape) -> np.ndarray:
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_snapshots(
    geom: ArrayGeometry,
    sources: list[SourceSpec],
    frame: int,
    s_count: int,
    noise_power: float,
    seed,
) -> SnapshotBlock:
    """Simulate one frame of snapshots.

    Each source draws its waveform from the stream ``(seed, frame, "src", i)``
    and the noise from ``(seed, frame, "noise")``, so frames can be generated
    in parallel and removing a source leaves every other draw untouched.
    """
    if s_count < 1:
        raise ValueError("s_count must be >= 1")
    if noise_power <= 0:
        raise ValueError("noise_power must be > 0")
    seed_key = seed if isinstance(seed, tuple) else (seed,)

    noise_rng = rng_from(*seed_key, frame, "noise")
    data = _complex_gaussian(noise_rng, noise_power, (s_count, geom.n_elements))
    for i, source in enumerate(sources):
        if not source.active_in(frame):
            continue
        direction = source.direction_at(frame)
        rng = rng_from(*seed_key, frame, "src", i)
        waveform = _complex_gaussian(rng, source.power, s_count)
        data += np.outer(waveform, steering_vector(geom, direction))
    return SnapshotBlock(data=data, geometry=geom, seed=seed_key)


def linear_trajectory(start: Direction, end: Direction, n_frames: int) -> tuple[Direction, ...]:
    """Directions interpolated linearly in (azimuth, elevation) over n_frames."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if n_frames == 1:
        return (start,)
    ts = np.linspace(0.0, 1.0, n_frames)
    return tuple(
        Direction(
            azimuth=(1 - t) * start.azimuth + t * end.azimuth,
            elevation=(1 - t) * start.elevation + t * end.elevation,
        )
        for t in ts
    )


@dataclass
class Scenario:
    """Everything needed to regenerate one simulated observation."""

    geometry: ArrayGeometry
    sources: list[SourceSpec]
    noise_power: float = 1.0
    s_count: int = 1000
    n_frames: int = 1
    seed: int = 0
    u_fft: int = 128
    v_fft: int = 128
    extras: dict = field(default_factory=dict)


def _source_to_json(source: SourceSpec) -> dict:
    entry = {
        "kind": source.kind,
        "power": source.power,
        "trajectory_deg": [list(d.to_degrees()) for d in source.trajectory],
    }
    if source.lifetime is not None:
        entry["lifetime"] = sorted(source.lifetime)
    return entry


def _source_from_json(entry: dict, noise_power: float) -> SourceSpec:
    if "power" in entry:
        power = float(entry["power"])
    elif "snr_db" in entry:
        power = snr_to_power(float(entry["snr_db"]), noise_power)
    else:
        raise ScenarioConfigError("source needs either 'power' or 'snr_db'")
    trajectory = tuple(
        Direction.from_degrees(az, el) for az, el in entry["trajectory_deg"]
    )
    lifetime = entry.get("lifetime")
    return SourceSpec(
        kind=entry["kind"],
        power=power,
        trajectory=trajectory,
        lifetime=None if lifetime in (None, "all") else frozenset(int(f) for f in lifetime),
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    g = scenario.geometry
    return {
        "geometry": {"n_y": g.n_y, "n_z": g.n_z, "d_y": g.d_y, "d_z": g.d_z,
                     "wavelength": g.wavelength},
        "noise_power": scenario.noise_power,
        "snapshots": scenario.s_count,
        "frames": scenario.n_frames,
        "seed": scenario.seed,
        "u_fft": scenario.u_fft,
        "v_fft": scenario.v_fft,
        "sources": [_source_to_json(s) for s in scenario.sources],
    }


def scenario_from_dict(raw: dict) -> Scenario:
    try:
        g = raw["geometry"]
        geom = ArrayGeometry(
            n_y=int(g["n_y"]), n_z=int(g["n_z"]),
            d_y=float(g["d_y"]), d_z=float(g["d_z"]),
            wavelength=float(g["wavelength"]),
        )
        noise_power = float(raw.get("noise_power", 1.0))
        sources = [_source_from_json(e, noise_power) for e in raw.get("sources", [])]
        return Scenario(
            geometry=geom,
            sources=sources,
            noise_power=noise_power,
            s_count=int(raw.get("snapshots", 1000)),
            n_frames=int(raw.get("frames", 1)),
            seed=int(raw.get("seed", 0)),
            u_fft=int(raw.get("u_fft", 128)),
            v_fft=int(raw.get("v_fft", 128)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioConfigError):
            raise
        raise ScenarioConfigError(f"invalid scenario description: {exc}") from exc


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(
        json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
