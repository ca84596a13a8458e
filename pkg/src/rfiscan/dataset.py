"""Synthetic image-sequence datasets: clean splits and jammed splits.

A dataset cell is one rendered observation: P consecutive dirty images of
a static signal of interest, normalized to [0, 1], annotated with the
look-angle bin.  Clean splits sweep the SOI over a bin grid and an SNR
range.  Anomalous splits add transient (single-frame), static, or moving
interferers at a swept INR.  Every sequence draws from its own seed
stream, keyed by split name and cell indices, so splits are disjoint and
any sequence can be regenerated in isolation.
"""

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ArrayGeometry, Direction
from .imaging import angles_to_bin, bin_to_azimuth, bin_to_elevation, render_frame
from .seeding import rng_from
from .simulate import (
    RFI,
    SOI,
    ScenarioConfigError,
    SourceSpec,
    linear_trajectory,
    snr_to_power,
)

CLEAN = "clean"
ANOMALOUS = "anomalous"
KINDS = ("transient", "static", "moving")

_MAGIC = b"RFDS"
_VERSION = 1


@dataclass
class ImageSequence:
    """P normalized dirty images plus the look angle and provenance."""

    frames: np.ndarray  # (p, u_fft, v_fft), values in [0, 1]
    look_bin: tuple[int, int]
    label: str
    anomaly_kind: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.ndim != 3:
            raise ValueError("frames must be (p, u_fft, v_fft)")
        if self.label not in (CLEAN, ANOMALOUS):
            raise ValueError(f"label must be '{CLEAN}' or '{ANOMALOUS}'")

    @property
    def p(self) -> int:
        return self.frames.shape[0]


def normalize_image(frames: np.ndarray, mode: str = "per-sequence-max") -> np.ndarray:
    """Map a frame stack (or single frame) into [0, 1].

    ``per-sequence-max`` divides by the largest pixel across the whole stack,
    so relative frame-to-frame structure survives.  ``log`` converts to dB
    relative to that maximum with a -40 dB floor, then rescales linearly.
    An all-zero input stays all-zero.
    """
    frames = np.asarray(frames, dtype=float)
    if not np.all(np.isfinite(frames)):
        raise ValueError("frames contain non-finite pixels")
    peak = frames.max() if frames.size else 0.0
    if peak <= 0:
        return np.zeros_like(frames)
    if mode == "per-sequence-max":
        return frames / peak
    if mode == "log":
        floor_db = -40.0
        with np.errstate(divide="ignore"):
            db = 10.0 * np.log10(frames / peak)
        db = np.clip(db, floor_db, 0.0)
        return (db - floor_db) / (-floor_db)
    raise ValueError(f"unknown normalization mode {mode!r}")


def embed_look_angle(seq: ImageSequence) -> np.ndarray:
    """Per-frame feature vectors: flattened image plus two look-bin scalars.

    The scalars are u/u_fft + 0.5 and v/v_fft + 0.5, both in [0, 1], so the
    model sees where the legitimate source is supposed to be without any
    marker burned into the pixels.
    """
    p, u_fft, v_fft = seq.frames.shape
    u, v = seq.look_bin
    if not (-(u_fft // 2) <= u <= u_fft // 2 - 1) or not (
        -(v_fft // 2) <= v <= v_fft // 2 - 1
    ):
        raise ValueError(f"look bin {seq.look_bin} outside image bounds")
    flat = seq.frames.reshape(p, u_fft * v_fft)
    look = np.array([u / u_fft + 0.5, v / v_fft + 0.5], dtype=float)
    return np.hstack([flat, np.tile(look, (p, 1))])


def split_features(sequences: list[ImageSequence]) -> np.ndarray:
    """Stack embed_look_angle over a split: (n_sequences, p, features)."""
    return np.stack([embed_look_angle(s) for s in sequences])


def bin_direction(
    geom: ArrayGeometry, u: int, v: int, u_fft: int, v_fft: int
) -> Direction | None:
    """Direction for a bin pair, or None if the bin is outside the visible region."""
    el = bin_to_elevation(v, v_fft, geom)
    if not np.isfinite(el):
        return None
    az = bin_to_azimuth(u, u_fft, el, geom)
    if not np.isfinite(az):
        return None
    return Direction(az, el)


def make_bin_grid(
    u_fft: int, v_fft: int, n_u: int, n_v: int, span: float = 0.35
) -> list[tuple[int, int]]:
    """Evenly spaced (u, v) bin grid covering +-span of each axis.

    The default span keeps every grid corner inside the visible region for
    half-wavelength spacing.
    """
    if not (0 < span <= 0.5):
        raise ValueError("span must be in (0, 0.5]")
    ext_u = math.floor(span * u_fft)
    ext_v = math.floor(span * v_fft)
    us = np.unique(np.rint(np.linspace(-ext_u, ext_u, n_u)).astype(int))
    vs = np.unique(np.rint(np.linspace(-ext_v, ext_v, n_v)).astype(int))
    return [(int(u), int(v)) for u in us for v in vs]


def _as_key(seed) -> tuple:
    return seed if isinstance(seed, tuple) else (seed,)


def _render_sequence(
    geom: ArrayGeometry,
    sources: list[SourceSpec],
    p: int,
    s_count: int,
    noise_power: float,
    seed_key: tuple,
    u_fft: int,
    v_fft: int,
    normalization: str,
) -> np.ndarray:
    raw = np.stack(
        [
            render_frame(geom, sources, f, s_count, noise_power, seed_key, u_fft, v_fft).pixels
            for f in range(p)
        ]
    )
    return normalize_image(raw, normalization)


def generate_clean_split(
    geom: ArrayGeometry,
    grid: list[tuple[int, int]],
    snr_sweep_db: list[float],
    p: int,
    s_count: int,
    seed,
    *,
    u_fft: int = 128,
    v_fft: int = 128,
    noise_power: float = 1.0,
    normalization: str = "per-sequence-max",
    replicates: int = 1,
    split_name: str = "clean",
) -> list[ImageSequence]:
    """One interference-free sequence per (grid position, SNR, replicate).

    The SOI sits at the grid bin for all P frames and the look bin is set to
    the same position.  Replicates rerun the cell with fresh waveform and
    noise seeds.  Grid positions outside the visible region are skipped with
    a warning.
    """
    if not snr_sweep_db:
        raise ValueError("SNR sweep must be non-empty")
    sequences = []
    for pos_i, (u, v) in enumerate(grid):
        direction = bin_direction(geom, u, v, u_fft, v_fft)
        if direction is None:
            warnings.warn(f"grid bin ({u}, {v}) is outside the visible region; skipped")
            continue
        for snr_i, snr_db in enumerate(snr_sweep_db):
            soi = SourceSpec(
                SOI, snr_to_power(snr_db, noise_power), trajectory=(direction,)
            )
            for rep in range(replicates):
                seq_key = (*_as_key(seed), split_name, pos_i, snr_i, rep)
                frames = _render_sequence(
                    geom, [soi], p, s_count, noise_power, seq_key, u_fft, v_fft,
                    normalization,
                )
                sequences.append(
                    ImageSequence(
                        frames=frames,
                        look_bin=(u, v),
                        label=CLEAN,
                        meta={
                            "snr_db": snr_db,
                            "inr_db": None,
                            "n_jammers": 0,
                            "position": [u, v],
                            "seed_key": list(seq_key),
                        },
                    )
                )
    return sequences


def _visible_bins(geom: ArrayGeometry, u_fft: int, v_fft: int) -> list[tuple[int, int]]:
    bins = []
    for v in range(-(v_fft // 2), v_fft // 2):
        el = bin_to_elevation(v, v_fft, geom)
        if not np.isfinite(el):
            continue
        for u in range(-(u_fft // 2), u_fft // 2):
            if np.isfinite(bin_to_azimuth(u, u_fft, el, geom)):
                bins.append((u, v))
    return bins


def _offset_ok(bin_uv: tuple[int, int], look_bin: tuple[int, int], min_offset: int) -> bool:
    return (
        abs(bin_uv[0] - look_bin[0]) >= min_offset
        or abs(bin_uv[1] - look_bin[1]) >= min_offset
    )


def _make_jammer(
    kind: str,
    rng: np.random.Generator,
    look_bin: tuple[int, int],
    candidates: list[tuple[int, int]],
    geom: ArrayGeometry,
    p: int,
    power: float,
    u_fft: int,
    v_fft: int,
    min_offset: int,
    max_tries: int = 50,
) -> SourceSpec:
    usable = [b for b in candidates if _offset_ok(b, look_bin, min_offset)]
    if not usable:
        raise ScenarioConfigError(
            "no jammer placement keeps the required offset from the look angle"
        )
    for _ in range(max_tries):
        start = usable[int(rng.integers(len(usable)))]
        start_dir = bin_direction(geom, *start, u_fft, v_fft)
        if kind == "transient":
            frame = int(rng.integers(p))
            return SourceSpec(RFI, power, (start_dir,), lifetime=frozenset({frame}))
        if kind == "static":
            return SourceSpec(RFI, power, (start_dir,))
        if kind == "moving":
            near = [
                b
                for b in usable
                if 2 <= max(abs(b[0] - start[0]), abs(b[1] - start[1])) <= 6
            ]
            if not near:
                continue
            end = near[int(rng.integers(len(near)))]
            end_dir = bin_direction(geom, *end, u_fft, v_fft)
            trajectory = linear_trajectory(start_dir, end_dir, p)
            try:
                path_bins = [angles_to_bin(d, geom, u_fft, v_fft) for d in trajectory]
            except ValueError:
                continue
            if all(_offset_ok(b, look_bin, min_offset) for b in path_bins):
                return SourceSpec(RFI, power, trajectory)
            continue
        raise ValueError(f"unknown jammer kind {kind!r}")
    raise ScenarioConfigError(f"could not place a {kind} jammer after {max_tries} tries")


def generate_anomalous_split(
    geom: ArrayGeometry,
    grid: list[tuple[int, int]],
    snr_sweep_db: list[float],
    inr_sweep_db: list[float],
    p: int,
    s_count: int,
    seed,
    *,
    kinds: tuple[str, ...] = KINDS,
    jammer_counts: tuple[int, ...] = (1, 2, 3),
    u_fft: int = 128,
    v_fft: int = 128,
    noise_power: float = 1.0,
    normalization: str = "per-sequence-max",
    min_look_offset: int = 2,
    replicates: int = 1,
    split_name: str = "anomalous",
) -> list[ImageSequence]:
    """SOI plus jammers: one sequence per scenario cell.

    Cells are the product (position x SNR x INR x kind x jammer count x
    replicate).  Transient jammers transmit in exactly one seeded-uniform
    frame; static ones hold a fixed bearing; moving ones drift linearly in
    angle between two bins.  Every jammer is placed at least
    ``min_look_offset`` bins from the look angle on at least one axis.
    """
    for kind in kinds:
        if kind not in KINDS:
            raise ValueError(f"unknown jammer kind {kind!r}")
    candidates = _visible_bins(geom, u_fft, v_fft)
    sequences = []
    for pos_i, (u, v) in enumerate(grid):
        direction = bin_direction(geom, u, v, u_fft, v_fft)
        if direction is None:
            warnings.warn(f"grid bin ({u}, {v}) is outside the visible region; skipped")
            continue
        look_bin = (u, v)
        for snr_i, snr_db in enumerate(snr_sweep_db):
            soi = SourceSpec(
                SOI, snr_to_power(snr_db, noise_power), trajectory=(direction,)
            )
            for inr_i, inr_db in enumerate(inr_sweep_db):
                power = snr_to_power(inr_db, noise_power)
                for kind in kinds:
                    for count in jammer_counts:
                        for rep in range(replicates):
                            seq_key = (
                                *_as_key(seed), split_name, pos_i, snr_i, inr_i,
                                kind, count, rep,
                            )
                            place_rng = rng_from(*seq_key, "placement")
                            jammers = [
                                _make_jammer(
                                    kind, place_rng, look_bin, candidates, geom, p,
                                    power, u_fft, v_fft, min_look_offset,
                                )
                                for _ in range(count)
                            ]
                            frames = _render_sequence(
                                geom, [soi, *jammers], p, s_count, noise_power,
                                seq_key, u_fft, v_fft, normalization,
                            )
                            sequences.append(
                                ImageSequence(
                                    frames=frames,
                                    look_bin=look_bin,
                                    label=ANOMALOUS,
                                    anomaly_kind=kind,
                                    meta={
                                        "snr_db": snr_db,
                                        "inr_db": inr_db,
                                        "n_jammers": count,
                                        "position": [u, v],
                                        "seed_key": list(seq_key),
                                    },
                                )
                            )
    return sequences


@dataclass
class DatasetManifest:
    """Everything needed to regenerate the dataset bit-for-bit."""

    geometry: ArrayGeometry
    u_fft: int
    v_fft: int
    p: int
    s_count: int
    master_seed: int
    grid: list[tuple[int, int]]
    train_snr_sweep_db: list[float]
    test_snr_sweep_db: list[float]
    inr_sweep_db: list[float]
    kinds: tuple[str, ...] = KINDS
    jammer_counts: tuple[int, ...] = (1, 2, 3)
    noise_power: float = 1.0
    normalization: str = "per-sequence-max"
    train_replicates: int = 1
    val_replicates: int = 1
    test_clean_replicates: int = 1
    anomalous_replicates: int = 1
    anomalous_grid_stride: int = 1
    min_look_offset: int = 2

    def to_dict(self) -> dict:
        g = self.geometry
        return {
            "geometry": {"n_y": g.n_y, "n_z": g.n_z, "d_y": g.d_y, "d_z": g.d_z,
                         "wavelength": g.wavelength},
            "u_fft": self.u_fft,
            "v_fft": self.v_fft,
            "p": self.p,
            "s_count": self.s_count,
            "master_seed": self.master_seed,
            "grid": [list(b) for b in self.grid],
            "train_snr_sweep_db": list(self.train_snr_sweep_db),
            "test_snr_sweep_db": list(self.test_snr_sweep_db),
            "inr_sweep_db": list(self.inr_sweep_db),
            "kinds": list(self.kinds),
            "jammer_counts": list(self.jammer_counts),
            "noise_power": self.noise_power,
            "normalization": self.normalization,
            "train_replicates": self.train_replicates,
            "val_replicates": self.val_replicates,
            "test_clean_replicates": self.test_clean_replicates,
            "anomalous_replicates": self.anomalous_replicates,
            "anomalous_grid_stride": self.anomalous_grid_stride,
            "min_look_offset": self.min_look_offset,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetManifest":
        g = raw["geometry"]
        return cls(
            geometry=ArrayGeometry(
                n_y=int(g["n_y"]), n_z=int(g["n_z"]),
                d_y=float(g["d_y"]), d_z=float(g["d_z"]),
                wavelength=float(g["wavelength"]),
            ),
            u_fft=int(raw["u_fft"]),
            v_fft=int(raw["v_fft"]),
            p=int(raw["p"]),
            s_count=int(raw["s_count"]),
            master_seed=int(raw["master_seed"]),
            grid=[tuple(b) for b in raw["grid"]],
            train_snr_sweep_db=[float(x) for x in raw["train_snr_sweep_db"]],
            test_snr_sweep_db=[float(x) for x in raw["test_snr_sweep_db"]],
            inr_sweep_db=[float(x) for x in raw["inr_sweep_db"]],
            kinds=tuple(raw.get("kinds", KINDS)),
            jammer_counts=tuple(raw.get("jammer_counts", (1, 2, 3))),
            noise_power=float(raw.get("noise_power", 1.0)),
            normalization=raw.get("normalization", "per-sequence-max"),
            train_replicates=int(raw.get("train_replicates", 1)),
            val_replicates=int(raw.get("val_replicates", 1)),
            test_clean_replicates=int(raw.get("test_clean_replicates", 1)),
            anomalous_replicates=int(raw.get("anomalous_replicates", 1)),
            anomalous_grid_stride=int(raw.get("anomalous_grid_stride", 1)),
            min_look_offset=int(raw.get("min_look_offset", 2)),
        )

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_dataset(manifest: DatasetManifest) -> dict[str, list[ImageSequence]]:
    """Render all three splits from a manifest.

    train and val are clean-only with disjoint seed streams; test mixes a
    clean part with the anomalous scenario cells.
    """
    m = manifest
    common = dict(
        u_fft=m.u_fft, v_fft=m.v_fft, noise_power=m.noise_power,
        normalization=m.normalization,
    )
    train = generate_clean_split(
        m.geometry, m.grid, m.train_snr_sweep_db, m.p, m.s_count, m.master_seed,
        replicates=m.train_replicates, split_name="train", **common,
    )
    val = generate_clean_split(
        m.geometry, m.grid, m.train_snr_sweep_db, m.p, m.s_count, m.master_seed,
        replicates=m.val_replicates, split_name="val", **common,
    )
    test_clean = generate_clean_split(
        m.geometry, m.grid, m.test_snr_sweep_db, m.p, m.s_count, m.master_seed,
        replicates=m.test_clean_replicates, split_name="test-clean", **common,
    )
    anomalous_grid = m.grid[:: m.anomalous_grid_stride]
    test_anomalous = generate_anomalous_split(
        m.geometry, anomalous_grid, m.test_snr_sweep_db, m.inr_sweep_db, m.p,
        m.s_count, m.master_seed,
        kinds=m.kinds, jammer_counts=m.jammer_counts,
        min_look_offset=m.min_look_offset, replicates=m.anomalous_replicates,
        split_name="test-anomalous", **common,
    )
    return {"train": train, "val": val, "test": test_clean + test_anomalous}


def save_split(path, sequences: list[ImageSequence]) -> None:
    """Binary split file: fixed header, then per-sequence metadata + frames.

    Frames are little-endian float32; metadata is length-prefixed JSON with
    sorted keys, so identical inputs produce identical bytes.
    """
    if not sequences:
        raise ValueError("refusing to write an empty split")
    p, u_fft, v_fft = sequences[0].frames.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5I", _VERSION, u_fft, v_fft, p, len(sequences)))
        for seq in sequences:
            if seq.frames.shape != (p, u_fft, v_fft):
                raise ValueError("all sequences in a split must share dimensions")
            meta = {
                "look_bin": list(seq.look_bin),
                "label": seq.label,
                "anomaly_kind": seq.anomaly_kind,
                "meta": seq.meta,
            }
            blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(seq.frames.astype("<f4").tobytes())


def load_split(path) -> list[ImageSequence]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a dataset split file")
        version, u_fft, v_fft, p, count = struct.unpack("<5I", fh.read(20))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported split version {version}")
        frame_bytes = p * u_fft * v_fft * 4
        sequences = []
        for _ in range(count):
            (meta_len,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(meta_len).decode("utf-8"))
            frames = np.frombuffer(fh.read(frame_bytes), dtype="<f4").astype(float)
            sequences.append(
                ImageSequence(
                    frames=frames.reshape(p, u_fft, v_fft),
                    look_bin=tuple(meta["look_bin"]),
                    label=meta["label"],
                    anomaly_kind=meta["anomaly_kind"],
                    meta=meta["meta"],
                )
            )
    return sequences
