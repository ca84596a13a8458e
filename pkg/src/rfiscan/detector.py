"""Anomaly threshold calibration and detection decisions.

A sequence is declared anomalous when its reconstruction error is strictly
greater than the calibration threshold: the linearly interpolated
percentile (default 95th) of the per-sequence errors on the clean training
split.  Evaluation tallies accuracy overall and per (INR, kind, jammer
count) scenario cell and exports the error populations for histograms.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import AutoencoderModel, reconstruction_errors
from .dataset import ANOMALOUS, CLEAN, ImageSequence, embed_look_angle, split_features


@dataclass
class DetectorThreshold:
    threshold: float
    percentile: float = 95.0
    calibration_size: int = 0

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if not (0 < self.percentile < 100):
            raise ValueError("percentile must be in (0, 100)")


def threshold_from_errors(errors: np.ndarray, percentile: float = 95.0) -> DetectorThreshold:
    """Linear-interpolation percentile of a 1-D error sample."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("cannot calibrate on an empty error sample")
    value = float(np.percentile(errors, percentile, method="linear"))
    return DetectorThreshold(
        threshold=value, percentile=percentile, calibration_size=int(errors.size)
    )


def calibrate(
    model: AutoencoderModel,
    training_split: list[ImageSequence],
    percentile: float = 95.0,
    batch_size: int = 64,
) -> DetectorThreshold:
    """Threshold from the clean training split's reconstruction errors."""
    if not training_split:
        raise ValueError("training split is empty")
    errors = reconstruction_errors(model, split_features(training_split), batch_size)
    return threshold_from_errors(errors, percentile)


def classify(
    model: AutoencoderModel, threshold: DetectorThreshold, sequence: ImageSequence
) -> tuple[str, float]:
    """(predicted label, reconstruction error) for one sequence."""
    features = embed_look_angle(sequence)
    if features.shape[1] != model.feature_dim:
        raise ValueError(
            f"sequence features ({features.shape[1]}) do not match the model "
            f"({model.feature_dim})"
        )
    error = float(reconstruction_errors(model, features[None])[0])
    label = ANOMALOUS if error > threshold.threshold else CLEAN
    return label, error


@dataclass
class EvalResult:
    overall_accuracy: float
    cells: list[dict]
    errors: np.ndarray
    labels: list[str]
    predictions: list[str]
    threshold: float = 0.0
    skipped: int = 0

    def cell(self, inr_db=None, kind=None, n_jammers=None) -> list[dict]:
        """Filter the per-cell table; None matches anything."""
        out = []
        for row in self.cells:
            if inr_db is not None and row["inr_db"] != inr_db:
                continue
            if kind is not None and row["kind"] != kind:
                continue
            if n_jammers is not None and row["n_jammers"] != n_jammers:
                continue
            out.append(row)
        return out


def evaluate(
    model: AutoencoderModel,
    threshold: DetectorThreshold,
    test_split: list[ImageSequence],
    batch_size: int = 64,
) -> EvalResult:
    """Accuracy overall and per scenario cell on a labeled split.

    Sequences without a recognized label are skipped with a warning.  Cells
    are keyed by (INR dB, anomaly kind, jammer count); clean sequences land
    in the cell (None, "clean", 0).
    """
    usable = []
    skipped = 0
    for seq in test_split:
        if seq.label in (CLEAN, ANOMALOUS):
            usable.append(seq)
        else:
            skipped += 1
    if skipped:
        warnings.warn(f"skipped {skipped} sequences without a usable label")
    if not usable:
        raise ValueError("no labeled sequences to evaluate")

    errors = reconstruction_errors(model, split_features(usable), batch_size)
    predictions = [ANOMALOUS if e > threshold.threshold else CLEAN for e in errors]
    labels = [seq.label for seq in usable]

    correct_by_cell: dict[tuple, list[int]] = {}
    for seq, pred in zip(usable, predictions):
        if seq.label == CLEAN:
            key = (None, CLEAN, 0)
        else:
            key = (seq.meta.get("inr_db"), seq.anomaly_kind, seq.meta.get("n_jammers"))
        correct_by_cell.setdefault(key, []).append(int(pred == seq.label))

    cells = []
    for (inr_db, kind, n_jammers), hits in sorted(
        correct_by_cell.items(), key=lambda kv: (kv[0][0] is not None, str(kv[0]))
    ):
        cells.append(
            {
                "inr_db": inr_db,
                "kind": kind,
                "n_jammers": n_jammers,
                "accuracy": float(np.mean(hits)),
                "n": len(hits),
            }
        )
    overall = float(np.mean([int(p == l) for p, l in zip(predictions, labels)]))
    return EvalResult(
        overall_accuracy=overall,
        cells=cells,
        errors=errors,
        labels=labels,
        predictions=predictions,
        threshold=threshold.threshold,
        skipped=skipped,
    )


def write_accuracy_csv(result: EvalResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["inr_db", "kind", "n_jammers", "accuracy", "n"])
        for row in result.cells:
            inr = "" if row["inr_db"] is None else row["inr_db"]
            writer.writerow([inr, row["kind"], row["n_jammers"],
                             f"{row['accuracy']:.6f}", row["n"]])


def write_error_hist_csv(result: EvalResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["error", "label"])
        for error, label in zip(result.errors, result.labels):
            writer.writerow([f"{error:.12g}", label])
