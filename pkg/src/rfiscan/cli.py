"""Command-line pipeline driver.

Subcommands: simulate, image, dataset, train, calibrate, detect, eval,
pipeline.  Flags override values from an optional JSON config file, which
override built-in defaults.  Every run writes a ``run.json`` echo of the
fully resolved configuration next to its outputs.  Angles on this surface
are degrees; everything internal is radians.

Exit codes: 0 success, 2 usage or configuration error, 3 pipeline stage
failure.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import (
    TrainConfig,
    TrainingDivergedError,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .correlate import collapse_to_lags, estimate_correlation, save_complex64
from .dataset import (
    DatasetManifest,
    generate_dataset,
    load_split,
    make_bin_grid,
    split_features,
)
from .detector import (
    DetectorThreshold,
    calibrate,
    classify,
    evaluate,
    write_accuracy_csv,
    write_error_hist_csv,
)
from .geometry import ArrayGeometry
from .imaging import angles_to_bin, dirty_image, export_csv, export_pgm
from .simulate import SOI, ScenarioConfigError, generate_snapshots, load_scenario

USAGE_ERROR = 2
STAGE_ERROR = 3


def _out_root() -> Path:
    return Path(os.environ.get("RFISCAN_OUT", "."))


def _resolve_out(out: str) -> Path:
    path = Path(out)
    if not path.is_absolute():
        path = _out_root() / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_run_echo(out_dir: Path, command: str, config: dict) -> None:
    payload = {"command": command, "version": __version__, "config": config}
    (out_dir / "run.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _parse_sweep(text: str) -> list[float]:
    """Either 'start:stop:step' (inclusive) or a comma-separated list."""
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) not in (2, 3):
            raise ValueError(f"bad sweep spec {text!r}")
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) == 3 else 1.0
        if step <= 0:
            raise ValueError("sweep step must be > 0")
        n = int(round((stop - start) / step)) + 1
        return [start + i * step for i in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _scenario_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _merge(args: argparse.Namespace, file_config: dict, defaults: dict) -> dict:
    """Flag > config file > default, per key."""
    merged = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in file_config:
            merged[key] = file_config[key]
        else:
            merged[key] = default
    return merged


# ----------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = _resolve_out(args.out)
    raw = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    scen_hash = _scenario_hash(raw)
    geom = scenario.geometry
    for frame in range(scenario.n_frames):
        block = generate_snapshots(
            geom, scenario.sources, frame, scenario.s_count,
            scenario.noise_power, scenario.seed,
        )
        corr = estimate_correlation(block)
        lag = collapse_to_lags(corr, geom)
        sidecar = {
            "frame": frame,
            "s_count": scenario.s_count,
            "seed": scenario.seed,
            "scenario_hash": scen_hash,
            "n_y": geom.n_y,
            "n_z": geom.n_z,
        }
        save_complex64(out_dir / f"frame_{frame:03d}_corr.c64", corr.matrix,
                       {**sidecar, "kind": "sample_correlation"})
        save_complex64(out_dir / f"frame_{frame:03d}_lags.c64", lag.lags,
                       {**sidecar, "kind": "lag_correlation"})
    _write_run_echo(out_dir, "simulate",
                    {"scenario": str(args.scenario), "scenario_hash": scen_hash})
    return 0


# -------------------------------------------------------------------- image

def cmd_image(args) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = _resolve_out(args.out)
    geom = scenario.geometry
    u_fft, v_fft = scenario.u_fft, scenario.v_fft
    truth: dict = {"look_bin": None, "frames": []}
    for frame in range(scenario.n_frames):
        block = generate_snapshots(
            geom, scenario.sources, frame, scenario.s_count,
            scenario.noise_power, scenario.seed,
        )
        image = dirty_image(collapse_to_lags(estimate_correlation(block), geom),
                            geom, u_fft, v_fft)
        export_pgm(image, out_dir / f"frame_{frame:03d}.pgm")
        export_csv(image, out_dir / f"frame_{frame:03d}.csv")
        frame_truth = []
        for source in scenario.sources:
            if not source.active_in(frame):
                continue
            u, v = angles_to_bin(source.direction_at(frame), geom, u_fft, v_fft)
            frame_truth.append({"kind": source.kind, "u": u, "v": v})
            if source.kind == SOI and truth["look_bin"] is None:
                truth["look_bin"] = [u, v]
        truth["frames"].append({"frame": frame, "sources": frame_truth})
    (out_dir / "truth.json").write_text(
        json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_run_echo(out_dir, "image", {"scenario": str(args.scenario),
                                       "u_fft": u_fft, "v_fft": v_fft})
    return 0


# ------------------------------------------------------------------ dataset

_DATASET_DEFAULTS = {
    "n_y": 8, "n_z": 8, "d_y": 0.5, "d_z": 0.5, "wavelength": 1.0,
    "image_size": 32, "grid": "8x8", "grid_span": 0.35,
    "snr_sweep": "0:9:1", "test_snr_sweep": "0", "inr_sweep": "0:30:10",
    "kinds": "transient,static,moving", "jammer_counts": "1,2,3",
    "frames": 10, "snapshots": 1000, "seed": 0,
    "train_replicates": 1, "val_replicates": 1, "test_clean_replicates": 1,
    "anomalous_replicates": 1, "anomalous_grid_stride": 1,
    "normalization": "per-sequence-max",
}


def _manifest_from_config(cfg: dict) -> DatasetManifest:
    geom = ArrayGeometry(
        n_y=int(cfg["n_y"]), n_z=int(cfg["n_z"]),
        d_y=float(cfg["d_y"]), d_z=float(cfg["d_z"]),
        wavelength=float(cfg["wavelength"]),
    )
    size = int(cfg["image_size"])
    gu, gv = (int(x) for x in str(cfg["grid"]).lower().split("x"))
    grid = make_bin_grid(size, size, gu, gv, span=float(cfg["grid_span"]))
    return DatasetManifest(
        geometry=geom, u_fft=size, v_fft=size,
        p=int(cfg["frames"]), s_count=int(cfg["snapshots"]),
        master_seed=int(cfg["seed"]), grid=grid,
        train_snr_sweep_db=_parse_sweep(str(cfg["snr_sweep"])),
        test_snr_sweep_db=_parse_sweep(str(cfg["test_snr_sweep"])),
        inr_sweep_db=_parse_sweep(str(cfg["inr_sweep"])),
        kinds=tuple(str(cfg["kinds"]).split(",")),
        jammer_counts=tuple(_parse_int_list(str(cfg["jammer_counts"]))),
        normalization=str(cfg["normalization"]),
        train_replicates=int(cfg["train_replicates"]),
        val_replicates=int(cfg["val_replicates"]),
        test_clean_replicates=int(cfg["test_clean_replicates"]),
        anomalous_replicates=int(cfg["anomalous_replicates"]),
        anomalous_grid_stride=int(cfg["anomalous_grid_stride"]),
    )


def _run_dataset_stage(cfg: dict, out_dir: Path) -> None:
    from .dataset import save_split

    manifest = _manifest_from_config(cfg)
    splits = generate_dataset(manifest)
    manifest.save(out_dir / "manifest.json")
    for name, sequences in splits.items():
        save_split(out_dir / f"{name}.rfds", sequences)


def cmd_dataset(args) -> int:
    cfg = _merge(args, _load_config_file(args.config), _DATASET_DEFAULTS)
    out_dir = _resolve_out(args.out)
    _run_dataset_stage(cfg, out_dir)
    _write_run_echo(out_dir, "dataset", cfg)
    return 0


# -------------------------------------------------------------------- train

_TRAIN_DEFAULTS = {
    "layers": "", "lr": 0.02, "alpha": 1e-3, "batch": 32,
    "epochs": 100, "patience": 10, "seed": 0, "l1_last_only": False,
}


def _default_layers(image_side: int) -> list[int]:
    # compression cascade: each stage quarters the per-step width
    return [(image_side // 2) ** 2, (image_side // 4) ** 2, (image_side // 8) ** 2]


def _run_train_stage(cfg: dict, dataset_dir: Path, out_dir: Path) -> None:
    train_split = load_split(dataset_dir / "train.rfds")
    val_split = load_split(dataset_dir / "val.rfds")
    train_features = split_features(train_split)
    val_features = split_features(val_split)
    _, p, feature_dim = train_features.shape

    layers_text = str(cfg["layers"]).strip()
    if layers_text:
        encoder_dims = _parse_int_list(layers_text)
    else:
        encoder_dims = _default_layers(train_split[0].frames.shape[1])
    model = build_model(
        feature_dim=feature_dim, encoder_dims=encoder_dims, seq_len=p,
        sparsity_weight=float(cfg["alpha"]), seed=int(cfg["seed"]),
        l1_last_only=bool(cfg["l1_last_only"]),
    )
    config = TrainConfig(
        learning_rate=float(cfg["lr"]), batch_size=int(cfg["batch"]),
        max_epochs=int(cfg["epochs"]), patience=int(cfg["patience"]),
        seed=int(cfg["seed"]),
    )
    try:
        result = train(model, train_features, val_features, config)
    except TrainingDivergedError as exc:
        save_checkpoint(out_dir / "model.rfae", exc.result.model,
                        extra={"status": "diverged", "train_config": cfg})
        _write_history(out_dir / "loss_curve.csv", exc.result.history)
        raise
    save_checkpoint(out_dir / "model.rfae", result.model,
                    extra={"status": "ok", "best_epoch": result.best_epoch,
                           "train_config": {k: cfg[k] for k in _TRAIN_DEFAULTS}})
    _write_history(out_dir / "loss_curve.csv", result.history)


def _write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_mse", "val_loss", "val_mse"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['train_loss']:.12g}",
                             f"{row['train_mse']:.12g}", f"{row['val_loss']:.12g}",
                             f"{row['val_mse']:.12g}"])


def cmd_train(args) -> int:
    cfg = _merge(args, _load_config_file(args.config), _TRAIN_DEFAULTS)
    dataset_dir = Path(args.dataset)
    if not (dataset_dir / "train.rfds").exists():
        print(f"error: no train split under {dataset_dir}", file=sys.stderr)
        return USAGE_ERROR
    out_dir = _resolve_out(args.out)
    try:
        _run_train_stage(cfg, dataset_dir, out_dir)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return STAGE_ERROR
    _write_run_echo(out_dir, "train", {**cfg, "dataset": str(dataset_dir)})
    return 0


# ---------------------------------------------------------------- calibrate

def _run_calibrate_stage(model_path: Path, dataset_dir: Path, percentile: float,
                         out_dir: Path) -> None:
    model, _ = load_checkpoint(model_path)
    train_split = load_split(dataset_dir / "train.rfds")
    threshold = calibrate(model, train_split, percentile=percentile)
    (out_dir / "threshold.json").write_text(
        json.dumps(
            {"threshold": threshold.threshold, "percentile": threshold.percentile,
             "calibration_size": threshold.calibration_size},
            indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _load_threshold(path: Path) -> DetectorThreshold:
    raw = json.loads(path.read_text(encoding="utf-8"))
    return DetectorThreshold(
        threshold=float(raw["threshold"]),
        percentile=float(raw["percentile"]),
        calibration_size=int(raw.get("calibration_size", 0)),
    )


def cmd_calibrate(args) -> int:
    dataset_dir = Path(args.dataset)
    if not (dataset_dir / "train.rfds").exists():
        print(f"error: no train split under {dataset_dir}", file=sys.stderr)
        return USAGE_ERROR
    out_dir = _resolve_out(args.out)
    _run_calibrate_stage(Path(args.model), dataset_dir, args.percentile, out_dir)
    _write_run_echo(out_dir, "calibrate",
                    {"model": str(args.model), "dataset": str(dataset_dir),
                     "percentile": args.percentile})
    return 0


# ------------------------------------------------------------------- detect

def cmd_detect(args) -> int:
    model, _ = load_checkpoint(Path(args.model))
    threshold = _load_threshold(Path(args.threshold))
    sequences = load_split(Path(args.split))
    out_dir = _resolve_out(args.out)
    with open(out_dir / "detections.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "true_label", "predicted", "error"])
        for i, seq in enumerate(sequences):
            predicted, error = classify(model, threshold, seq)
            writer.writerow([i, seq.label, predicted, f"{error:.12g}"])
    _write_run_echo(out_dir, "detect",
                    {"model": str(args.model), "threshold": str(args.threshold),
                     "split": str(args.split)})
    return 0


# --------------------------------------------------------------------- eval

def _run_eval_stage(model_path: Path, threshold_path: Path, dataset_dir: Path,
                    out_dir: Path) -> dict:
    model, _ = load_checkpoint(model_path)
    threshold = _load_threshold(threshold_path)
    test_split = load_split(dataset_dir / "test.rfds")
    result = evaluate(model, threshold, test_split)
    write_accuracy_csv(result, out_dir / "accuracy_vs_inr.csv")
    write_error_hist_csv(result, out_dir / "recon_error_hist.csv")
    summary = {"overall_accuracy": result.overall_accuracy,
               "threshold": result.threshold, "n_sequences": len(result.labels)}
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


def cmd_eval(args) -> int:
    dataset_dir = Path(args.dataset)
    if not (dataset_dir / "test.rfds").exists():
        print(f"error: no test split under {dataset_dir}", file=sys.stderr)
        return USAGE_ERROR
    out_dir = _resolve_out(args.out)
    summary = _run_eval_stage(Path(args.model), Path(args.threshold), dataset_dir, out_dir)
    print(f"overall accuracy: {summary['overall_accuracy']:.4f}")
    _write_run_echo(out_dir, "eval",
                    {"model": str(args.model), "threshold": str(args.threshold),
                     "dataset": str(dataset_dir)})
    return 0


# ----------------------------------------------------------------- pipeline

_PIPELINE_DEFAULTS = {**_DATASET_DEFAULTS, **_TRAIN_DEFAULTS, "percentile": 95.0}


def _stage_hash(name: str, cfg: dict, upstream: str = "") -> str:
    blob = json.dumps({"stage": name, "config": cfg, "upstream": upstream},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _stage_done(stage_dir: Path, digest: str, outputs: list[str]) -> bool:
    marker = stage_dir / ".stage.json"
    if not marker.exists():
        return False
    try:
        recorded = json.loads(marker.read_text(encoding="utf-8"))["hash"]
    except (KeyError, json.JSONDecodeError):
        return False
    return recorded == digest and all((stage_dir / name).exists() for name in outputs)


def _mark_stage(stage_dir: Path, digest: str) -> None:
    (stage_dir / ".stage.json").write_text(
        json.dumps({"hash": digest}) + "\n", encoding="utf-8"
    )


def cmd_pipeline(args) -> int:
    cfg = _merge(args, _load_config_file(args.config), _PIPELINE_DEFAULTS)
    out_dir = _resolve_out(args.out)
    resume = bool(args.resume)

    dataset_cfg = {k: cfg[k] for k in _DATASET_DEFAULTS}
    train_cfg = {k: cfg[k] for k in _TRAIN_DEFAULTS}
    stages = [
        ("dataset", dataset_cfg, ["train.rfds", "val.rfds", "test.rfds", "manifest.json"]),
        ("train", train_cfg, ["model.rfae", "loss_curve.csv"]),
        ("calibrate", {"percentile": cfg["percentile"]}, ["threshold.json"]),
        ("eval", {}, ["accuracy_vs_inr.csv", "recon_error_hist.csv", "summary.json"]),
    ]
    upstream = ""
    for name, stage_cfg, outputs in stages:
        stage_dir = out_dir / name
        stage_dir.mkdir(parents=True, exist_ok=True)
        digest = _stage_hash(name, stage_cfg, upstream)
        if resume and _stage_done(stage_dir, digest, outputs):
            print(f"[pipeline] {name}: up to date, skipped")
            upstream = digest
            continue
        print(f"[pipeline] {name}: running")
        try:
            if name == "dataset":
                _run_dataset_stage(dataset_cfg, stage_dir)
            elif name == "train":
                _run_train_stage(train_cfg, out_dir / "dataset", stage_dir)
            elif name == "calibrate":
                _run_calibrate_stage(out_dir / "train" / "model.rfae",
                                     out_dir / "dataset", float(cfg["percentile"]),
                                     stage_dir)
            else:
                summary = _run_eval_stage(out_dir / "train" / "model.rfae",
                                          out_dir / "calibrate" / "threshold.json",
                                          out_dir / "dataset", stage_dir)
                print(f"[pipeline] overall accuracy: {summary['overall_accuracy']:.4f}")
        except Exception as exc:  # noqa: BLE001 - surface the failing stage
            print(f"error: stage '{name}' failed: {exc}", file=sys.stderr)
            return STAGE_ERROR
        _mark_stage(stage_dir, digest)
        upstream = digest
    _write_run_echo(out_dir, "pipeline", cfg)
    return 0


# --------------------------------------------------------------------- main

def _add_dataset_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-y", dest="n_y", type=int)
    parser.add_argument("--n-z", dest="n_z", type=int)
    parser.add_argument("--d-y", dest="d_y", type=float)
    parser.add_argument("--d-z", dest="d_z", type=float)
    parser.add_argument("--wavelength", type=float)
    parser.add_argument("--image-size", dest="image_size", type=int)
    parser.add_argument("--grid", help="SOI grid, e.g. 8x8")
    parser.add_argument("--grid-span", dest="grid_span", type=float)
    parser.add_argument("--snr-sweep", dest="snr_sweep",
                        help="train/val SNR dB sweep: 'a:b:step' or comma list")
    parser.add_argument("--test-snr-sweep", dest="test_snr_sweep")
    parser.add_argument("--inr-sweep", dest="inr_sweep")
    parser.add_argument("--kinds")
    parser.add_argument("--jammer-counts", dest="jammer_counts")
    parser.add_argument("--frames", type=int)
    parser.add_argument("--snapshots", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--train-replicates", dest="train_replicates", type=int)
    parser.add_argument("--val-replicates", dest="val_replicates", type=int)
    parser.add_argument("--test-clean-replicates", dest="test_clean_replicates", type=int)
    parser.add_argument("--anomalous-replicates", dest="anomalous_replicates", type=int)
    parser.add_argument("--anomalous-grid-stride", dest="anomalous_grid_stride", type=int)
    parser.add_argument("--normalization", choices=["per-sequence-max", "log"])


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--layers", help="encoder hidden dims, e.g. 256,64")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--alpha", type=float, help="sparsity weight on the code")
    parser.add_argument("--batch", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--l1-last-only", dest="l1_last_only", action="store_const",
                        const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfiscan",
        description="Array dirty imaging + LSTM autoencoder RFI/jamming detection",
    )
    parser.add_argument("--version", action="version", version=f"rfiscan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="dump per-frame correlation/lag matrices")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("image", help="render dirty images for a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("dataset", help="generate train/val/test splits")
    p.add_argument("--config", help="JSON config file (flags override)")
    p.add_argument("--out", required=True)
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the autoencoder on the clean split")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="set the anomaly threshold")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--percentile", type=float, default=95.0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="classify each sequence in a split file")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", required=True)
    p.add_argument("--split", required=True, help="path to a .rfds split file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="accuracy tables and error histograms")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="dataset -> train -> calibrate -> eval")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true",
                   help="skip stages whose config hash and outputs are intact")
    p.add_argument("--percentile", type=float)
    _add_dataset_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioConfigError, ValueError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
