import csv
import json

import numpy as np
import pytest

from rfiscan.cli import main

SCENARIO = {
    "geometry": {"n_y": 8, "n_z": 8, "d_y": 0.5, "d_z": 0.5, "wavelength": 1.0},
    "noise_power": 1.0,
    "snapshots": 2000,
    "frames": 2,
    "seed": 11,
    "u_fft": 64,
    "v_fft": 64,
    "sources": [{"kind": "soi", "snr_db": 15, "trajectory_deg": [[50, 10]]}],
}

TINY_PIPELINE = [
    "--image-size", "16", "--n-y", "4", "--n-z", "4", "--grid", "3x3",
    "--grid-span", "0.3", "--snr-sweep", "0,5", "--test-snr-sweep", "0",
    "--inr-sweep", "10,20", "--kinds", "static,transient",
    "--jammer-counts", "1", "--frames", "3", "--snapshots", "200",
    "--layers", "32,12", "--lr", "0.005", "--epochs", "8", "--patience", "8",
    "--batch", "8", "--seed", "5",
]


def write_scenario(tmp_path, overrides=None):
    raw = json.loads(json.dumps(SCENARIO))
    if overrides:
        raw.update(overrides)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def csv_argmax(path):
    rows = list(csv.DictReader(open(path, encoding="utf-8")))
    best = max(rows, key=lambda r: float(r["power"]))
    return int(best["u"]), int(best["v"])


class TestBasics:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "rfiscan" in capsys.readouterr().out

    def test_unreadable_scenario_is_usage_error(self, tmp_path):
        missing = tmp_path / "nope.json"
        assert main(["image", "--scenario", str(missing),
                     "--out", str(tmp_path / "out")]) == 2

    def test_invalid_scenario_is_usage_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"geometry": {"n_y": 2}}', encoding="utf-8")
        assert main(["image", "--scenario", str(path),
                     "--out", str(tmp_path / "out")]) == 2


class TestImageCommand:
    def test_argmax_matches_truth(self, tmp_path):
        scenario = write_scenario(tmp_path)
        out = tmp_path / "img"
        assert main(["image", "--scenario", str(scenario), "--out", str(out)]) == 0
        truth = json.loads((out / "truth.json").read_text())
        look = tuple(truth["look_bin"])
        for frame in range(2):
            assert (out / f"frame_{frame:03d}.pgm").exists()
            peak = csv_argmax(out / f"frame_{frame:03d}.csv")
            assert max(abs(peak[0] - look[0]), abs(peak[1] - look[1])) <= 1
        assert (out / "run.json").exists()

    def test_no_source_noise_floor_is_flat(self, tmp_path):
        scenario = write_scenario(
            tmp_path, {"sources": [], "snapshots": 10_000, "frames": 1}
        )
        out = tmp_path / "noise"
        assert main(["image", "--scenario", str(scenario), "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "frame_000.csv", encoding="utf-8")))
        powers = np.array([float(r["power"]) for r in rows if r["azimuth_deg"] != ""])
        assert powers.max() / powers.mean() < 5.0


class TestSimulateCommand:
    def test_dumps_per_frame_matrices(self, tmp_path):
        scenario = write_scenario(tmp_path)
        out = tmp_path / "sim"
        assert main(["simulate", "--scenario", str(scenario), "--out", str(out)]) == 0
        from rfiscan.correlate import load_complex64

        corr, meta = load_complex64(out / "frame_000_corr.c64")
        assert corr.shape == (64, 64) and meta["kind"] == "sample_correlation"
        lags, meta = load_complex64(out / "frame_001_lags.c64")
        assert lags.shape == (8, 8) and meta["frame"] == 1


class TestDatasetCommand:
    def test_generates_all_splits(self, tmp_path):
        out = tmp_path / "data"
        args = ["dataset", "--out", str(out), "--image-size", "16", "--n-y", "4",
                "--n-z", "4", "--grid", "2x2", "--snr-sweep", "0",
                "--test-snr-sweep", "0", "--inr-sweep", "20", "--kinds", "static",
                "--jammer-counts", "1", "--frames", "2", "--snapshots", "100",
                "--seed", "3"]
        assert main(args) == 0
        for name in ("train.rfds", "val.rfds", "test.rfds", "manifest.json", "run.json"):
            assert (out / name).exists()

    def test_config_file_overlay(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"image_size": 16, "n_y": 4, "n_z": 4,
                                   "grid": "2x2", "snr_sweep": "0",
                                   "test_snr_sweep": "0", "inr_sweep": "20",
                                   "kinds": "static", "jammer_counts": "1",
                                   "frames": 2, "snapshots": 100}), encoding="utf-8")
        out = tmp_path / "data"
        # the flag overrides the file's snapshot count
        assert main(["dataset", "--config", str(cfg), "--out", str(out),
                     "--snapshots", "64"]) == 0
        run = json.loads((out / "run.json").read_text())
        assert run["config"]["snapshots"] == 64
        assert run["config"]["image_size"] == 16


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe") / "run"
    code = main(["pipeline", "--out", str(out), *TINY_PIPELINE])
    assert code == 0
    return out


class TestTrainEvalChain:
    def test_pipeline_outputs(self, pipeline_dir):
        for rel in ("dataset/train.rfds", "train/model.rfae",
                    "train/loss_curve.csv", "calibrate/threshold.json",
                    "eval/accuracy_vs_inr.csv", "eval/recon_error_hist.csv",
                    "eval/summary.json", "run.json"):
            assert (pipeline_dir / rel).exists(), rel

    def test_resume_skips_completed_stages(self, pipeline_dir, capsys):
        code = main(["pipeline", "--out", str(pipeline_dir), "--resume",
                     *TINY_PIPELINE])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("skipped") == 4

    def test_rerun_reproduces_outputs(self, pipeline_dir, tmp_path):
        other = tmp_path / "again"
        assert main(["pipeline", "--out", str(other), *TINY_PIPELINE]) == 0
        for rel in ("dataset/train.rfds", "dataset/test.rfds", "train/model.rfae",
                    "eval/accuracy_vs_inr.csv", "eval/recon_error_hist.csv"):
            assert (pipeline_dir / rel).read_bytes() == (other / rel).read_bytes(), rel

    def test_missing_dataset_is_usage_error(self, tmp_path):
        assert main(["train", "--dataset", str(tmp_path / "absent"),
                     "--out", str(tmp_path / "out")]) == 2
        assert main(["eval", "--model", "m", "--threshold", "t",
                     "--dataset", str(tmp_path / "absent"),
                     "--out", str(tmp_path / "out")]) == 2

    def test_detect_writes_per_sequence_rows(self, pipeline_dir, tmp_path):
        out = tmp_path / "det"
        code = main(["detect",
                     "--model", str(pipeline_dir / "train" / "model.rfae"),
                     "--threshold", str(pipeline_dir / "calibrate" / "threshold.json"),
                     "--split", str(pipeline_dir / "dataset" / "test.rfds"),
                     "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(open(out / "detections.csv", encoding="utf-8")))
        assert rows and set(rows[0]) == {"index", "true_label", "predicted", "error"}

    def test_stage_failure_exits_three(self, tmp_path):
        out = tmp_path / "broken"
        code = main(["pipeline", "--out", str(out), *TINY_PIPELINE[:-2],
                     "--layers", "not-a-number"])
        assert code == 3

    def test_calibrate_writes_threshold(self, pipeline_dir, tmp_path):
        out = tmp_path / "cal"
        code = main(["calibrate",
                     "--model", str(pipeline_dir / "train" / "model.rfae"),
                     "--dataset", str(pipeline_dir / "dataset"),
                     "--out", str(out), "--percentile", "90"])
        assert code == 0
        raw = json.loads((out / "threshold.json").read_text())
        assert raw["percentile"] == 90 and raw["threshold"] > 0
