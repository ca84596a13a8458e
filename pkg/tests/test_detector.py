import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfiscan.autoencoder import TrainConfig, build_model, train
from rfiscan.dataset import ANOMALOUS, CLEAN, ImageSequence, split_features
from rfiscan.detector import (
    DetectorThreshold,
    calibrate,
    classify,
    evaluate,
    threshold_from_errors,
    write_accuracy_csv,
    write_error_hist_csv,
)


def toy_sequences(n, seed=0, label=CLEAN, kind=None, inr_db=None, n_jammers=0,
                  spike=0.0):
    """Tiny 8x8 sequences: a fixed bump plus noise, optionally spiked."""
    rng = np.random.default_rng(seed)
    sequences = []
    base = np.zeros((8, 8))
    base[3, 3] = 1.0
    base[3, 4] = base[4, 3] = 0.5
    for i in range(n):
        frames = np.stack([base + 0.02 * rng.random((8, 8)) for _ in range(3)])
        if spike:
            frames[rng.integers(3), 6, 6] += spike
        frames = np.clip(frames, 0, 1)
        meta = {"inr_db": inr_db, "n_jammers": n_jammers, "snr_db": 0.0}
        sequences.append(
            ImageSequence(frames=frames, look_bin=(-1, -1), label=label,
                          anomaly_kind=kind, meta=meta)
        )
    return sequences


@pytest.fixture(scope="module")
def trained_setup():
    clean_train = toy_sequences(40, seed=1)
    clean_val = toy_sequences(12, seed=2)
    model = build_model(
        feature_dim=8 * 8 + 2, encoder_dims=[24, 12], seq_len=3,
        sparsity_weight=1e-4, seed=0,
    )
    train(model, split_features(clean_train), split_features(clean_val),
          TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=120,
                      patience=120, seed=0))
    return model, clean_train


class TestThresholdFromErrors:
    def test_hand_quantile_1_to_100(self):
        errors = np.arange(1.0, 101.0)
        thr = threshold_from_errors(errors, 95.0)
        assert thr.threshold == pytest.approx(95.05)
        assert thr.calibration_size == 100

    def test_constant_errors(self):
        thr = threshold_from_errors(np.full(10, 3.5), 95.0)
        assert thr.threshold == 3.5

    def test_about_five_percent_exceed(self):
        rng = np.random.default_rng(3)
        errors = rng.gamma(2.0, 1.0, 400)
        thr = threshold_from_errors(errors, 95.0)
        above = int(np.sum(errors > thr.threshold))
        assert abs(above - 20) <= 1

    def test_monotone_in_percentile(self):
        errors = np.random.default_rng(4).random(200)
        t95 = threshold_from_errors(errors, 95.0).threshold
        t99 = threshold_from_errors(errors, 99.0).threshold
        assert t99 >= t95

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            threshold_from_errors(np.array([]))

    def test_invalid_percentile_rejected(self):
        with pytest.raises(ValueError):
            DetectorThreshold(threshold=1.0, percentile=0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(50.0, 99.0))
    def test_quantile_brackets_sorted_sample(self, seed, pct):
        errors = np.random.default_rng(seed).random(50)
        thr = threshold_from_errors(errors, pct).threshold
        ordered = np.sort(errors)
        assert ordered[0] <= thr <= ordered[-1]


class TestClassify:
    def test_boundary_is_clean(self, trained_setup):
        model, clean_train = trained_setup
        seq = clean_train[0]
        _, error = classify(model, DetectorThreshold(threshold=1.0), seq)
        label_eq, _ = classify(model, DetectorThreshold(threshold=error), seq)
        label_above, _ = classify(
            model, DetectorThreshold(threshold=error * (1 - 1e-12)), seq
        )
        assert label_eq == CLEAN
        assert label_above == ANOMALOUS

    def test_dimension_mismatch_rejected(self, trained_setup):
        model, _ = trained_setup
        wrong = ImageSequence(frames=np.zeros((3, 4, 4)), look_bin=(0, 0), label=CLEAN)
        with pytest.raises(ValueError):
            classify(model, DetectorThreshold(threshold=1.0), wrong)


class TestCalibrateEvaluate:
    def test_calibration_flags_about_five_percent_of_itself(self, trained_setup):
        model, clean_train = trained_setup
        thr = calibrate(model, clean_train, percentile=95.0)
        result = evaluate(model, thr, clean_train)
        flagged = 1.0 - result.overall_accuracy
        assert 0.0 <= flagged <= 0.125

    def test_perfect_separator_reaches_full_accuracy(self, trained_setup):
        model, clean_train = trained_setup
        thr = calibrate(model, clean_train, percentile=95.0)
        strong = toy_sequences(30, seed=5, label=ANOMALOUS, kind="static",
                               inr_db=20.0, n_jammers=1, spike=0.9)
        result = evaluate(model, thr, strong)
        assert result.overall_accuracy > 0.9

    def test_held_out_false_positive_rate_in_band(self, trained_setup):
        model, clean_train = trained_setup
        thr = calibrate(model, clean_train, percentile=95.0)
        held_out = toy_sequences(240, seed=6)
        result = evaluate(model, thr, held_out)
        fpr = 1.0 - result.overall_accuracy
        assert 0.0 <= fpr <= 0.12

    def test_cell_table_and_permutation_invariance(self, trained_setup):
        model, clean_train = trained_setup
        thr = calibrate(model, clean_train, percentile=95.0)
        mixed = (
            toy_sequences(10, seed=7)
            + toy_sequences(10, seed=8, label=ANOMALOUS, kind="static",
                            inr_db=20.0, n_jammers=1, spike=0.9)
            + toy_sequences(10, seed=9, label=ANOMALOUS, kind="transient",
                            inr_db=10.0, n_jammers=2, spike=0.9)
        )
        forward = evaluate(model, thr, mixed)
        backward = evaluate(model, thr, list(reversed(mixed)))
        assert forward.overall_accuracy == backward.overall_accuracy
        keyed_f = {(r["inr_db"], r["kind"], r["n_jammers"]): r["accuracy"]
                   for r in forward.cells}
        keyed_b = {(r["inr_db"], r["kind"], r["n_jammers"]): r["accuracy"]
                   for r in backward.cells}
        assert keyed_f == keyed_b
        assert (20.0, "static", 1) in keyed_f and (None, CLEAN, 0) in keyed_f

    def test_unlabeled_sequences_skipped_with_warning(self, trained_setup):
        model, clean_train = trained_setup
        thr = calibrate(model, clean_train, percentile=95.0)
        odd = toy_sequences(2, seed=10)
        object.__setattr__(odd[0], "label", "mystery")
        with pytest.warns(UserWarning, match="skipped"):
            result = evaluate(model, thr, odd)
        assert result.skipped == 1 and len(result.labels) == 1

    def test_empty_split_rejected(self, trained_setup):
        model, clean_train = trained_setup
        with pytest.raises(ValueError):
            calibrate(model, [], percentile=95.0)

    def test_csv_outputs(self, trained_setup, tmp_path):
        model, clean_train = trained_setup
        thr = calibrate(model, clean_train, percentile=95.0)
        mixed = toy_sequences(5, seed=11) + toy_sequences(
            5, seed=12, label=ANOMALOUS, kind="moving", inr_db=30.0,
            n_jammers=3, spike=0.9,
        )
        result = evaluate(model, thr, mixed)
        acc_path = tmp_path / "accuracy_vs_inr.csv"
        hist_path = tmp_path / "recon_error_hist.csv"
        write_accuracy_csv(result, acc_path)
        write_error_hist_csv(result, hist_path)
        acc_lines = acc_path.read_text().strip().splitlines()
        assert acc_lines[0] == "inr_db,kind,n_jammers,accuracy,n"
        assert any(",moving,3," in line for line in acc_lines[1:])
        hist_lines = hist_path.read_text().strip().splitlines()
        assert hist_lines[0] == "error,label"
        assert len(hist_lines) == 1 + 10
