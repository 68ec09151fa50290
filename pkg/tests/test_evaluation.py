"""Tests for skills/evaluation.py: uniformity, confusion, t-test, profiles, reports."""
import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from skills.evaluation import (
    EvalReport, bone_per_slice, center_edge_spread, confusion_metrics, evaluate, line_profile, material_uniformity,
    read_mean_errors, summarize_reports, two_sample_ttest, write_profile_csv, write_reports_csv,
)
from skills.volume import AIR, BONE, TISSUE, LabelVolume, Mask, Volume


def _labels(values) -> LabelVolume:
    return LabelVolume(np.asarray(values, dtype=np.uint8).reshape(1, 1, -1))


def _by_material(stats):
    return {s.material: s for s in stats}


# --- material_uniformity ---

def test_uniformity_example():
    v = Volume(np.array([[[0.4, 0.6, 0.9]]]))
    stats = _by_material(material_uniformity(v, _labels([TISSUE, TISSUE, BONE])))
    tissue = stats["tissue"]
    assert tissue.count == 2
    assert tissue.mean == pytest.approx(0.5, abs=1e-7)
    assert tissue.std == pytest.approx(0.1, abs=1e-7)
    assert tissue.cov_percent == pytest.approx(20.0, abs=1e-4)
    assert stats["bone"].std == 0.0


def test_uniformity_std_ignores_offset():
    rng = np.random.default_rng(0)
    data = rng.uniform(0.2, 0.4, (1, 1, 50))
    labels = _labels(rng.integers(0, 3, 50))
    a = _by_material(material_uniformity(Volume(data), labels))
    b = _by_material(material_uniformity(Volume(data + 0.3), labels))
    for name in ("air", "tissue", "bone"):
        assert a[name].std == pytest.approx(b[name].std, abs=1e-6)


def test_uniformity_empty_class():
    stats = _by_material(material_uniformity(Volume(np.array([[[0.3, 0.4]]])), _labels([TISSUE, TISSUE])))
    assert stats["bone"].count == 0
    assert stats["bone"].mean is None and stats["bone"].cov_percent is None


def test_uniformity_respects_mask():
    v = Volume(np.array([[[0.4, 0.6, 5.0]]]))
    mask = Mask(np.array([[[True, True, False]]]))
    stats = _by_material(material_uniformity(v, _labels([TISSUE, TISSUE, TISSUE]), mask))
    assert stats["tissue"].mean == pytest.approx(0.5, abs=1e-7)


def test_uniformity_dims_mismatch():
    with pytest.raises(ValueError):
        material_uniformity(Volume(np.zeros((1, 1, 3))), _labels([0, 0]))


# --- confusion_metrics ---

def test_perfect_prediction():
    truth = _labels([AIR, TISSUE, TISSUE, BONE])
    stats, error = confusion_metrics(truth, truth)
    assert error == 0.0
    for s in stats:
        assert s.sensitivity == 1.0 and s.specificity == 1.0


def test_hand_counted_confusion():
    truth = _labels([AIR, TISSUE, TISSUE, BONE, BONE])
    pred = _labels([AIR, TISSUE, BONE, BONE, TISSUE])
    stats, error = confusion_metrics(pred, truth)
    bone = _by_material(stats)["bone"]
    assert (bone.tp, bone.fn, bone.fp, bone.tn) == (1, 1, 1, 2)
    assert bone.sensitivity == 0.5
    assert bone.specificity == pytest.approx(2 / 3)
    assert error == pytest.approx(40.0)


def test_sensitivity_nine_of_ten():
    truth = _labels([BONE] * 10 + [TISSUE] * 5)
    pred = _labels([BONE] * 9 + [TISSUE] * 6)
    bone = _by_material(confusion_metrics(pred, truth)[0])["bone"]
    assert (bone.tp, bone.fn) == (9, 1)
    assert bone.sensitivity == pytest.approx(0.9)


def test_absent_material_has_no_sensitivity():
    truth = _labels([TISSUE, TISSUE])
    bone = _by_material(confusion_metrics(truth, truth)[0])["bone"]
    assert bone.sensitivity is None
    assert bone.specificity == 1.0


def test_mean_error_is_complement_of_accuracy():
    rng = np.random.default_rng(1)
    truth = _labels(rng.integers(0, 3, 200))
    pred = _labels(rng.integers(0, 3, 200))
    _, error = confusion_metrics(pred, truth)
    accuracy = np.mean(pred.labels == truth.labels)
    assert error == pytest.approx(100 * (1 - accuracy))


def test_relabeling_permutes_stats():
    rng = np.random.default_rng(2)
    truth = rng.integers(0, 3, 120)
    pred = rng.integers(0, 3, 120)
    swap = np.array([0, 2, 1], dtype=np.uint8)
    a = _by_material(confusion_metrics(_labels(pred), _labels(truth))[0])
    b = _by_material(confusion_metrics(_labels(swap[pred]), _labels(swap[truth]))[0])
    assert a["tissue"].sensitivity == b["bone"].sensitivity
    assert a["bone"].specificity == b["tissue"].specificity
    assert a["air"].sensitivity == b["air"].sensitivity


def test_confusion_over_mask_only():
    truth = _labels([TISSUE, TISSUE, BONE])
    pred = _labels([TISSUE, TISSUE, AIR])
    mask = Mask(np.array([[[True, True, False]]]))
    _, error = confusion_metrics(pred, truth, mask)
    assert error == 0.0


def test_confusion_empty_mask():
    truth = _labels([TISSUE])
    with pytest.raises(ValueError):
        confusion_metrics(truth, truth, Mask(np.zeros((1, 1, 1), dtype=bool)))


# --- two_sample_ttest ---

def _t_pdf(x, dof):
    log_norm = math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2) - 0.5 * math.log(dof * math.pi)
    return math.exp(log_norm - (dof + 1) / 2 * math.log1p(x * x / dof))


def test_ttest_identical_samples():
    result = two_sample_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert result.t == 0.0
    assert result.p == pytest.approx(1.0)
    assert not result.significant_at_5pct


def test_ttest_matches_quadrature():
    rng = np.random.default_rng(3)
    a, b = rng.normal(0.0, 1.0, 50), rng.normal(1.0, 1.0, 50)
    result = two_sample_ttest(a, b)
    assert result.dof == 98
    assert result.p < 0.001
    tail, _ = quad(_t_pdf, abs(result.t), np.inf, args=(98,), epsabs=0.0, epsrel=1e-10)
    assert result.p == pytest.approx(2 * tail, rel=1e-6)

    pooled = (np.var(a, ddof=1) + np.var(b, ddof=1)) / 2
    assert result.t == pytest.approx((a.mean() - b.mean()) / math.sqrt(pooled * (2 / 50)), rel=1e-10)


def test_ttest_clear_difference_is_significant():
    rng = np.random.default_rng(4)
    result = two_sample_ttest(rng.normal(3.0, 0.3, 20), rng.normal(0.3, 0.1, 20))
    assert result.significant_at_5pct
    assert result.t > 0


def test_ttest_zero_variance_unequal_means():
    result = two_sample_ttest([2.0, 2.0, 2.0], [1.0, 1.0])
    assert result.degenerate
    assert result.t == math.inf and result.p == 0.0


def test_ttest_needs_two_values_each():
    with pytest.raises(ValueError):
        two_sample_ttest([1.0], [1.0, 2.0])


# --- bone_per_slice / profiles ---

def test_bone_per_slice():
    labels = np.zeros((3, 2, 2), dtype=np.uint8)
    labels[0, 0, 0] = BONE
    labels[2] = BONE
    assert bone_per_slice(LabelVolume(labels)) == [1, 0, 4]


def test_line_profile_axes():
    data = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4)
    v = Volume(data)
    assert line_profile(v, "x", 1, slice_index=1).tolist() == data[1, 1, :].tolist()
    assert line_profile(v, "y", 2).tolist() == data[0, :, 2].tolist()


@pytest.mark.parametrize("axis,index,slice_index", [("x", 3, 0), ("y", 4, 0), ("x", 0, 2), ("x", -1, 0), ("z", 0, 0)])
def test_line_profile_out_of_range(axis, index, slice_index):
    with pytest.raises(ValueError):
        line_profile(Volume(np.zeros((2, 3, 4))), axis, index, slice_index)


def test_center_edge_spread():
    profile = np.full(41, 1.0)
    profile[17:24] = 0.8
    assert center_edge_spread(profile) == pytest.approx(0.2)
    assert center_edge_spread(np.full(41, 0.5)) == 0.0


def test_center_edge_spread_short_profile():
    with pytest.raises(ValueError):
        center_edge_spread(np.zeros(10))


# --- reports ---

class TestReports:
    def setup_method(self):
        self.tmp = Path(tempfile.mkdtemp())
        truth = np.array([[[AIR, TISSUE, TISSUE, BONE]], [[AIR, TISSUE, BONE, BONE]]], dtype=np.uint8)
        pred = truth.copy()
        pred[1, 0, 2] = TISSUE
        self.truth, self.pred = LabelVolume(truth), LabelVolume(pred)
        self.volume = Volume(np.where(truth == BONE, 0.85, 0.45))

    def teardown_method(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_evaluate_fills_every_section(self):
        report = evaluate(self.pred, self.truth, volume=self.volume, name="run")
        assert report.name == "run"
        assert report.mean_error_percent == pytest.approx(12.5)
        assert report.bone_count_per_slice == [1, 1]
        assert len(report.uniformity) == len(report.confusion) == 3

    def test_write_creates_json_and_csv(self):
        report = evaluate(self.pred, self.truth, name="run")
        json_path, csv_path = report.write(self.tmp / "report")
        assert EvalReport.model_validate_json(json_path.read_text()) == report
        assert "bone_sensitivity" in csv_path.read_text().splitlines()[0]

    def test_timings_stay_out_of_report_files(self):
        report = evaluate(self.pred, self.truth, name="run")
        report.elapsed_seconds = 1.25
        json_path, csv_path = report.write(self.tmp / "timed")
        assert "elapsed_seconds" not in json_path.read_text()
        assert "elapsed_seconds" not in csv_path.read_text()
        assert summarize_reports([report]).elapsed_seconds_mean == 1.25

    def test_mean_errors_from_every_format(self):
        reports = [EvalReport(name=f"r{i}", mean_error_percent=e) for i, e in enumerate((1.5, 2.5, 4.0))]
        csv_path = write_reports_csv(reports, self.tmp / "runs.csv")
        assert read_mean_errors(csv_path) == [1.5, 2.5, 4.0]

        batch = self.tmp / "runs.json"
        batch.write_text(json.dumps({"reports": [r.model_dump() for r in reports]}))
        assert read_mean_errors(batch) == [1.5, 2.5, 4.0]

        single, _ = reports[0].write(self.tmp / "one")
        assert read_mean_errors(single) == [1.5]

    def test_mean_errors_missing_column(self):
        path = self.tmp / "bad.csv"
        path.write_text("name,other\na,1\n")
        with pytest.raises(ValueError):
            read_mean_errors(path)

    def test_profile_csv(self):
        path = write_profile_csv([0.5, 0.25], self.tmp / "profile.csv")
        assert path.read_text().splitlines() == ["position,value", "0,0.5", "1,0.25"]

    def test_summarize(self):
        a = evaluate(self.pred, self.truth, name="a")
        b = evaluate(self.truth, self.truth, name="b")
        summary = summarize_reports([a, b])
        assert summary.count == 2
        assert summary.mean_error_percent_mean == pytest.approx(6.25)
        assert summary.mean_error_percent_std == pytest.approx(6.25)
        assert summary.sensitivity["bone"] == pytest.approx((2 / 3 + 1.0) / 2)
        assert summary.elapsed_seconds_mean is None

    def test_summarize_nothing(self):
        with pytest.raises(ValueError):
            summarize_reports([])
