"""
Closed-loop experiments: corrupt a phantom with a known bias, correct it and
score the result against ground truth.
"""
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from reasoners.batch import benchmark_config, benchmark_params, run_single
from reasoners.segmentation import otsu_segmentation
from skills.evaluation import center_edge_spread, confusion_metrics, line_profile, material_uniformity, \
    two_sample_ttest
from skills.mfcm import FcmParams, solve
from skills.phantom import BiasSpec, PhantomSpec, corrupt, disk_phantom_spec, make_bias, make_phantom


def _rmse(a, b, mask) -> float:
    diff = a.data[mask.bits].astype(np.float64) - b.data[mask.bits]
    return float(np.sqrt(np.mean(diff ** 2)))


def _cov(v, labels, mask) -> dict[str, float]:
    return {s.material: s.cov_percent for s in material_uniformity(v, labels, mask)}


def test_cupping_removed_from_head_phantom():
    truth, labels, mask = make_phantom(PhantomSpec())
    observed = corrupt(truth, make_bias(BiasSpec(kind="cupping-radial", amplitude=0.15), truth.dims, mask))
    result = solve(observed, mask, FcmParams(alpha=0.0, sigma=(3.0, 3.0, 1.0)))
    assert result.converged
    assert not result.collapsed

    assert _rmse(result.corrected, truth, mask) <= 0.5 * _rmse(observed, truth, mask)
    before, after = _cov(observed, labels, mask), _cov(result.corrected, labels, mask)
    assert after["tissue"] <= 0.5 * before["tissue"]
    assert after["bone"] <= 0.3 * before["bone"]


def test_default_neighborhood_weight_collapses_on_cupping():
    truth, labels, mask = make_phantom(PhantomSpec())
    observed = corrupt(truth, make_bias(BiasSpec(kind="cupping-radial", amplitude=0.15), truth.dims, mask))
    result = solve(observed, mask, FcmParams())

    # The neighborhood term lets the bias absorb the material contrast
    assert result.collapsed
    assert np.ptp(result.state.centers) < FcmParams().collapse_tolerance
    assert _rmse(result.corrected, truth, mask) > _rmse(observed, truth, mask)


def test_bias_free_phantom_stays_put():
    truth, labels, mask = make_phantom(PhantomSpec())
    result = solve(truth, mask, FcmParams(alpha=0.0))
    smooth = result.smoothed_bias.data[mask.bits].astype(np.float64)
    assert math.sqrt(np.mean(smooth ** 2)) <= 1e-3
    assert np.allclose(result.state.centers, [0.05, 0.45, 0.85], atol=0.02)

    stats, _ = confusion_metrics(otsu_segmentation(truth, mask), labels, mask)
    bone = next(s for s in stats if s.material == "bone")
    assert bone.sensitivity >= 0.99


def test_correction_improves_bone_segmentation():
    config, params = benchmark_config(), benchmark_params()
    before, after, improved = [], [], 0
    for seed in range(20):
        run_config = config.model_copy(update={"phantom": config.phantom.model_copy(update={"seed": seed})})
        plain, corrected, _, _ = run_single(run_config, params.model_copy(update={"seed": seed}))
        sensitivity = [next(s.sensitivity for s in r.confusion if s.material == "bone") for r in (plain, corrected)]
        improved += sensitivity[1] > sensitivity[0]
        before.append(plain.mean_error_percent)
        after.append(corrected.mean_error_percent)

    assert improved >= 18
    ttest = two_sample_ttest(before, after)
    assert ttest.p < 0.05 and ttest.t > 0


def test_midline_profile_flattened():
    truth, labels, mask = make_phantom(disk_phantom_spec())
    observed = corrupt(truth, make_bias(BiasSpec(kind="cupping-radial", amplitude=0.15), truth.dims, mask))
    result = solve(observed, mask, FcmParams(alpha=0.0))

    # Horizontal midline through the center, kept to the inner three quarters of the tissue disk
    lo, hi = 24, 103
    assert np.all(labels.labels[0, 64, lo:hi + 1] == 1)
    spread_before = center_edge_spread(line_profile(observed, "x", 64)[lo:hi + 1])
    spread_after = center_edge_spread(line_profile(result.corrected, "x", 64)[lo:hi + 1])
    assert spread_after <= 0.3 * spread_before
