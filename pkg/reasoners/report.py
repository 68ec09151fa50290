"""Evaluation reports and the t-test across two sets of runs."""

import logging
from pathlib import Path

from skills.evaluation import evaluate, read_mean_errors, two_sample_ttest, write_slice_counts_csv
from skills.volume import read_labels, read_mask, read_volume

logger = logging.getLogger(__name__)


def evaluate_labels(pred_path: str | Path, truth_path: str | Path, out_path: str | Path,
                    volume_path: str | Path | None = None, mask_path: str | Path | None = None) -> dict:
    """
    Compare predicted labels with ground truth; writes <out>.json, <out>.csv and
    the per-slice bone counts to <out>_slices.csv.

    python main.py evaluate pred.vbf.json labels.vbf.json --volume corrected.vbf.json --mask mask.vbf.json --out report
    """
    pred = read_labels(pred_path)
    truth = read_labels(truth_path)
    mask = read_mask(mask_path) if mask_path else None
    if mask is None:
        logger.warning("No --mask given, scoring every voxel including background")
    volume = read_volume(volume_path) if volume_path else None

    report = evaluate(pred, truth, mask, volume, name=Path(pred_path).name)
    json_path, csv_path = report.write(out_path)
    stem = Path(out_path).with_suffix("")
    slices_path = write_slice_counts_csv(report.bone_count_per_slice, stem.with_name(f"{stem.name}_slices.csv"))
    logger.info(f"Mean error {report.mean_error_percent:.3f}%, report in {json_path}")
    return report.model_dump() | {"files": [str(json_path), str(csv_path), str(slices_path)]}


def ttest_reports(first: str | Path, second: str | Path, out_path: str | Path) -> dict:
    """
    Pooled t-test on the per-run mean errors of two report files.

    python main.py evaluate --ttest without.csv with.csv --out ttest
    """
    a, b = read_mean_errors(first), read_mean_errors(second)
    result = two_sample_ttest(a, b)
    out = Path(out_path).with_suffix(".json")
    out.write_text(result.model_dump_json(indent=2))
    logger.info(f"t={result.t:.4g}, dof={result.dof}, p={result.p:.4g} ({len(a)} vs {len(b)} runs)")
    return result.model_dump() | {"files": [str(out)]}
