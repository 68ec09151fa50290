"""
With/without-correction experiment over seeded phantoms.

Each run corrupts a fresh phantom, then segments it twice: straight after
preprocessing, and after bias correction. Both arms share the preprocessing,
so the solver is the only difference. Writes without.csv, with.csv and
summary.json (per-arm aggregates plus the t-test on mean errors),
without.json / with.json holding every run's report, and timing.json with
per-run wall times, the only file that differs between repeated batches.
"""

import json
import logging
import time
from pathlib import Path

from pydantic import BaseModel

from reasoners.segmentation import otsu_segmentation
from skills.evaluation import BatchSummary, EvalReport, TTestResult, evaluate, summarize_reports, \
    two_sample_ttest, write_reports_csv
from skills.mfcm import FcmParams, solve
from skills.phantom import BiasSpec, CavitySpec, PhantomConfig, PhantomSpec, corrupt, make_bias, make_phantom
from skills.parallel import resolve_threads
from skills.preprocess import preprocess

logger = logging.getLogger(__name__)


def benchmark_config() -> PhantomConfig:
    """Compact head with a low-contrast skull under a linear x/z shading ramp."""
    return PhantomConfig(
        phantom=PhantomSpec(
            dims=(48, 48, 24),
            semi_axes=(22.0, 21.0, 10.0),
            skull_thickness=2.0,
            intensities=(0.05, 0.45, 0.70),
            cavity=CavitySpec(semi_axes=(9.0, 7.0, 4.0), offset=(6.0, 0.0, 0.0)),
            noise=0.02,
        ),
        bias=BiasSpec(kind="polynomial", amplitude=0.3,
                      coefficients=(1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
    )


def benchmark_params() -> FcmParams:
    return FcmParams(alpha=0.0)


class BatchResult(BaseModel):
    out_dir: str
    count: int
    seed: int
    converged: int
    collapsed: int
    without: BatchSummary
    corrected: BatchSummary
    ttest: TTestResult
    files: list[str]


def run_single(config: PhantomConfig, params: FcmParams, threads: int = 1,
               name: str = "") -> tuple[EvalReport, EvalReport, bool, bool]:
    """One phantom through both arms; returns (without, with, converged, collapsed)."""
    truth, labels, mask = make_phantom(config.phantom)
    observed = corrupt(truth, make_bias(config.bias, config.phantom.dims, mask, config.phantom.spacing))

    started = time.perf_counter()
    prepared = preprocess(observed, mask)
    plain = evaluate(otsu_segmentation(prepared.volume, mask), labels, mask, prepared.volume, name=name)
    plain.elapsed_seconds = time.perf_counter() - started

    started = time.perf_counter()
    prepared = preprocess(observed, mask)
    result = solve(prepared.volume, mask, params, threads=threads)
    corrected = evaluate(otsu_segmentation(result.corrected, mask), labels, mask, result.corrected, name=name)
    corrected.elapsed_seconds = time.perf_counter() - started
    return plain, corrected, result.converged, result.collapsed


def run_batch(count: int, seed: int, out_dir: str | Path, config: PhantomConfig | None = None,
              params: FcmParams | None = None, threads: int | None = None) -> dict:
    """
    python main.py batch --count 20 --seed 1 --out-dir batch/
    """
    if count < 2:
        raise ValueError(f"A batch needs at least 2 runs for the t-test, got {count}")
    config = config or benchmark_config()
    params = params or benchmark_params()
    threads = resolve_threads(threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    without, corrected, converged, collapsed = [], [], 0, 0
    for i in range(count):
        run_seed = seed + i
        run_config = config.model_copy(update={"phantom": config.phantom.model_copy(update={"seed": run_seed})})
        run_params = params.model_copy(update={"seed": run_seed})
        plain, fixed, ok, flat = run_single(run_config, run_params, threads, name=f"run_{run_seed}")
        without.append(plain)
        corrected.append(fixed)
        converged += ok
        collapsed += flat
        logger.info(f"Run {i + 1}/{count}: mean error {plain.mean_error_percent:.3f}% -> "
                    f"{fixed.mean_error_percent:.3f}%{'' if ok else ' (unconverged)'}{' (collapsed)' if flat else ''}")

    ttest = two_sample_ttest([r.mean_error_percent for r in without], [r.mean_error_percent for r in corrected])
    files = []
    for arm, reports in (("without", without), ("with", corrected)):
        files.append(write_reports_csv(reports, out / f"{arm}.csv"))
        arm_json = out / f"{arm}.json"
        arm_json.write_text(json.dumps({"reports": [r.model_dump() for r in reports]}, indent=2))
        files.append(arm_json)

    result = BatchResult(
        out_dir=str(out),
        count=count,
        seed=seed,
        converged=converged,
        collapsed=collapsed,
        without=summarize_reports(without),
        corrected=summarize_reports(corrected),
        ttest=ttest,
        files=[str(f) for f in files] + [str(out / "summary.json"), str(out / "timing.json")],
    )
    (out / "summary.json").write_text(result.model_dump_json(indent=2))
    timing = {arm: [r.elapsed_seconds for r in reports] for arm, reports in (("without", without), ("with", corrected))}
    (out / "timing.json").write_text(json.dumps(timing, indent=2))
    return result.model_dump()
