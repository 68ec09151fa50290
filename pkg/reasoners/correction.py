"""
Bias correction of a single volume: preprocess, solve, smooth, write.

Outputs in out_dir:
    corrected, bias, smoothed_bias, mask, membership_<i>, labels (I <= 3)
    corrected_native    only with native=True, in the input's units
    convergence.log     one "sweep objective delta" line per sweep
    summary.json        the returned result, without timings
"""

import json
import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from skills.mfcm import FcmParams, hard_labels, membership_volumes, solve
from skills.parallel import resolve_threads
from skills.preprocess import preprocess
from skills.volume import Volume, read_mask, read_volume, write_labels, write_mask, write_volume

logger = logging.getLogger(__name__)


class CorrectionResult(BaseModel):
    input: str
    out_dir: str
    converged: bool
    collapsed: bool
    sweeps: int
    objective: float
    centers: list[float]
    stale_clusters: list[int]
    voxels: int
    threads: int
    scale: float
    offset: float
    params: dict
    files: list[str]


def load_params(path: str | Path | None = None, seed: int | None = None,
                sigma: tuple[float, float, float] | None = None) -> FcmParams:
    """Params file values, with CLI overrides on top."""
    data = json.loads(Path(path).read_text()) if path else {}
    if not isinstance(data, dict):
        raise ValueError(f"Params file {path} must hold a JSON object")
    if seed is not None:
        data["seed"] = seed
    if sigma is not None:
        data["sigma"] = sigma
    return FcmParams.model_validate(data)


def correct_volume(input_path: str | Path, out_dir: str | Path, params: FcmParams | None = None,
                   mask_path: str | Path | None = None, threads: int | None = None,
                   native: bool = False) -> dict:
    """
    Run the full correction pipeline on one VBF volume.

    python main.py correct observed.vbf.json --out-dir out/ --params params.json --threads 4
    """
    params = params or FcmParams()
    threads = resolve_threads(threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    volume = read_volume(input_path)
    mask = read_mask(mask_path) if mask_path else None
    prepared = preprocess(volume, mask)

    log_path = out / "convergence.log"
    with log_path.open("w") as log:
        def report(sweep: int, objective: float, delta: float) -> None:
            logger.info(f"sweep={sweep}, objective={objective:.10g}, delta={delta:.6g}")
            log.write(f"{sweep} {objective:.17g} {delta:.17g}\n")

        result = solve(prepared.volume, prepared.mask, params, threads=threads, progress=report)

    files = [
        write_volume(result.corrected, out / "corrected"),
        write_volume(result.bias, out / "bias"),
        write_volume(result.smoothed_bias, out / "smoothed_bias"),
        write_mask(prepared.mask, out / "mask", volume.spacing),
        log_path,
    ]
    for i, membership in enumerate(membership_volumes(result.state, result.problem)):
        files.append(write_volume(membership, out / f"membership_{i}"))
    if result.state.clusters <= 3:
        files.append(write_labels(hard_labels(result.state, result.problem), out / "labels"))
    if native:
        bits = prepared.mask.bits
        restored = np.where(bits, prepared.normalization.invert(result.corrected.data), volume.data)
        files.append(write_volume(Volume(restored, volume.spacing), out / "corrected_native"))

    summary = CorrectionResult(
        input=str(input_path),
        out_dir=str(out),
        converged=result.converged,
        collapsed=result.collapsed,
        sweeps=result.state.sweep,
        objective=result.state.objective,
        centers=result.state.centers.tolist(),
        stale_clusters=np.flatnonzero(result.state.stale).tolist(),
        voxels=result.problem.n,
        threads=threads,
        scale=prepared.normalization.scale,
        offset=prepared.normalization.offset,
        params=params.model_dump(by_alias=True),
        files=[str(f) for f in files],
    )
    (out / "summary.json").write_text(summary.model_dump_json(indent=2))
    logger.info(f"Corrected {input_path} in {result.elapsed_seconds:.2f}s")
    return summary.model_dump()
