"""Phantom generation: truth, labels, mask, bias and observed volumes as VBF sets."""

import logging
from pathlib import Path

from pydantic import BaseModel

from skills.phantom import PhantomConfig, corrupt, make_bias, make_phantom
from skills.volume import write_labels, write_mask, write_volume

logger = logging.getLogger(__name__)


class PhantomResult(BaseModel):
    out_dir: str
    files: list[str]
    dims: tuple[int, int, int]
    bias_kind: str
    amplitude: float
    seed: int
    voxels_in_mask: int


def load_phantom_config(path: str | Path | None) -> PhantomConfig:
    """Read {"phantom": ..., "bias": ...}; a missing path gives the defaults."""
    if path is None:
        return PhantomConfig()
    return PhantomConfig.model_validate_json(Path(path).read_text())


def generate_phantom(out_dir: str | Path, config: PhantomConfig | None = None) -> dict:
    """
    Build a phantom, inject its bias field and write everything under out_dir.

    python main.py phantom --spec phantom.json --out-dir data/
    """
    config = config or PhantomConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    truth, labels, mask = make_phantom(config.phantom)
    bias = make_bias(config.bias, config.phantom.dims, mask, config.phantom.spacing)
    observed = corrupt(truth, bias)

    files = [
        write_volume(truth, out / "truth"),
        write_labels(labels, out / "labels"),
        write_mask(mask, out / "mask", config.phantom.spacing),
        write_volume(bias, out / "bias"),
        write_volume(observed, out / "observed"),
    ]
    logger.info(f"Wrote phantom to {out} ({config.bias.kind} bias, amplitude {config.bias.amplitude})")

    return PhantomResult(
        out_dir=str(out),
        files=[str(f) for f in files],
        dims=config.phantom.dims,
        bias_kind=config.bias.kind,
        amplitude=config.bias.amplitude,
        seed=config.phantom.seed,
        voxels_in_mask=mask.count,
    ).model_dump()
