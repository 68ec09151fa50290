"""Otsu segmentation of a volume into air, tissue and bone."""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from skills.preprocess import preprocess
from skills.thresholding import segment
from skills.volume import MATERIALS, LabelVolume, Mask, Volume, read_mask, read_volume, write_labels

logger = logging.getLogger(__name__)


class SegmentationResult(BaseModel):
    input: str
    output: str
    counts: dict[str, int]


def otsu_segmentation(v: Volume, mask: Mask | None = None) -> LabelVolume:
    """Preprocess (foreground, clipping, normalization), then 3-class Otsu over the mask."""
    prepared = preprocess(v, mask)
    return segment(prepared.volume, prepared.mask, k=3)


def segment_volume(input_path: str | Path, out_path: str | Path, mask_path: str | Path | None = None) -> dict:
    """
    python main.py segment corrected.vbf.json --out labels --mask mask.vbf.json
    """
    volume = read_volume(input_path)
    mask = read_mask(mask_path) if mask_path else None
    labels = otsu_segmentation(volume, mask)
    header = write_labels(labels, out_path)

    counts = np.bincount(labels.labels.ravel(), minlength=len(MATERIALS))
    logger.info(f"Segmented {input_path}: " + ", ".join(f"{MATERIALS[i]}={counts[i]}" for i in MATERIALS))
    return SegmentationResult(
        input=str(input_path),
        output=str(header),
        counts={MATERIALS[i]: int(counts[i]) for i in MATERIALS},
    ).model_dump()
