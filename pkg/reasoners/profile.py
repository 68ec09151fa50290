"""Line profiles for plotting shading before and after correction."""

from pathlib import Path
from typing import Literal

from pydantic import BaseModel

from skills.evaluation import line_profile, write_profile_csv
from skills.volume import read_volume


class ProfileResult(BaseModel):
    input: str
    output: str
    axis: str
    index: int
    slice_index: int
    samples: int
    min: float
    max: float
    mean: float


def profile_volume(input_path: str | Path, out_path: str | Path, axis: Literal["x", "y"] = "x",
                   index: int | None = None, slice_index: int | None = None) -> dict:
    """
    Dump one line of a slice as (position, value) CSV. Index and slice default to the middle.

    python main.py profile corrected.vbf.json --axis x --index 64 --out profile.csv
    """
    volume = read_volume(input_path)
    nx, ny, nz = volume.dims
    if index is None:
        index = (ny if axis == "x" else nx) // 2
    if slice_index is None:
        slice_index = nz // 2

    values = line_profile(volume, axis, index, slice_index)
    out = write_profile_csv(values, out_path)
    return ProfileResult(
        input=str(input_path),
        output=str(out),
        axis=axis,
        index=index,
        slice_index=slice_index,
        samples=len(values),
        min=float(values.min()),
        max=float(values.max()),
        mean=float(values.mean()),
    ).model_dump()
