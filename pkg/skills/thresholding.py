"""
Histogram thresholding by exhaustive multilevel Otsu.

Thresholds are returned as bin-edge cuts: cut t separates bins [.., t-1] from
[t, ..], i.e. the intensity edge t / NUM_BINS. A value sitting exactly on an
edge falls into the higher class because its bin index equals the cut.
"""

from dataclasses import dataclass

import numpy as np

from skills.volume import LabelVolume, Mask, Volume, require_same_dims

NUM_BINS = 256
MIN_CLASSES, MAX_CLASSES = 2, 4


class DegenerateHistogramError(ValueError):
    """The histogram has fewer occupied bins than requested classes."""


@dataclass(frozen=True)
class Histogram:
    """NUM_BINS uniform counts over [0, 1]."""
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.counts))


def bin_index(values: np.ndarray) -> np.ndarray:
    """min(floor(v * 256), 255), with values below 0 sent to bin 0."""
    bins = np.floor(np.asarray(values, dtype=np.float64) * NUM_BINS)
    return np.clip(bins, 0, NUM_BINS - 1).astype(np.int64)


def build_histogram(values: np.ndarray) -> Histogram:
    return Histogram(np.bincount(bin_index(values).ravel(), minlength=NUM_BINS))


def _class_scores(h: Histogram) -> np.ndarray:
    """
    H[u, v] = S(u, v)^2 / P(u, v) for the class made of bins u..v-1, -inf when empty.

    Summing H over a threshold tuple gives the between-class variance up to a
    positive scale and a constant, so both share the same argmax.
    """
    counts = h.counts.astype(np.float64)
    P = np.concatenate(([0.0], np.cumsum(counts)))
    S = np.concatenate(([0.0], np.cumsum(np.arange(NUM_BINS) * counts)))
    weight = P[None, :] - P[:, None]
    total = S[None, :] - S[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        H = np.where(weight > 0, total ** 2 / weight, -np.inf)
    return H


def otsu_thresholds(h: Histogram, k: int) -> list[int]:
    """
    Exhaustive search for the k-1 cuts that maximize between-class variance.

    Every class must be non-empty. Ties resolve to the lexicographically
    lowest cut tuple.
    """
    if not MIN_CLASSES <= k <= MAX_CLASSES:
        raise ValueError(f"Otsu class count must be in [{MIN_CLASSES}, {MAX_CLASSES}], got {k}")
    if h.occupied < k:
        raise DegenerateHistogramError(
            f"Histogram has {h.occupied} occupied bins, cannot split into {k} classes"
        )

    H = _class_scores(h)
    last = NUM_BINS
    cuts = np.arange(1, NUM_BINS)

    if k == 2:
        scores = H[0, cuts] + H[cuts, last]
        return [int(cuts[np.argmax(scores)])]

    # Pairwise block for the two highest cuts: pair[a, b] = H[a, b] + H[b, last] for a < b
    upper = np.triu(np.ones((NUM_BINS + 1, NUM_BINS + 1), dtype=bool), k=1)
    pair = np.where(upper, H + H[:, last][None, :], -np.inf)
    pair = pair[1:NUM_BINS, 1:NUM_BINS]  # rows a, cols b, both in 1..255

    if k == 3:
        scores = H[0, cuts][:, None] + pair
        a, b = np.unravel_index(np.argmax(scores), scores.shape)
        return [int(cuts[a]), int(cuts[b])]

    best_score, best = -np.inf, None
    for t1 in cuts[:-2]:
        scores = H[t1, cuts][:, None] + pair
        scores[: t1, :] = -np.inf  # second cut must exceed the first
        flat = int(np.argmax(scores))
        score = H[0, t1] + scores.flat[flat]
        if score > best_score:
            a, b = np.unravel_index(flat, scores.shape)
            best_score, best = score, [int(t1), int(cuts[a]), int(cuts[b])]
    return best


def threshold_values(cuts: list[int]) -> list[float]:
    """Intensity of each bin-edge cut."""
    return [t / NUM_BINS for t in cuts]


def classify(values: np.ndarray, cuts: list[int]) -> np.ndarray:
    """Class index per value; a value on a cut goes to the higher class."""
    return np.searchsorted(np.asarray(cuts), bin_index(values), side="right")


def _masked_values(v: Volume, mask: Mask) -> np.ndarray:
    require_same_dims(v, mask)
    return v.data[mask.bits].astype(np.float64)


def init_centers(v: Volume, mask: Mask, clusters: int) -> np.ndarray:
    """Mean masked intensity of each Otsu class, ascending; empty classes fall back to the interval midpoint."""
    values = _masked_values(v, mask)
    cuts = otsu_thresholds(build_histogram(values), clusters)
    classes = classify(values, cuts)
    edges = [0.0] + threshold_values(cuts) + [1.0]

    centers = np.empty(clusters)
    for j in range(clusters):
        members = values[classes == j]
        centers[j] = members.mean() if members.size else 0.5 * (edges[j] + edges[j + 1])
    return centers


def segment(v: Volume, mask: Mask, k: int = 3) -> LabelVolume:
    """Hard labels by Otsu interval: lowest class air, then tissue, then bone. Background is air."""
    if k not in (2, 3):
        raise ValueError(f"Segmentation supports 2 or 3 classes, got {k}")
    require_same_dims(v, mask)
    labels = np.zeros(v.data.shape, dtype=np.uint8)
    if mask.count == 0:
        return LabelVolume(labels, v.spacing)

    values = _masked_values(v, mask)
    cuts = otsu_thresholds(build_histogram(values), k)
    labels[mask.bits] = classify(values, cuts)
    return LabelVolume(labels, v.spacing)
