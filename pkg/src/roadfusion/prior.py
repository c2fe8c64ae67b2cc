"""Template priors and the class statistics that feed the fusion step.

A template is the per-cell mean of the logit maps retrieved for a query.
From logit maps we also derive, per class:

* sigma   -- sample standard deviation of a class's logit values over the
             pixels where that class wins the argmax,
* coverage -- the fraction of pixels each class wins.

Classes that never win anywhere have no defined sigma; fusion still needs
a finite value for them, so the estimate falls back to the spread of the
whole channel and, failing that, to a global floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaMismatchError
from .tensorio import LogitMap

# Keeps every precision term finite; applied to all sigma estimates.
SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class TemplatePrior:
    """Mean logits of the retrieved reference maps, plus their ids."""

    mean_logits: LogitMap
    source_ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.source_ids) < 1:
            raise ValueError("template needs at least one source map")
        if len(set(self.source_ids)) != len(self.source_ids):
            raise ValueError("template source ids must be distinct")

    @property
    def k(self) -> int:
        return len(self.source_ids)


@dataclass(frozen=True)
class ClassStats:
    """Per-class sigma estimates and the pixel counts behind them."""

    sigma: np.ndarray    # (N_c,) float64, every entry >= SIGMA_FLOOR
    support: np.ndarray  # (N_c,) int64, argmax-pixel count per class


@dataclass(frozen=True)
class CoverageVector:
    """Fraction of pixels won by each class; sums to 1."""

    coverage: np.ndarray  # (N_c,) float64

    def __post_init__(self):
        total = float(self.coverage.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"coverage must sum to 1, got {total}")


def resize_bilinear(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a (H, W, C) tensor, channel by channel.

    Uses half-pixel sample centers with edge replication, the common
    image-resize convention.
    """
    in_h, in_w = values.shape[0], values.shape[1]
    if (in_h, in_w) == (out_h, out_w):
        return np.array(values, dtype=np.float32, copy=True)
    src_y = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    src_x = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = src_y - y0
    fx = src_x - x0
    y0c = np.clip(y0, 0, in_h - 1)
    y1c = np.clip(y0 + 1, 0, in_h - 1)
    x0c = np.clip(x0, 0, in_w - 1)
    x1c = np.clip(x0 + 1, 0, in_w - 1)

    v = values.astype(np.float64)
    wx = fx[None, :, None]
    top = v[y0c][:, x0c] * (1.0 - wx) + v[y0c][:, x1c] * wx
    bottom = v[y1c][:, x0c] * (1.0 - wx) + v[y1c][:, x1c] * wx
    wy = fy[:, None, None]
    out = top * (1.0 - wy) + bottom * wy
    return out.astype(np.float32)


def build_template(maps: list[LogitMap], target_h: int, target_w: int,
                   source_ids: list[str] | None = None) -> TemplatePrior:
    """Average the given logit maps into a prior at the target resolution.

    Maps at other resolutions are bilinearly resampled per class channel
    before the per-cell arithmetic mean.
    """
    if not maps:
        raise ValueError("cannot build a template from zero maps")
    num_classes = maps[0].num_classes
    for m in maps[1:]:
        if m.num_classes != num_classes:
            raise SchemaMismatchError(
                f"class count mismatch across template sources: "
                f"{m.num_classes} vs {num_classes}"
            )
    if source_ids is None:
        source_ids = [f"source-{i}" for i in range(len(maps))]
    if len(source_ids) != len(maps):
        raise ValueError("source_ids must match maps one-to-one")

    acc = np.zeros((target_h, target_w, num_classes), dtype=np.float64)
    for m in maps:
        acc += resize_bilinear(m.values, target_h, target_w).astype(np.float64)
    mean = (acc / len(maps)).astype(np.float32)
    return TemplatePrior(mean_logits=LogitMap(values=mean),
                         source_ids=tuple(source_ids))


def class_std(logits: LogitMap, sigma_floor: float = SIGMA_FLOOR) -> ClassStats:
    """Per-class sample standard deviation over each class's argmax pixels.

    For class n the estimate uses the logit values x[:, :, n] restricted
    to pixels where n wins the argmax (sample std, divisor N-1). Classes
    with fewer than 2 such pixels fall back to the std of the whole
    channel; degenerate estimates are raised to ``sigma_floor``.
    """
    num_classes = logits.num_classes
    flat = logits.values.reshape(-1, num_classes).astype(np.float64)
    winners = flat.argmax(axis=1)
    total_pixels = flat.shape[0]

    sigma = np.empty(num_classes, dtype=np.float64)
    support = np.zeros(num_classes, dtype=np.int64)
    for n in range(num_classes):
        values = flat[winners == n, n]
        support[n] = values.size
        if values.size >= 2:
            s = float(values.std(ddof=1))
        elif total_pixels >= 2:
            s = float(flat[:, n].std(ddof=1))
        else:
            s = 0.0
        sigma[n] = max(s, sigma_floor)
    return ClassStats(sigma=sigma, support=support)


def class_coverage(logits: LogitMap) -> CoverageVector:
    """Fraction of pixels where each class has the highest logit."""
    winners = logits.values.argmax(axis=2).ravel()
    counts = np.bincount(winners, minlength=logits.num_classes)
    return CoverageVector(coverage=counts.astype(np.float64) / winners.size)


def coverage_over_set(maps: list[LogitMap]) -> CoverageVector:
    """Mean of the per-image coverage vectors of a set of maps.

    Averaging per-image vectors (rather than pooling pixels) keeps the
    result well-defined when resolutions differ across the set.
    """
    if not maps:
        raise ValueError("cannot compute coverage over zero maps")
    num_classes = maps[0].num_classes
    acc = np.zeros(num_classes, dtype=np.float64)
    for m in maps:
        if m.num_classes != num_classes:
            raise SchemaMismatchError("class count mismatch across coverage set")
        acc += class_coverage(m).coverage
    return CoverageVector(coverage=acc / len(maps))
