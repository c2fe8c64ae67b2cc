"""Road-IoU metrics, per-frame reports, and dataset aggregation.

IoU for one class counts intersection and union pixels after dropping
pixels whose ground truth is the undefined id. Frames where the union is
empty (no road in truth or prediction) carry no signal for the class and
are reported with a no-road sentinel (None) instead of a number; means
skip them but their count is kept.

Aggregation groups frames by condition tag. The default mean is the
arithmetic mean of per-frame IoUs; a pixel-pooled mode (sum of
intersections over sum of unions) is available for comparison. The
cross-condition figure is the mean of the per-condition means.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import SchemaMismatchError
from .tensorio import DEFAULT_UNDEFINED_ID

METHOD_QUERY = "query"
METHOD_DATASET_AVG = "dataset_avg"
METHOD_PRIOR_ONLY = "prior_only"
METHOD_PRIOR_QUERY = "prior_query"
METHOD_GT_PRIOR = "gt_prior"

# gt_prior is opt-in: it needs labels for the retrieved references.
METHOD_ORDER = (METHOD_QUERY, METHOD_DATASET_AVG, METHOD_PRIOR_ONLY,
                METHOD_PRIOR_QUERY, METHOD_GT_PRIOR)
DEFAULT_METHODS = (METHOD_QUERY, METHOD_DATASET_AVG, METHOD_PRIOR_ONLY,
                   METHOD_PRIOR_QUERY)

POOLING_MODES = ("frame_mean", "pixel_pooled")

CSV_COLUMNS = ("id", "condition", "method", "iou", "delta", "retrieved_ids")


def iou_counts(pred: np.ndarray, gt: np.ndarray, target_class: int,
               undefined_id: int = DEFAULT_UNDEFINED_ID) -> tuple[int, int]:
    """(intersection, union) pixel counts for one class, skipping undefined."""
    if pred.shape != gt.shape:
        raise SchemaMismatchError(
            f"prediction shape {pred.shape} does not match ground truth {gt.shape}"
        )
    valid = gt != undefined_id
    p = (pred == target_class) & valid
    g = (gt == target_class) & valid
    return int(np.count_nonzero(p & g)), int(np.count_nonzero(p | g))


def class_iou(pred: np.ndarray, gt: np.ndarray, target_class: int,
              undefined_id: int = DEFAULT_UNDEFINED_ID) -> float | None:
    """Intersection over union for one class; None when the union is empty."""
    inter, union = iou_counts(pred, gt, target_class, undefined_id)
    if union == 0:
        return None
    return inter / union


@dataclass(frozen=True)
class FrameReport:
    """Per-method result for one query frame.

    ``iou[m]`` is None on a no-road frame; a method absent from the
    mapping was not run (or could not be, e.g. missing reference labels).
    ``areas`` keeps raw (intersection, union) counts for pixel pooling.
    """

    image_id: str
    condition: str
    iou: Mapping[str, float | None]
    areas: Mapping[str, tuple[int, int]]
    delta: float | None
    retrieved: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class DatasetReport:
    """Aggregated view over frames, grouped by condition tag."""

    frames: tuple[FrameReport, ...]
    methods: tuple[str, ...]
    conditions: tuple[str, ...]
    pooling: str
    mean_iou: Mapping[str, Mapping[str, float | None]]   # condition -> method -> mean
    frame_counts: Mapping[str, int]                      # condition -> frames
    defined_counts: Mapping[str, Mapping[str, int]]      # condition -> method -> frames in mean
    no_road_counts: Mapping[str, Mapping[str, int]]      # condition -> method -> sentinel frames
    all_average: Mapping[str, float | None]              # method -> mean of condition means


def _method_order(frames) -> tuple[str, ...]:
    seen = set()
    for frame in frames:
        seen.update(frame.iou.keys())
    known = [m for m in METHOD_ORDER if m in seen]
    extra = sorted(seen - set(METHOD_ORDER))
    return tuple(known + extra)


def aggregate(reports: list[FrameReport], pooling: str = "frame_mean") -> DatasetReport:
    """Group frames by condition and compute per-method means.

    Frames are sorted by (condition, id) first, so the result does not
    depend on input order.
    """
    if pooling not in POOLING_MODES:
        raise ValueError(f"unknown pooling mode {pooling!r}")
    frames = tuple(sorted(reports, key=lambda f: (f.condition, f.image_id)))
    methods = _method_order(frames)
    conditions = tuple(sorted({f.condition for f in frames}))

    mean_iou: dict[str, dict[str, float | None]] = {}
    frame_counts: dict[str, int] = {}
    defined_counts: dict[str, dict[str, int]] = {}
    no_road_counts: dict[str, dict[str, int]] = {}

    for cond in conditions:
        group = [f for f in frames if f.condition == cond]
        frame_counts[cond] = len(group)
        mean_iou[cond] = {}
        defined_counts[cond] = {}
        no_road_counts[cond] = {}
        for method in methods:
            values = [f.iou[method] for f in group if method in f.iou]
            defined = [v for v in values if v is not None]
            defined_counts[cond][method] = len(defined)
            no_road_counts[cond][method] = len(values) - len(defined)
            if pooling == "frame_mean":
                mean_iou[cond][method] = (
                    float(np.mean(defined)) if defined else None
                )
            else:
                inter = sum(f.areas[method][0] for f in group if method in f.areas)
                union = sum(f.areas[method][1] for f in group if method in f.areas)
                mean_iou[cond][method] = inter / union if union else None

    all_average: dict[str, float | None] = {}
    for method in methods:
        means = [mean_iou[c][method] for c in conditions
                 if mean_iou[c][method] is not None]
        all_average[method] = float(np.mean(means)) if means else None

    return DatasetReport(frames=frames, methods=methods, conditions=conditions,
                         pooling=pooling, mean_iou=mean_iou,
                         frame_counts=frame_counts, defined_counts=defined_counts,
                         no_road_counts=no_road_counts, all_average=all_average)


def _format_iou(value: float | None) -> str:
    return "no_road" if value is None else f"{value:.6f}"


def _format_retrieved(retrieved) -> str:
    return ";".join(f"{rid}:{dist:.9f}" for rid, dist in retrieved)


def write_frame_csv(frames, path) -> None:
    """One row per (frame, method); the frame's delta and retrieval list
    repeat on each of its rows."""
    ordered = sorted(frames, key=lambda f: (f.condition, f.image_id))
    methods = _method_order(ordered)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for frame in ordered:
            delta = "" if frame.delta is None else f"{frame.delta:.6f}"
            retrieved = _format_retrieved(frame.retrieved)
            for method in methods:
                if method not in frame.iou:
                    continue
                writer.writerow([frame.image_id, frame.condition, method,
                                 _format_iou(frame.iou[method]), delta, retrieved])


def render_summary(report: DatasetReport) -> str:
    """Fixed-width text table: conditions as rows, methods as columns."""
    label_w = max([len("condition"), len("all_average")]
                  + [len(c) for c in report.conditions])
    col_w = max(9, max((len(m) for m in report.methods), default=0))

    def cell(value: float | None) -> str:
        return ("-" if value is None else f"{value:.4f}").rjust(col_w)

    lines = []
    header = "condition".ljust(label_w) + "  frames" + "".join(
        "  " + m.rjust(col_w) for m in report.methods)
    lines.append(header)
    lines.append("-" * len(header))
    for cond in report.conditions:
        row = cond.ljust(label_w) + f"  {report.frame_counts[cond]:6d}"
        for method in report.methods:
            row += "  " + cell(report.mean_iou[cond][method])
        lines.append(row)
    total = sum(report.frame_counts.values())
    row = "all_average".ljust(label_w) + f"  {total:6d}"
    for method in report.methods:
        row += "  " + cell(report.all_average[method])
    lines.append(row)

    skipped = sum(sum(per.values()) for per in report.no_road_counts.values())
    lines.append(f"pooling: {report.pooling}; no-road frames skipped in means: {skipped}")
    return "\n".join(lines) + "\n"


def write_summary(report: DatasetReport, path) -> None:
    with open(path, "w") as handle:
        handle.write(render_summary(report))
