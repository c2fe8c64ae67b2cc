"""Batch engine: runs the fusion pipeline over every query in a manifest.

Per query frame the engine retrieves the closest geographically distinct
references, averages the top-k into a template prior, derives class
statistics and coverage vectors, and fuses. Methods evaluated side by
side:

* ``query``        -- the uncorrected query prediction,
* ``dataset_avg``  -- argmax of the mean over the whole reference set,
* ``prior_only``   -- argmax of the retrieved template,
* ``prior_query``  -- the fused posterior prediction,
* ``gt_prior``     -- fusion with a template built from reference label
                      grids turned into pseudo logits (needs labels for
                      the top-k references; skipped per frame otherwise).

All shared state (descriptor index, reference map cache, dataset-average
templates) is immutable or lock-guarded, so frames can run on a thread
pool; results are collected in manifest order, which keeps outputs
byte-identical for any worker count.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, NoEligibleReferencesError, RoadFusionError
from .evaluation import (DEFAULT_METHODS, METHOD_DATASET_AVG, METHOD_GT_PRIOR,
                         METHOD_PRIOR_ONLY, METHOD_PRIOR_QUERY, METHOD_QUERY,
                         FrameReport, aggregate, class_iou, iou_counts)
from .fusion import (FusedResult, FusionConfig, dataset_avg_prior, fuse,
                     gt_to_pseudologits, prior_only_predict)
from .manifest import DatasetManifest, ImageEntry
from .prior import (TemplatePrior, build_template, class_coverage,
                    class_std, coverage_over_set)
from .retrieval import (DEFAULT_EXCLUSION_RADIUS_M, DescriptorIndex, GeoExclusion,
                        build_index, retrieve_similar)
from .tensorio import (LabelGrid, LogitMap, read_descriptor, read_label_grid,
                       read_logit_map, write_label_grid, write_logit_map)

log = logging.getLogger("roadfusion")

COVERAGE_SOURCES = ("reference_mean", "template_argmax")

_RETRIEVAL_METHODS = {METHOD_PRIOR_ONLY, METHOD_PRIOR_QUERY, METHOD_GT_PRIOR}


@dataclass(frozen=True)
class EngineConfig:
    """Run-level settings on top of the per-frame fusion config.

    The fusion config's road_class doubles as the evaluation target
    class, so the sky experiment needs only one flag.
    """

    fusion: FusionConfig
    methods: tuple[str, ...] = DEFAULT_METHODS
    exclusion_radius_m: float = DEFAULT_EXCLUSION_RADIUS_M
    coverage_source: str = "reference_mean"
    pooling: str = "frame_mean"

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("method set must be nonempty")
        if self.coverage_source not in COVERAGE_SOURCES:
            raise ConfigError(f"unknown coverage source {self.coverage_source!r}")
        if self.exclusion_radius_m < 0:
            raise ConfigError("exclusion radius must be non-negative")


@dataclass(frozen=True)
class FrameFailure:
    image_id: str
    message: str


class RunContext:
    """Immutable manifest/index plus lock-guarded lazy caches."""

    def __init__(self, manifest: DatasetManifest, config: EngineConfig):
        self.manifest = manifest
        self.config = config
        self.index: DescriptorIndex = build_index(manifest)
        self._lock = threading.Lock()
        self._ref_maps: dict[str, LogitMap] = {}
        self._ref_labels: dict[str, LabelGrid | None] = {}
        self._avg_templates: dict[tuple[int, int], TemplatePrior] = {}
        self._confidences: np.ndarray | None = None

    def reference_map(self, image_id: str) -> LogitMap:
        with self._lock:
            cached = self._ref_maps.get(image_id)
        if cached is not None:
            return cached
        entry = self.manifest.get(image_id)
        loaded = read_logit_map(entry.logits_path)
        if loaded.num_classes != self.manifest.schema.num_classes:
            raise DataFormatError(
                f"{image_id}: logit map has {loaded.num_classes} classes, "
                f"schema has {self.manifest.schema.num_classes}"
            )
        with self._lock:
            self._ref_maps.setdefault(image_id, loaded)
        return loaded

    def reference_labels(self, image_id: str) -> LabelGrid | None:
        with self._lock:
            if image_id in self._ref_labels:
                return self._ref_labels[image_id]
        entry = self.manifest.get(image_id)
        grid = None
        if entry.label_path is not None:
            grid = read_label_grid(entry.label_path,
                                   self.manifest.schema.num_classes,
                                   self.manifest.schema.undefined_id)
        with self._lock:
            self._ref_labels.setdefault(image_id, grid)
        return grid

    def dataset_avg_template(self, height: int, width: int) -> TemplatePrior:
        key = (height, width)
        with self._lock:
            cached = self._avg_templates.get(key)
            if cached is not None:
                return cached
            refs = self.manifest.references()
            maps = [self.reference_map_unlocked(e.image_id) for e in refs]
            template = dataset_avg_prior(maps, height, width,
                                         [e.image_id for e in refs])
            self._avg_templates[key] = template
            return template

    def reference_map_unlocked(self, image_id: str) -> LogitMap:
        # Only for use while holding self._lock; avoids re-entrancy.
        cached = self._ref_maps.get(image_id)
        if cached is not None:
            return cached
        entry = self.manifest.get(image_id)
        loaded = read_logit_map(entry.logits_path)
        self._ref_maps[image_id] = loaded
        return loaded

    def class_confidences(self) -> np.ndarray:
        """Mean winning-class softmax probability per class, pooled over
        all reference maps; feeds pseudo-logit construction."""
        with self._lock:
            if self._confidences is not None:
                return self._confidences
            num_classes = self.manifest.schema.num_classes
            sums = np.zeros(num_classes, dtype=np.float64)
            counts = np.zeros(num_classes, dtype=np.int64)
            for entry in self.manifest.references():
                flat = self.reference_map_unlocked(entry.image_id).values
                flat = flat.reshape(-1, num_classes).astype(np.float64)
                shifted = flat - flat.max(axis=1, keepdims=True)
                expd = np.exp(shifted)
                probs = expd / expd.sum(axis=1, keepdims=True)
                winners = flat.argmax(axis=1)
                best = probs[np.arange(flat.shape[0]), winners]
                sums += np.bincount(winners, weights=best, minlength=num_classes)
                counts += np.bincount(winners, minlength=num_classes)
            conf = np.where(counts > 0, sums / np.maximum(counts, 1), 0.5)
            self._confidences = np.clip(conf, 1e-3, 1.0 - 1e-3)
            return self._confidences


@dataclass(frozen=True)
class FrameOutput:
    """Everything one frame produces; report is None for fuse-only runs."""

    image_id: str
    report: FrameReport | None
    fused: FusedResult | None
    retrieved: tuple[tuple[str, float], ...] = ()


def _retrieve_for_entry(ctx: RunContext, entry: ImageEntry, m: int):
    desc = read_descriptor(entry.descriptor_path)
    exclusion = GeoExclusion(query_geotag=entry.geotag,
                             radius_m=ctx.config.exclusion_radius_m)
    return retrieve_similar(ctx.index, desc, m, exclusion)


def _gt_template(ctx: RunContext, top_k_ids, height, width) -> TemplatePrior | None:
    grids = []
    for rid in top_k_ids:
        grid = ctx.reference_labels(rid)
        if grid is None:
            return None
        grids.append(grid)
    conf = ctx.class_confidences()
    maps = [gt_to_pseudologits(g, conf) for g in grids]
    return build_template(maps, height, width, list(top_k_ids))


def process_frame(ctx: RunContext, entry: ImageEntry,
                  need_metrics: bool = True,
                  ranked: tuple[tuple[str, float], ...] | None = None,
                  fusion_override: FusionConfig | None = None) -> FrameOutput:
    """Run the requested methods for one query frame.

    ``ranked`` lets sweep runs reuse one retrieval pass; it must hold at
    least ell entries (or every eligible reference). ``fusion_override``
    swaps the fusion config without touching the shared context.
    """
    cfg = ctx.config
    fcfg = fusion_override if fusion_override is not None else cfg.fusion
    query = read_logit_map(entry.logits_path)
    if query.num_classes != ctx.manifest.schema.num_classes:
        raise DataFormatError(
            f"{entry.image_id}: logit map has {query.num_classes} classes, "
            f"schema has {ctx.manifest.schema.num_classes}"
        )
    height, width = query.height, query.width
    query_pred = query.argmax()

    wants_retrieval = bool(_RETRIEVAL_METHODS & set(cfg.methods))
    template = None
    fused = None
    retrieved: tuple[tuple[str, float], ...] = ()
    predictions: dict[str, np.ndarray] = {}

    if METHOD_QUERY in cfg.methods:
        predictions[METHOD_QUERY] = query_pred
    if METHOD_DATASET_AVG in cfg.methods:
        predictions[METHOD_DATASET_AVG] = prior_only_predict(
            ctx.dataset_avg_template(height, width))

    if wants_retrieval:
        if ranked is None:
            result = _retrieve_for_entry(ctx, entry, fcfg.ell)
            ranked = result.ranked
        retrieved = tuple(ranked[:fcfg.ell])
        if len(retrieved) < fcfg.k:
            raise NoEligibleReferencesError(
                f"{entry.image_id}: only {len(retrieved)} eligible references, "
                f"need k={fcfg.k}"
            )
        top_k_ids = [rid for rid, _ in retrieved[:fcfg.k]]
        top_k_maps = [ctx.reference_map(rid) for rid in top_k_ids]
        ell_maps = [ctx.reference_map(rid) for rid, _ in retrieved]
        template = build_template(top_k_maps, height, width, top_k_ids)

        c_q = class_coverage(query)
        if cfg.coverage_source == "reference_mean":
            c_k = coverage_over_set(top_k_maps)
        else:
            c_k = class_coverage(template.mean_logits)
        c_ell = coverage_over_set(ell_maps)
        stats_q = class_std(query)

        if METHOD_PRIOR_ONLY in cfg.methods:
            predictions[METHOD_PRIOR_ONLY] = prior_only_predict(template)
        if METHOD_PRIOR_QUERY in cfg.methods:
            fused = fuse(query, template, stats_q, class_std(template.mean_logits),
                         c_q, c_k, c_ell, fcfg)
            predictions[METHOD_PRIOR_QUERY] = fused.prediction
        if METHOD_GT_PRIOR in cfg.methods:
            gt_template = _gt_template(ctx, top_k_ids, height, width)
            if gt_template is not None:
                gt_fused = fuse(query, gt_template, stats_q,
                                class_std(gt_template.mean_logits),
                                c_q, c_k, c_ell, fcfg)
                predictions[METHOD_GT_PRIOR] = gt_fused.prediction
            else:
                log.info("%s: gt_prior skipped, reference labels missing",
                         entry.image_id)

    report = None
    if need_metrics:
        if entry.label_path is None:
            raise DataFormatError(f"{entry.image_id}: evaluation needs query labels")
        gt = read_label_grid(entry.label_path, ctx.manifest.schema.num_classes,
                             ctx.manifest.schema.undefined_id)
        if gt.values.shape != query_pred.shape:
            raise DataFormatError(
                f"{entry.image_id}: label grid shape {gt.values.shape} does not "
                f"match logits {query_pred.shape}"
            )
        iou = {}
        areas = {}
        for method, pred in predictions.items():
            iou[method] = class_iou(pred, gt.values, fcfg.road_class, gt.undefined_id)
            areas[method] = iou_counts(pred, gt.values, fcfg.road_class,
                                       gt.undefined_id)
        delta = None
        pq = iou.get(METHOD_PRIOR_QUERY)
        base = iou.get(METHOD_QUERY)
        if pq is not None and base is not None:
            delta = pq - base
        report = FrameReport(image_id=entry.image_id, condition=entry.condition,
                             iou=iou, areas=areas, delta=delta, retrieved=retrieved)

    return FrameOutput(image_id=entry.image_id, report=report, fused=fused,
                       retrieved=retrieved)


def _run_frames(ctx: RunContext, entries, worker, workers: int):
    """Apply ``worker`` to entries, in manifest order, catching per-frame
    domain errors so one bad frame does not kill the batch."""

    def guarded(entry):
        try:
            return worker(entry)
        except RoadFusionError as exc:
            log.error("%s: %s", entry.image_id, exc)
            return FrameFailure(image_id=entry.image_id, message=str(exc))

    if workers <= 1:
        return [guarded(e) for e in entries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(guarded, entries))


def run_eval(ctx: RunContext, workers: int = 1):
    """Evaluate every query frame; returns (DatasetReport, failures)."""
    entries = ctx.manifest.queries()
    if not entries:
        raise DataFormatError("manifest has no query images")
    outputs = _run_frames(ctx, entries,
                          lambda e: process_frame(ctx, e, need_metrics=True),
                          workers)
    failures = [o for o in outputs if isinstance(o, FrameFailure)]
    reports = [o.report for o in outputs if isinstance(o, FrameOutput)]
    return aggregate(reports, ctx.config.pooling), failures


def run_fuse(ctx: RunContext, out_dir, workers: int = 1):
    """Fuse every query frame and persist the results.

    Per query id the output directory receives ``<id>.fused.npy`` (logit
    map), ``<id>.pred.npy`` (label grid), ``<id>.mask.npy`` (candidate
    mask as u8), and ``<id>.stats.json`` (per-class omega and posterior
    sigma). Returns (fused ids, failures).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = ctx.manifest.queries()
    if not entries:
        raise DataFormatError("manifest has no query images")
    if METHOD_PRIOR_QUERY not in ctx.config.methods:
        raise ConfigError("fuse runs require the prior_query method")

    def worker(entry):
        output = process_frame(ctx, entry, need_metrics=False)
        fused = output.fused
        write_logit_map(fused.fused_logits, out / f"{entry.image_id}.fused.npy")
        write_label_grid(LabelGrid(values=fused.prediction,
                                   undefined_id=ctx.manifest.schema.undefined_id),
                         out / f"{entry.image_id}.pred.npy")
        np.save(out / f"{entry.image_id}.mask.npy",
                fused.candidate_mask.astype(np.uint8), allow_pickle=False)
        stats = {
            "omega": [float(v) for v in fused.omega],
            "posterior_sigma": [float(v) for v in fused.posterior_sigma],
            "retrieved": [[rid, float(d)] for rid, d in output.retrieved],
        }
        with open(out / f"{entry.image_id}.stats.json", "w") as handle:
            json.dump(stats, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return output

    outputs = _run_frames(ctx, entries, worker, workers)
    failures = [o for o in outputs if isinstance(o, FrameFailure)]
    done = [o.image_id for o in outputs if isinstance(o, FrameOutput)]
    return done, failures


def sweep_ell(ctx: RunContext, ell_values, workers: int = 1):
    """Evaluate the full suite once per ell; retrieval runs once per query.

    Returns (rows, failures) where rows are (ell, all-average IoU of the
    fused method) tuples in input order.
    """
    fcfg = ctx.config.fusion
    for ell in ell_values:
        if ell <= fcfg.k:
            raise ConfigError(f"sweep ell={ell} must exceed k={fcfg.k}")
    entries = ctx.manifest.queries()
    if not entries:
        raise DataFormatError("manifest has no query images")
    max_ell = max(ell_values)

    def retrieval_worker(entry):
        result = _retrieve_for_entry(ctx, entry, max_ell)
        return FrameOutput(image_id=entry.image_id, report=None, fused=None,
                           retrieved=result.ranked)

    prefetched = _run_frames(ctx, entries, retrieval_worker, workers)
    ranked_by_id = {o.image_id: o.retrieved for o in prefetched
                    if isinstance(o, FrameOutput)}
    failures = [o for o in prefetched if isinstance(o, FrameFailure)]
    bad_ids = {f.image_id for f in failures}

    good_entries = [e for e in entries if e.image_id not in bad_ids]
    rows = []
    for ell in ell_values:
        sub_fusion = replace(fcfg, ell=ell)

        def worker(entry):
            return process_frame(ctx, entry, need_metrics=True,
                                 ranked=ranked_by_id[entry.image_id],
                                 fusion_override=sub_fusion)

        outputs = _run_frames(ctx, good_entries, worker, workers)
        failures.extend(o for o in outputs if isinstance(o, FrameFailure))
        reports = [o.report for o in outputs if isinstance(o, FrameOutput)]
        report = aggregate(reports, ctx.config.pooling)
        rows.append((ell, report.all_average.get(METHOD_PRIOR_QUERY)))
    return rows, failures
