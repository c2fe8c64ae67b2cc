"""Seeded synthetic street scenes for desk-scale end-to-end runs.

Each scene is a vertical band layout on a small grid: sky on top, then
building, a sidewalk strip, and road at the bottom. References carry
near-ideal logits (large margin, small noise); queries carry the same
layout family with the margin collapsed and heavy noise added, emulating
a segmentation network struggling in bad conditions. Each query layout
also spawns a few jittered reference variants, so retrieval has genuinely
similar places to find, plus unrelated random references as distractors.

Descriptors are block-averaged layout one-hots with mild noise: scenes
with similar geometry land close in descriptor space regardless of the
logit corruption. All randomness flows from one seeded generator; two
runs with the same seed write byte-identical files.

Generation parameters live in ``data/synth_v1.json`` so the numbers the
test suite pins are versioned with the code.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .manifest import ClassSchema, DatasetManifest, ImageEntry, write_manifest
from .tensorio import (Descriptor, LabelGrid, LogitMap, write_descriptor,
                       write_label_grid, write_logit_map)

DEFAULT_SEED = 7


def load_params() -> dict:
    text = resources.files("roadfusion").joinpath("data/synth_v1.json").read_text()
    return json.loads(text)


def _sample_layout(rng: np.random.Generator, params: dict) -> tuple[float, float, float]:
    lo, hi = params["layout"]["sky_frac"]
    sky = rng.uniform(lo, hi)
    lo, hi = params["layout"]["road_top_frac"]
    road_top = rng.uniform(lo, hi)
    lo, hi = params["layout"]["sidewalk_frac"]
    sidewalk = rng.uniform(lo, hi)
    return sky, road_top, sidewalk


def _jitter_layout(rng: np.random.Generator, layout, params: dict):
    j = params["cluster_jitter_frac"]
    sky, road_top, sidewalk = layout
    return (sky + rng.uniform(-j, j),
            road_top + rng.uniform(-j, j),
            sidewalk + rng.uniform(-j / 2, j / 2))


def _layout_grid(layout, height: int, width: int) -> np.ndarray:
    """Class-id grid of the band layout. Classes: 0 road, 1 sidewalk,
    2 building, 3 sky."""
    sky, road_top, sidewalk = layout
    sky_rows = int(round(sky * height))
    road_row = int(round(road_top * height))
    walk_rows = max(1, int(round(sidewalk * height)))
    road_row = min(max(road_row, sky_rows + 2), height - 2)
    walk_top = max(sky_rows + 1, road_row - walk_rows)

    grid = np.full((height, width), 2, dtype=np.uint8)
    grid[:sky_rows, :] = 3
    grid[walk_top:road_row, :] = 1
    grid[road_row:, :] = 0
    return grid


def _ideal_logits(grid: np.ndarray, margin: float, num_classes: int) -> np.ndarray:
    # Signed margins (+m/2 winner, -m/2 losers) rather than one-hot: in
    # any region exactly one class has a positive logit, so per-class
    # rescaling during fusion cannot promote an absent class whose zero
    # logits would otherwise ride on noise.
    one_hot = np.eye(num_classes, dtype=np.float64)[grid]
    return (one_hot - 0.5) * margin


def _descriptor(grid: np.ndarray, params: dict, rng: np.random.Generator) -> np.ndarray:
    rows = params["descriptor"]["block_rows"]
    cols = params["descriptor"]["block_cols"]
    noise = params["descriptor"]["noise_sigma"]
    num_classes = len(params["classes"])
    height, width = grid.shape
    one_hot = np.eye(num_classes, dtype=np.float64)[grid]
    blocks = one_hot.reshape(rows, height // rows, cols, width // cols, num_classes)
    means = blocks.mean(axis=(1, 3)).reshape(-1)
    return (means + rng.normal(0.0, noise, size=means.size)).astype(np.float32)


def _labels(grid: np.ndarray, params: dict) -> np.ndarray:
    border = params["undefined_border_rows"]
    out = grid.copy()
    if border > 0:
        out[:border, :] = params["undefined_id"]
    return out


def generate(out_dir, seed: int = DEFAULT_SEED, params: dict | None = None) -> Path:
    """Write the synthetic suite under out_dir; returns the manifest path."""
    if params is None:
        params = load_params()
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    for sub in ("logits", "descriptors", "labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    height = params["grid"]["height"]
    width = params["grid"]["width"]
    classes = params["classes"]
    num_classes = len(classes)
    margin = params["logits"]["ideal_margin"]
    counts = params["counts"]

    # Draw every layout before any noise so the counts in the config can
    # change without silently reshuffling unrelated draws.
    query_layouts = [_sample_layout(rng, params) for _ in range(counts["queries"])]
    cluster_layouts = [
        [_jitter_layout(rng, q, params) for _ in range(counts["cluster_refs_per_query"])]
        for q in query_layouts
    ]
    random_layouts = [_sample_layout(rng, params) for _ in range(counts["random_refs"])]

    ref_layouts = [l for group in cluster_layouts for l in group] + random_layouts
    geo = params["geo"]
    entries = []

    def write_image(image_id: str, split: str, condition: str, grid: np.ndarray,
                    logits: np.ndarray, geotag: tuple[float, float]) -> None:
        logit_rel = f"logits/{image_id}.npy"
        desc_rel = f"descriptors/{image_id}.npy"
        label_rel = f"labels/{image_id}.npy"
        write_logit_map(LogitMap(values=logits.astype(np.float32)), out / logit_rel)
        write_descriptor(Descriptor(values=_descriptor(grid, params, rng)),
                         out / desc_rel)
        write_label_grid(LabelGrid(values=_labels(grid, params),
                                   undefined_id=params["undefined_id"]),
                         out / label_rel)
        entries.append(ImageEntry(image_id=image_id, split=split,
                                  logits_path=Path(logit_rel),
                                  descriptor_path=Path(desc_rel),
                                  label_path=Path(label_rel),
                                  condition=condition, geotag=geotag))

    ref_sigma = params["logits"]["reference_noise_sigma"]
    for i, layout in enumerate(ref_layouts):
        grid = _layout_grid(layout, height, width)
        ideal = _ideal_logits(grid, margin, num_classes)
        logits = ideal + rng.normal(0.0, ref_sigma, size=ideal.shape)
        geotag = (geo["ref_lat_deg"], i * geo["lon_spacing_deg"])
        write_image(f"ref-{i:03d}", "reference", "default", grid, logits, geotag)

    contrast = params["logits"]["query_contrast"]
    query_sigma = params["logits"]["query_noise_sigma"]
    conditions = params["conditions"]
    for i, layout in enumerate(query_layouts):
        grid = _layout_grid(layout, height, width)
        ideal = _ideal_logits(grid, margin, num_classes)
        logits = contrast * ideal + rng.normal(0.0, query_sigma, size=ideal.shape)
        geotag = (geo["query_lat_deg"], i * geo["lon_spacing_deg"])
        condition = conditions[i * len(conditions) // counts["queries"]]
        write_image(f"query-{i:03d}", "query", condition, grid, logits, geotag)

    schema = ClassSchema(names=tuple(classes), road_index=params["road_class"],
                         undefined_id=params["undefined_id"])
    manifest = DatasetManifest(schema=schema, images=tuple(entries), base_dir=out)
    manifest_path = out / "manifest.txt"
    write_manifest(manifest, manifest_path)
    return manifest_path
