"""Descriptor index and similar-place retrieval.

Retrieval is exact brute-force cosine distance over the reference split:
reference sets here are a few thousand images at most, so exactness is
cheap and the ranking contract stays trivially auditable. Parallelism
belongs at the per-query level, not inside the index.

Candidates are ranked by ascending cosine distance with ties broken by
lexicographic image id, which keeps every ablation reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NoEligibleReferencesError, SchemaMismatchError
from .manifest import DatasetManifest
from .tensorio import Descriptor, read_descriptor

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_EXCLUSION_RADIUS_M = 50.0


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two WGS84 points, in meters."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return EARTH_RADIUS_M * 2 * math.atan2(math.sqrt(a), math.sqrt(1 - a))


def cosine_distance(a: Descriptor, b: Descriptor) -> float:
    """1 - cos(a, b), in [0, 2]. Both vectors must be nonzero."""
    if a.dims != b.dims:
        raise SchemaMismatchError(f"descriptor dims mismatch: {a.dims} vs {b.dims}")
    av = a.values.astype(np.float64)
    bv = b.values.astype(np.float64)
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise SchemaMismatchError("cosine distance undefined for zero-norm descriptor")
    # rounding can push cos just past +/-1; keep the contract range [0, 2]
    return min(2.0, max(0.0, 1.0 - float(np.dot(av, bv)) / (na * nb)))


@dataclass(frozen=True)
class GeoExclusion:
    """Excludes references geographically too close to the query.

    When either side lacks a geotag the predicate degrades to the
    split-disjointness already guaranteed by the manifest; the residual
    "same place under another descriptor" case is a curation concern,
    not something the engine can decide.
    """

    query_geotag: Optional[tuple[float, float]] = None
    radius_m: float = DEFAULT_EXCLUSION_RADIUS_M

    def excludes(self, reference_geotag: Optional[tuple[float, float]]) -> bool:
        if self.query_geotag is None or reference_geotag is None:
            return False
        lat1, lon1 = self.query_geotag
        lat2, lon2 = reference_geotag
        return haversine_m(lat1, lon1, lat2, lon2) <= self.radius_m


@dataclass(frozen=True)
class RetrievalResult:
    """Reference ids ranked by ascending cosine distance to the query."""

    ranked: tuple[tuple[str, float], ...]  # (image id, cosine distance)

    @property
    def ids(self) -> list[str]:
        return [image_id for image_id, _ in self.ranked]

    def top(self, n: int) -> list[str]:
        return self.ids[:n]


class DescriptorIndex:
    """In-memory index of unit-normalized reference descriptors.

    Immutable after construction; concurrent retrieval is safe.
    """

    def __init__(self, ids: list[str], matrix: np.ndarray,
                 geotags: list[Optional[tuple[float, float]]]):
        self._ids = list(ids)
        self._matrix = matrix  # (n, dims) float64, rows unit-normalized
        self._geotags = list(geotags)

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def dims(self) -> int:
        return self._matrix.shape[1]

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @property
    def geotag_count(self) -> int:
        return sum(1 for g in self._geotags if g is not None)


def build_index(manifest: DatasetManifest) -> DescriptorIndex:
    """Index every reference-split descriptor, unit-normalizing on ingest."""
    references = manifest.references()
    if not references:
        raise SchemaMismatchError("reference split is empty; nothing to index")

    ids: list[str] = []
    rows: list[np.ndarray] = []
    geotags: list[Optional[tuple[float, float]]] = []
    dims: Optional[int] = None
    for entry in references:
        desc = read_descriptor(entry.descriptor_path)
        if dims is None:
            dims = desc.dims
        elif desc.dims != dims:
            raise SchemaMismatchError(
                f"descriptor dims mismatch: {entry.image_id} has {desc.dims}, "
                f"expected {dims}"
            )
        vec = desc.values.astype(np.float64)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise SchemaMismatchError(f"zero-norm descriptor for {entry.image_id}")
        ids.append(entry.image_id)
        rows.append(vec / norm)
        geotags.append(entry.geotag)

    return DescriptorIndex(ids=ids, matrix=np.vstack(rows), geotags=geotags)


def retrieve_similar(index: DescriptorIndex, query: Descriptor, m: int,
                     exclusion: GeoExclusion = GeoExclusion()) -> RetrievalResult:
    """Return the ``min(m, eligible)`` most similar reference images.

    Eligibility removes references whose geotag lies within the exclusion
    radius of the query geotag (when both geotags exist). An empty
    eligible set raises ``NoEligibleReferencesError`` so callers can
    widen the reference set rather than silently returning nothing.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if query.dims != index.dims:
        raise SchemaMismatchError(
            f"query descriptor has {query.dims} dims, index has {index.dims}"
        )
    qv = query.values.astype(np.float64)
    qnorm = float(np.linalg.norm(qv))
    if qnorm == 0.0:
        raise SchemaMismatchError("zero-norm query descriptor")
    qv /= qnorm

    # Multiply+reduce per row instead of a BLAS dot: identical descriptors
    # must yield bit-identical distances or the id tie-break cannot fire.
    distances = np.clip(1.0 - (index._matrix * qv).sum(axis=1), 0.0, 2.0)
    eligible = [
        (float(distances[i]), index._ids[i])
        for i in range(len(index))
        if not exclusion.excludes(index._geotags[i])
    ]
    if not eligible:
        raise NoEligibleReferencesError(
            "no eligible references: geographic exclusion removed every candidate"
        )
    eligible.sort(key=lambda pair: (pair[0], pair[1]))
    ranked = tuple((image_id, dist) for dist, image_id in eligible[:m])
    return RetrievalResult(ranked=ranked)
