"""Interchange tensor formats: logit maps, descriptors and label grids.

All tensors travel as single-array NPY v1.0 files so that any inference
ecosystem can produce them without a bespoke codec:

* logits      float32, shape (H, W, N_c), C-order, pre-softmax scores
* descriptors float32, shape (D,)
* label grids uint8,   shape (H, W), with a reserved "undefined" id

Readers validate eagerly (shape, dtype, finiteness) and never
reinterpret shapes; writers are exact inverses of the readers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

DEFAULT_UNDEFINED_ID = 255


@dataclass(frozen=True)
class LogitMap:
    """Per-pixel, per-class pre-softmax scores for one image."""

    values: np.ndarray  # (H, W, N_c) float32

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise DataFormatError(f"logit map must have rank 3, got rank {v.ndim}")
        h, w, c = v.shape
        if h < 1 or w < 1:
            raise DataFormatError(f"logit map needs height, width >= 1, got {h}x{w}")
        if c < 2:
            raise DataFormatError(f"logit map needs at least 2 classes, got {c}")
        if not np.isfinite(v).all():
            raise DataFormatError("non-finite values in logit map")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def num_classes(self) -> int:
        return self.values.shape[2]

    def argmax(self) -> np.ndarray:
        """Per-pixel winning class; ties go to the lowest class index."""
        return self.values.argmax(axis=2).astype(np.uint8)


@dataclass(frozen=True)
class Descriptor:
    """Flat real vector representing one image for retrieval."""

    values: np.ndarray  # (D,) float32

    def __post_init__(self):
        v = self.values
        if v.ndim != 1:
            raise DataFormatError(f"descriptor must have rank 1, got rank {v.ndim}")
        if v.shape[0] < 1:
            raise DataFormatError("descriptor must not be empty")
        if not np.isfinite(v).all():
            raise DataFormatError("non-finite values in descriptor")

    @property
    def dims(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class LabelGrid:
    """Per-pixel ground-truth class ids with a reserved undefined id."""

    values: np.ndarray  # (H, W) uint8
    undefined_id: int = DEFAULT_UNDEFINED_ID

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DataFormatError(
                f"label grid must have rank 2, got rank {self.values.ndim}"
            )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _load_array(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"no such file: {path}")
    try:
        arr = np.load(path, allow_pickle=False)
    except ValueError as exc:
        raise DataFormatError(f"malformed tensor file {path}: {exc}") from exc
    return arr


def read_logit_map(path: str | Path) -> LogitMap:
    """Load a (H, W, N_c) float32 logit tensor, rejecting anything else."""
    arr = _load_array(path)
    if arr.ndim != 3:
        raise DataFormatError(f"{path}: logits must have rank 3, got rank {arr.ndim}")
    if arr.dtype != np.float32:
        raise DataFormatError(f"{path}: logits must be float32, got {arr.dtype}")
    if not np.isfinite(arr).all():
        raise DataFormatError(f"{path}: non-finite values in logit tensor")
    return LogitMap(values=arr)


def write_logit_map(logits: LogitMap, path: str | Path) -> None:
    """Persist so that ``read_logit_map`` inverts it bit-exactly."""
    arr = np.ascontiguousarray(logits.values, dtype=np.float32)
    _save_array(arr, path)


def read_descriptor(path: str | Path) -> Descriptor:
    """Load a (D,) float32 descriptor vector."""
    arr = _load_array(path)
    if arr.ndim != 1:
        raise DataFormatError(f"{path}: descriptor must have rank 1, got rank {arr.ndim}")
    if arr.dtype != np.float32:
        raise DataFormatError(f"{path}: descriptor must be float32, got {arr.dtype}")
    if not np.isfinite(arr).all():
        raise DataFormatError(f"{path}: non-finite values in descriptor")
    return Descriptor(values=arr)


def write_descriptor(desc: Descriptor, path: str | Path) -> None:
    _save_array(np.ascontiguousarray(desc.values, dtype=np.float32), path)


def read_label_grid(path: str | Path, num_classes: int,
                    undefined_id: int = DEFAULT_UNDEFINED_ID) -> LabelGrid:
    """Load a (H, W) uint8 label grid and validate ids against the schema.

    Every pixel must carry either a class id below ``num_classes`` or the
    reserved ``undefined_id``.
    """
    arr = _load_array(path)
    if arr.ndim != 2:
        raise DataFormatError(f"{path}: label grid must have rank 2, got rank {arr.ndim}")
    if arr.dtype != np.uint8:
        raise DataFormatError(f"{path}: label grid must be uint8, got {arr.dtype}")
    bad = (arr >= num_classes) & (arr != undefined_id)
    if bad.any():
        offender = int(arr[bad][0])
        raise DataFormatError(
            f"{path}: unknown class id {offender} under a {num_classes}-class schema "
            f"(undefined_id={undefined_id})"
        )
    return LabelGrid(values=arr, undefined_id=undefined_id)


def write_label_grid(grid: LabelGrid, path: str | Path) -> None:
    _save_array(np.ascontiguousarray(grid.values, dtype=np.uint8), path)


def _save_array(arr: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.save(fh, arr, allow_pickle=False)
