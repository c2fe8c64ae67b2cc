"""Dataset manifest: the single document that declares a run's inputs.

The manifest is a human-editable text file (grammar v1, documented in the
README). It names the class schema, and lists every image with its split
(``reference`` or ``query``), condition tag, tensor paths and optional
geotag. All invariants are validated at load time so that nothing fails
later inside retrieval or fusion.

Grammar sketch::

    format_version: 1
    classes: road, sidewalk, building, sky
    road_class: road
    undefined_id: 255            # optional, defaults to 255

    [image ref_000]
    split: reference
    condition: day
    logits: logits/ref_000.npy
    descriptor: descriptors/ref_000.npy
    labels: labels/ref_000.npy   # optional
    geotag: 47.3769 8.5417       # optional, "lat lon"

Relative paths are resolved against the manifest's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from .errors import ManifestError
from .tensorio import DEFAULT_UNDEFINED_ID

MANIFEST_FORMAT_VERSION = 1

SPLIT_REFERENCE = "reference"
SPLIT_QUERY = "query"

_HEADER_KEYS = {"format_version", "classes", "road_class", "undefined_id"}
_IMAGE_KEYS = {"split", "condition", "logits", "descriptor", "labels", "geotag"}


@dataclass(frozen=True)
class ClassSchema:
    """Ordered class names plus the index of the road class."""

    names: tuple[str, ...]
    road_index: int
    undefined_id: int = DEFAULT_UNDEFINED_ID

    def __post_init__(self):
        if len(self.names) < 2:
            raise ManifestError("class schema needs at least 2 classes")
        if len(set(self.names)) != len(self.names):
            raise ManifestError("class names must be unique")
        if not 0 <= self.road_index < len(self.names):
            raise ManifestError(f"road class index {self.road_index} out of range")
        if self.undefined_id < len(self.names):
            raise ManifestError(
                f"undefined_id {self.undefined_id} collides with class ids "
                f"0..{len(self.names) - 1}"
            )

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ManifestError(f"unknown class name: {name!r}") from None


@dataclass(frozen=True)
class ImageEntry:
    """One manifest row: an image's split, condition and tensor paths."""

    image_id: str
    split: str
    logits_path: Path
    descriptor_path: Path
    condition: str = "default"
    label_path: Optional[Path] = None
    geotag: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class DatasetManifest:
    schema: ClassSchema
    images: tuple[ImageEntry, ...]
    base_dir: Path
    format_version: int = MANIFEST_FORMAT_VERSION
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        seen: dict[str, ImageEntry] = {}
        for entry in self.images:
            if entry.image_id in seen:
                raise ManifestError(f"duplicate id {entry.image_id!r}")
            if entry.split not in (SPLIT_REFERENCE, SPLIT_QUERY):
                raise ManifestError(
                    f"image {entry.image_id!r}: split must be "
                    f"'{SPLIT_REFERENCE}' or '{SPLIT_QUERY}', got {entry.split!r}"
                )
            seen[entry.image_id] = entry
        self._by_id.update(seen)

    def references(self) -> list[ImageEntry]:
        return [e for e in self.images if e.split == SPLIT_REFERENCE]

    def queries(self) -> list[ImageEntry]:
        return [e for e in self.images if e.split == SPLIT_QUERY]

    def get(self, image_id: str) -> ImageEntry:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise ManifestError(f"no image with id {image_id!r}") from None

    def require_query_labels(self) -> None:
        """Raise unless every query image declares a label path."""
        missing = [e.image_id for e in self.queries() if e.label_path is None]
        if missing:
            raise ManifestError(
                f"evaluation requires labels for every query image; "
                f"missing for: {', '.join(missing)}"
            )


def _parse_geotag(raw: str, where: str) -> tuple[float, float]:
    parts = raw.replace(",", " ").split()
    if len(parts) != 2:
        raise ManifestError(f"{where}: geotag must be 'lat lon', got {raw!r}")
    try:
        lat, lon = float(parts[0]), float(parts[1])
    except ValueError:
        raise ManifestError(f"{where}: geotag values must be numbers, got {raw!r}") from None
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise ManifestError(f"{where}: geotag out of range: {raw!r}")
    return lat, lon


def _split_key_value(line: str, lineno: int) -> tuple[str, str]:
    if ":" not in line:
        raise ManifestError(f"line {lineno}: expected 'key: value', got {line!r}")
    key, _, value = line.partition(":")
    return key.strip(), value.strip()


def load_manifest(path: str | Path, strict: bool = False) -> DatasetManifest:
    """Parse and fully validate a manifest file.

    With ``strict`` every referenced tensor path must already exist on
    disk; without it, dangling paths only fail when actually read.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"no such manifest: {path}")
    base_dir = path.parent

    header: dict[str, str] = {}
    sections: list[tuple[str, dict[str, str], int]] = []
    current: Optional[dict[str, str]] = None

    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ManifestError(f"line {lineno}: unterminated section header {line!r}")
            inner = line[1:-1].strip()
            parts = inner.split()
            if len(parts) != 2 or parts[0] != "image":
                raise ManifestError(
                    f"line {lineno}: section must be '[image <id>]', got {line!r}"
                )
            current = {}
            sections.append((parts[1], current, lineno))
            continue
        key, value = _split_key_value(line, lineno)
        target = header if current is None else current
        allowed = _HEADER_KEYS if current is None else _IMAGE_KEYS
        if key not in allowed:
            raise ManifestError(f"line {lineno}: unknown key {key!r}")
        if key in target:
            raise ManifestError(f"line {lineno}: duplicate key {key!r}")
        target[key] = value

    for required in ("format_version", "classes", "road_class"):
        if required not in header:
            raise ManifestError(f"missing required header key {required!r}")
    try:
        version = int(header["format_version"])
    except ValueError:
        raise ManifestError(
            f"format_version must be an integer, got {header['format_version']!r}"
        ) from None
    if version != MANIFEST_FORMAT_VERSION:
        raise ManifestError(
            f"unsupported format_version {version} (expected {MANIFEST_FORMAT_VERSION})"
        )

    names = tuple(n.strip() for n in header["classes"].split(",") if n.strip())
    road_name = header["road_class"]
    if road_name not in names:
        raise ManifestError(f"road class {road_name!r} not present in schema")
    undefined_id = DEFAULT_UNDEFINED_ID
    if "undefined_id" in header:
        try:
            undefined_id = int(header["undefined_id"])
        except ValueError:
            raise ManifestError(
                f"undefined_id must be an integer, got {header['undefined_id']!r}"
            ) from None
    schema = ClassSchema(names=names, road_index=names.index(road_name),
                         undefined_id=undefined_id)

    images = []
    for image_id, body, lineno in sections:
        where = f"[image {image_id}]"
        for required in ("split", "logits", "descriptor"):
            if required not in body:
                raise ManifestError(f"{where}: missing required key {required!r}")
        geotag = _parse_geotag(body["geotag"], where) if "geotag" in body else None
        label_path = (base_dir / body["labels"]) if "labels" in body else None
        images.append(ImageEntry(
            image_id=image_id,
            split=body["split"],
            condition=body.get("condition", "default"),
            logits_path=base_dir / body["logits"],
            descriptor_path=base_dir / body["descriptor"],
            label_path=label_path,
            geotag=geotag,
        ))

    manifest = DatasetManifest(schema=schema, images=tuple(images),
                               base_dir=base_dir, format_version=version)
    if strict:
        _check_paths_exist(manifest)
    return manifest


def _check_paths_exist(manifest: DatasetManifest) -> None:
    missing = []
    for entry in manifest.images:
        for p in (entry.logits_path, entry.descriptor_path, entry.label_path):
            if p is not None and not p.is_file():
                missing.append(str(p))
    if missing:
        raise ManifestError("dangling paths: " + ", ".join(missing))


def _relpath(p: Path, base: Path) -> str:
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return p.as_posix()


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Emit a manifest in grammar v1; inverse of ``load_manifest``."""
    path = Path(path)
    base = path.parent
    schema = manifest.schema
    lines = [
        f"format_version: {manifest.format_version}",
        f"classes: {', '.join(schema.names)}",
        f"road_class: {schema.names[schema.road_index]}",
        f"undefined_id: {schema.undefined_id}",
    ]
    for entry in manifest.images:
        lines.append("")
        lines.append(f"[image {entry.image_id}]")
        lines.append(f"split: {entry.split}")
        lines.append(f"condition: {entry.condition}")
        lines.append(f"logits: {_relpath(entry.logits_path, base)}")
        lines.append(f"descriptor: {_relpath(entry.descriptor_path, base)}")
        if entry.label_path is not None:
            lines.append(f"labels: {_relpath(entry.label_path, base)}")
        if entry.geotag is not None:
            lat, lon = entry.geotag
            lines.append(f"geotag: {lat:.6f} {lon:.6f}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
