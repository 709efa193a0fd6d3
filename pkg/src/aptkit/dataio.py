"""File formats: JSONL annotations, category lists, binary embedding stores.

The embedding container is bit-exact by construction:

    bytes 0-3   ASCII "APTE"
    uint32 LE   format version (currently 1)
    uint32 LE   vector dimension d
    uint32 LE   record count
    records     uint16 LE key byte-length, UTF-8 key bytes, d float32 LE

Annotation files hold one JSON object per line::

    {"image_id": ..., "width": ..., "height": ...,
     "elements": [{"bbox": [x1,y1,x2,y2], "category": ...}, ...],
     "ocr": [{"bbox": [...], "text": ...}, ...]}

Elements may additionally carry "description" and "ocr_indices" once OCR
linking has run. Category files are UTF-8 lines "name,base" or "name,novel".
"""

from __future__ import annotations

import json
import struct
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingKeyError, ParseError
from .geometry import Box, ElementAnnotation, OcrItem, link_ocr

MAGIC = b"APTE"
FORMAT_VERSION = 1

EMPTY_WORD_KEY = ""


# ---------------------------------------------------------------------------
# keys
# ---------------------------------------------------------------------------

def normalize_ocr_text(text: str) -> str:
    """NFC-normalize and trim an OCR string so writer and reader agree."""
    return unicodedata.normalize("NFC", text).strip()


def ocr_key(text: str) -> str:
    """Store key for an OCR string; empty text maps to the reserved key."""
    norm = normalize_ocr_text(text)
    return EMPTY_WORD_KEY if norm == "" else f"ocr:{norm}"


def prompt_key(category: str) -> str:
    return f"prompt:{category}"


def vision_key(image_id: str, element_index: int) -> str:
    return f"img:{image_id}:{element_index}"


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

@dataclass
class ScreenAnnotation:
    """All annotations for one screenshot."""

    image_id: str
    width: int
    height: int
    elements: list[ElementAnnotation]
    ocr: list[OcrItem]


def _parse_box(raw, *, path, line, what) -> Box:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ParseError(f"{what}: bbox must be [x1,y1,x2,y2]", path=path, line=line)
    try:
        return Box(*(float(v) for v in raw))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what}: {exc}", path=path, line=line) from None


def _check_in_bounds(box: Box, width, height, *, path, line, what):
    if box.x1 < 0 or box.y1 < 0 or box.x2 > width or box.y2 > height:
        raise ParseError(
            f"{what}: box {box.as_tuple()} outside image bounds {width}x{height}",
            path=path,
            line=line,
        )


def parse_annotation_line(text: str, *, path=None, line=None) -> ScreenAnnotation:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=line) from None
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", path=path, line=line)

    for fname in ("image_id", "width", "height", "elements", "ocr"):
        if fname not in obj:
            raise ParseError(f"missing field {fname!r}", path=path, line=line)
    image_id = obj["image_id"]
    if not isinstance(image_id, str) or not image_id:
        raise ParseError("image_id: must be a non-empty string", path=path, line=line)
    width, height = obj["width"], obj["height"]
    for fname, v in (("width", width), ("height", height)):
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise ParseError(f"{fname}: must be a positive integer", path=path, line=line)

    elements = []
    for i, raw in enumerate(obj["elements"]):
        what = f"elements[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{what}: must be an object", path=path, line=line)
        box = _parse_box(raw.get("bbox"), path=path, line=line, what=what)
        _check_in_bounds(box, width, height, path=path, line=line, what=what)
        category = raw.get("category")
        if not isinstance(category, str) or not category:
            raise ParseError(f"{what}: category must be a non-empty string", path=path, line=line)
        description = raw.get("description")
        if description is not None and not isinstance(description, str):
            raise ParseError(f"{what}: description must be a string", path=path, line=line)
        ocr_indices = raw.get("ocr_indices")
        if ocr_indices is not None:
            if not isinstance(ocr_indices, list) or not all(
                isinstance(k, int) and not isinstance(k, bool) for k in ocr_indices
            ):
                raise ParseError(f"{what}: ocr_indices must be a list of integers", path=path, line=line)
            ocr_indices = tuple(ocr_indices)
        elements.append(
            ElementAnnotation(
                box=box,
                category=category,
                index=i,
                description=description,
                ocr_indices=ocr_indices,
            )
        )

    ocr_items = []
    for i, raw in enumerate(obj["ocr"]):
        what = f"ocr[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{what}: must be an object", path=path, line=line)
        box = _parse_box(raw.get("bbox"), path=path, line=line, what=what)
        _check_in_bounds(box, width, height, path=path, line=line, what=what)
        text_val = raw.get("text")
        if not isinstance(text_val, str):
            raise ParseError(f"{what}: text must be a string", path=path, line=line)
        ocr_items.append(OcrItem(box=box, text=text_val, index=i))

    return ScreenAnnotation(
        image_id=image_id, width=width, height=height, elements=elements, ocr=ocr_items
    )


def parse_annotations(path) -> list[ScreenAnnotation]:
    """Parse a JSONL annotation file, one ScreenAnnotation per non-empty line."""
    path = Path(path)
    annotations = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            ann = parse_annotation_line(text, path=str(path), line=lineno)
            if ann.image_id in seen_ids:
                raise ParseError(
                    f"duplicate image_id {ann.image_id!r}", path=str(path), line=lineno
                )
            seen_ids.add(ann.image_id)
            annotations.append(ann)
    return annotations


def annotation_to_dict(ann: ScreenAnnotation) -> dict:
    elements = []
    for e in ann.elements:
        rec: dict = {"bbox": list(e.box.as_tuple()), "category": e.category}
        if e.description is not None:
            rec["description"] = e.description
        if e.ocr_indices is not None:
            rec["ocr_indices"] = list(e.ocr_indices)
        elements.append(rec)
    ocr = [{"bbox": list(o.box.as_tuple()), "text": o.text} for o in ann.ocr]
    return {
        "image_id": ann.image_id,
        "width": ann.width,
        "height": ann.height,
        "elements": elements,
        "ocr": ocr,
    }


def serialize_annotations(annotations: list[ScreenAnnotation], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(json.dumps(annotation_to_dict(ann), ensure_ascii=False))
            fh.write("\n")


# ---------------------------------------------------------------------------
# categories
# ---------------------------------------------------------------------------

@dataclass
class CategorySet:
    """Ordered categories, each tagged base or novel."""

    names: list[str]
    splits: list[str]

    def __post_init__(self):
        if len(self.names) != len(set(self.names)):
            raise ValueError("category names must be unique")
        if len(self.names) != len(self.splits):
            raise ValueError("names and splits must align")
        for s in self.splits:
            if s not in ("base", "novel"):
                raise ValueError(f"split must be 'base' or 'novel', got {s!r}")
        if "base" not in self.splits:
            raise ValueError("at least one base category is required")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def indices_for_split(self, split: str) -> list[int]:
        """Category indices in a split; 'all' keeps the full ordered set."""
        if split == "all":
            return list(range(len(self.names)))
        if split not in ("base", "novel"):
            raise ValueError(f"unknown split {split!r}")
        return [i for i, s in enumerate(self.splits) if s == split]

    def names_for_split(self, split: str) -> list[str]:
        return [self.names[i] for i in self.indices_for_split(split)]


def parse_categories(path) -> CategorySet:
    path = Path(path)
    names, splits = [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            parts = text.rsplit(",", 1)
            if len(parts) != 2 or parts[1] not in ("base", "novel"):
                raise ParseError(
                    f"expected 'name,base' or 'name,novel', got {text!r}",
                    path=str(path),
                    line=lineno,
                )
            name = parts[0].strip()
            if not name:
                raise ParseError("empty category name", path=str(path), line=lineno)
            if name in names:
                raise ParseError(f"duplicate category {name!r}", path=str(path), line=lineno)
            names.append(name)
            splits.append(parts[1])
    try:
        return CategorySet(names=names, splits=splits)
    except ValueError as exc:
        raise ParseError(str(exc), path=str(path)) from None


def write_categories(categories: CategorySet, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for name, split in zip(categories.names, categories.splits):
            fh.write(f"{name},{split}\n")


# ---------------------------------------------------------------------------
# embedding container (record level)
# ---------------------------------------------------------------------------

def write_records(path, dim: int, records) -> None:
    """Write (key, vector) records in container format; caller owns semantics."""
    records = list(records)
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, dim, len(records)))
        for key, vec in records:
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise ValueError(f"record {key!r} has shape {arr.shape}, expected ({dim},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"record {key!r} contains non-finite values")
            kb = key.encode("utf-8")
            if len(kb) > 0xFFFF:
                raise ValueError(f"key too long ({len(kb)} bytes)")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(arr.tobytes())


def read_records(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    """Read the container; rejects bad magic, version, truncation, duplicates."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: version mismatch (got {version}, expected {FORMAT_VERSION})")
    if dim == 0:
        raise FormatError(f"{path}: dim must be positive")
    offset = 16
    vec_bytes = 4 * dim
    records: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    for i in range(count):
        if offset + 2 > len(data):
            raise FormatError(f"{path}: truncated record {i} (key length)")
        (klen,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + klen + vec_bytes > len(data):
            raise FormatError(f"{path}: truncated record {i}")
        key = data[offset : offset + klen].decode("utf-8")
        offset += klen
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += vec_bytes
        if key in seen:
            raise FormatError(f"{path}: duplicate key {key!r}")
        seen.add(key)
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"{path}: non-finite value in record {key!r}")
        records.append((key, vec))
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after last record")
    return dim, records


# ---------------------------------------------------------------------------
# embedding store
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingStore:
    """Immutable-by-convention map from string keys to float32 vectors.

    Every pipeline store carries the reserved empty-word key "" so elements
    without any linked OCR resolve to a well-defined vector.
    """

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self) -> None:
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if EMPTY_WORD_KEY not in self.entries:
            raise MissingKeyError([EMPTY_WORD_KEY])
        for key, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise ValueError(f"entry {key!r} has shape {vec.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"entry {key!r} contains non-finite values")

    def vector(self, key: str) -> np.ndarray:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingKeyError([key]) from None

    def __contains__(self, key: str) -> bool:
        return key in self.entries


def write_embeddings(store: EmbeddingStore, path) -> None:
    store.validate()
    write_records(path, store.dim, store.entries.items())


def read_embeddings(path) -> EmbeddingStore:
    dim, records = read_records(path)
    store = EmbeddingStore(dim=dim, entries={k: v for k, v in records})
    store.validate()
    return store


def merge_stores(stores: list[EmbeddingStore]) -> EmbeddingStore:
    """Merge stores of equal dim; duplicate keys must carry identical vectors."""
    if not stores:
        raise ValueError("no stores to merge")
    dim = stores[0].dim
    merged: dict[str, np.ndarray] = {}
    for store in stores:
        if store.dim != dim:
            raise ValueError(f"dim mismatch while merging: {store.dim} != {dim}")
        for key, vec in store.entries.items():
            if key in merged and not np.array_equal(merged[key], vec):
                raise ValueError(f"conflicting vectors for duplicate key {key!r}")
            merged[key] = vec
    return EmbeddingStore(dim=dim, entries=merged)


def resolve_description_embedding(
    store: EmbeddingStore,
    description: str,
    mode: str = "concat",
    phrases: list[str] | None = None,
) -> np.ndarray:
    """Resolve a linked element's description to one vector.

    concat mode looks up the whole description under its "ocr:" key (the
    empty description maps to the reserved empty-word key). average mode
    averages the per-phrase vectors; pass ``phrases`` explicitly when they
    may contain spaces, otherwise the description is split on single spaces.
    """
    if mode == "concat":
        return np.asarray(store.vector(ocr_key(description)), dtype=np.float64)
    if mode != "average":
        raise ValueError(f"unknown mode {mode!r}; expected 'concat' or 'average'")
    if phrases is None:
        phrases = description.split(" ") if normalize_ocr_text(description) else []
    if not phrases:
        return np.asarray(store.vector(EMPTY_WORD_KEY), dtype=np.float64)
    missing = [ocr_key(p) for p in phrases if ocr_key(p) not in store]
    if missing:
        raise MissingKeyError(missing)
    vecs = [np.asarray(store.vector(ocr_key(p)), dtype=np.float64) for p in phrases]
    return np.mean(vecs, axis=0)


def expected_file_size(dim: int, keys) -> int:
    """Exact byte size the container format produces for the given keys."""
    return 16 + sum(2 + len(k.encode("utf-8")) + 4 * dim for k in keys)


# ---------------------------------------------------------------------------
# linking pass over annotations
# ---------------------------------------------------------------------------

@dataclass
class LinkStats:
    n_elements: int = 0
    n_linked_elements: int = 0
    n_ocr: int = 0
    n_ocr_used: int = 0

    @property
    def element_link_rate(self) -> float:
        return self.n_linked_elements / self.n_elements if self.n_elements else 0.0


def apply_linking(
    annotations: list[ScreenAnnotation],
    threshold: float = 0.5,
    metric: str = "iom",
) -> tuple[list[ScreenAnnotation], LinkStats]:
    """Run OCR linking per screenshot and attach the resolved descriptions."""
    stats = LinkStats()
    out = []
    for ann in annotations:
        assignment = link_ocr(ann.elements, ann.ocr, threshold, metric)
        elements = [
            replace(e, description=desc, ocr_indices=tuple(idxs))
            for e, desc, idxs in zip(
                ann.elements, assignment.descriptions, assignment.ocr_indices
            )
        ]
        stats.n_elements += len(elements)
        stats.n_linked_elements += sum(1 for idxs in assignment.ocr_indices if idxs)
        stats.n_ocr += len(ann.ocr)
        stats.n_ocr_used += sum(len(idxs) for idxs in assignment.ocr_indices)
        out.append(replace(ann, elements=elements))
    return out, stats
