"""Persistence: dataset text files, binary artifacts and graymap export.

* ``.egods``    JSON document: dims, frames (boxes + 18 keypoint triples), annotations
* ``.egoprior`` binary location prior: "EGOP" header, float64 payload, checksum
* ``.egoi``     binary learner parameters: "EGOI" header, shapes, float64 payload, checksum
* ``.pgm``      8-bit portable graymap (``.ppm`` for overlays)

Binary containers are little-endian and end with an 8-byte BLAKE2b digest of
every preceding byte.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CorruptArtifact, InvalidInput, ParseError, UnsupportedVersion
from .evaluation import GTAnnotation
from .grid import BBox, GridDims
from .learner import PARAM_NAMES, LearnerParams
from .transformer import NUM_PARTS, Frame, LocationPriorArtifact, PersonDetection

DATASET_VERSION = 1
PRIOR_MAGIC, PRIOR_VERSION = b"EGOP", 1
PARAMS_MAGIC, PARAMS_VERSION = b"EGOI", 1
CHECKSUM_BYTES = 8


@dataclass(frozen=True)
class DatasetFile:
    dims: GridDims
    frames: tuple = ()
    annotations: Optional[tuple] = None
    format_version: int = DATASET_VERSION

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.annotations is not None:
            object.__setattr__(self, "annotations", tuple(self.annotations))
        ids = [f.image_id for f in self.frames]
        if len(set(ids)) != len(ids):
            raise InvalidInput("duplicate image_id in dataset")
        for f in self.frames:
            if f.dims != self.dims:
                raise InvalidInput(f"frame {f.image_id!r} dims {f.dims} != dataset dims {self.dims}")
        known = set(ids)
        for a in self.annotations or ():
            if a.image_id not in known:
                raise InvalidInput(f"annotation references unknown frame {a.image_id!r}")

    def frame_map(self):
        return {f.image_id: f for f in self.frames}


# -- dataset text format ----------------------------------------------------

def _num(v):
    return json.dumps(float(v), allow_nan=False)


def _detection_line(d):
    box = ", ".join(_num(v) for v in d.bbox.as_list())
    kps = ", ".join(f"[{_num(k.x)}, {_num(k.y)}, {_num(k.score)}]" for k in d.keypoints)
    return f'{{"box": [{box}], "keypoints": [{kps}]}}'


def dumps_dataset(ds: DatasetFile) -> str:
    out = ["{", f'  "format_version": {ds.format_version},',
           f'  "dims": [{ds.dims.width}, {ds.dims.height}],']
    if ds.frames:
        out.append('  "frames": [')
        for i, f in enumerate(ds.frames):
            out.append("    {")
            out.append(f'      "image_id": {json.dumps(f.image_id)},')
            out.append(f'      "image_ref": {json.dumps(f.image_ref)},')
            if f.detections:
                out.append('      "detections": [')
                dets = [f"        {_detection_line(d)}" for d in f.detections]
                out.append(",\n".join(dets))
                out.append("      ]")
            else:
                out.append('      "detections": []')
            out.append("    }" + ("," if i < len(ds.frames) - 1 else ""))
        out.append("  ],")
    else:
        out.append('  "frames": [],')
    if ds.annotations is None:
        out.append('  "annotations": null')
    elif ds.annotations:
        out.append('  "annotations": [')
        rows = []
        for a in ds.annotations:
            b = a.cooperator_box
            box = ", ".join(_num(v) for v in (b.x, b.y, b.w, b.h))
            rows.append(f'    {{"image_id": {json.dumps(a.image_id)}, "box": [{box}]}}')
        out.append(",\n".join(rows))
        out.append("  ]")
    else:
        out.append('  "annotations": []')
    out.append("}")
    return "\n".join(out) + "\n"


def _need(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    v = obj[key]
    if kind is not None and not isinstance(v, kind):
        raise ParseError(f"{where}: field {key!r} has wrong type {type(v).__name__}")
    return v


def _floats(seq, n, where):
    if not isinstance(seq, list) or len(seq) != n:
        got = len(seq) if isinstance(seq, list) else type(seq).__name__
        raise ParseError(f"{where}: expected {n} numbers, got {got}")
    out = []
    for v in seq:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"{where}: bad number {v!r}")
        out.append(float(v))
    return out


def loads_dataset(text: str) -> DatasetFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from e
    version = _need(doc, "format_version", "dataset", int)
    if version != DATASET_VERSION:
        raise UnsupportedVersion(f"dataset format_version {version} (supported: {DATASET_VERSION})")
    w, h = (int(v) for v in _floats(_need(doc, "dims", "dataset"), 2, "dataset.dims"))
    try:
        dims = GridDims(w, h)
    except InvalidInput as e:
        raise ParseError(f"dataset.dims: {e}") from e
    frames = []
    for fi, fd in enumerate(_need(doc, "frames", "dataset", list)):
        image_id = _need(fd, "image_id", f"frame {fi}", str)
        where = f"frame {fi} ({image_id!r})"
        ref = fd.get("image_ref") if isinstance(fd, dict) else None
        if ref is not None and not isinstance(ref, str):
            raise ParseError(f"{where}: image_ref must be a string or null")
        dets = []
        for di, dd in enumerate(_need(fd, "detections", where, list)):
            dwhere = f"{where}, person {di}"
            box = _floats(_need(dd, "box", dwhere), 5, f"{dwhere}.box")
            kps = _need(dd, "keypoints", dwhere, list)
            if len(kps) != NUM_PARTS:
                raise ParseError(f"{dwhere}: expected {NUM_PARTS} keypoints, got {len(kps)}")
            kps = [_floats(k, 3, f"{dwhere}.keypoints[{ki}]") for ki, k in enumerate(kps)]
            try:
                dets.append(PersonDetection(BBox(*box), tuple(kps)))
            except InvalidInput as e:
                raise ParseError(f"{dwhere}: {e}") from e
        frames.append(Frame(image_id, dims, tuple(dets), ref))
    anns = doc.get("annotations")
    if anns is not None:
        if not isinstance(anns, list):
            raise ParseError("dataset: annotations must be a list or null")
        parsed = []
        for ai, ad in enumerate(anns):
            iid = _need(ad, "image_id", f"annotation {ai}", str)
            box = _floats(_need(ad, "box", f"annotation {ai}"), 4, f"annotation {ai}.box")
            try:
                parsed.append(GTAnnotation(iid, BBox(*box, 1.0)))
            except InvalidInput as e:
                raise ParseError(f"annotation {ai}: {e}") from e
        anns = tuple(parsed)
    try:
        return DatasetFile(dims, tuple(frames), anns, version)
    except InvalidInput as e:
        raise ParseError(str(e)) from e


def save_dataset(ds: DatasetFile, path):
    """Write the dataset; in-memory frame images go to their ``image_ref``
    (relative to the dataset file's directory)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for f in ds.frames:
        if f.image is not None and f.image_ref is not None:
            write_pgm(path.parent / f.image_ref, f.image)
    path.write_text(dumps_dataset(ds), encoding="utf-8")


def load_dataset(path, load_images=True) -> DatasetFile:
    path = Path(path)
    ds = loads_dataset(path.read_text(encoding="utf-8"))
    if not load_images:
        return ds
    frames = []
    for f in ds.frames:
        img = None
        if f.image_ref is not None and (path.parent / f.image_ref).exists():
            img = read_pgm(path.parent / f.image_ref)
            if img.shape != f.dims.shape:
                raise ParseError(f"image {f.image_ref} has shape {img.shape}, expected {f.dims.shape}")
        frames.append(Frame(f.image_id, f.dims, f.detections, f.image_ref, img))
    return DatasetFile(ds.dims, frames, ds.annotations, ds.format_version)


# -- graymaps ---------------------------------------------------------------

def quantize(m) -> np.ndarray:
    """``round(255 * v)`` with halves rounded up."""
    return np.floor(np.asarray(m, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, pixels):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise InvalidInput("graymap pixels must be uint8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if pixels.ndim == 2:
        header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        header = f"P6\n{pixels.shape[1]} {pixels.shape[0]}\n255\n"
    else:
        raise InvalidInput(f"unsupported pixel array shape {pixels.shape}")
    path.write_bytes(header.encode("ascii") + np.ascontiguousarray(pixels).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated graymap header")
        tokens.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ParseError(f"{path}: only 8-bit P5/P6 images are supported")
    depth = 1 if magic == b"P5" else 3
    body = np.frombuffer(data, dtype=np.uint8, count=w * h * depth, offset=pos) \
        if len(data) - pos >= w * h * depth else None
    if body is None:
        raise ParseError(f"{path}: truncated pixel data")
    return body.reshape((h, w) if depth == 1 else (h, w, 3)).copy()


def overlay(m, image, alpha=0.6) -> np.ndarray:
    """Blend a [0, 1] heat map in red over a grayscale image."""
    v = np.asarray(m, dtype=np.float64)
    g = np.asarray(image, dtype=np.float64) / 255.0
    if g.shape != v.shape:
        raise InvalidInput(f"overlay image shape {g.shape} != map shape {v.shape}")
    a = alpha * v
    rgb = np.stack([g * (1 - a) + a, g * (1 - a), g * (1 - a)], axis=-1)
    return quantize(rgb)


def export_heatmap(m, path, image=None):
    """Write ``m`` as a graymap, or as a red-on-gray overlay when ``image`` is given."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or not np.all(np.isfinite(m)) or m.min() < 0.0 or m.max() > 1.0:
        raise InvalidInput("exported maps must be finite with values in [0, 1]")
    write_pgm(path, quantize(m) if image is None else overlay(m, image))


# -- binary containers ------------------------------------------------------

def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=CHECKSUM_BYTES).digest()


def _seal(body: bytes) -> bytes:
    return body + _digest(body)


def _unseal(data: bytes, magic: bytes, what: str) -> bytes:
    if len(data) < len(magic) + 4 + CHECKSUM_BYTES:
        raise CorruptArtifact(f"{what}: file too short ({len(data)} bytes)")
    if data[:4] != magic:
        raise CorruptArtifact(f"{what}: bad magic {data[:4]!r}")
    body, digest = data[:-CHECKSUM_BYTES], data[-CHECKSUM_BYTES:]
    if _digest(body) != digest:
        raise CorruptArtifact(f"{what}: checksum mismatch")
    return body


def prior_bytes(prior: LocationPriorArtifact) -> bytes:
    header = struct.pack("<4sIIIQ", PRIOR_MAGIC, PRIOR_VERSION, prior.dims.width,
                         prior.dims.height, prior.image_count)
    return _seal(header + prior.mean_mask.astype("<f8").tobytes())


def prior_from_bytes(data: bytes) -> LocationPriorArtifact:
    body = _unseal(data, PRIOR_MAGIC, "location prior")
    hsize = struct.calcsize("<4sIIIQ")
    if len(body) < hsize:
        raise CorruptArtifact("location prior: truncated header")
    _, version, w, h, count = struct.unpack_from("<4sIIIQ", body)
    if version != PRIOR_VERSION:
        raise UnsupportedVersion(f"location prior version {version} (supported: {PRIOR_VERSION})")
    if len(body) - hsize != 8 * w * h:
        raise CorruptArtifact(f"location prior: payload is {len(body) - hsize} bytes, expected {8 * w * h}")
    mask = np.frombuffer(body, dtype="<f8", offset=hsize).reshape(h, w).astype(np.float64)
    try:
        return LocationPriorArtifact(GridDims(w, h), mask, count)
    except InvalidInput as e:
        raise CorruptArtifact(f"location prior: {e}") from e


def save_prior(prior: LocationPriorArtifact, path):
    Path(path).write_bytes(prior_bytes(prior))


def load_prior(path) -> LocationPriorArtifact:
    return prior_from_bytes(Path(path).read_bytes())


def params_bytes(params: LearnerParams) -> bytes:
    arrays = params.arrays()
    parts = [struct.pack("<4sII", PARAMS_MAGIC, PARAMS_VERSION, len(arrays))]
    for a in arrays:
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
    parts.extend(a.astype("<f8").tobytes() for a in arrays)
    return _seal(b"".join(parts))


def params_from_bytes(data: bytes) -> LearnerParams:
    body = _unseal(data, PARAMS_MAGIC, "learner params")
    try:
        _, version, count = struct.unpack_from("<4sII", body)
        if version != PARAMS_VERSION:
            raise UnsupportedVersion(f"learner params version {version} (supported: {PARAMS_VERSION})")
        if count != len(PARAM_NAMES):
            raise CorruptArtifact(f"learner params: {count} arrays, expected {len(PARAM_NAMES)}")
        pos, shapes = struct.calcsize("<4sII"), []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", body, pos)
            shapes.append(struct.unpack_from(f"<{ndim}I", body, pos + 4))
            pos += 4 + 4 * ndim
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            if pos + 8 * n > len(body):
                raise CorruptArtifact("learner params: truncated payload")
            arrays.append(np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64))
            pos += 8 * n
    except struct.error as e:
        raise CorruptArtifact(f"learner params: malformed header ({e})") from e
    if pos != len(body):
        raise CorruptArtifact("learner params: trailing bytes after payload")
    try:
        return LearnerParams(*arrays)
    except InvalidInput as e:
        raise CorruptArtifact(f"learner params: {e}") from e


def save_params(params: LearnerParams, path):
    Path(path).write_bytes(params_bytes(params))


def load_params(path) -> LearnerParams:
    return params_from_bytes(Path(path).read_bytes())


def save_records(report, path):
    """Per-image evaluation records as JSON (one record per line inside a list)."""
    rows = [json.dumps(r, separators=(", ", ": ")) for r in report.records()]
    text = ('{\n  "config": ' + json.dumps(report.config_label) + ',\n  "accuracy": '
            + json.dumps(report.accuracy) + ',\n  "records": [\n    '
            + ",\n    ".join(rows) + "\n  ]\n}\n")
    Path(path).write_text(text, encoding="utf-8")
