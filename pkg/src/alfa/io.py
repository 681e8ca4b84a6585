"""Text file formats for detections and ground truth, plus config and results helpers.

Detection files (``alfa-det/1``)::

    alfa-det/1 detector=ssd classes=20 scores=with_background coords=continuous masks=0
    <image_id> <x_tl> <y_tl> <x_br> <y_br> <s_0> ... <s_K> [<label mask>]

With ``scores=foreground_plus_confidence`` the ``K + 1`` numbers are an
objectness confidence followed by ``K`` class probabilities. With
``coords=inclusive_pixels`` bottom-right corners are inclusive integer pixels
and get ``+1`` on reading. ``masks=1`` appends a ``K``-character 0/1 string
of labels that survived per-class suppression.

Ground truth files (``alfa-gt/1``)::

    alfa-gt/1 classes=20 coords=continuous
    <image_id> <x_tl> <y_tl> <x_br> <y_br> <label> <difficult 0|1>
    <image_id>

A bare image id registers an image without objects.

Every reader validates the whole file before returning anything.
"""

from __future__ import annotations

import json
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .clustering import Prediction
from .errors import AlfaError, ConfigError, InvariantViolation, ParseError
from .evaluation import GroundTruthObject, GroundTruthSet, format_results_table
from .fusion import FusedDetection, FusionConfig
from .geometry import BoundingBox
from .scores import ClassScores

DET_MAGIC = "alfa-det/1"
GT_MAGIC = "alfa-gt/1"

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person", "pottedplant", "sheep", "sofa",
    "train", "tvmonitor",
)


class ScoreConvention(str, Enum):
    WITH_BACKGROUND = "with_background"
    FOREGROUND_PLUS_CONFIDENCE = "foreground_plus_confidence"


class CoordinateConvention(str, Enum):
    CONTINUOUS = "continuous"
    INCLUSIVE_PIXELS = "inclusive_pixels"


@dataclass(frozen=True)
class DetectionFileHeader:
    detector_name: str
    num_classes: int
    score_convention: ScoreConvention = ScoreConvention.WITH_BACKGROUND
    coordinate_convention: CoordinateConvention = CoordinateConvention.CONTINUOUS
    masks: bool = False

    def __post_init__(self):
        object.__setattr__(self, "score_convention", ScoreConvention(self.score_convention))
        object.__setattr__(self, "coordinate_convention", CoordinateConvention(self.coordinate_convention))
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be at least 1, got {self.num_classes}")
        if not self.detector_name or any(c.isspace() for c in self.detector_name):
            raise ValueError(f"detector name must be a non-empty token, got {self.detector_name!r}")

    def format(self) -> str:
        return (
            f"{DET_MAGIC} detector={self.detector_name} classes={self.num_classes} "
            f"scores={self.score_convention.value} coords={self.coordinate_convention.value} "
            f"masks={int(self.masks)}"
        )


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_header(path, line: str, magic: str) -> dict[str, str]:
    tokens = line.split()
    if not tokens or tokens[0] != magic:
        raise ParseError(path, 1, f"expected header starting with {magic!r}")
    fields_ = {}
    for tok in tokens[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(path, 1, f"header field {tok!r} is not key=value")
        fields_[key] = value
    return fields_


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if no > 1 and (not line or line.startswith("#")):
                continue
            yield no, line


def _detection_header(path, line: str) -> DetectionFileHeader:
    h = _parse_header(path, line, DET_MAGIC)
    try:
        return DetectionFileHeader(
            detector_name=h["detector"],
            num_classes=int(h["classes"]),
            score_convention=h.get("scores", ScoreConvention.WITH_BACKGROUND.value),
            coordinate_convention=h.get("coords", CoordinateConvention.CONTINUOUS.value),
            masks=h.get("masks", "0") == "1",
        )
    except KeyError as exc:
        raise ParseError(path, 1, f"header missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ParseError(path, 1, str(exc)) from None


def _floats(path, no, tokens):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(path, no, str(exc)) from None


def _read_det_records(path):
    lines = _lines(path)
    try:
        _, first = next(lines)
    except StopIteration:
        raise ParseError(path, 1, "empty file") from None
    header = _detection_header(path, first)
    k = header.num_classes
    width = 1 + 4 + (k + 1) + (1 if header.masks else 0)
    inclusive = header.coordinate_convention is CoordinateConvention.INCLUSIVE_PIXELS
    records = []
    for no, line in lines:
        tokens = line.split()
        if len(tokens) != width:
            raise ParseError(path, no, f"expected {width} fields, got {len(tokens)}")
        image_id = tokens[0]
        nums = _floats(path, no, tokens[1:5 + k + 1])
        x1, y1, x2, y2 = nums[:4]
        if inclusive:
            x2, y2 = x2 + 1.0, y2 + 1.0
        raw_scores = nums[4:]
        if header.score_convention is ScoreConvention.FOREGROUND_PLUS_CONFIDENCE:
            conf, fg = raw_scores[0], raw_scores[1:]
            if not 0.0 <= conf <= 1.0:
                raise InvariantViolation(path, no, f"confidence {conf!r} outside [0, 1]")
            raw_scores = [1.0 - conf] + [conf * v for v in fg]
        try:
            box = BoundingBox(x1, y1, x2, y2)
        except AlfaError as exc:
            raise InvariantViolation(path, no, str(exc)) from None
        try:
            scores = ClassScores(tuple(raw_scores))
        except AlfaError as exc:
            raise InvariantViolation(path, no, str(exc)) from None
        mask = None
        if header.masks:
            bits = tokens[-1]
            if len(bits) != k or set(bits) - {"0", "1"}:
                raise ParseError(path, no, f"label mask {bits!r} is not a {k}-digit 0/1 string")
            if "0" in bits:
                mask = frozenset(i + 1 for i, b in enumerate(bits) if b == "1")
        records.append((image_id, box, scores, mask))
    return header, records


def read_detections(path, detector_id: int = 1) -> tuple[DetectionFileHeader, dict[str, list[Prediction]]]:
    """Read one detector's output file into per-image prediction lists."""
    header, records = _read_det_records(path)
    out: dict[str, list[Prediction]] = {}
    for image_id, box, scores, _ in records:
        image_preds = out.setdefault(image_id, [])
        image_preds.append(Prediction(detector_id, box, scores, len(image_preds)))
    return header, out


def read_fused(path) -> tuple[DetectionFileHeader, dict[str, list[FusedDetection]]]:
    """Read a detection file as :class:`FusedDetection` records, keeping label masks."""
    header, records = _read_det_records(path)
    out: dict[str, list[FusedDetection]] = {}
    for image_id, box, scores, mask in records:
        out.setdefault(image_id, []).append(FusedDetection(box, scores, mask))
    return header, out


def write_detections(
    path,
    detections: Mapping[str, Sequence[Prediction | FusedDetection]],
    detector_name: str,
    num_classes: int | None = None,
) -> DetectionFileHeader:
    """Write detections in the canonical (continuous, with-background) form."""
    if num_classes is None:
        num_classes = next(
            (d.scores.num_classes for dets in detections.values() for d in dets), 1
        )
    masks = any(getattr(d, "active_labels", None) is not None for dets in detections.values() for d in dets)
    header = DetectionFileHeader(detector_name, num_classes, masks=masks)
    lines = [header.format()]
    for image_id, dets in detections.items():
        if not image_id or any(c.isspace() for c in image_id):
            raise ValueError(f"image id {image_id!r} must be a non-empty token")
        for d in dets:
            if d.scores.num_classes != num_classes:
                raise ValueError(f"detection has {d.scores.num_classes} classes, header says {num_classes}")
            fields_ = [image_id] + [_fmt(v) for v in d.box.as_tuple()] + [_fmt(v) for v in d.scores.values]
            if masks:
                active = getattr(d, "active_labels", None)
                fields_.append(
                    "".join("1" if active is None or k in active else "0" for k in range(1, num_classes + 1))
                )
            lines.append(" ".join(fields_))
    _write_text(path, "\n".join(lines) + "\n")
    return header


def read_ground_truth(path) -> GroundTruthSet:
    lines = _lines(path)
    try:
        _, first = next(lines)
    except StopIteration:
        raise ParseError(path, 1, "empty file") from None
    h = _parse_header(path, first, GT_MAGIC)
    try:
        k = int(h["classes"])
        coords = CoordinateConvention(h.get("coords", CoordinateConvention.CONTINUOUS.value))
    except KeyError as exc:
        raise ParseError(path, 1, f"header missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ParseError(path, 1, str(exc)) from None
    if k < 1:
        raise ParseError(path, 1, f"classes must be at least 1, got {k}")
    objects, image_ids = [], []
    for no, line in lines:
        tokens = line.split()
        if len(tokens) == 1:
            image_ids.append(tokens[0])
            continue
        if len(tokens) != 7:
            raise ParseError(path, no, f"expected 7 fields, got {len(tokens)}")
        x1, y1, x2, y2 = _floats(path, no, tokens[1:5])
        try:
            label = int(tokens[5])
        except ValueError:
            raise ParseError(path, no, f"label {tokens[5]!r} is not an integer") from None
        if tokens[6] not in ("0", "1"):
            raise ParseError(path, no, f"difficult flag must be 0 or 1, got {tokens[6]!r}")
        if not 1 <= label <= k:
            raise InvariantViolation(path, no, f"label {label} outside 1..{k}")
        if coords is CoordinateConvention.INCLUSIVE_PIXELS:
            x2, y2 = x2 + 1.0, y2 + 1.0
        try:
            box = BoundingBox(x1, y1, x2, y2)
        except AlfaError as exc:
            raise InvariantViolation(path, no, str(exc)) from None
        image_ids.append(tokens[0])
        objects.append(GroundTruthObject(tokens[0], label, box, tokens[6] == "1"))
    return GroundTruthSet(k, objects, image_ids)


def write_ground_truth(path, gts: GroundTruthSet) -> None:
    lines = [f"{GT_MAGIC} classes={gts.num_classes} coords=continuous"]
    with_objects = set()
    for g in gts.objects:
        with_objects.add(g.image_id)
        lines.append(
            " ".join([g.image_id] + [_fmt(v) for v in g.box.as_tuple()] + [str(g.label), str(int(g.difficult))])
        )
    lines.extend(i for i in gts.image_ids if i not in with_objects)
    _write_text(path, "\n".join(lines) + "\n")


def parse_config_text(text: str, source="<config>") -> dict[str, str]:
    values = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(source, no, f"expected 'key = value', got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def read_config(path) -> FusionConfig:
    text = Path(path).read_text(encoding="utf-8")
    values = parse_config_text(text, path)
    try:
        return FusionConfig.from_mapping(values)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def write_config(path, cfg: FusionConfig) -> None:
    lines = [f"{k} = {'none' if v is None else v}" for k, v in cfg.to_mapping().items()]
    _write_text(path, "\n".join(lines) + "\n")


def write_results(path, rows: Mapping[str, Mapping[str, float]], extra: Mapping | None = None) -> Path:
    """Write a plain-text results table to ``path`` and JSON beside it.

    Returns the JSON path.
    """
    path = Path(path)
    _write_text(path, format_results_table(rows) + "\n")
    json_path = path.with_suffix(".json")
    payload = {"results": {k: dict(v) for k, v in rows.items()}}
    if extra:
        payload.update(extra)
    _write_text(json_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return json_path


def _write_text(path, text: str) -> None:
    # write-then-rename so a failed run never leaves a truncated output
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def parse_voc_annotation(path, class_names: Sequence[str] = VOC_CLASSES) -> tuple[str, list[GroundTruthObject]]:
    """Objects of one PASCAL VOC XML file, converted to continuous coordinates."""
    index = {name: i + 1 for i, name in enumerate(class_names)}
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ParseError(path, exc.position[0], str(exc)) from None
    filename = root.findtext("filename")
    image_id = Path(filename).stem if filename else Path(path).stem
    objects = []
    for obj in root.iter("object"):
        name = (obj.findtext("name") or "").strip()
        if name not in index:
            raise InvariantViolation(path, 0, f"unknown class name {name!r}")
        bb = obj.find("bndbox")
        if bb is None:
            raise ParseError(path, 0, f"object {name!r} has no bndbox")
        try:
            x1, y1, x2, y2 = (float(bb.findtext(t)) for t in ("xmin", "ymin", "xmax", "ymax"))
        except (TypeError, ValueError):
            raise ParseError(path, 0, f"object {name!r} has a malformed bndbox") from None
        try:
            # VOC pixels are inclusive integers
            box = BoundingBox(x1, y1, x2 + 1.0, y2 + 1.0)
        except AlfaError as exc:
            raise InvariantViolation(path, 0, str(exc)) from None
        difficult = (obj.findtext("difficult") or "0").strip() == "1"
        objects.append(GroundTruthObject(image_id, index[name], box, difficult))
    return image_id, objects


def convert_voc(annotation_dir, class_names: Sequence[str] = VOC_CLASSES) -> GroundTruthSet:
    objects, ids = [], []
    for xml_path in sorted(Path(annotation_dir).glob("*.xml")):
        image_id, objs = parse_voc_annotation(xml_path, class_names)
        ids.append(image_id)
        objects.extend(objs)
    return GroundTruthSet(len(class_names), objects, ids)
