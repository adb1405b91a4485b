"""Reading detection streams and frame sources; writing pseudo-label
datasets, genloop manifests and QC overlay images.

Detection streams are UTF-8 line-delimited JSON, one record per frame:
    {"video_id": str, "frame_index": int,
     "detections": [{"bbox": [x1,y1,x2,y2], "polygon": [x,y,...], "score": s}]}
The pseudo-dataset is a single JSON document (sorted keys, floats at 6
decimals) so identical runs produce identical bytes.
"""

import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import Box, DegenerateGeometry, Polygon
from .tmm import Detection, PseudoFrame

FLOAT_DECIMALS = 6


class ParseError(ValueError):
    """Malformed detection record; carries the 1-based line number."""

    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class RangeError(ParseError):
    """Structurally valid record with out-of-range values (bbox, score)."""


class MissingFrame(LookupError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"no frame for index {index}")


@dataclass(frozen=True)
class DetectionRecord:
    video_id: str
    frame_index: int
    detections: tuple


def _parse_detection(obj, line):
    bbox = obj.get("bbox")
    polygon = obj.get("polygon")
    score = obj.get("score")
    if bbox is None or polygon is None or score is None:
        raise ParseError(line, "detection needs bbox, polygon and score")
    if not (isinstance(bbox, list) and len(bbox) == 4
            and all(isinstance(v, (int, float)) for v in bbox)):
        raise ParseError(line, f"bbox must be 4 numbers, got {bbox!r}")
    if not (isinstance(polygon, list) and len(polygon) >= 6 and len(polygon) % 2 == 0
            and all(isinstance(v, (int, float)) for v in polygon)):
        raise ParseError(line, "polygon must be a flat even-length list of >= 6 numbers")
    if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
        raise RangeError(line, f"score must be in [0, 1], got {score!r}")
    try:
        box = Box(*map(float, bbox))
        poly = Polygon.from_flat([float(v) for v in polygon])
    except DegenerateGeometry as exc:
        raise RangeError(line, str(exc)) from exc
    return Detection(box, poly, float(score))


def read_detections(path):
    """Stream DetectionRecords from a line-delimited file.

    Lines may arrive in any frame order; callers sort per video (see
    group_by_video). Blank lines are skipped.
    """
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ParseError(lineno, "record must be a JSON object")
            video_id = obj.get("video_id")
            frame_index = obj.get("frame_index")
            dets = obj.get("detections")
            if not isinstance(video_id, str):
                raise ParseError(lineno, "video_id must be a string")
            if not isinstance(frame_index, int) or frame_index < 0:
                raise RangeError(lineno, f"frame_index must be an int >= 0, got {frame_index!r}")
            if not isinstance(dets, list):
                raise ParseError(lineno, "detections must be a list")
            key = (video_id, frame_index)
            if key in seen:
                raise ParseError(lineno, f"duplicate frame {frame_index} for video {video_id!r}")
            seen.add(key)
            parsed = tuple(_parse_detection(d, lineno) for d in dets)
            yield DetectionRecord(video_id, frame_index, parsed)


def group_by_video(records):
    """{video_id: [(frame_index, [Detection]), ...]} sorted by frame."""
    videos = {}
    for rec in records:
        videos.setdefault(rec.video_id, []).append((rec.frame_index, list(rec.detections)))
    for frames in videos.values():
        frames.sort(key=lambda pair: pair[0])
    return videos


def write_detection_stream(records, path):
    """Inverse of read_detections; deterministic bytes for identical input."""
    with _atomic_writer(path) as fh:
        for rec in records:
            doc = {
                "video_id": rec.video_id,
                "frame_index": rec.frame_index,
                "detections": [
                    {
                        "bbox": list(d.box.as_tuple()),
                        "polygon": d.polygon.as_flat(),
                        "score": d.score,
                    }
                    for d in rec.detections
                ],
            }
            fh.write(json.dumps(_round_floats(doc), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# frame sources

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def load_image(path):
    return np.asarray(Image.open(path))


def save_image(path, array):
    Image.fromarray(np.asarray(array)).save(path)


class DirectoryFrames:
    """Random access to a directory of zero-padded numbered images."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._paths = {}
        for p in sorted(self.directory.iterdir()):
            if p.suffix.lower() in IMAGE_EXTS and re.fullmatch(r"\d+", p.stem):
                self._paths[int(p.stem)] = p
        self._length = max(self._paths) + 1 if self._paths else 0

    def __len__(self):
        return self._length

    def __getitem__(self, index):
        path = self._paths.get(index)
        if path is None:
            raise MissingFrame(index)
        return load_image(path)


class ManifestFrames:
    """Frames of a generated video; duplicate emitted positions resolve to
    their shared unique frame."""

    def __init__(self, manifest_path):
        self.manifest_path = Path(manifest_path)
        self.manifest = read_genloop_manifest(manifest_path)
        self.schedule = list(self.manifest["schedule"])
        base = self.manifest_path.parent
        self._files = [base / f for f in self.manifest["frame_files"]]

    def __len__(self):
        return len(self.schedule)

    def __getitem__(self, index):
        if not 0 <= index < len(self.schedule):
            raise MissingFrame(index)
        return load_image(self._files[self.schedule[index]])


def read_frames(source):
    """Open a frame source: a directory of numbered images or a genloop
    manifest JSON file."""
    source = Path(source)
    if source.is_dir():
        return DirectoryFrames(source)
    if source.is_file():
        return ManifestFrames(source)
    raise FileNotFoundError(f"frame source {source} does not exist")


def broadcast_detections(manifest, records_by_frame):
    """Expand detections given per unique frame to every emitted position.

    records_by_frame: {unique frame index: [Detection]}. Returns
    [(position, [Detection])] over the full emitted schedule.
    """
    return [
        (pos, list(records_by_frame.get(k, ())))
        for pos, k in enumerate(manifest["schedule"])
    ]


# ---------------------------------------------------------------------------
# pseudo-dataset document

def _round_floats(obj):
    if isinstance(obj, float):
        return round(obj, FLOAT_DECIMALS)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


class _atomic_writer:
    """Write to a temp file in the target directory, rename on success."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = None
        self._tmp = None

    def __enter__(self):
        fd, self._tmp = tempfile.mkstemp(dir=self.path.parent, suffix=".tmp")
        self._fh = os.fdopen(fd, "w", encoding="utf-8")
        return self._fh

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None:
            os.replace(self._tmp, self.path)
        else:
            os.unlink(self._tmp)
        return False


def pseudo_frame_to_doc(frame: PseudoFrame):
    return {
        "video_id": frame.video_id,
        "frame_index": frame.frame_index,
        "labels": [
            {
                "bbox": list(lb.box.as_tuple()),
                "polygon": lb.polygon.as_flat() if lb.polygon is not None else [],
                "score": lb.score,
                "soft_label": lb.soft_label,
                "provenance": lb.provenance,
            }
            for lb in frame.labels
        ],
        "hard_negatives": [
            {"det_index": idx, "bbox": list(box.as_tuple()), "score": score}
            for idx, box, score in frame.hard_negatives
        ],
    }


def write_pseudo_dataset(frames, meta, path):
    """Serialize admitted frames plus run metadata as one JSON document.

    Keys are sorted and floats fixed at 6 decimals, so equal inputs always
    produce byte-identical files. The write is atomic (temp + rename).
    """
    doc = {
        "meta": dict(meta),
        "frames": [
            f if isinstance(f, dict) else pseudo_frame_to_doc(f) for f in frames
        ],
    }
    write_json(path, doc)


def read_pseudo_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_json(path, doc):
    """Deterministic JSON document: sorted keys, floats at 6 decimals,
    atomic replace."""
    with _atomic_writer(path) as fh:
        json.dump(_round_floats(doc), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_genloop_manifest(path, source_image, params, schedule, frame_files):
    doc = {
        "source_image": str(source_image),
        "affine": {
            "theta_rot": params.rotation_deg,
            "delta": params.scale,
            "center": list(params.center),
            "translation": list(params.translation),
        },
        "n_unique": schedule.n_unique,
        "mode": schedule.mode,
        "schedule": list(schedule.order),
        "frame_files": [str(f) for f in frame_files],
    }
    write_json(path, doc)


def read_genloop_manifest(path):
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("source_image", "affine", "schedule", "frame_files"):
        if key not in manifest:
            raise ValueError(f"genloop manifest missing key {key!r}")
    return manifest


# ---------------------------------------------------------------------------
# QC overlays

OVERLAY_COLORS = {
    "det": (255, 215, 0),  # detections: yellow
    "hp": (255, 140, 0),  # hard positives: orange
    "hn": (160, 32, 240),  # hard negatives: purple
    "tracking": (255, 0, 0),  # tracking results: red
}


def _label_quad(label):
    if isinstance(label, dict):
        poly = label.get("polygon") or []
        if len(poly) >= 6:
            return list(zip(poly[0::2], poly[1::2])), label.get("provenance", "det")
        x1, y1, x2, y2 = label["bbox"]
        return [(x1, y1), (x2, y1), (x2, y2), (x1, y2)], label.get("provenance", "det")
    if label.polygon is not None:
        return list(label.polygon.points), label.provenance
    b = label.box
    return [(b.x1, b.y1), (b.x2, b.y1), (b.x2, b.y2), (b.x1, b.y2)], label.provenance


def render_overlay(frame, labels, hard_negatives=(), tracking_boxes=(), colors=None):
    """Draw one outlined quadrilateral per label on a copy of the frame,
    colored by provenance. Output size equals the input size."""
    palette = dict(OVERLAY_COLORS)
    if colors:
        palette.update(colors)
    arr = np.asarray(frame)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    img = Image.fromarray(arr.astype(np.uint8))
    draw = ImageDraw.Draw(img)

    def outline(points, color):
        pts = [(float(x), float(y)) for x, y in points]
        draw.line(pts + [pts[0]], fill=color, width=2)

    for label in labels:
        quad, provenance = _label_quad(label)
        outline(quad, palette.get(provenance, palette["det"]))
    for hn in hard_negatives:
        bbox = hn["bbox"] if isinstance(hn, dict) else hn[1].as_tuple()
        x1, y1, x2, y2 = bbox
        outline([(x1, y1), (x2, y1), (x2, y2), (x1, y2)], palette["hn"])
    for box in tracking_boxes:
        x1, y1, x2, y2 = box.as_tuple() if isinstance(box, Box) else box
        outline([(x1, y1), (x2, y1), (x2, y2), (x1, y2)], palette["tracking"])
    return np.asarray(img)
