"""Template-matching tracker: locate a trajectory's last appearance in the
current frame by zero-normalized cross-correlation over a dilated search
region. Any object with the same `track`/`make_template` surface can stand in
(see sim.OracleTracker)."""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import Box


class TrackError(Exception):
    """Base for conditions that make a single track attempt unusable."""


class EmptyPatch(TrackError):
    """Box does not cover enough of the frame to cut a template from."""


class ZeroVariance(TrackError):
    """Template or every candidate window is constant; correlation undefined."""


# ITU-R BT.601 luma weights, fixed for reproducibility
_LUMA = np.array([0.299, 0.587, 0.114])


def to_grayscale(image):
    img = np.asarray(image)
    if img.ndim == 2:
        return img.astype(float)
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0].astype(float)
    if img.ndim == 3 and img.shape[2] >= 3:
        return img[:, :, :3].astype(float) @ _LUMA
    raise ValueError(f"unsupported image shape {img.shape}")


def _frame_box(image):
    h, w = np.asarray(image).shape[:2]
    return Box(0.0, 0.0, float(w), float(h))


def _pixel_span(lo, hi, limit):
    a = max(0, int(round(lo)))
    b = min(limit, int(round(hi)))
    return a, b


@dataclass(frozen=True)
class Patch:
    """Grayscale template cut from a frame, remembering where it came from."""

    pixels: np.ndarray
    origin: Box
    frame_index: int = 0

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class TrackingResult:
    box: Box
    track_score: float
    frame_index: int
    patch: Patch | None = field(default=None, compare=False)


@dataclass(frozen=True)
class TrackerConfig:
    margin: float = 1.0  # search dilation as a fraction of box width/height
    min_margin_px: float = 16.0
    tau_track: float = 0.6  # NCC acceptance threshold
    max_template_age: int = 10  # frames before the template is re-cut


def extract_patch(frame, box: Box, frame_index: int = 0) -> Patch:
    """Grayscale pixels under box intersected with the frame."""
    img = np.asarray(frame)
    h, w = img.shape[:2]
    x1, x2 = _pixel_span(box.x1, box.x2, w)
    y1, y2 = _pixel_span(box.y1, box.y2, h)
    if x2 - x1 < 2 or y2 - y1 < 2:
        raise EmptyPatch(f"box {box.as_tuple()} covers too little of a {w}x{h} frame")
    gray = to_grayscale(img[y1:y2, x1:x2])
    return Patch(gray, Box(float(x1), float(y1), float(x2), float(y2)), frame_index)


def ncc_match(template: Patch, frame, search: Box):
    """Best placement of the template inside the search region.

    Returns (box, score) where score is the peak zero-normalized
    cross-correlation in [-1, 1]. Ties are broken toward the smallest
    (y, x) offset. Constant windows cannot be normalized: they are skipped,
    and if the template or every window is constant, ZeroVariance is raised.
    """
    img = np.asarray(frame)
    h, w = img.shape[:2]
    x1, x2 = _pixel_span(search.x1, search.x2, w)
    y1, y2 = _pixel_span(search.y1, search.y2, h)
    th, tw = template.pixels.shape
    if x2 - x1 < tw or y2 - y1 < th:
        raise EmptyPatch(
            f"search region {(x2 - x1)}x{(y2 - y1)} smaller than template {tw}x{th}"
        )

    t0 = template.pixels - template.pixels.mean()
    t_norm = math.sqrt(float((t0 * t0).sum()))
    if t_norm <= 1e-12:
        raise ZeroVariance("template has constant intensity")

    region = to_grayscale(img[y1:y2, x1:x2])
    windows = sliding_window_view(region, (th, tw))
    n = th * tw
    sums = windows.sum(axis=(2, 3))
    sq_sums = np.einsum("ijkl,ijkl->ij", windows, windows)
    var_term = np.maximum(sq_sums - sums * sums / n, 0.0)
    usable = var_term > 1e-12
    if not usable.any():
        raise ZeroVariance("every candidate window has constant intensity")

    # sum(t0) == 0, so correlating with the raw windows already zero-means them
    num = np.einsum("ijkl,kl->ij", windows, t0)
    scores = np.full(num.shape, -2.0)
    scores[usable] = num[usable] / (np.sqrt(var_term[usable]) * t_norm)
    np.clip(scores, -1.0, 1.0, out=scores)

    peak = np.unravel_index(int(np.argmax(scores)), scores.shape)
    oy, ox = peak
    box = Box(float(x1 + ox), float(y1 + oy), float(x1 + ox + tw), float(y1 + oy + th))
    return box, float(scores[peak])


class TrackerContract:
    """Behavioral contract the mining loop relies on.

    track(last, frame)   -> TrackingResult or None; deterministic for fixed
                            inputs and configuration.
    make_template(frame, box, frame_index) -> appearance cache to attach to a
                            new detection-sourced trajectory entry (may be None).
    """

    def track(self, last, frame):
        return None

    def make_template(self, frame, box, frame_index):
        return None


class TemplateMatchTracker(TrackerContract):
    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()

    def make_template(self, frame, box, frame_index):
        if frame is None:
            return None
        try:
            return extract_patch(frame, box, frame_index)
        except TrackError:
            return None

    def track(self, last, frame):
        """Search the current frame image for the entry's appearance.

        `last` is the trajectory entry being extended; its cached patch is the
        template (cut at the most recent detection when entries propagate
        patches, see tmm.step_frame). Returns None when there is no template,
        the search degenerates, or the NCC peak is below tau_track.
        """
        template = getattr(last, "patch", None)
        if template is None or frame is None or frame.image is None:
            return None
        cfg = self.cfg
        mx = max(cfg.margin * last.box.width, cfg.min_margin_px)
        my = max(cfg.margin * last.box.height, cfg.min_margin_px)
        search = last.box.dilate(mx, my).clip(_frame_box(frame.image))
        if search is None:
            return None
        try:
            box, score = ncc_match(template, frame.image, search)
        except TrackError:
            return None
        if score < cfg.tau_track:
            return None
        if frame.index - template.frame_index > cfg.max_template_age:
            patch = self.make_template(frame.image, box, frame.index)
        else:
            patch = template
        return TrackingResult(box, score, frame.index, patch)
