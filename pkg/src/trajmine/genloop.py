"""Synthesize a short video from a still image.

Modes: "base" (the image itself), "base-trans" (a single transformed copy),
"straight" (one interpolated pass toward a sampled end transform) and "loop"
(forward, back, forward again, so every frame is visited at least twice and
has temporal neighbors on both sides). Duplicate positions in the loop reuse
bit-identical unique frames, so a detector only needs to run once per unique
frame.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import AffineParams, lerp_affine, warp_image

MODES = ("base", "base-trans", "straight", "loop")


class ScheduleTooLong(ValueError):
    """Requested unique-frame count does not fit under the length cap."""


@dataclass(frozen=True)
class LoopSpec:
    mode: str = "loop"
    n_unique: int = 17
    t_cap: int = 50  # max emitted video length
    theta_range: tuple = (-15.0, 15.0)  # rotation, degrees
    delta_range: tuple = (0.8, 1.25)  # scale, sampled log-uniformly
    center_jitter: float = 0.1  # transform center offset as a fraction of size
    fill: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("straight", "loop") and self.n_unique < 2:
            raise ValueError("straight/loop schedules need n_unique >= 2")
        if self.delta_range[0] <= 0:
            raise ValueError("scale range must be positive")


@dataclass(frozen=True)
class FrameSchedule:
    """Emitted-position -> unique-frame-index map for one generated video."""

    mode: str
    n_unique: int
    order: tuple

    def __len__(self):
        return len(self.order)


def sample_transform(spec: LoopSpec, rng, size) -> AffineParams:
    """Draw the end-frame transform: rotation uniform in its range, scale
    log-uniform, center at the image center jittered by +-center_jitter of
    each dimension. Deterministic for a fixed generator state."""
    w, h = size
    theta = rng.uniform(spec.theta_range[0], spec.theta_range[1])
    delta = math.exp(rng.uniform(math.log(spec.delta_range[0]),
                                 math.log(spec.delta_range[1])))
    cx = w / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter) * w
    cy = h / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter) * h
    return AffineParams(rotation_deg=theta, scale=delta, center=(cx, cy))


def build_frame_schedule(spec: LoopSpec) -> FrameSchedule:
    """Unique-frame visit order for the requested mode.

    Loop: 0..n-1, n-2..0, 1..n-1 (length 3n-2, endpoints shared between
    passes). Straight: 0..n-1. Base modes: a single frame.
    """
    if spec.mode in ("base", "base-trans"):
        order = (0,)
        n_unique = 1
    elif spec.mode == "straight":
        order = tuple(range(spec.n_unique))
        n_unique = spec.n_unique
    else:
        n = spec.n_unique
        order = tuple(range(n)) + tuple(range(n - 2, -1, -1)) + tuple(range(1, n))
        n_unique = n
    if len(order) > spec.t_cap:
        raise ScheduleTooLong(
            f"{spec.mode} schedule of length {len(order)} exceeds cap {spec.t_cap}"
        )
    return FrameSchedule(spec.mode, n_unique, order)


def render_frames(image, params_end: AffineParams, schedule: FrameSchedule, fill=128):
    """Render the unique frames of a schedule.

    Unique frame k is the image warped by the interpolation of the identity
    toward params_end at fraction k/(n-1); frame 0 is the original,
    bit-exact. Base-trans renders the fully transformed image. Returns the
    list of unique frames; emitted position p shows frames[schedule.order[p]].
    """
    image = np.asarray(image)
    start = AffineParams.identity(center=params_end.center)
    n = schedule.n_unique
    frames = []
    for k in range(n):
        if schedule.mode == "base":
            s = 0.0
        elif schedule.mode == "base-trans":
            s = 1.0
        else:
            s = k / (n - 1)
        frames.append(warp_image(image, lerp_affine(start, params_end, s), fill=fill))
    return frames


def emitted_frames(frames, schedule: FrameSchedule):
    """Expand unique frames to the emitted video (shared references, no copies)."""
    return [frames[k] for k in schedule.order]
