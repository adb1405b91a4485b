"""Trajectory maintenance and hard-example mining.

Per frame, live trajectories propose tracking results, detections are fused
in by mutual-best IoU matching, and unmatched detections spawn new
trajectories. After a video ends, tracking-sourced entries flanked by
consecutive detections become hard positives (with interpolated masks) and
detections inside short or detection-sparse trajectories become hard
negatives; frames holding either are emitted as soft-labeled pseudo-frames.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import (
    Box,
    DegenerateGeometry,
    Polygon,
    iou,
    min_area_rect,
    order_corners,
)


class OutOfOrderFrame(ValueError):
    """Frames of one video must be stepped in strictly increasing order."""


class NoFlankingDetections(LookupError):
    """Mask interpolation needs a detection on both sides of the frame."""


class EntryKind(Enum):
    DETECTION = "detection"
    TRACKING = "tracking"


PROVENANCE_DETECTION = "det"
PROVENANCE_HARD_POSITIVE = "hp"


@dataclass(frozen=True)
class Detection:
    """One detector output for a frame: box, mask polygon and confidence."""

    box: Box
    polygon: Polygon
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Frame:
    """Frame handle passed through to the tracker; image may be None for
    pixel-free trackers."""

    index: int
    image: object = None


@dataclass
class TrajectoryEntry:
    frame_index: int
    box: Box
    kind: EntryKind
    score: float  # detection confidence or tracking score
    mask: Polygon | None = None
    det_index: int | None = None  # position in its frame's detection list
    patch: object = None  # appearance cache for the tracker


@dataclass
class Trajectory:
    id: int
    entries: list = field(default_factory=list)
    missed_count: int = 0
    live: bool = True

    def append(self, entry: TrajectoryEntry):
        if self.entries and entry.frame_index <= self.entries[-1].frame_index:
            raise OutOfOrderFrame(
                f"entry frame {entry.frame_index} not after {self.entries[-1].frame_index}"
            )
        self.entries.append(entry)

    @property
    def last(self) -> TrajectoryEntry:
        return self.entries[-1]

    def detection_count(self):
        return sum(1 for e in self.entries if e.kind is EntryKind.DETECTION)

    def trailing_track_run(self):
        run = 0
        for e in reversed(self.entries):
            if e.kind is not EntryKind.TRACKING:
                break
            run += 1
        return run


@dataclass(frozen=True)
class MiningConfig:
    theta_iou: float = 0.5  # IoU match acceptance threshold
    n_ctx: int = 2  # consecutive detections required on each side of a hard positive
    max_gap: int = 1  # longest tracking-only run eligible as hard positives
    min_traj_len: int = 5
    min_det_count: int = 2
    min_det_ratio: float = 0.3
    max_missed: int = 2  # empty frames before a trajectory terminates
    max_track_run: int = 8  # cap on consecutive tracking-only extensions
    matching: str = "mutual-best"  # or "greedy" (first come, first served)

    def __post_init__(self):
        if not 0.0 < self.theta_iou < 1.0:
            raise ValueError(f"theta_iou must be in (0, 1), got {self.theta_iou}")
        for name in ("n_ctx", "max_gap", "min_traj_len", "min_det_count",
                     "max_missed", "max_track_run"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.min_det_ratio <= 1.0:
            raise ValueError("min_det_ratio must be in [0, 1]")
        if self.matching not in ("mutual-best", "greedy"):
            raise ValueError(f"unknown matching strategy {self.matching!r}")


def score_pair(d: Box, t: Box | None, t_last: Box) -> float:
    """Match score between a detection and a trajectory: the larger IoU
    against the provisional tracking result and the last trajectory box."""
    score = iou(d, t_last)
    if t is not None:
        score = max(score, iou(d, t))
    return score


@dataclass
class MatchMatrix:
    """IoU scores for detections x trajectories, with a suppression mask;
    suppressed cells read as 0."""

    values: np.ndarray
    suppressed: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            self.values = self.values.reshape(self.values.shape[0], -1)
        if self.suppressed is None:
            self.suppressed = np.zeros(self.values.shape, dtype=bool)

    @property
    def shape(self):
        return self.values.shape

    def effective(self):
        return np.where(self.suppressed, 0.0, self.values)

    def suppress(self, i, j):
        self.suppressed[i, j] = True


def build_match_matrix(dets, trajectories, provisionals=None) -> MatchMatrix:
    """Score every detection against every live trajectory.

    `provisionals` holds the tracking result (or None) per trajectory for the
    current frame.
    """
    if provisionals is None:
        provisionals = [None] * len(trajectories)
    values = np.zeros((len(dets), len(trajectories)))
    for j, (traj, prov) in enumerate(zip(trajectories, provisionals)):
        t_box = prov.box if prov is not None else None
        t_last = traj.last.box
        for i, det in enumerate(dets):
            values[i, j] = score_pair(det.box, t_box, t_last)
    return MatchMatrix(values)


def resolve_matches(m, theta_iou):
    """Mutual-best assignment with suppress-and-research.

    Detections are processed in descending order of their row maxima (ties by
    index). A detection repeatedly probes its best remaining trajectory; the
    pair is accepted only if the detection is also that trajectory's best over
    the non-suppressed matrix, otherwise the cell is suppressed to 0 and the
    search continues. Suppressions are recorded in the given MatchMatrix.
    Returns ({det index -> traj index}, unmatched det set).
    """
    mm = m if isinstance(m, MatchMatrix) else MatchMatrix(np.asarray(m, dtype=float))
    n_det, n_traj = mm.shape
    if n_det == 0:
        return {}, set()
    if n_traj == 0:
        return {}, set(range(n_det))

    work = mm.effective().copy()
    order = sorted(range(n_det), key=lambda i: (-work[i].max(), i))
    assignment = {}
    unmatched = set()
    for i in order:
        while True:
            j = int(np.argmax(work[i]))  # first occurrence = lowest index on ties
            if work[i, j] <= theta_iou:
                unmatched.add(i)
                break
            if int(np.argmax(work[:, j])) == i:
                assignment[i] = j
                break
            mm.suppress(i, j)
            work[i, j] = 0.0
    return assignment, unmatched


def resolve_matches_greedy(m, theta_iou):
    """First come, first served: each trajectory in order claims its best
    still-unclaimed detection. The failure-prone baseline that mutual-best
    matching replaces; kept for side-by-side evaluation."""
    mm = m if isinstance(m, MatchMatrix) else MatchMatrix(np.asarray(m, dtype=float))
    n_det, n_traj = mm.shape
    work = mm.effective()
    assignment = {}
    claimed = set()
    for j in range(n_traj):
        best_i, best = -1, theta_iou
        for i in range(n_det):
            if i not in claimed and work[i, j] > best:
                best_i, best = i, work[i, j]
        if best_i >= 0:
            assignment[best_i] = j
            claimed.add(best_i)
    unmatched = set(range(n_det)) - claimed
    return assignment, unmatched


_RESOLVERS = {"mutual-best": resolve_matches, "greedy": resolve_matches_greedy}


@dataclass
class TrajectoryStore:
    """All trajectories of one video; frames are stepped strictly in order."""

    next_id: int = 0
    frame_index: int = -1
    live: list = field(default_factory=list)
    terminated: list = field(default_factory=list)

    def all_trajectories(self):
        return sorted(self.live + self.terminated, key=lambda t: t.id)


def step_frame(store: TrajectoryStore, frame: Frame, dets, tracker, cfg: MiningConfig):
    """Advance the trajectory store by one frame.

    Live trajectories obtain provisional tracking results, matching is
    resolved, matched trajectories take the detection (the tracking result is
    discarded), unmatched ones keep their tracking result while the trailing
    tracking-only run stays within max_track_run, and unmatched detections
    spawn new trajectories. Trajectories with no entry this frame accumulate
    misses and terminate at max_missed.
    """
    if frame.index <= store.frame_index:
        raise OutOfOrderFrame(
            f"frame {frame.index} after frame {store.frame_index} already stepped"
        )
    store.frame_index = frame.index

    provisionals = [tracker.track(t.last, frame) for t in store.live]
    matrix = build_match_matrix(dets, store.live, provisionals)
    assignment, unmatched_dets = _RESOLVERS[cfg.matching](matrix, cfg.theta_iou)
    det_for_traj = {j: i for i, j in assignment.items()}

    still_live = []
    for j, traj in enumerate(store.live):
        if j in det_for_traj:
            i = det_for_traj[j]
            det = dets[i]
            traj.append(TrajectoryEntry(
                frame_index=frame.index,
                box=det.box,
                kind=EntryKind.DETECTION,
                score=det.score,
                mask=det.polygon,
                det_index=i,
                patch=tracker.make_template(frame.image, det.box, frame.index),
            ))
            traj.missed_count = 0
        elif provisionals[j] is not None and traj.trailing_track_run() < cfg.max_track_run:
            r = provisionals[j]
            traj.append(TrajectoryEntry(
                frame_index=frame.index,
                box=r.box,
                kind=EntryKind.TRACKING,
                score=r.track_score,
                patch=r.patch,
            ))
            traj.missed_count = 0
        else:
            traj.missed_count += 1
            if traj.missed_count >= cfg.max_missed:
                traj.live = False
                store.terminated.append(traj)
                continue
        still_live.append(traj)
    store.live = still_live

    for i in sorted(unmatched_dets):
        det = dets[i]
        traj = Trajectory(id=store.next_id)
        store.next_id += 1
        traj.append(TrajectoryEntry(
            frame_index=frame.index,
            box=det.box,
            kind=EntryKind.DETECTION,
            score=det.score,
            mask=det.polygon,
            det_index=i,
            patch=tracker.make_template(frame.image, det.box, frame.index),
        ))
        store.live.append(traj)
    return store


def finish(store: TrajectoryStore):
    """Terminate all live trajectories (video ended)."""
    for traj in store.live:
        traj.live = False
        store.terminated.append(traj)
    store.live = []
    return store


def interpolate_mask(traj: Trajectory, frame_index: int) -> Polygon:
    """Estimate a mask for a tracking-sourced entry by corner-wise linear
    interpolation between the minimum-area rectangles of the nearest
    detection masks before and after the frame."""
    back = fwd = None
    for e in traj.entries:
        if e.kind is not EntryKind.DETECTION or e.mask is None:
            continue
        if e.frame_index < frame_index:
            back = e
        elif e.frame_index > frame_index and fwd is None:
            fwd = e
    if back is None or fwd is None:
        raise NoFlankingDetections(
            f"frame {frame_index} lacks a detection on {'both sides' if back is None and fwd is None else 'one side'}"
        )
    a = frame_index - back.frame_index
    b = fwd.frame_index - frame_index
    w = a / (a + b)
    c_back = order_corners(min_area_rect(back.mask))
    c_fwd = order_corners(min_area_rect(fwd.mask))
    return Polygon(tuple(
        (bx + w * (fx - bx), by + w * (fy - by))
        for (bx, by), (fx, fy) in zip(c_back, c_fwd)
    ))


def mine_hard_examples(traj: Trajectory, cfg: MiningConfig):
    """Mine one finished trajectory.

    Hard positives: tracking entries in runs of length <= max_gap flanked on
    both sides by >= n_ctx frame-consecutive detections, each entry receiving
    an interpolated mask. Hard negatives: all detection entries of
    trajectories that are too short or detection-sparse; such trajectories
    contribute no hard positives.
    """
    entries = traj.entries
    n = len(entries)
    det_count = traj.detection_count()
    if (n < cfg.min_traj_len or det_count < cfg.min_det_count
            or (n > 0 and det_count / n < cfg.min_det_ratio)):
        return [], [e for e in entries if e.kind is EntryKind.DETECTION]

    hp = []
    i = 0
    while i < n:
        if entries[i].kind is not EntryKind.TRACKING:
            i += 1
            continue
        j = i
        while j < n and entries[j].kind is EntryKind.TRACKING:
            j += 1
        if (j - i <= cfg.max_gap and i >= cfg.n_ctx and n - j >= cfg.n_ctx):
            window = entries[i - cfg.n_ctx:j + cfg.n_ctx]
            flanks_ok = all(
                e.kind is EntryKind.DETECTION
                for e in entries[i - cfg.n_ctx:i] + entries[j:j + cfg.n_ctx]
            )
            consecutive = all(
                b.frame_index - a.frame_index == 1
                for a, b in zip(window, window[1:])
            )
            if flanks_ok and consecutive:
                for e in entries[i:j]:
                    try:
                        e.mask = interpolate_mask(traj, e.frame_index)
                    except (NoFlankingDetections, DegenerateGeometry):
                        continue
                    hp.append(e)
        i = j
    return hp, []


@dataclass
class PseudoLabel:
    box: Box
    polygon: Polygon
    score: float
    provenance: str  # "det" or "hp"
    soft_label: float | None = None
    det_index: int | None = None


@dataclass
class PseudoFrame:
    """A frame admitted to the pseudo-dataset with its label set and the
    mined hard negatives kept for audit."""

    video_id: str
    frame_index: int
    labels: list
    hard_negatives: list  # of (det_index, box, score) audit tuples


def compute_pseudo_labels(dets, hn_entries, hp_entries, video_id="", frame_index=0):
    """Label set for one frame: (detections \\ hard negatives) + hard positives.

    Returns None unless the frame holds at least one hard example; only such
    frames enter the pseudo-dataset.
    """
    for e in list(hn_entries) + list(hp_entries):
        if e.frame_index != frame_index:
            raise ValueError(
                f"entry for frame {e.frame_index} passed to frame {frame_index}"
            )
    if not hn_entries and not hp_entries:
        return None
    hn_idx = {e.det_index for e in hn_entries}
    labels = [
        PseudoLabel(d.box, d.polygon, d.score, PROVENANCE_DETECTION, det_index=i)
        for i, d in enumerate(dets)
        if i not in hn_idx
    ]
    labels += [
        PseudoLabel(e.box, e.mask, e.score, PROVENANCE_HARD_POSITIVE)
        for e in hp_entries
    ]
    audit = [(e.det_index, e.box, e.score) for e in hn_entries]
    return PseudoFrame(video_id, frame_index, labels, audit)


def assign_soft_labels(frame: PseudoFrame) -> PseudoFrame:
    """Fill soft labels: 1 for hard positives, the detection score otherwise."""
    for label in frame.labels:
        if label.provenance == PROVENANCE_HARD_POSITIVE:
            label.soft_label = 1.0
        else:
            label.soft_label = label.score
    return frame


def balance_bce(y_soft, p, eps=1e-7):
    """Binary cross-entropy against a soft target in [0, 1].

    Scalar in, scalar out; also broadcasts over numpy arrays. p is clamped to
    [eps, 1 - eps].
    """
    y = np.asarray(y_soft, dtype=float)
    q = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    loss = -(y * np.log(q) + (1.0 - y) * np.log(1.0 - q))
    return float(loss) if loss.ndim == 0 else loss


@dataclass
class VideoMiningResult:
    video_id: str
    trajectories: list
    pseudo_frames: list
    hp_entries: list
    hn_entries: list
    counts: dict


def mine_video(video_id, detections_by_frame, tracker, cfg: MiningConfig,
               frames=None) -> VideoMiningResult:
    """Run the full mining pass over one video.

    detections_by_frame: iterable of (frame_index, [Detection]) in strictly
    increasing frame order. `frames` is an optional indexable frame source
    providing images for the tracker.
    """
    store = TrajectoryStore()
    dets_at = {}
    for frame_index, dets in detections_by_frame:
        image = frames[frame_index] if frames is not None else None
        step_frame(store, Frame(frame_index, image), list(dets), tracker, cfg)
        dets_at[frame_index] = list(dets)
    finish(store)

    trajectories = store.all_trajectories()
    hp_at = defaultdict(list)
    hn_at = defaultdict(list)
    hp_all = []
    hn_all = []
    for traj in trajectories:
        hp, hn = mine_hard_examples(traj, cfg)
        hp_all.extend(hp)
        hn_all.extend(hn)
        for e in hp:
            hp_at[e.frame_index].append(e)
        for e in hn:
            hn_at[e.frame_index].append(e)

    pseudo_frames = []
    for fi in sorted(set(hp_at) | set(hn_at)):
        pf = compute_pseudo_labels(
            dets_at.get(fi, []), hn_at.get(fi, []), hp_at.get(fi, []),
            video_id=video_id, frame_index=fi,
        )
        if pf is not None:
            pseudo_frames.append(assign_soft_labels(pf))

    counts = {
        "n_frames": len(dets_at),
        "n_detections": sum(len(d) for d in dets_at.values()),
        "n_trajectories": len(trajectories),
        "n_hard_positives": len(hp_all),
        "n_hard_negatives": len(hn_all),
        "n_admitted_frames": len(pseudo_frames),
    }
    return VideoMiningResult(video_id, trajectories, pseudo_frames, hp_all, hn_all, counts)
