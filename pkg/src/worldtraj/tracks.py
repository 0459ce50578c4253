"""Multi-person track lifecycle: detection ingestion, occlusion infill,
per-track intervals, and scattering rollout segments onto the video timeline."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .body import NUM_JOINTS, PoseParams, Skeleton, interpolate_pose

DEFAULT_MIN_TRACK_LEN = 3
DEFAULT_MAX_GAP = 60


class IngestionError(ValueError):
    pass


@dataclass
class Detection2D:
    """One person in one frame: 2D keypoints with confidences, optionally a
    camera-frame pose estimate and a camera-frame 3D root location."""

    frame: int
    person_id: int
    keypoints: np.ndarray          # (22, 2) pixels
    conf: np.ndarray               # (22,) in [0, 1]
    pose: PoseParams | None = None
    root3d: np.ndarray | None = None

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        self.conf = np.asarray(self.conf, dtype=np.float64).reshape(-1)
        if self.keypoints.shape[0] != NUM_JOINTS or self.conf.shape[0] != NUM_JOINTS:
            raise IngestionError(
                f"detection at frame {self.frame} has {self.keypoints.shape[0]} keypoints")
        if np.any(self.conf < 0.0) or np.any(self.conf > 1.0):
            raise IngestionError(f"confidences outside [0, 1] at frame {self.frame}")
        if self.root3d is not None:
            self.root3d = np.asarray(self.root3d, dtype=np.float64).reshape(3)


@dataclass
class Track:
    """One person's detections over a half-open frame interval [t_start, t_end).

    Pose arrays cover every local frame; unobserved frames hold the infilled
    poses and keep conf == 0, so they never feed the data term.
    """

    person_id: int
    t_start: int
    t_end: int
    obs: np.ndarray                       # (L,) bool, detection present
    keypoints: np.ndarray                 # (L, 22, 2)
    conf: np.ndarray                      # (L, 22), zero where unobserved
    root_orient: np.ndarray               # (L, 3)
    body_pose: np.ndarray                 # (L, 22, 3)
    trans: np.ndarray                     # (L, 3)
    betas: np.ndarray                     # (16,)
    has_pose: np.ndarray                  # (L,) bool, pose estimate present
    root3d: np.ndarray | None = None      # (L, 3) camera-frame roots or None

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise IngestionError("track interval must be non-empty")
        if len(self.obs) != self.length:
            raise IngestionError("track arrays disagree with the interval length")

    @property
    def length(self) -> int:
        return self.t_end - self.t_start

    def frames(self) -> np.ndarray:
        return np.arange(self.t_start, self.t_end)

    def pose_at(self, local_t: int) -> PoseParams:
        return PoseParams(self.root_orient[local_t], self.body_pose[local_t],
                          self.betas, self.trans[local_t])

    def set_pose(self, local_t: int, pose: PoseParams) -> None:
        self.root_orient[local_t] = pose.root_orient
        self.body_pose[local_t] = pose.body_pose
        self.trans[local_t] = pose.trans

    def copy(self) -> "Track":
        return Track(
            person_id=self.person_id, t_start=self.t_start, t_end=self.t_end,
            obs=self.obs.copy(), keypoints=self.keypoints.copy(),
            conf=self.conf.copy(), root_orient=self.root_orient.copy(),
            body_pose=self.body_pose.copy(), trans=self.trans.copy(),
            betas=self.betas.copy(), has_pose=self.has_pose.copy(),
            root3d=None if self.root3d is None else self.root3d.copy())


@dataclass
class TrackSet:
    tracks: list
    n_frames: int

    def __post_init__(self):
        ids = [t.person_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise IngestionError("person ids must be unique")
        for t in self.tracks:
            if t.t_end > self.n_frames:
                raise IngestionError("track extends past the video length")

    @property
    def t_max(self) -> int:
        return max((t.length for t in self.tracks), default=0)

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def copy(self) -> "TrackSet":
        return TrackSet(tracks=[t.copy() for t in self.tracks], n_frames=self.n_frames)


def _new_track(person_id: int, t_start: int, t_end: int) -> Track:
    n = t_end - t_start
    return Track(
        person_id=person_id, t_start=t_start, t_end=t_end,
        obs=np.zeros(n, dtype=bool),
        keypoints=np.zeros((n, NUM_JOINTS, 2)),
        conf=np.zeros((n, NUM_JOINTS)),
        root_orient=np.zeros((n, 3)),
        body_pose=np.zeros((n, NUM_JOINTS, 3)),
        trans=np.zeros((n, 3)),
        betas=np.zeros(16),
        has_pose=np.zeros(n, dtype=bool),
    )


def build_tracks(detections, n_frames: int, min_track_len: int = DEFAULT_MIN_TRACK_LEN,
                 max_gap: int = DEFAULT_MAX_GAP) -> TrackSet:
    """Group detections by id into tracks.

    Gaps longer than max_gap split an id into separate tracks (fresh ids);
    tracks spanning fewer than min_track_len frames are dropped.
    """
    by_id: dict[int, dict[int, Detection2D]] = {}
    for det in detections:
        if not 0 <= det.frame < n_frames:
            raise IngestionError(f"frame {det.frame} outside [0, {n_frames})")
        frames = by_id.setdefault(det.person_id, {})
        if det.frame in frames:
            raise IngestionError(
                f"duplicate detection for person {det.person_id} at frame {det.frame}")
        frames[det.frame] = det

    next_id = max(by_id, default=-1) + 1
    segments = []  # (assigned_id, source_id, [frames])
    for pid in sorted(by_id):
        frames = sorted(by_id[pid])
        seg = [frames[0]]
        chunks = []
        for f in frames[1:]:
            if f - seg[-1] - 1 > max_gap:
                chunks.append(seg)
                seg = [f]
            else:
                seg.append(f)
        chunks.append(seg)
        for ci, chunk in enumerate(chunks):
            if ci == 0:
                segments.append((pid, pid, chunk))
            else:
                segments.append((next_id, pid, chunk))
                next_id += 1

    tracks = []
    for pid, src_pid, frames in segments:
        t_start, t_end = frames[0], frames[-1] + 1
        if t_end - t_start < min_track_len:
            continue
        src = by_id[src_pid]
        track = _new_track(pid, t_start, t_end)
        betas = []
        for f in frames:
            det = src[f]
            k = f - t_start
            track.obs[k] = True
            track.keypoints[k] = det.keypoints
            track.conf[k] = det.conf
            if det.pose is not None:
                track.has_pose[k] = True
                track.root_orient[k] = det.pose.root_orient
                track.body_pose[k] = det.pose.body_pose
                track.trans[k] = det.pose.trans
                betas.append(det.pose.betas)
            if det.root3d is not None:
                if track.root3d is None:
                    track.root3d = np.zeros((track.length, 3))
                track.root3d[k] = det.root3d
        if betas:
            track.betas = np.mean(betas, axis=0)
        tracks.append(track)
    return TrackSet(tracks=tracks, n_frames=n_frames)


def infill_missing(track: Track, skel: Skeleton) -> Track:
    """Fill pose-less frames inside the interval by geodesic interpolation
    between the nearest posed neighbors; masks are left untouched."""
    posed = np.flatnonzero(track.has_pose)
    if posed.size == 0:
        raise IngestionError(f"track {track.person_id} has no pose estimates")
    if posed.size == 1:
        warnings.warn(f"track {track.person_id}: single pose estimate, holding constant")
        k = int(posed[0])
        pose = track.pose_at(k)
        for t in range(track.length):
            if t != k:
                track.set_pose(t, pose)
        return track
    for t in range(track.length):
        if track.has_pose[t]:
            continue
        nxt = posed[np.searchsorted(posed, t)] if t < posed[-1] else None
        prv = posed[np.searchsorted(posed, t) - 1] if t > posed[0] else None
        if prv is None:
            track.set_pose(t, track.pose_at(int(nxt)))
        elif nxt is None:
            track.set_pose(t, track.pose_at(int(prv)))
        else:
            u = (t - prv) / (nxt - prv)
            track.set_pose(t, interpolate_pose(track.pose_at(int(prv)),
                                               track.pose_at(int(nxt)), float(u)))
    return track


def scatter_indices(t_start: int, t_end: int, n_rollout: int, n_frames: int,
                    t_max: int | None = None):
    """Map rollout step k to video frame t_start + k.

    Returns (video_frames (n_rollout,), valid (n_rollout,)); entries outside
    [t_start, min(t_end, t_start + n_rollout)) are masked out of all losses.
    """
    if t_max is not None and n_rollout > t_max:
        raise IngestionError(f"rollout of {n_rollout} exceeds the padded length {t_max}")
    frames = t_start + np.arange(n_rollout)
    valid = frames < min(t_end, t_start + n_rollout)
    valid &= frames < n_frames
    return frames, valid


# ---------------------------------------------------------------------------
# Detection stream files: one JSON record per line, '#' or meta lines allowed
# ---------------------------------------------------------------------------

def save_detections(detections, path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for det in detections:
            rec = {
                "frame": int(det.frame),
                "id": int(det.person_id),
                "kp": np.column_stack([det.keypoints, det.conf]).ravel().tolist(),
            }
            if det.pose is not None:
                rec["pose"] = det.pose.flat().tolist()
            if det.root3d is not None:
                rec["root3d"] = np.asarray(det.root3d, dtype=np.float64).tolist()
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_detections(path):
    """Returns (detections, meta dict or None)."""
    dets = []
    meta = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from exc
            if "meta" in rec and "frame" not in rec:
                meta = rec["meta"]
                continue
            try:
                kp = np.asarray(rec["kp"], dtype=np.float64).reshape(NUM_JOINTS, 3)
                det = Detection2D(
                    frame=int(rec["frame"]),
                    person_id=int(rec["id"]),
                    keypoints=kp[:, :2],
                    conf=kp[:, 2],
                    pose=PoseParams.from_flat(rec["pose"]) if "pose" in rec else None,
                    root3d=rec.get("root3d"),
                )
            except (KeyError, ValueError) as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from exc
            dets.append(det)
    return dets, meta
