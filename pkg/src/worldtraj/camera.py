"""Camera intrinsics/extrinsics, scale-aware transforms, perspective
projection, and world-frame initialization of camera-frame poses."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import so3
from .body import PoseParams

DEPTH_EPS = 1e-4  # meters; projections at or below this depth are degenerate


class CameraError(ValueError):
    pass


class BehindCameraError(CameraError):
    """Point at or behind the camera plane where projection is undefined."""


@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics (the 2x3 projection matrix K)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("focal lengths must be positive")

    @classmethod
    def from_image_size(cls, width: int, height: int) -> "CameraIntrinsics":
        """Unknown-calibration heuristic: focal = image diagonal, centered."""
        diag = float(np.hypot(width, height))
        return cls(fx=diag, fy=diag, cx=width / 2.0, cy=height / 2.0)


@dataclass
class CameraPose:
    """World-to-camera rigid transform; translation in SLAM units."""

    rot: np.ndarray    # (3, 3)
    trans: np.ndarray  # (3,)

    def __post_init__(self):
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(3, 3)
        self.trans = np.asarray(self.trans, dtype=np.float64).reshape(3)
        err = np.abs(self.rot @ self.rot.T - np.eye(3)).max()
        if err > 1e-6 or abs(np.linalg.det(self.rot) - 1.0) > 1e-6:
            raise CameraError(f"rotation is not special orthogonal (err {err:.2e})")

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))


class CameraTrajectory:
    """Per-frame world-to-camera poses with timestamps.

    The unit quaternions backing the rotations are kept (w, x, y, z) so
    that save -> load -> save round-trips byte-identically.
    """

    def __init__(self, rot: np.ndarray, trans: np.ndarray, timestamps: np.ndarray,
                 quat: np.ndarray | None = None):
        self.rot = np.asarray(rot, dtype=np.float64).reshape(-1, 3, 3)
        self.trans = np.asarray(trans, dtype=np.float64).reshape(-1, 3)
        self.timestamps = np.asarray(timestamps, dtype=np.float64).reshape(-1)
        if quat is None:
            quat = so3.matrix_to_quat(self.rot)
        self.quat = np.asarray(quat, dtype=np.float64).reshape(-1, 4)
        if not (len(self.rot) == len(self.trans) == len(self.timestamps) == len(self.quat)):
            raise CameraError("trajectory arrays disagree on length")

    def __len__(self) -> int:
        return len(self.rot)

    def __getitem__(self, t: int) -> CameraPose:
        return CameraPose(self.rot[t], self.trans[t])


def world_to_camera(cam: CameraPose, alpha: float, p: np.ndarray) -> np.ndarray:
    """R p + alpha T for world points p (..., 3)."""
    p = np.asarray(p, dtype=np.float64)
    return np.einsum("ij,...j->...i", cam.rot, p) + alpha * cam.trans


def camera_to_world(cam: CameraPose, alpha: float, p_cam: np.ndarray) -> np.ndarray:
    """Inverse of world_to_camera."""
    p_cam = np.asarray(p_cam, dtype=np.float64)
    return np.einsum("ji,...j->...i", cam.rot, p_cam - alpha * cam.trans)


def project(k: CameraIntrinsics, p_cam: np.ndarray) -> np.ndarray:
    """Perspective projection (..., 3) -> (..., 2) pixels; depth must exceed
    DEPTH_EPS, otherwise BehindCameraError."""
    p_cam = np.asarray(p_cam, dtype=np.float64)
    z = p_cam[..., 2]
    if np.any(z <= DEPTH_EPS):
        raise BehindCameraError(f"depth <= {DEPTH_EPS} in projection")
    return np.stack(
        [k.fx * p_cam[..., 0] / z + k.cx, k.fy * p_cam[..., 1] / z + k.cy], axis=-1
    )


def init_world_pose(p_cam: PoseParams, cam: CameraPose, alpha: float) -> PoseParams:
    """Lift a camera-frame pose estimate into the world frame.

    Orientation composes with the inverse camera rotation; the translation
    removes the scaled camera offset. Body pose and shape are frame-free.
    """
    if alpha <= 0:
        raise CameraError("alpha must be positive")
    rot_w = cam.rot.T @ so3.aa_to_matrix(p_cam.root_orient)
    phi_w = so3.matrix_to_aa(rot_w)
    gamma_w = cam.rot.T @ p_cam.trans - alpha * (cam.rot.T @ cam.trans)
    return PoseParams(phi_w, p_cam.body_pose.copy(), p_cam.betas.copy(), gamma_w)


def world_pose_to_camera(p_world: PoseParams, cam: CameraPose, alpha: float) -> PoseParams:
    """Inverse of init_world_pose."""
    rot_c = cam.rot @ so3.aa_to_matrix(p_world.root_orient)
    phi_c = so3.matrix_to_aa(rot_c)
    gamma_c = cam.rot @ p_world.trans + alpha * cam.trans
    return PoseParams(phi_c, p_world.body_pose.copy(), p_world.betas.copy(), gamma_c)


# ---------------------------------------------------------------------------
# TUM trajectory files: `timestamp tx ty tz qx qy qz qw`, '#' comments
# ---------------------------------------------------------------------------

def load_camera_trajectory(path, convention: str = "w2c") -> CameraTrajectory:
    """Load a TUM-format trajectory, sorted by timestamp.

    The file is interpreted as world-to-camera by default; pass
    convention="c2w" to invert camera-to-world input on load.
    """
    if convention not in ("w2c", "c2w"):
        raise CameraError(f"unknown camera convention {convention!r}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise CameraError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                vals = [float(v) for v in parts]
            except ValueError as exc:
                raise CameraError(f"{path}:{lineno}: {exc}") from exc
            rows.append(vals)
    if not rows:
        raise CameraError(f"{path}: empty trajectory")
    data = np.array(rows, dtype=np.float64)
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]

    ts = data[:, 0]
    trans = data[:, 1:4]
    qxyzw = data[:, 4:8]
    norms = np.linalg.norm(qxyzw, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-3):
        warnings.warn(f"{path}: non-unit quaternions (max err "
                      f"{np.abs(norms - 1.0).max():.2e}); renormalizing")
    qwxyz = np.concatenate([qxyzw[:, 3:4], qxyzw[:, :3]], axis=1)
    # renormalize only when measurably off so clean files stay bit-exact
    fix = np.abs(norms - 1.0) > 1e-9
    qwxyz[fix] = qwxyz[fix] / norms[fix, None]
    rot = so3.quat_to_matrix(qwxyz)

    if convention == "c2w":
        # invert: w2c rotation is the transpose, translation flips
        rot_w2c = np.swapaxes(rot, -1, -2)
        trans = -np.einsum("tij,tj->ti", rot_w2c, trans)
        rot = rot_w2c
        qwxyz = so3.matrix_to_quat(rot)
    return CameraTrajectory(rot, trans, ts, quat=qwxyz)


def save_camera_trajectory(traj: CameraTrajectory, path, header: str | None = None) -> None:
    """Write TUM format with full-precision decimal text (exact round trip)."""
    lines = []
    if header:
        for h in header.splitlines():
            lines.append(f"# {h}")
    lines.append("# timestamp tx ty tz qx qy qz qw")
    for t in range(len(traj)):
        q = traj.quat[t]  # (w, x, y, z)
        vals = [traj.timestamps[t], *traj.trans[t], q[1], q[2], q[3], q[0]]
        lines.append(" ".join(repr(float(v)) for v in vals))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
