"""Joints-only articulated body model.

Pose parameterization, forward kinematics over a 22-joint tree with linear
shape blending on the bone offsets, geodesic pose interpolation, and the
skeleton / shape-basis file formats.
"""

from __future__ import annotations

import importlib.resources as resources
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels, so3

NUM_JOINTS = 22
NUM_BETAS = 16

JOINT_NAMES = [
    "pelvis", "hip_l", "hip_r", "spine1", "knee_l", "knee_r", "spine2",
    "ankle_l", "ankle_r", "spine3", "toe_l", "toe_r", "neck", "collar_l",
    "collar_r", "head", "shoulder_l", "shoulder_r", "elbow_l", "elbow_r",
    "wrist_l", "wrist_r",
]

# ankles + toes; used for ground contact and floor fitting
FOOT_JOINTS = (7, 8, 10, 11)
TOE_JOINTS = (10, 11)


class SkeletonError(ValueError):
    """Structurally invalid skeleton or pose."""


@dataclass
class PoseParams:
    """Per-person, per-frame body state.

    root_orient: (3,) axis-angle, radians
    body_pose:   (22, 3) per-joint axis-angle, radians
    betas:       (16,) unitless shape coefficients
    trans:       (3,) root translation, meters
    """

    root_orient: np.ndarray
    body_pose: np.ndarray
    betas: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        self.root_orient = np.asarray(self.root_orient, dtype=np.float64).reshape(3)
        self.body_pose = np.asarray(self.body_pose, dtype=np.float64).reshape(NUM_JOINTS, 3)
        self.betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        self.trans = np.asarray(self.trans, dtype=np.float64).reshape(3)
        if self.betas.shape[0] != NUM_BETAS:
            raise SkeletonError(f"betas must have length {NUM_BETAS}, got {self.betas.shape[0]}")
        for name in ("root_orient", "body_pose", "trans"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise SkeletonError(f"non-finite values in {name}")

    def copy(self) -> "PoseParams":
        return PoseParams(self.root_orient.copy(), self.body_pose.copy(),
                          self.betas.copy(), self.trans.copy())

    def flat(self) -> np.ndarray:
        """Concatenated (3 + 66 + 16 + 3,) vector, the detection-file layout."""
        return np.concatenate([self.root_orient, self.body_pose.ravel(), self.betas, self.trans])

    @classmethod
    def from_flat(cls, vec) -> "PoseParams":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape[0] != 3 + 3 * NUM_JOINTS + NUM_BETAS + 3:
            raise SkeletonError(f"flat pose must have length 88, got {vec.shape[0]}")
        return cls(vec[:3], vec[3:69].reshape(NUM_JOINTS, 3), vec[69:85], vec[85:88])

    @classmethod
    def rest(cls, betas=None, trans=(0.0, 0.0, 0.0)) -> "PoseParams":
        b = np.zeros(NUM_BETAS) if betas is None else np.asarray(betas, dtype=np.float64)
        return cls(np.zeros(3), np.zeros((NUM_JOINTS, 3)), b, np.asarray(trans, dtype=np.float64))


@dataclass
class Skeleton:
    """Kinematic tree: parent indices, template offsets, linear shape basis.

    parents:     (22,) int, parents[0] == -1 and parents[j] < j
    offsets:     (22, 3) template bone offsets, meters
    shape_basis: (66, 16) linear map from betas to offset deltas
    """

    parents: np.ndarray
    offsets: np.ndarray
    shape_basis: np.ndarray
    foot_joints: tuple = FOOT_JOINTS
    toe_joints: tuple = TOE_JOINTS
    names: list = field(default_factory=lambda: list(JOINT_NAMES))

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
        n = self.parents.shape[0]
        if self.offsets.shape[0] != n:
            raise SkeletonError("parents and offsets disagree on joint count")
        if self.parents[0] != -1 or np.any(self.parents[1:] < 0):
            raise SkeletonError("exactly one root (index 0) is required")
        if np.any(self.parents[1:] >= np.arange(1, n)):
            raise SkeletonError("parents must be topologically ordered (parent < child)")
        if self.shape_basis.shape != (3 * n, NUM_BETAS):
            raise SkeletonError(
                f"shape basis must be ({3 * n}, {NUM_BETAS}), got {self.shape_basis.shape}")
        if not np.all(np.isfinite(self.offsets)) or not np.all(np.isfinite(self.shape_basis)):
            raise SkeletonError("non-finite skeleton data")
        for j in self.foot_joints:
            if not 0 <= j < n:
                raise SkeletonError(f"foot joint index {j} out of range")

    @property
    def n_joints(self) -> int:
        return self.parents.shape[0]


def shape_to_bones(betas: np.ndarray, skel: Skeleton) -> np.ndarray:
    """Template offsets plus the linear shape blend: (22, 3) meters."""
    betas = np.asarray(betas, dtype=np.float64).reshape(-1)
    if betas.shape[0] != NUM_BETAS:
        raise SkeletonError(f"betas must have length {NUM_BETAS}")
    delta = (skel.shape_basis @ betas).reshape(skel.n_joints, 3)
    return skel.offsets + delta


@dataclass
class FkCache:
    """Intermediates saved by the forward pass for the backward pass."""

    root_rot: np.ndarray    # (B, 3, 3)
    loc_rot: np.ndarray     # (B, J, 3, 3)
    chain_rot: np.ndarray   # (B, J, 3, 3)
    bones: np.ndarray       # (B, J, 3)
    root_orient: np.ndarray | None = None
    body_pose: np.ndarray | None = None


def fk_from_matrices(root_rot, loc_rot, bones, trans, parents):
    """FK with rotations already as matrices (the stage-3 rollout path).

    root_rot (B,3,3), loc_rot (B,J,3,3), bones (J,3) or (B,J,3), trans (B,3)
    Returns (joints (B,J,3), FkCache).
    """
    B = root_rot.shape[0]
    J = loc_rot.shape[1]
    bones = np.asarray(bones, dtype=np.float64)
    if bones.ndim == 2:
        bones_b = np.broadcast_to(bones, (B, J, 3))
    else:
        bones_b = bones
    chain, pos = kernels.fk_chain_forward(
        np.ascontiguousarray(loc_rot), np.ascontiguousarray(bones_b),
        np.ascontiguousarray(parents, dtype=np.int64), np.ascontiguousarray(root_rot))
    joints = pos + np.asarray(trans, dtype=np.float64)[:, None, :]
    cache = FkCache(root_rot=root_rot, loc_rot=loc_rot, chain_rot=chain, bones=bones_b)
    return joints, cache


def fk_from_matrices_backward(cache: FkCache, djoints, parents, dchain_adj=None):
    """Backward of fk_from_matrices.

    Returns (droot_adj (B,3,3), dloc_adj (B,J,3,3), dbones (B,J,3), dtrans (B,3)).
    """
    djoints = np.ascontiguousarray(djoints, dtype=np.float64)
    dloc, dbones, droot = kernels.fk_chain_backward(
        np.ascontiguousarray(cache.loc_rot), np.ascontiguousarray(cache.bones),
        np.ascontiguousarray(parents, dtype=np.int64),
        np.ascontiguousarray(cache.root_rot), np.ascontiguousarray(cache.chain_rot),
        djoints,
        None if dchain_adj is None else np.ascontiguousarray(dchain_adj))
    dtrans = djoints.sum(axis=1)
    return droot, dloc, dbones, dtrans


def fk_batch(root_orient, body_pose, bones, trans, parents):
    """FK from axis-angle inputs over a batch of frames.

    root_orient (B,3), body_pose (B,J,3), bones (J,3) or (B,J,3), trans (B,3)
    Returns (joints (B,J,3), FkCache).
    """
    root_orient = np.asarray(root_orient, dtype=np.float64)
    body_pose = np.asarray(body_pose, dtype=np.float64)
    if body_pose.shape[-2] != len(parents):
        raise SkeletonError(
            f"body pose has {body_pose.shape[-2]} joints, skeleton has {len(parents)}")
    root_rot = so3.aa_to_matrix(root_orient)
    loc_rot = so3.aa_to_matrix(body_pose)
    joints, cache = fk_from_matrices(root_rot, loc_rot, bones, trans, parents)
    cache.root_orient = root_orient
    cache.body_pose = body_pose
    return joints, cache


def fk_batch_backward(cache: FkCache, djoints, parents, dchain_adj=None):
    """Backward of fk_batch: gradients w.r.t. the axis-angle inputs.

    Returns (droot_orient (B,3), dbody_pose (B,J,3), dbones (B,J,3), dtrans (B,3)).
    """
    droot_adj, dloc_adj, dbones, dtrans = fk_from_matrices_backward(
        cache, djoints, parents, dchain_adj)
    droot = so3.aa_grad_from_matrix_adjoint(cache.root_orient, cache.root_rot, droot_adj)
    dbody = so3.aa_grad_from_matrix_adjoint(cache.body_pose, cache.loc_rot, dloc_adj)
    return droot, dbody, dbones, dtrans


def forward_kinematics(pose: PoseParams, skel: Skeleton) -> np.ndarray:
    """World-frame joints (22, 3) for a single pose."""
    bones = shape_to_bones(pose.betas, skel)
    joints, _ = fk_batch(pose.root_orient[None], pose.body_pose[None], bones,
                         pose.trans[None], skel.parents)
    return joints[0]


def interpolate_pose(a: PoseParams, b: PoseParams, u: float) -> PoseParams:
    """Geodesic interpolation of rotations, linear in trans; betas from a."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"interpolation fraction must be in [0, 1], got {u}")
    root = so3.slerp_aa(a.root_orient, b.root_orient, u)
    body = so3.slerp_aa(a.body_pose, b.body_pose, u)
    trans = (1.0 - u) * a.trans + u * b.trans
    return PoseParams(root, body, a.betas.copy(), trans)


# ---------------------------------------------------------------------------
# Skeleton and shape-basis files
# ---------------------------------------------------------------------------

def default_shape_basis(offsets: np.ndarray) -> np.ndarray:
    """Deterministic (66, 16) basis: global/limb scalings plus small dense tail.

    Column 0 scales the whole template, columns 1-3 scale legs/arms/torso,
    column 4 widens hips and shoulders; the remaining columns carry a small
    fixed dense pattern so every coefficient is observable.
    """
    n = offsets.shape[0]
    basis = np.zeros((3 * n, NUM_BETAS), dtype=np.float64)
    flat = offsets.ravel()
    basis[:, 0] = 0.05 * flat

    legs = [1, 2, 4, 5, 7, 8, 10, 11]
    arms = [13, 14, 16, 17, 18, 19, 20, 21]
    torso = [3, 6, 9, 12, 15]
    for col, group in ((1, legs), (2, arms), (3, torso)):
        for j in group:
            basis[3 * j : 3 * j + 3, col] = 0.08 * offsets[j]
    for j in (1, 2, 13, 14, 16, 17):
        basis[3 * j, 4] = 0.03 * np.sign(offsets[j, 0])

    rows = np.arange(3 * n, dtype=np.float64)[:, None]
    cols = np.arange(NUM_BETAS, dtype=np.float64)[None, :]
    basis[:, 5:] += 0.004 * np.sin(1.0 + 0.7 * rows + 1.3 * cols)[:, 5:]
    return basis


def parse_skeleton_text(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse the `index parent dx dy dz` table; '#' starts a comment."""
    rows = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise SkeletonError(f"skeleton line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            idx = int(parts[0])
            parent = int(parts[1])
            off = [float(v) for v in parts[2:5]]
        except ValueError as exc:
            raise SkeletonError(f"skeleton line {lineno}: {exc}") from exc
        if idx in rows:
            raise SkeletonError(f"skeleton line {lineno}: duplicate joint index {idx}")
        rows[idx] = (parent, off)
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise SkeletonError("joint indices must be 0..N-1 with no gaps")
    parents = np.array([rows[i][0] for i in range(n)], dtype=np.int64)
    offsets = np.array([rows[i][1] for i in range(n)], dtype=np.float64)
    return parents, offsets


def load_skeleton(path, basis_path=None) -> Skeleton:
    """Load a skeleton table and optional binary shape basis."""
    with open(path, "r", encoding="utf-8") as fh:
        parents, offsets = parse_skeleton_text(fh.read())
    if basis_path is not None:
        basis = load_matrix(basis_path)
        if basis.shape != (3 * len(parents), NUM_BETAS):
            raise SkeletonError(f"shape basis file has shape {basis.shape}")
    else:
        basis = default_shape_basis(offsets)
    return Skeleton(parents=parents, offsets=offsets, shape_basis=basis)


def default_skeleton() -> Skeleton:
    """The packaged 22-joint template with the default shape basis."""
    text = resources.files("worldtraj").joinpath("data/skeleton_22.txt").read_text("utf-8")
    parents, offsets = parse_skeleton_text(text)
    return Skeleton(parents=parents, offsets=offsets,
                    shape_basis=default_shape_basis(offsets))


def save_skeleton(skel: Skeleton, path) -> None:
    lines = ["# index parent dx dy dz"]
    for i in range(skel.n_joints):
        ox, oy, oz = (float(v) for v in skel.offsets[i])
        lines.append(f"{i} {skel.parents[i]} {ox!r} {oy!r} {oz!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_matrix(path) -> np.ndarray:
    """Binary matrix: two little-endian uint32 dims, then row-major float64."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise SkeletonError(f"{path}: truncated matrix header")
        rows, cols = struct.unpack("<II", header)
        data = np.fromfile(fh, dtype="<f8", count=rows * cols)
    if data.size != rows * cols:
        raise SkeletonError(f"{path}: expected {rows * cols} values, got {data.size}")
    return data.reshape(rows, cols)


def save_matrix(mat: np.ndarray, path) -> None:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise SkeletonError("only 2-D matrices are supported")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
        mat.astype("<f8").tofile(fh)


def rest_joints(skel: Skeleton) -> np.ndarray:
    """Template joint positions at the zero pose with the root at the origin."""
    return forward_kinematics(PoseParams.rest(), skel)
