"""Optimization energy terms and their stage-specific weighted sums.

Every term returns plain floats; the *_grad variants additionally return
hand-derived gradients w.r.t. their direct inputs. Stage assembly composes
them with the FK / rollout backward passes (see stages.py).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import motion_prior as mp
from . import so3
from .body import FOOT_JOINTS, NUM_JOINTS, Skeleton, fk_from_matrices, \
    fk_from_matrices_backward, load_matrix, save_matrix, shape_to_bones
from .camera import DEPTH_EPS, CameraIntrinsics, CameraTrajectory
from .ground import GroundPlane, point_plane_distance, point_plane_distance_grad

POSE_LATENT_DIM = 32


class EnergyError(ValueError):
    pass


@dataclass
class LossWeights:
    """Stage weights; defaults follow the reference configuration."""

    data: float = 0.001
    beta: float = 0.05
    pose: float = 0.04
    smooth: float = 5.0
    cvae: float = 0.075
    stab: float = 1.0
    skate: float = 100.0
    contact: float = 10.0
    delta: float = 0.08       # meters, contact hinge threshold
    sigma_gm: float = 100.0   # pixels, robust scale

    def __post_init__(self):
        for name in ("data", "beta", "pose", "smooth", "cvae", "stab", "skate", "contact"):
            if getattr(self, name) < 0:
                raise EnergyError(f"weight {name} must be nonnegative")
        if self.delta <= 0 or self.sigma_gm <= 0:
            raise EnergyError("delta and sigma_gm must be positive")


@dataclass
class PosePriorMap:
    """Affine map from the 66 body-pose coordinates to a 32-dim latent."""

    weight: np.ndarray  # (32, 66)
    bias: np.ndarray    # (32,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.shape != (POSE_LATENT_DIM, 3 * NUM_JOINTS):
            raise EnergyError(f"pose map weight must be (32, 66), got {self.weight.shape}")
        if self.bias.shape[0] != POSE_LATENT_DIM:
            raise EnergyError("pose map bias must have length 32")

    @classmethod
    def default(cls) -> "PosePriorMap":
        w = np.zeros((POSE_LATENT_DIM, 3 * NUM_JOINTS))
        w[:, :POSE_LATENT_DIM] = np.eye(POSE_LATENT_DIM)
        return cls(weight=w, bias=np.zeros(POSE_LATENT_DIM))

    def encode(self, body_pose: np.ndarray) -> np.ndarray:
        """(..., 22, 3) -> (..., 32)."""
        flat = np.asarray(body_pose, dtype=np.float64).reshape(
            body_pose.shape[:-2] + (3 * NUM_JOINTS,))
        return flat @ self.weight.T + self.bias

    def save(self, path) -> None:
        save_matrix(np.column_stack([self.weight, self.bias]), path)

    @classmethod
    def load(cls, path) -> "PosePriorMap":
        mat = load_matrix(path)
        if mat.shape != (POSE_LATENT_DIM, 3 * NUM_JOINTS + 1):
            raise EnergyError(f"pose map file must be (32, 67), got {mat.shape}")
        return cls(weight=mat[:, :-1], bias=mat[:, -1])


# ---------------------------------------------------------------------------
# Robust reprojection data term
# ---------------------------------------------------------------------------

def robust_gm(r: np.ndarray, sigma_gm: float) -> float:
    """Geman-McClure: sigma^2 |r|^2 / (sigma^2 + |r|^2); bounded by sigma^2."""
    if sigma_gm <= 0:
        raise EnergyError("sigma_gm must be positive")
    s = float(np.sum(np.square(np.asarray(r, dtype=np.float64))))
    s2 = sigma_gm * sigma_gm
    return s2 * s / (s2 + s)


def _gm_batch(res: np.ndarray, sigma_gm: float):
    """Per-joint GM values and d(rho)/d(residual) for (..., 2) residuals."""
    s = np.sum(res * res, axis=-1)
    s2 = sigma_gm * sigma_gm
    rho = s2 * s / (s2 + s)
    drho = (2.0 * s2 * s2 / (s2 + s) ** 2)[..., None] * res
    return rho, drho


def e_data_person(joints, rot, cam_trans, alpha, k: CameraIntrinsics, kp, conf,
                  sigma_gm: float, want_grad: bool = False):
    """Reprojection energy for one person.

    joints (L, 22, 3) world; rot (L, 3, 3), cam_trans (L, 3) world-to-camera
    for this track's frames; kp (L, 22, 2), conf (L, 22). Joints behind the
    camera (depth <= DEPTH_EPS) are masked to zero contribution.
    """
    y = np.einsum("tij,tkj->tki", rot, joints) + alpha * cam_trans[:, None, :]
    z = y[..., 2]
    front = z > DEPTH_EPS
    zs = np.where(front, z, 1.0)
    px = np.stack([k.fx * y[..., 0] / zs + k.cx, k.fy * y[..., 1] / zs + k.cy], axis=-1)
    res = px - kp
    rho, drho = _gm_batch(res, sigma_gm)
    w = conf * front
    value = float(np.sum(w * rho))
    if not want_grad:
        return value
    dpx = w[..., None] * drho
    dy = np.empty_like(y)
    dy[..., 0] = k.fx / zs * dpx[..., 0]
    dy[..., 1] = k.fy / zs * dpx[..., 1]
    dy[..., 2] = -(k.fx * y[..., 0] * dpx[..., 0] + k.fy * y[..., 1] * dpx[..., 1]) / (zs * zs)
    dy *= front[..., None]
    djoints = np.einsum("tji,tkj->tki", rot, dy)
    dalpha = float(np.sum(dy * cam_trans[:, None, :]))
    return value, djoints, dalpha


def e_data(joints_list, rot_list, trans_list, alpha, k: CameraIntrinsics,
           kp_list, conf_list, sigma_gm: float) -> float:
    """Total reprojection energy over people (value only)."""
    return float(sum(
        e_data_person(j, r, t, alpha, k, kp, cf, sigma_gm)
        for j, r, t, kp, cf in zip(joints_list, rot_list, trans_list, kp_list, conf_list)))


# ---------------------------------------------------------------------------
# Smoothness, shape, and pose priors
# ---------------------------------------------------------------------------

def e_smooth(joints: np.ndarray, want_grad: bool = False):
    """Sum of squared consecutive joint displacements for one person."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape[0] < 2:
        raise EnergyError("smoothness needs at least 2 frames")
    diff = joints[:-1] - joints[1:]
    value = float(np.sum(diff * diff))
    if not want_grad:
        return value
    dj = np.zeros_like(joints)
    dj[:-1] += 2.0 * diff
    dj[1:] -= 2.0 * diff
    return value, dj


def e_shape(betas_list) -> float:
    """Sum of squared shape-coefficient norms over people."""
    return float(sum(np.sum(np.square(b)) for b in betas_list))


def e_shape_grad(betas):
    betas = np.asarray(betas, dtype=np.float64)
    return float(np.sum(betas * betas)), 2.0 * betas


def e_pose(body_pose: np.ndarray, pose_map: PosePriorMap, want_grad: bool = False):
    """Squared pose-latent norm summed over frames for one person."""
    zeta = pose_map.encode(body_pose)
    value = float(np.sum(zeta * zeta))
    if not want_grad:
        return value
    dflat = 2.0 * zeta @ pose_map.weight
    return value, dflat.reshape(body_pose.shape)


# ---------------------------------------------------------------------------
# Transition prior, state consistency, contact terms
# ---------------------------------------------------------------------------

def e_cvae(latents_list, seq_list, prior) -> float:
    """Sum of transition-prior NLLs over people and transitions."""
    total = 0.0
    for zs, seq in zip(latents_list, seq_list):
        zs = np.asarray(zs, dtype=np.float64)
        for t in range(zs.shape[0]):
            total += mp.prior_nll(zs[t], seq.state(t), prior)
    return float(total)


def e_stab(seq: mp.StateSequence, skel: Skeleton, betas, want_grad: bool = False):
    """Consistency of the derived state blocks.

    Stored joint positions vs FK of the pose blocks, plus stored velocities
    vs backward differences of the stored positions (frames t >= 1).
    """
    n = len(seq)
    bones = shape_to_bones(betas, skel)
    root_rot = so3.aa_to_matrix(seq.root_orient)
    loc_rot = so3.aa_to_matrix(seq.body_pose)
    fk_joints, cache = fk_from_matrices(root_rot, loc_rot, bones, seq.trans, skel.parents)

    jp = seq.joints - fk_joints
    value = float(np.sum(jp * jp))
    rv = rw = rj = None
    if n >= 2:
        rv = seq.lin_vel[1:] - (seq.trans[1:] - seq.trans[:-1])
        rot = so3.aa_to_matrix(seq.root_orient)
        dlog = so3.matrix_to_aa(rot[1:] @ np.swapaxes(rot[:-1], -1, -2))
        rw = seq.ang_vel[1:] - dlog
        rj = seq.joint_vel[1:] - (seq.joints[1:] - seq.joints[:-1])
        value += float(np.sum(rv * rv) + np.sum(rw * rw) + np.sum(rj * rj))
    if not want_grad:
        return value

    g = mp.zero_state_grads(n)
    g.joints += 2.0 * jp
    dfk = -2.0 * jp
    if n >= 2:
        g.lin_vel[1:] += 2.0 * rv
        g.trans[1:] -= 2.0 * rv
        g.trans[:-1] += 2.0 * rv
        g.ang_vel[1:] += 2.0 * rw
        # d(log(R_t R_{t-1}^T)) back to the orientation parameters; rel is
        # linear in each rotation, so the matrix adjoint chains directly
        rel = rot[1:] @ np.swapaxes(rot[:-1], -1, -2)
        adj = so3.log_backward_adjoint(dlog, rel, -2.0 * rw)
        adj_t = adj @ rot[:-1]
        adj_tm1 = np.swapaxes(adj, -1, -2) @ rot[1:]
        g.root_orient[1:] += so3.aa_grad_from_matrix_adjoint(
            seq.root_orient[1:], rot[1:], adj_t)
        g.root_orient[:-1] += so3.aa_grad_from_matrix_adjoint(
            seq.root_orient[:-1], rot[:-1], adj_tm1)
        g.joint_vel[1:] += 2.0 * rj
        g.joints[1:] -= 2.0 * rj
        g.joints[:-1] += 2.0 * rj
    droot_adj, dloc_adj, dbones, dtrans = fk_from_matrices_backward(
        cache, dfk, skel.parents)
    g.trans += dtrans
    g.root_orient += so3.aa_grad_from_matrix_adjoint(seq.root_orient, root_rot, droot_adj)
    g.body_pose += so3.aa_grad_from_matrix_adjoint(seq.body_pose, loc_rot, dloc_adj)
    dbetas = skel.shape_basis.T @ dbones.sum(axis=0).ravel()
    return value, g, dbetas


def e_skate(joints: np.ndarray, contacts: np.ndarray, foot_joints=FOOT_JOINTS,
            want_grad: bool = False):
    """Contact-weighted unsquared foot displacement between consecutive frames.

    joints (L, 22, 3); contacts (L, F) probabilities aligned with foot_joints.
    """
    joints = np.asarray(joints, dtype=np.float64)
    contacts = np.asarray(contacts, dtype=np.float64)
    feet = joints[:, list(foot_joints)]
    if contacts.shape != feet.shape[:2]:
        raise EnergyError("contacts misaligned with frames/foot joints")
    diff = feet[:-1] - feet[1:]
    norms = np.linalg.norm(diff, axis=-1)
    c = contacts[:-1]
    value = float(np.sum(c * norms))
    if not want_grad:
        return value
    safe = np.where(norms > 1e-12, norms, 1.0)
    dd = (c / safe)[..., None] * diff * (norms > 1e-12)[..., None]
    dj = np.zeros_like(joints)
    fj = list(foot_joints)
    np.add.at(dj, (slice(0, len(joints) - 1), fj), dd)
    np.add.at(dj, (slice(1, len(joints)), fj), -dd)
    return value, dj


def e_contact(joints: np.ndarray, contacts: np.ndarray, plane: GroundPlane,
              delta: float, foot_joints=FOOT_JOINTS, want_grad: bool = False):
    """Contact-weighted hinge on the unsigned point-plane distance."""
    joints = np.asarray(joints, dtype=np.float64)
    contacts = np.asarray(contacts, dtype=np.float64)
    feet = joints[:, list(foot_joints)]
    if contacts.shape != feet.shape[:2]:
        raise EnergyError("contacts misaligned with frames/foot joints")
    dist = point_plane_distance(feet, plane)
    excess = np.abs(dist) - delta
    active = excess > 0.0
    value = float(np.sum(contacts * np.where(active, excess, 0.0)))
    if not want_grad:
        return value
    dp, dg = point_plane_distance_grad(feet, plane)
    w = contacts * active * np.sign(dist)
    dj = np.zeros_like(joints)
    np.add.at(dj, (slice(None), list(foot_joints)), w[..., None] * dp)
    dplane = np.sum(w[..., None] * dg, axis=(0, 1))
    return value, dj, dplane


# ---------------------------------------------------------------------------
# Stage totals (value only; stage runners assemble gradients themselves)
# ---------------------------------------------------------------------------

def world_joints_for_tracks(trackset, skel: Skeleton):
    """FK over every track's pose arrays: list of (L, 22, 3)."""
    out = []
    for tr in trackset:
        bones = shape_to_bones(tr.betas, skel)
        root_rot = so3.aa_to_matrix(tr.root_orient)
        loc_rot = so3.aa_to_matrix(tr.body_pose)
        joints, _ = fk_from_matrices(root_rot, loc_rot, bones, tr.trans, skel.parents)
        out.append(joints)
    return out


def total_energy(stage: int, trackset, cams: CameraTrajectory, alpha: float,
                 k: CameraIntrinsics, weights: LossWeights, skel: Skeleton,
                 pose_map: PosePriorMap | None = None, prior=None,
                 planes=None, floor_labels=None, contacts_list=None) -> float:
    """Stage-weighted total energy of a scene state (poses live in trackset).

    Stage 3 lifts the pose sequences into states, encodes the transition
    latents, and evaluates the full objective at that configuration.
    """
    if stage not in (1, 2, 3):
        raise EnergyError(f"unknown stage {stage}")
    joints_list = world_joints_for_tracks(trackset, skel)
    rot_list = [cams.rot[tr.t_start:tr.t_end] for tr in trackset]
    trans_list = [cams.trans[tr.t_start:tr.t_end] for tr in trackset]
    kp_list = [tr.keypoints for tr in trackset]
    conf_list = [tr.conf for tr in trackset]

    total = weights.data * e_data(joints_list, rot_list, trans_list, alpha, k,
                                  kp_list, conf_list, weights.sigma_gm)
    if stage == 1:
        return total

    pose_map = pose_map or PosePriorMap.default()
    total += weights.beta * e_shape([tr.betas for tr in trackset])
    total += weights.pose * sum(e_pose(tr.body_pose, pose_map) for tr in trackset)
    if stage == 2:
        total += weights.smooth * sum(e_smooth(j) for j in joints_list)
        return total

    if prior is None or planes is None:
        raise EnergyError("stage 3 needs a prior backend and ground planes")
    labels = np.zeros(len(trackset.tracks), dtype=int) if floor_labels is None \
        else np.asarray(floor_labels)
    seq_list = []
    z_list = []
    for tr in trackset:
        bound = prior.bind(skel, tr.betas)
        seq = mp.states_from_poses(tr.root_orient, tr.body_pose, tr.trans, tr.betas, skel)
        seq_list.append(seq)
        z_list.append(mp.encode_sequence(seq, bound))
    total += weights.cvae * e_cvae(z_list, seq_list, prior)
    for i, (tr, seq) in enumerate(zip(trackset, seq_list)):
        plane = planes[labels[i]]
        if contacts_list is not None:
            contacts = contacts_list[i]
        else:
            contacts = mp.contact_probabilities(seq, prior.bind(skel, tr.betas), plane)
        total += weights.stab * e_stab(seq, skel, tr.betas)
        total += weights.skate * e_skate(seq.joints, contacts)
        total += weights.contact * e_contact(seq.joints, contacts, plane, weights.delta)
    return total
