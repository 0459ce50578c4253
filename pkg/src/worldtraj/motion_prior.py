"""Transition-based motion prior over augmented body states.

Two interchangeable backends share one interface:

  * ConstVelPrior — analytic constant-velocity Gaussian. The 48-dim latent
    is the transition's deviation from constant velocity in a fixed block
    layout: [d root linear velocity (3), d root angular velocity (3),
    d body-joint rotations for joints 0..13 (42)]. Joints 14..21 are carried
    unchanged by the rollout. Encode/decode are exact inverses on state
    sequences lifted from poses (states_from_poses).
  * MlpPrior — loadable MLP conditional-VAE (HuMoR-shaped): conditional
    prior mu/sigma heads, decoder delta, encoder mean, and a contact head.

Velocity convention: backward differences, v_t = p_t - p_{t-1}, with the
first frame copying the second. Velocities are per frame; fps conversion
happens only in metrics.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, so3
from .body import (FOOT_JOINTS, NUM_JOINTS, Skeleton, fk_from_matrices,
                   fk_from_matrices_backward, shape_to_bones)
from .ground import GroundPlane, point_plane_distance

LATENT_DIM = 48
N_DYNAMIC_BODY = 14           # body joints driven by the latent
STATE_DIM = 3 + 3 + 3 * NUM_JOINTS + 3 + 3 + 3 * NUM_JOINTS + 3 * NUM_JOINTS  # 210

# contact heuristic defaults (overridable from config); k_v * v0 > 4.6 so a
# static foot on the plane saturates above 0.99
CONTACT_H0 = 0.08   # meters above the plane
CONTACT_V0 = 0.015  # meters per frame
CONTACT_KH = 200.0
CONTACT_KV = 350.0


class PriorError(ValueError):
    pass


class RolloutDivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at rollout step {step}")
        self.step = step


@dataclass
class MotionState:
    """Augmented per-frame state (210 coordinates in the fixed layout)."""

    trans: np.ndarray        # (3,)
    root_orient: np.ndarray  # (3,) axis-angle
    body_pose: np.ndarray    # (22, 3) axis-angle
    lin_vel: np.ndarray      # (3,) m/frame
    ang_vel: np.ndarray      # (3,) rad/frame
    joints: np.ndarray       # (22, 3) world meters
    joint_vel: np.ndarray    # (22, 3) m/frame

    def vector(self) -> np.ndarray:
        return np.concatenate([
            self.trans, self.root_orient, self.body_pose.ravel(),
            self.lin_vel, self.ang_vel, self.joints.ravel(), self.joint_vel.ravel(),
        ])

    @classmethod
    def from_vector(cls, v) -> "MotionState":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != STATE_DIM:
            raise PriorError(f"state vector must have length {STATE_DIM}")
        j = 3 * NUM_JOINTS
        return cls(
            trans=v[0:3], root_orient=v[3:6], body_pose=v[6 : 6 + j].reshape(NUM_JOINTS, 3),
            lin_vel=v[6 + j : 9 + j], ang_vel=v[9 + j : 12 + j],
            joints=v[12 + j : 12 + 2 * j].reshape(NUM_JOINTS, 3),
            joint_vel=v[12 + 2 * j : 12 + 3 * j].reshape(NUM_JOINTS, 3),
        )

    def copy(self) -> "MotionState":
        return MotionState(*(np.array(getattr(self, f), copy=True) for f in (
            "trans", "root_orient", "body_pose", "lin_vel", "ang_vel", "joints", "joint_vel")))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.vector())))


class StateSequence:
    """Stacked MotionStates over L frames."""

    FIELDS = ("trans", "root_orient", "body_pose", "lin_vel", "ang_vel", "joints", "joint_vel")

    def __init__(self, trans, root_orient, body_pose, lin_vel, ang_vel, joints, joint_vel):
        self.trans = np.asarray(trans, dtype=np.float64)
        self.root_orient = np.asarray(root_orient, dtype=np.float64)
        self.body_pose = np.asarray(body_pose, dtype=np.float64)
        self.lin_vel = np.asarray(lin_vel, dtype=np.float64)
        self.ang_vel = np.asarray(ang_vel, dtype=np.float64)
        self.joints = np.asarray(joints, dtype=np.float64)
        self.joint_vel = np.asarray(joint_vel, dtype=np.float64)

    def __len__(self) -> int:
        return self.trans.shape[0]

    def state(self, t: int) -> MotionState:
        return MotionState(*(np.array(getattr(self, f)[t], copy=True) for f in self.FIELDS))

    @classmethod
    def zeros(cls, n: int) -> "StateSequence":
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, NUM_JOINTS, 3)),
                   np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, NUM_JOINTS, 3)),
                   np.zeros((n, NUM_JOINTS, 3)))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, f))) for f in self.FIELDS)


def zero_state_grads(n: int) -> StateSequence:
    """Gradient accumulator shaped like a StateSequence."""
    return StateSequence.zeros(n)


# ---------------------------------------------------------------------------
# Lifting pose sequences into states
# ---------------------------------------------------------------------------

def states_from_poses(root_orient, body_pose, trans, betas, skel: Skeleton) -> StateSequence:
    """Lift a pose sequence into the augmented state representation.

    Velocities are backward differences (first frame copies the second);
    joint positions come from forward kinematics.
    """
    root_orient = np.asarray(root_orient, dtype=np.float64).reshape(-1, 3)
    body_pose = np.asarray(body_pose, dtype=np.float64).reshape(-1, NUM_JOINTS, 3)
    trans = np.asarray(trans, dtype=np.float64).reshape(-1, 3)
    n = root_orient.shape[0]
    if n < 2:
        raise PriorError("need at least 2 frames to form velocities")

    bones = shape_to_bones(betas, skel)
    root_rot = so3.aa_to_matrix(root_orient)
    joints, _ = fk_from_matrices(root_rot, so3.aa_to_matrix(body_pose), bones, trans,
                                 skel.parents)

    lin_vel = np.empty_like(trans)
    lin_vel[1:] = trans[1:] - trans[:-1]
    lin_vel[0] = lin_vel[1]
    ang_vel = np.empty_like(root_orient)
    ang_vel[1:] = so3.matrix_to_aa(root_rot[1:] @ np.swapaxes(root_rot[:-1], -1, -2))
    ang_vel[0] = ang_vel[1]
    joint_vel = np.empty_like(joints)
    joint_vel[1:] = joints[1:] - joints[:-1]
    joint_vel[0] = joint_vel[1]
    return StateSequence(trans, root_orient, body_pose, lin_vel, ang_vel, joints, joint_vel)


# ---------------------------------------------------------------------------
# Constant-velocity backend
# ---------------------------------------------------------------------------

@dataclass
class ConstVelPrior:
    """Analytic constant-velocity Gaussian transition prior."""

    sigma_lin: float = 0.01    # m/frame deviation scale
    sigma_ang: float = 0.03    # rad/frame
    sigma_body: float = 0.10   # rad/frame per body-joint coordinate
    contact_h0: float = CONTACT_H0
    contact_v0: float = CONTACT_V0
    contact_kh: float = CONTACT_KH
    contact_kv: float = CONTACT_KV
    skel: Skeleton | None = None
    betas: np.ndarray | None = None

    kind = "constant-velocity"

    def __post_init__(self):
        if min(self.sigma_lin, self.sigma_ang, self.sigma_body) <= 0:
            raise PriorError("process-noise sigmas must be positive")

    def bind(self, skel: Skeleton, betas) -> "ConstVelPrior":
        """Per-person copy carrying the body model decode needs."""
        return replace(self, skel=skel, betas=np.asarray(betas, dtype=np.float64))

    @property
    def latent_sigma(self) -> np.ndarray:
        sig = np.empty(LATENT_DIM)
        sig[0:3] = self.sigma_lin
        sig[3:6] = self.sigma_ang
        sig[6:] = self.sigma_body
        return sig

    def _require_body(self):
        if self.skel is None or self.betas is None:
            raise PriorError("ConstVelPrior must be bound to (skeleton, betas) for decoding")


@dataclass
class MlpPrior:
    """Loaded MLP conditional-VAE backend (see load_prior_weights)."""

    prior_mu: "Mlp"
    prior_sigma: "Mlp"
    decoder: "Mlp"
    encoder: "Mlp"
    contact: "Mlp"
    contact_h0: float = CONTACT_H0  # unused; kept for interface symmetry

    kind = "mlp-cvae"

    def bind(self, skel, betas) -> "MlpPrior":
        return self


def _split_latent(z):
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != LATENT_DIM:
        raise PriorError(f"latent must have length {LATENT_DIM}")
    return z[0:3], z[3:6], z[6:].reshape(N_DYNAMIC_BODY, 3)


def encode_transition(s_prev: MotionState, s_cur: MotionState, prior) -> np.ndarray:
    """Latent describing the transition s_prev -> s_cur."""
    if prior.kind == "mlp-cvae":
        x = np.concatenate([s_cur.vector(), s_prev.vector()])
        return prior.encoder.forward(x)[0]
    d_lin = (s_cur.trans - s_prev.trans) - s_prev.lin_vel
    r_prev = so3.aa_to_matrix(s_prev.root_orient)
    r_cur = so3.aa_to_matrix(s_cur.root_orient)
    d_ang = so3.matrix_to_aa(r_cur @ r_prev.T) - s_prev.ang_vel
    bp = so3.aa_to_matrix(s_prev.body_pose[:N_DYNAMIC_BODY])
    bc = so3.aa_to_matrix(s_cur.body_pose[:N_DYNAMIC_BODY])
    d_body = so3.matrix_to_aa(bc @ np.swapaxes(bp, -1, -2))
    return np.concatenate([d_lin, d_ang, d_body.ravel()])


def decode_step(z, s_prev: MotionState, prior) -> MotionState:
    """One transition: s_cur from (z, s_prev)."""
    if prior.kind == "mlp-cvae":
        x = np.concatenate([np.asarray(z, dtype=np.float64).reshape(-1), s_prev.vector()])
        delta = prior.decoder.forward(x)[0]
        return MotionState.from_vector(s_prev.vector() + delta)

    prior._require_body()
    d_lin, d_ang, d_body = _split_latent(z)
    lin_vel = s_prev.lin_vel + d_lin
    ang_vel = s_prev.ang_vel + d_ang
    trans = s_prev.trans + lin_vel
    root_rot = so3.aa_to_matrix(ang_vel) @ so3.aa_to_matrix(s_prev.root_orient)
    root_orient = so3.matrix_to_aa(root_rot)
    body_pose = np.array(s_prev.body_pose, copy=True)
    dyn = so3.aa_to_matrix(d_body) @ so3.aa_to_matrix(s_prev.body_pose[:N_DYNAMIC_BODY])
    body_pose[:N_DYNAMIC_BODY] = so3.matrix_to_aa(dyn)

    bones = shape_to_bones(prior.betas, prior.skel)
    joints, _ = fk_from_matrices(root_rot[None], so3.aa_to_matrix(body_pose)[None],
                                 bones, trans[None], prior.skel.parents)
    joints = joints[0]
    return MotionState(trans=trans, root_orient=root_orient, body_pose=body_pose,
                       lin_vel=lin_vel, ang_vel=ang_vel, joints=joints,
                       joint_vel=joints - s_prev.joints)


def prior_nll(z, s_prev: MotionState, prior) -> float:
    """Negative log density of the transition latent under the prior."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if prior.kind == "mlp-cvae":
        mu = prior.prior_mu.forward(s_prev.vector())[0]
        sigma = prior.prior_sigma.forward(s_prev.vector())[0]
        if np.any(sigma <= 0):
            raise PriorError("mlp prior produced non-positive sigma")
    else:
        mu = np.zeros(LATENT_DIM)
        sigma = prior.latent_sigma
    resid = (z - mu) / sigma
    return float(np.sum(np.log(sigma * np.sqrt(2.0 * np.pi))) + 0.5 * np.sum(resid * resid))


def prior_nll_grad(z, s_prev: MotionState, prior):
    """(value, d/dz, d/ds_prev-vector) of prior_nll."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if prior.kind == "mlp-cvae":
        sv = s_prev.vector()
        mu, mu_cache = prior.prior_mu.forward(sv)
        sigma, sig_cache = prior.prior_sigma.forward(sv)
        resid = (z - mu) / sigma
        val = float(np.sum(np.log(sigma * np.sqrt(2.0 * np.pi))) + 0.5 * np.sum(resid * resid))
        dz = resid / sigma
        dmu = -resid / sigma
        dsigma = 1.0 / sigma - resid * resid / sigma
        ds = prior.prior_mu.vjp(mu_cache, dmu) + prior.prior_sigma.vjp(sig_cache, dsigma)
        return val, dz, ds
    sigma = prior.latent_sigma
    val = float(np.sum(np.log(sigma * np.sqrt(2.0 * np.pi))) + 0.5 * np.sum((z / sigma) ** 2))
    return val, z / sigma**2, np.zeros(STATE_DIM)


def rollout(s0: MotionState, latents, prior) -> StateSequence:
    """Autoregressive rollout: length len(latents) + 1. Generic per-step path;
    raises RolloutDivergenceError (with the step index) on non-finite states."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] < 1:
        raise PriorError("rollout needs at least one latent")
    states = [s0.copy()]
    if not states[0].is_finite():
        raise RolloutDivergenceError(0)
    for t in range(latents.shape[0]):
        nxt = decode_step(latents[t], states[-1], prior)
        if not nxt.is_finite():
            raise RolloutDivergenceError(t + 1)
        states.append(nxt)
    return StateSequence(*(np.stack([getattr(s, f) for s in states])
                           for f in StateSequence.FIELDS))


# ---------------------------------------------------------------------------
# Vectorized constant-velocity rollout with hand-written BPTT
# ---------------------------------------------------------------------------

@dataclass
class RolloutCache:
    seq: StateSequence
    z: np.ndarray
    scanned: np.ndarray        # (L, 15, 3, 3) root + first 14 body rotations
    increments: np.ndarray     # (H, 15, 3, 3)
    ang_vel: np.ndarray        # (L, 3)
    d_body: np.ndarray         # (H, 14, 3)
    fk_cache: object
    skel: Skeleton
    betas: np.ndarray
    loc_rot: np.ndarray        # (L, 22, 3, 3)


def rollout_cv(s0: MotionState, latents, prior: ConstVelPrior):
    """Vectorized constant-velocity rollout. Returns (StateSequence, cache)."""
    prior._require_body()
    z = np.asarray(latents, dtype=np.float64).reshape(-1, LATENT_DIM)
    h = z.shape[0]
    n = h + 1
    d_lin = z[:, 0:3]
    d_ang = z[:, 3:6]
    d_body = z[:, 6:].reshape(h, N_DYNAMIC_BODY, 3)

    lin_vel = np.concatenate([s0.lin_vel[None], s0.lin_vel[None] + np.cumsum(d_lin, axis=0)])
    ang_vel = np.concatenate([s0.ang_vel[None], s0.ang_vel[None] + np.cumsum(d_ang, axis=0)])
    trans = np.concatenate([s0.trans[None], s0.trans[None] + np.cumsum(lin_vel[1:], axis=0)])

    init = np.empty((1 + N_DYNAMIC_BODY, 3, 3))
    init[0] = so3.aa_to_matrix(s0.root_orient)
    init[1:] = so3.aa_to_matrix(s0.body_pose[:N_DYNAMIC_BODY])
    inc = np.empty((h, 1 + N_DYNAMIC_BODY, 3, 3))
    inc[:, 0] = so3.aa_to_matrix(ang_vel[1:])
    inc[:, 1:] = so3.aa_to_matrix(d_body)
    scanned = kernels.rot_scan_forward(init, inc)

    root_rot = scanned[:, 0]
    root_orient = so3.matrix_to_aa(root_rot)
    body_pose = np.tile(s0.body_pose[None], (n, 1, 1))
    body_pose[:, :N_DYNAMIC_BODY] = so3.matrix_to_aa(scanned[:, 1:])

    loc_rot = np.tile(so3.aa_to_matrix(s0.body_pose)[None], (n, 1, 1, 1))
    loc_rot[:, :N_DYNAMIC_BODY] = scanned[:, 1:]
    bones = shape_to_bones(prior.betas, prior.skel)
    joints, fk_cache = fk_from_matrices(root_rot, loc_rot, bones, trans, prior.skel.parents)

    joint_vel = np.empty_like(joints)
    joint_vel[0] = s0.joint_vel
    joint_vel[1:] = joints[1:] - joints[:-1]

    seq = StateSequence(trans, root_orient, body_pose, lin_vel, ang_vel, joints, joint_vel)
    if not seq.is_finite():
        bad = np.flatnonzero(~np.isfinite(seq.joints.reshape(n, -1)).all(axis=1))
        raise RolloutDivergenceError(int(bad[0]) if bad.size else 0)
    cache = RolloutCache(seq=seq, z=z, scanned=scanned, increments=inc, ang_vel=ang_vel,
                         d_body=d_body, fk_cache=fk_cache, skel=prior.skel,
                         betas=np.asarray(prior.betas, dtype=np.float64), loc_rot=loc_rot)
    return seq, cache


def rollout_cv_backward(cache: RolloutCache, grads: StateSequence):
    """BPTT through rollout_cv.

    grads holds dL/d(block) for every frame (use zero_state_grads and
    accumulate). Returns (ds0 dict with the free s0 blocks, dz (H, 48),
    dbetas (16,)).
    """
    seq = cache.seq
    n = len(seq)
    h = n - 1
    skel = cache.skel

    d_joints = np.array(grads.joints, copy=True)
    # joint_vel[t] = joints[t] - joints[t-1] for t >= 1
    d_joints[1:] += grads.joint_vel[1:]
    d_joints[:-1] -= grads.joint_vel[1:]

    # FK backward plus log-map contributions to the rotation adjoints
    droot_adj, dloc_adj, dbones, dtrans_fk = fk_from_matrices_backward(
        cache.fk_cache, d_joints, skel.parents)
    droot_adj = droot_adj + so3.log_backward_adjoint(
        seq.root_orient, cache.scanned[:, 0], grads.root_orient)
    dyn_adj = dloc_adj[:, :N_DYNAMIC_BODY] + so3.log_backward_adjoint(
        seq.body_pose[:, :N_DYNAMIC_BODY], cache.scanned[:, 1:],
        grads.body_pose[:, :N_DYNAMIC_BODY])

    # static body joints: local rotation equals s0's for every frame
    ds0_body = np.zeros((NUM_JOINTS, 3))
    ds0_body[N_DYNAMIC_BODY:] = grads.body_pose[:, N_DYNAMIC_BODY:].sum(axis=0)
    static_adj = dloc_adj[:, N_DYNAMIC_BODY:].sum(axis=0)
    ds0_body[N_DYNAMIC_BODY:] += so3.aa_grad_from_matrix_adjoint(
        seq.body_pose[0, N_DYNAMIC_BODY:], cache.loc_rot[0, N_DYNAMIC_BODY:], static_adj)

    # rotation scan backward
    scan_adj = np.concatenate([droot_adj[:, None], dyn_adj], axis=1)
    dinit_adj, dinc_adj = kernels.rot_scan_backward(cache.increments, cache.scanned, scan_adj)

    ds0_root = so3.aa_grad_from_matrix_adjoint(seq.root_orient[0], cache.scanned[0, 0],
                                               dinit_adj[0])
    ds0_body[:N_DYNAMIC_BODY] = so3.aa_grad_from_matrix_adjoint(
        seq.body_pose[0, :N_DYNAMIC_BODY], cache.scanned[0, 1:], dinit_adj[1:])

    d_ang_vel = np.array(grads.ang_vel, copy=True)
    if h > 0:
        d_ang_vel[1:] += so3.aa_grad_from_matrix_adjoint(
            cache.ang_vel[1:], cache.increments[:, 0], dinc_adj[:, 0])
        dz_body = so3.aa_grad_from_matrix_adjoint(
            cache.d_body, cache.increments[:, 1:], dinc_adj[:, 1:])
    else:
        dz_body = np.zeros((0, N_DYNAMIC_BODY, 3))

    # translations: trans[t] = s0.trans + sum_{k<=t, k>=1} lin_vel[k]
    dtrans_total = grads.trans + dtrans_fk
    ds0_trans = dtrans_total.sum(axis=0)
    d_lin_vel = np.array(grads.lin_vel, copy=True)
    d_lin_vel[1:] += np.cumsum(dtrans_total[::-1], axis=0)[::-1][1:]

    # velocity cumsums: vel[t] = s0.vel + sum_{k<=t} dz[k-1]
    ds0_lin = d_lin_vel.sum(axis=0)
    dz_lin = np.cumsum(d_lin_vel[::-1], axis=0)[::-1][1:]
    ds0_ang = d_ang_vel.sum(axis=0)
    dz_ang = np.cumsum(d_ang_vel[::-1], axis=0)[::-1][1:]

    dbetas = skel.shape_basis.T @ dbones.sum(axis=0).ravel()
    dz = np.concatenate([dz_lin, dz_ang, dz_body.reshape(h, -1)], axis=1)
    ds0 = {
        "trans": ds0_trans,
        "root_orient": ds0_root,
        "body_pose": ds0_body,
        "lin_vel": ds0_lin,
        "ang_vel": ds0_ang,
        "joint_vel": grads.joint_vel[0],
    }
    return ds0, dz, dbetas


def encode_sequence(seq: StateSequence, prior) -> np.ndarray:
    """Latents for every transition of a state sequence: (L-1, 48)."""
    if prior.kind == "mlp-cvae":
        return np.stack([encode_transition(seq.state(t), seq.state(t + 1), prior)
                         for t in range(len(seq) - 1)])
    d_lin = (seq.trans[1:] - seq.trans[:-1]) - seq.lin_vel[:-1]
    rot = so3.aa_to_matrix(seq.root_orient)
    d_ang = so3.matrix_to_aa(rot[1:] @ np.swapaxes(rot[:-1], -1, -2)) - seq.ang_vel[:-1]
    bp = so3.aa_to_matrix(seq.body_pose[:, :N_DYNAMIC_BODY])
    d_body = so3.matrix_to_aa(bp[1:] @ np.swapaxes(bp[:-1], -1, -2))
    return np.concatenate([d_lin, d_ang, d_body.reshape(len(seq) - 1, -1)], axis=1)


# ---------------------------------------------------------------------------
# Contact probabilities
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def contact_probabilities(seq: StateSequence, prior, plane: GroundPlane) -> np.ndarray:
    """(L, n_foot_joints) ground-contact probabilities for FOOT_JOINTS.

    Heuristic backend: near the plane and slow -> contact; MLP backend: the
    contact head through a logistic squashing.
    """
    if prior.kind == "mlp-cvae":
        probs = np.empty((len(seq), len(FOOT_JOINTS)))
        for t in range(len(seq)):
            logits, _ = prior.contact.forward(seq.state(t).vector())
            probs[t] = _sigmoid(logits)
        return probs
    feet = seq.joints[:, list(FOOT_JOINTS)]
    heights = point_plane_distance(feet, plane)
    speeds = np.linalg.norm(seq.joint_vel[:, list(FOOT_JOINTS)], axis=-1)
    c_h = _sigmoid(prior.contact_kh * (prior.contact_h0 - heights))
    c_v = _sigmoid(prior.contact_kv * (prior.contact_v0 - speeds))
    return c_h * c_v


# ---------------------------------------------------------------------------
# MLP machinery and the weight-file format
# ---------------------------------------------------------------------------

_ACTIVATIONS = ("linear", "relu", "tanh", "softplus", "exp")


class Mlp:
    """Dense network: per-layer (W, b, activation)."""

    def __init__(self, layers):
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64), act)
                       for w, b, act in layers]
        for w, b, act in self.layers:
            if act not in _ACTIVATIONS:
                raise PriorError(f"unknown activation {act!r}")
            if w.shape[0] != b.shape[0]:
                raise PriorError("bias length must match output width")
        for (w1, _, _), (w2, _, _) in zip(self.layers, self.layers[1:]):
            if w2.shape[1] != w1.shape[0]:
                raise PriorError("consecutive layer widths disagree")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def out_activation(self) -> str:
        return self.layers[-1][2]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        cache = []
        for w, b, act in self.layers:
            pre = x @ w.T + b
            if act == "relu":
                x = np.maximum(pre, 0.0)
            elif act == "tanh":
                x = np.tanh(pre)
            elif act == "softplus":
                x = np.logaddexp(pre, 0.0)
            elif act == "exp":
                x = np.exp(pre)
            else:
                x = pre
            cache.append((pre, x, w, act))
        return x, cache

    def vjp(self, cache, dy):
        """Gradient w.r.t. the input given gradient w.r.t. the output."""
        g = np.asarray(dy, dtype=np.float64)
        for pre, out, w, act in reversed(cache):
            if act == "relu":
                g = g * (pre > 0.0)
            elif act == "tanh":
                g = g * (1.0 - out * out)
            elif act == "softplus":
                g = g * _sigmoid(pre)
            elif act == "exp":
                g = g * out
            g = g @ w
        return g


_PRIOR_NETS = ("prior_mu", "prior_sigma", "decoder", "encoder", "contact")
_PRIOR_MAGIC = "worldtraj-prior-v1"


def save_prior_weights(path, nets: dict) -> None:
    """Header: `network NAME d_in (d_out act)+` per net, `end`, then the
    flat little-endian float64 blob (per layer: W row-major then b)."""
    for name in _PRIOR_NETS:
        if name not in nets:
            raise PriorError(f"missing network {name!r}")
    header = [_PRIOR_MAGIC]
    blobs = []
    for name in _PRIOR_NETS:
        net = nets[name]
        parts = ["network", name, str(net.in_dim)]
        for w, b, act in net.layers:
            parts += [str(w.shape[0]), act]
            blobs.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            blobs.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        header.append(" ".join(parts))
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def load_prior_weights(path, n_contact: int = len(FOOT_JOINTS)) -> MlpPrior:
    """Load and validate an MLP prior weight file."""
    with open(path, "rb") as fh:
        header_lines = []
        while True:
            line = fh.readline()
            if not line:
                raise PriorError(f"{path}: missing 'end' marker")
            text = line.decode("ascii").strip()
            header_lines.append(text)
            if text == "end":
                break
        blob = fh.read()

    if not header_lines or header_lines[0] != _PRIOR_MAGIC:
        raise PriorError(f"{path}: not a prior weight file")
    specs = {}
    for text in header_lines[1:-1]:
        parts = text.split()
        if len(parts) < 5 or parts[0] != "network" or (len(parts) - 3) % 2 != 0:
            raise PriorError(f"{path}: malformed header line {text!r}")
        name = parts[1]
        dims = [int(parts[2])]
        acts = []
        for i in range(3, len(parts), 2):
            dims.append(int(parts[i]))
            acts.append(parts[i + 1])
        specs[name] = (dims, acts)
    if set(specs) != set(_PRIOR_NETS):
        raise PriorError(f"{path}: expected networks {_PRIOR_NETS}, got {sorted(specs)}")

    data = np.frombuffer(blob, dtype="<f8")
    offset = 0
    nets = {}
    for name in _PRIOR_NETS:
        dims, acts = specs[name]
        layers = []
        for i, act in enumerate(acts):
            d_in, d_out = dims[i], dims[i + 1]
            need = d_out * d_in + d_out
            if offset + need > data.size:
                raise PriorError(f"{path}: weight blob too short for {name}")
            w = data[offset : offset + d_out * d_in].reshape(d_out, d_in)
            offset += d_out * d_in
            b = data[offset : offset + d_out]
            offset += d_out
            layers.append((w, b, act))
        nets[name] = Mlp(layers)
    if offset != data.size:
        raise PriorError(f"{path}: {data.size - offset} unused weight values")

    expect = {
        "prior_mu": (STATE_DIM, LATENT_DIM),
        "prior_sigma": (STATE_DIM, LATENT_DIM),
        "decoder": (LATENT_DIM + STATE_DIM, STATE_DIM),
        "encoder": (2 * STATE_DIM, LATENT_DIM),
        "contact": (STATE_DIM, n_contact),
    }
    for name, (d_in, d_out) in expect.items():
        net = nets[name]
        if net.in_dim != d_in or net.out_dim != d_out:
            raise PriorError(
                f"{path}: {name} must map {d_in} -> {d_out}, got "
                f"{net.in_dim} -> {net.out_dim}")
    if nets["prior_sigma"].out_activation not in ("softplus", "exp"):
        raise PriorError(f"{path}: sigma head must declare softplus or exp activation")
    return MlpPrior(prior_mu=nets["prior_mu"], prior_sigma=nets["prior_sigma"],
                    decoder=nets["decoder"], encoder=nets["encoder"], contact=nets["contact"])
