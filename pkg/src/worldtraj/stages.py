"""Staged minimization drivers.

Stage 1 fits each person's global orientation and root translation to the
2D observations (people independent). Stage 2 opens up the full pose,
shape, and the camera scale in one joint problem. Stage 3 re-parameterizes
every track through the transition prior (initial state + latents) and
optimizes scale, ground plane(s), initial states, and latents over an
incrementally growing horizon, with a revert-to-stage-2 fallback.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import motion_prior as mp
from . import so3
from .body import NUM_JOINTS, Skeleton, fk_batch, fk_batch_backward, fk_from_matrices, \
    shape_to_bones
from .camera import CameraIntrinsics, CameraPose, CameraTrajectory, init_world_pose
from .energy import LossWeights, PosePriorMap, e_contact, e_data_person, e_pose, \
    e_shape_grad, e_skate, e_smooth, e_stab
from .ground import GroundPlane, fit_ground
from .motion_prior import ConstVelPrior, RolloutDivergenceError
from .solver import LbfgsSolver, SolverConfig, SolverError, minimize
from .tracks import Track, TrackSet, infill_missing

S0_FREE_DIM = 78  # trans 3 + root orient 3 + body pose 66 + lin vel 3 + ang vel 3


@dataclass
class Scene:
    """Mutable pipeline state shared by the stages."""

    trackset: TrackSet
    cams: CameraTrajectory            # file-scale world-to-camera poses
    intrinsics: CameraIntrinsics
    skel: Skeleton
    alpha: float = 1.0
    pose_map: PosePriorMap = field(default_factory=PosePriorMap.default)
    planes: list = None
    floor_labels: np.ndarray = None

    def copy_state(self):
        return (self.trackset.copy(), float(self.alpha),
                None if self.planes is None else [GroundPlane(p.coeffs.copy())
                                                  for p in self.planes],
                None if self.floor_labels is None else self.floor_labels.copy())

    def restore_state(self, state):
        self.trackset, self.alpha, self.planes, self.floor_labels = state


@dataclass
class StageSchedule:
    stage: int
    iterations: int
    weights: LossWeights
    chunk_size: int = 10
    chunk_min_iters: int = 5
    chunk_max_iters: int = 20
    gamma: float = 1e-3   # relative loss-decrease threshold per iteration

    def __post_init__(self):
        if self.iterations <= 0 or self.chunk_size < 1:
            raise ValueError("iteration budget and chunk size must be positive")


def default_schedules(weights: LossWeights | None = None):
    w = weights or LossWeights()
    return (StageSchedule(stage=1, iterations=30, weights=w),
            StageSchedule(stage=2, iterations=60, weights=w),
            StageSchedule(stage=3, iterations=20, weights=w))


# ---------------------------------------------------------------------------
# World initialization (camera-frame estimates -> world frame)
# ---------------------------------------------------------------------------

def init_world_tracks(trackset: TrackSet, cams: CameraTrajectory, skel: Skeleton,
                      alpha: float = 1.0) -> TrackSet:
    """Lift per-frame camera-frame pose estimates into the world frame and
    infill pose-less frames by interpolation."""
    if trackset.n_frames > len(cams):
        raise ValueError("camera trajectory shorter than the video")
    for tr in trackset:
        for k in np.flatnonzero(tr.has_pose):
            t = tr.t_start + int(k)
            cam = CameraPose(cams.rot[t], cams.trans[t])
            world = init_world_pose(tr.pose_at(int(k)), cam, alpha)
            tr.set_pose(int(k), world)
        infill_missing(tr, skel)
    return trackset


def build_scene(detections, n_frames: int, cams: CameraTrajectory,
                intrinsics: CameraIntrinsics, skel: Skeleton, alpha: float = 1.0,
                min_track_len: int = 3, max_gap: int = 60) -> Scene:
    """Detections + cameras -> world-initialized Scene (the pipeline entry)."""
    from .tracks import build_tracks

    trackset = build_tracks(detections, n_frames, min_track_len=min_track_len,
                            max_gap=max_gap)
    if not trackset.tracks:
        raise ValueError("no usable tracks after ingestion")
    init_world_tracks(trackset, cams, skel, alpha)
    return Scene(trackset=trackset, cams=cams, intrinsics=intrinsics, skel=skel,
                 alpha=alpha)


# ---------------------------------------------------------------------------
# Stage 1: per-person root fit
# ---------------------------------------------------------------------------

def build_stage1_objective(scene: Scene, person: int, weights: LossWeights):
    """Objective over one person's (root orient, root translation) blocks."""
    tr = scene.trackset.tracks[person]
    n = tr.length
    bones = shape_to_bones(tr.betas, scene.skel)
    loc_rot = so3.aa_to_matrix(tr.body_pose)
    canon, _ = fk_from_matrices(np.tile(np.eye(3), (n, 1, 1)), loc_rot, bones,
                                np.zeros((n, 3)), scene.skel.parents)
    rot = scene.cams.rot[tr.t_start:tr.t_end]
    tcam = scene.cams.trans[tr.t_start:tr.t_end]
    k = scene.intrinsics
    alpha = scene.alpha
    lam = weights.data

    def objective(x):
        phi = x[: 3 * n].reshape(n, 3)
        gamma = x[3 * n :].reshape(n, 3)
        rphi = so3.aa_to_matrix(phi)
        joints = np.einsum("tij,tkj->tki", rphi, canon) + gamma[:, None, :]
        val, dj, _ = e_data_person(joints, rot, tcam, alpha, k, tr.keypoints,
                                   tr.conf, weights.sigma_gm, want_grad=True)
        dgamma = dj.sum(axis=1)
        adj = np.einsum("tki,tkj->tij", dj, canon)
        dphi = so3.aa_grad_from_matrix_adjoint(phi, rphi, adj)
        return lam * val, lam * np.concatenate([dphi.ravel(), dgamma.ravel()])

    x0 = np.concatenate([tr.root_orient.ravel(), tr.trans.ravel()])
    return objective, x0


def run_stage1(scene: Scene, schedule: StageSchedule,
               solver_cfg: SolverConfig | None = None, threads: int = 1):
    """30-iteration root fit per person; only root orient and translation move."""
    solver_cfg = solver_cfg or SolverConfig()
    statuses = []

    def solve_one(i):
        tr = scene.trackset.tracks[i]
        objective, x0 = build_stage1_objective(scene, i, schedule.weights)
        try:
            res = minimize(objective, x0, solver_cfg, max_iter=schedule.iterations)
        except SolverError as exc:
            return i, None, f"failed: {exc}"
        return i, res, res.status

    if threads > 1 and len(scene.trackset) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve_one, range(len(scene.trackset))))
    else:
        results = [solve_one(i) for i in range(len(scene.trackset))]

    for i, res, status in results:
        statuses.append(status)
        if res is None:
            continue  # failed person keeps its initialization
        tr = scene.trackset.tracks[i]
        n = tr.length
        tr.root_orient[:] = res.x[: 3 * n].reshape(n, 3)
        tr.trans[:] = res.x[3 * n :].reshape(n, 3)
    return statuses


# ---------------------------------------------------------------------------
# Stage 2: full pose + shape + camera scale
# ---------------------------------------------------------------------------

def _stage2_layout(trackset: TrackSet):
    slices = []
    off = 0
    for tr in trackset:
        n = tr.length
        size = 72 * n + 16
        slices.append((off, n))
        off += size
    return slices, off + 1  # + log alpha


def build_stage2_objective(scene: Scene, weights: LossWeights):
    trackset = scene.trackset
    skel = scene.skel
    k = scene.intrinsics
    pose_map = scene.pose_map
    slices, dim = _stage2_layout(trackset)
    cams_rot = [scene.cams.rot[tr.t_start:tr.t_end] for tr in trackset]
    cams_tr = [scene.cams.trans[tr.t_start:tr.t_end] for tr in trackset]

    def unpack(x, i):
        off, n = slices[i]
        phi = x[off : off + 3 * n].reshape(n, 3)
        theta = x[off + 3 * n : off + 69 * n].reshape(n, NUM_JOINTS, 3)
        gamma = x[off + 69 * n : off + 72 * n].reshape(n, 3)
        betas = x[off + 72 * n : off + 72 * n + 16]
        return phi, theta, gamma, betas

    def objective(x):
        alpha = float(np.exp(x[-1]))
        total = 0.0
        grad = np.zeros_like(x)
        dlog_alpha = 0.0
        for i, tr in enumerate(trackset):
            off, n = slices[i]
            phi, theta, gamma, betas = unpack(x, i)
            bones = shape_to_bones(betas, skel)
            joints, cache = fk_batch(phi, theta, bones, gamma, skel.parents)

            vd, djd, dad = e_data_person(joints, cams_rot[i], cams_tr[i], alpha, k,
                                         tr.keypoints, tr.conf, weights.sigma_gm,
                                         want_grad=True)
            vs, djs = e_smooth(joints, want_grad=True)
            vp, dthp = e_pose(theta, pose_map, want_grad=True)
            vb, dbs = e_shape_grad(betas)
            total += weights.data * vd + weights.smooth * vs \
                + weights.pose * vp + weights.beta * vb
            dj = weights.data * djd + weights.smooth * djs
            dphi, dtheta, dbones, dgamma = fk_batch_backward(cache, dj, skel.parents)
            dtheta = dtheta + weights.pose * dthp
            dbetas = skel.shape_basis.T @ dbones.sum(axis=0).ravel() + weights.beta * dbs
            grad[off : off + 3 * n] = dphi.ravel()
            grad[off + 3 * n : off + 69 * n] = dtheta.ravel()
            grad[off + 69 * n : off + 72 * n] = dgamma.ravel()
            grad[off + 72 * n : off + 72 * n + 16] = dbetas
            dlog_alpha += weights.data * dad * alpha
        grad[-1] = dlog_alpha
        return total, grad

    x0 = np.empty(dim)
    for i, tr in enumerate(trackset):
        off, n = slices[i]
        x0[off : off + 3 * n] = tr.root_orient.ravel()
        x0[off + 3 * n : off + 69 * n] = tr.body_pose.ravel()
        x0[off + 69 * n : off + 72 * n] = tr.trans.ravel()
        x0[off + 72 * n : off + 72 * n + 16] = tr.betas
    x0[-1] = np.log(scene.alpha)
    return objective, x0, slices, unpack


def rescale_alpha_for_smoothness(scene: Scene) -> float:
    """Exact descent step in the scale: changing alpha by delta while shifting
    every root by -delta * R_t^T T_t leaves all reprojections bit-identical,
    so the joint-smoothness term can be minimized over delta in closed form.

    Returns the applied delta. Needed because the data term is indifferent
    to the scale (roots absorb it), leaving alpha's raw gradient ~0.
    """
    num = 0.0
    den = 0.0
    shifts = []
    for tr in scene.trackset:
        u = np.einsum("tji,tj->ti", scene.cams.rot[tr.t_start:tr.t_end],
                      scene.cams.trans[tr.t_start:tr.t_end])
        shifts.append(u)
        if tr.length < 2:
            continue
        w = u[:-1] - u[1:]
        bones = shape_to_bones(tr.betas, scene.skel)
        joints, _ = fk_batch(tr.root_orient, tr.body_pose, bones, tr.trans,
                             scene.skel.parents)
        d = joints[:-1] - joints[1:]
        num += float(np.sum(d * w[:, None, :]))
        den += joints.shape[1] * float(np.sum(w * w))
    if den < 1e-12:
        return 0.0
    delta = num / den
    new_alpha = scene.alpha + delta
    if new_alpha <= 1e-3 * scene.alpha:
        delta = -0.999 * scene.alpha  # keep the scale positive
        new_alpha = scene.alpha + delta
    for tr, u in zip(scene.trackset, shifts):
        tr.trans -= delta * u
    scene.alpha = float(new_alpha)
    return float(delta)


def run_stage2(scene: Scene, schedule: StageSchedule,
               solver_cfg: SolverConfig | None = None):
    """60-iteration joint fit of every person's full pose plus the scale.

    The closed-form smoothness rescale brackets the solve so the scale
    starts and ends on the data-preserving manifold's smoothness optimum.
    """
    solver_cfg = solver_cfg or SolverConfig()
    rescale_alpha_for_smoothness(scene)
    objective, x0, slices, unpack = build_stage2_objective(scene, schedule.weights)
    res = minimize(objective, x0, solver_cfg, max_iter=schedule.iterations)
    for i, tr in enumerate(scene.trackset):
        phi, theta, gamma, betas = unpack(res.x, i)
        tr.root_orient[:] = phi
        tr.body_pose[:] = theta
        tr.trans[:] = gamma
        tr.betas[:] = betas
    scene.alpha = float(np.exp(res.x[-1]))
    rescale_alpha_for_smoothness(scene)
    return res


# ---------------------------------------------------------------------------
# Ground initialization between stages 2 and 3
# ---------------------------------------------------------------------------

def init_ground(scene: Scene):
    """Fit the shared plane(s) from current foot positions (single floor
    unless floor_labels were already assigned)."""
    feet_per_person = []
    for tr in scene.trackset:
        bones = shape_to_bones(tr.betas, scene.skel)
        joints, _ = fk_batch(tr.root_orient, tr.body_pose, bones, tr.trans,
                             scene.skel.parents)
        feet_per_person.append(joints[:, list(scene.skel.foot_joints)].reshape(-1, 3))
    if scene.floor_labels is None:
        scene.floor_labels = np.zeros(len(scene.trackset.tracks), dtype=int)
        scene.planes = [fit_ground(np.concatenate(feet_per_person))]
    else:
        n_planes = int(scene.floor_labels.max()) + 1
        scene.planes = []
        for ci in range(n_planes):
            pts = np.concatenate([feet_per_person[i]
                                  for i in np.flatnonzero(scene.floor_labels == ci)])
            scene.planes.append(fit_ground(pts))
    return scene.planes


# ---------------------------------------------------------------------------
# Stage 3: transition-prior rollout over an incremental horizon
# ---------------------------------------------------------------------------

@dataclass
class PersonRollout:
    """Stage-3 per-person optimization state."""

    s0: mp.MotionState
    z: np.ndarray          # (len-1, 48) current latents (prefix optimized)
    prior: object          # bound backend
    track: Track


@dataclass
class Stage3Result:
    fallback: bool
    status: str
    final_loss: float
    horizons: list
    contact_energy: list   # per person, unweighted E_con at the solution


def _lift_person(tr: Track, skel: Skeleton, prior) -> PersonRollout:
    seq = mp.states_from_poses(tr.root_orient, tr.body_pose, tr.trans, tr.betas, skel)
    bound = prior.bind(skel, tr.betas)
    z = mp.encode_sequence(seq, bound)
    return PersonRollout(s0=seq.state(0), z=z, prior=bound, track=tr)


def _s0_vector(s0: mp.MotionState) -> np.ndarray:
    return np.concatenate([s0.trans, s0.root_orient, s0.body_pose.ravel(),
                           s0.lin_vel, s0.ang_vel])


def _s0_update(s0: mp.MotionState, vec) -> mp.MotionState:
    out = s0.copy()
    out.trans = vec[0:3].copy()
    out.root_orient = vec[3:6].copy()
    out.body_pose = vec[6:72].reshape(NUM_JOINTS, 3).copy()
    out.lin_vel = vec[72:75].copy()
    out.ang_vel = vec[75:78].copy()
    return out


def _rollout(person: PersonRollout, n_steps: int):
    """Rollout of length n_steps+1 with the person's current variables."""
    z = person.z[:n_steps]
    if person.prior.kind == "constant-velocity":
        return mp.rollout_cv(person.s0, z, person.prior)
    return mp.rollout(person.s0, z, person.prior), None


def build_stage3_objective(scene: Scene, persons, lengths, contacts_list,
                           weights: LossWeights):
    """Joint objective over [log alpha, planes, per-person (s0, latents)].

    lengths[i] is person i's rollout length for the current horizon;
    contacts_list[i] holds that person's frozen contact probabilities.
    """
    skel = scene.skel
    k = scene.intrinsics
    n_planes = len(scene.planes)
    labels = scene.floor_labels
    pose_map = scene.pose_map

    offs = []
    off = 1 + 3 * n_planes
    for i, person in enumerate(persons):
        n = lengths[i]
        offs.append(off)
        off += S0_FREE_DIM + 48 * (n - 1)
    dim = off

    cams_rot = [scene.cams.rot[p.track.t_start : p.track.t_start + lengths[i]]
                for i, p in enumerate(persons)]
    cams_tr = [scene.cams.trans[p.track.t_start : p.track.t_start + lengths[i]]
               for i, p in enumerate(persons)]
    kp = [p.track.keypoints[: lengths[i]] for i, p in enumerate(persons)]
    conf = [p.track.conf[: lengths[i]] for i, p in enumerate(persons)]
    beta_energy = sum(float(np.sum(p.track.betas ** 2)) for p in persons)

    def objective(x):
        alpha = float(np.exp(x[0]))
        planes = [GroundPlane(x[1 + 3 * ci : 4 + 3 * ci]) for ci in range(n_planes)]
        total = weights.beta * beta_energy
        grad = np.zeros_like(x)
        for i, person in enumerate(persons):
            n = lengths[i]
            o = offs[i]
            s0 = _s0_update(person.s0, x[o : o + S0_FREE_DIM])
            z = x[o + S0_FREE_DIM : o + S0_FREE_DIM + 48 * (n - 1)].reshape(n - 1, 48)
            plane = planes[labels[i]]
            contacts = contacts_list[i][:n]

            if person.prior.kind == "constant-velocity":
                seq, cache = mp.rollout_cv(s0, z, person.prior)
            else:
                seq = mp.rollout(s0, z, person.prior)
                cache = None
            if not seq.is_finite():
                return float("inf"), grad

            g = mp.zero_state_grads(n)
            vd, djd, dad = e_data_person(seq.joints, cams_rot[i], cams_tr[i], alpha,
                                         k, kp[i], conf[i], weights.sigma_gm,
                                         want_grad=True)
            vp, dthp = e_pose(seq.body_pose, pose_map, want_grad=True)
            vsk, djsk = e_skate(seq.joints, contacts, skel.foot_joints, want_grad=True)
            vc, djc, dplane = e_contact(seq.joints, contacts, plane, weights.delta,
                                        skel.foot_joints, want_grad=True)
            g.joints += weights.data * djd + weights.skate * djsk + weights.contact * djc
            g.body_pose += weights.pose * dthp
            total += weights.data * vd + weights.pose * vp \
                + weights.skate * vsk + weights.contact * vc
            grad[0] += weights.data * dad * alpha
            pslice = slice(1 + 3 * labels[i], 4 + 3 * labels[i])
            grad[pslice] += weights.contact * dplane

            dz_extra = np.zeros_like(z)
            if person.prior.kind == "constant-velocity":
                sigma = person.prior.latent_sigma
                nll = z.shape[0] * float(np.sum(np.log(sigma * np.sqrt(2 * np.pi)))) \
                    + 0.5 * float(np.sum((z / sigma) ** 2))
                total += weights.cvae * nll
                dz_extra += weights.cvae * z / sigma**2
                ds0, dz, _ = mp.rollout_cv_backward(cache, g)
                ds0_vec = np.concatenate([ds0["trans"], ds0["root_orient"],
                                          ds0["body_pose"].ravel(),
                                          ds0["lin_vel"], ds0["ang_vel"]])
            else:
                vstab, gstab, _ = e_stab(seq, skel, person.track.betas, want_grad=True)
                total += weights.stab * vstab
                for fname in mp.StateSequence.FIELDS:
                    getattr(g, fname)[:] += weights.stab * getattr(gstab, fname)
                nll_grads = []
                for t in range(z.shape[0]):
                    v, dzt, dsp = mp.prior_nll_grad(z[t], seq.state(t), person.prior)
                    total += weights.cvae * v
                    dz_extra[t] += weights.cvae * dzt
                    nll_grads.append(weights.cvae * dsp)
                ds0_vec, dz = _mlp_bptt(person.prior, seq, z, g, nll_grads)
                ds0_vec = ds0_vec[:S0_FREE_DIM]
            grad[o : o + S0_FREE_DIM] += ds0_vec
            grad[o + S0_FREE_DIM : o + S0_FREE_DIM + 48 * (n - 1)] += \
                (dz + dz_extra).ravel()
        return total, grad

    x0 = np.empty(dim)
    x0[0] = np.log(scene.alpha)
    for ci in range(n_planes):
        x0[1 + 3 * ci : 4 + 3 * ci] = scene.planes[ci].coeffs
    for i, person in enumerate(persons):
        o = offs[i]
        n = lengths[i]
        x0[o : o + S0_FREE_DIM] = _s0_vector(person.s0)
        x0[o + S0_FREE_DIM : o + S0_FREE_DIM + 48 * (n - 1)] = person.z[: n - 1].ravel()
    return objective, x0, offs


def _mlp_bptt(prior, seq: mp.StateSequence, z, grads: mp.StateSequence, nll_sprev):
    """Backward through the additive MLP rollout s_t = s_{t-1} + dec(z, s_{t-1})."""
    n = len(seq)
    dz = np.zeros_like(z)
    carry = np.zeros(mp.STATE_DIM)
    for t in range(n - 1, 0, -1):
        adj = carry + _state_grad_vector(grads, t)
        x_in = np.concatenate([z[t - 1], seq.state(t - 1).vector()])
        _, dec_cache = prior.decoder.forward(x_in)
        dx = prior.decoder.vjp(dec_cache, adj)
        dz[t - 1] = dx[: mp.LATENT_DIM]
        carry = adj + dx[mp.LATENT_DIM :]
        carry += nll_sprev[t - 1]
    ds0 = carry + _state_grad_vector(grads, 0)
    return ds0, dz


def _state_grad_vector(grads: mp.StateSequence, t: int) -> np.ndarray:
    return np.concatenate([
        grads.trans[t], grads.root_orient[t], grads.body_pose[t].ravel(),
        grads.lin_vel[t], grads.ang_vel[t], grads.joints[t].ravel(),
        grads.joint_vel[t].ravel(),
    ])


def run_stage3(scene: Scene, prior, schedule: StageSchedule,
               solver_cfg: SolverConfig | None = None) -> Stage3Result:
    """Incremental-horizon joint optimization with a stage-2 fallback."""
    solver_cfg = solver_cfg or SolverConfig()
    snapshot = scene.copy_state()
    if scene.planes is None:
        init_ground(scene)
    try:
        return _run_stage3_inner(scene, prior, schedule, solver_cfg)
    except (RolloutDivergenceError, SolverError, mp.PriorError) as exc:
        scene.restore_state(snapshot)
        return Stage3Result(fallback=True, status=f"reverted: {exc}",
                            final_loss=float("nan"), horizons=[], contact_energy=[])


def _run_stage3_inner(scene, prior, schedule, solver_cfg) -> Stage3Result:
    persons = [_lift_person(tr, scene.skel, prior) for tr in scene.trackset]
    t_max = scene.trackset.t_max
    n_chunks = int(np.ceil(t_max / schedule.chunk_size))
    horizons = []
    last_loss = float("nan")

    for tau in range(1, n_chunks + 1):
        horizon = min(schedule.chunk_size * tau, t_max)
        horizons.append(horizon)
        lengths = [min(horizon, p.track.length) for p in persons]

        contacts_list = []
        for i, p in enumerate(persons):
            seq = _rollout(p, lengths[i] - 1)[0]
            plane = scene.planes[scene.floor_labels[i]]
            contacts_list.append(mp.contact_probabilities(seq, p.prior, plane))

        objective, x0, offs = build_stage3_objective(scene, persons, lengths,
                                                     contacts_list, schedule.weights)
        solver = LbfgsSolver(objective, x0, solver_cfg)
        prev = solver.f
        for it in range(1, schedule.chunk_max_iters + 1):
            status = solver.step()
            if status != "running":
                break
            rel = (prev - solver.f) / max(abs(prev), 1e-12)
            prev = solver.f
            if it >= schedule.chunk_min_iters and rel < schedule.gamma:
                break
        x = solver.best_x
        if not np.isfinite(solver.best_f):
            raise SolverError("stage-3 loss went non-finite")
        last_loss = solver.best_f

        scene.alpha = float(np.exp(x[0]))
        for ci in range(len(scene.planes)):
            scene.planes[ci] = GroundPlane(x[1 + 3 * ci : 4 + 3 * ci].copy())
        for i, p in enumerate(persons):
            o = offs[i]
            n = lengths[i]
            p.s0 = _s0_update(p.s0, x[o : o + S0_FREE_DIM])
            p.z[: n - 1] = x[o + S0_FREE_DIM : o + S0_FREE_DIM + 48 * (n - 1)].reshape(
                n - 1, 48)

    # write the final full-length rollouts back into the tracks
    contact_energy = []
    for i, p in enumerate(persons):
        seq = _rollout(p, p.track.length - 1)[0]
        if not seq.is_finite():
            raise RolloutDivergenceError(0)
        tr = p.track
        tr.root_orient[:] = seq.root_orient
        tr.body_pose[:] = seq.body_pose
        tr.trans[:] = seq.trans
        plane = scene.planes[scene.floor_labels[i]]
        fresh = mp.contact_probabilities(seq, p.prior, plane)
        contact_energy.append(
            e_contact(seq.joints, fresh, plane, schedule.weights.delta,
                      scene.skel.foot_joints))
    return Stage3Result(fallback=False, status="ok", final_loss=float(last_loss),
                        horizons=horizons, contact_energy=contact_energy)
