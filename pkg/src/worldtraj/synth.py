"""Synthetic scene generator: parametric human trajectories with an
exact-stance walking gait, camera paths, a known true scale, and rendered
noisy 2D detections. This is the ground-truth oracle for the test suite.

Feet are driven by closed-form two-link leg IK toward anchor points, so
stance feet are stationary to machine precision and contact labels are
exact. Ground-truth contact labels mark stance *toes* (the joints that sit
on the floor); see the contact heuristic for how ankles are handled during
optimization.
"""

from __future__ import annotations

import configparser
import io
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import so3
from .body import FOOT_JOINTS, NUM_JOINTS, PoseParams, Skeleton, default_skeleton, \
    fk_batch, shape_to_bones
from .camera import CameraIntrinsics, CameraTrajectory, world_pose_to_camera, CameraPose
from .ground import GroundPlane
from .tracks import Detection2D, save_detections

WALK_ROOT_HEIGHT = 0.88    # meters above the floor while walking
STAND_ROOT_HEIGHT = 0.93
ANKLE_ANCHOR_Z = 0.06      # stance ankle height; puts the toe on the floor
SWING_LIFT = 0.05
CYCLE_SECONDS = 1.0        # full gait cycle (two steps)

PERSON_FAMILIES = ("static", "line", "circle", "sinusoid-walk")
CAMERA_FAMILIES = ("static", "follow", "orbit", "lateral-track")


class SynthError(ValueError):
    pass


@dataclass
class PersonSpec:
    family: str = "line"
    speed: float = 1.0            # m/s along the path
    start: tuple = (0.0, 0.0)     # xy, meters
    heading: float = np.pi / 2    # radians; initial walking direction (+y)
    phase: float = 0.0            # gait phase offset, cycles
    floor_z: float = 0.0
    radius: float = 1.5           # circle family
    sway_amp: float = 0.3         # sinusoid-walk family
    sway_period: float = 2.0      # seconds
    betas: tuple = tuple([0.0] * 16)

    def __post_init__(self):
        if self.family not in PERSON_FAMILIES:
            raise SynthError(f"unknown trajectory family {self.family!r}")
        if self.speed < 0:
            raise SynthError("speed must be nonnegative")


@dataclass
class CameraSpec:
    family: str = "follow"
    target: int = 0                   # person index for follow
    offset: tuple = (0.0, -3.5, 0.6)  # follow: world offset from the target root
    position: tuple = (0.0, -4.0, 1.6)  # static / lateral-track base position
    look_at: tuple = (0.0, 2.0, 0.9)    # static / lateral-track aim point
    radius: float = 6.0               # orbit
    height: float = 1.6               # orbit camera height
    angular_speed: float = 0.5        # orbit, rad/s
    track_speed: float = 1.0          # lateral-track, m/s along +x

    def __post_init__(self):
        if self.family not in CAMERA_FAMILIES:
            raise SynthError(f"unknown camera family {self.family!r}")


@dataclass
class NoiseConfig:
    px_sigma: float = 0.0
    occlusion_p: float = 0.0
    dropout_frac: float = 0.0
    dropout_max_gap: int = 15
    pose_rot_sigma: float = 0.0
    pose_trans_sigma: float = 0.0
    beta_sigma: float = 0.0

    @classmethod
    def standard(cls, px_sigma: float = 2.0) -> "NoiseConfig":
        return cls(px_sigma=px_sigma, occlusion_p=0.01,
                   pose_rot_sigma=0.03, pose_trans_sigma=0.03, beta_sigma=0.2)


@dataclass
class SceneConfig:
    n_frames: int = 100
    fps: float = 30.0
    persons: list = field(default_factory=lambda: [PersonSpec()])
    camera: CameraSpec = field(default_factory=CameraSpec)
    alpha_star: float = 1.0
    image_size: tuple = (1280, 720)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 3:
            raise SynthError("need at least 3 frames")
        if self.alpha_star <= 0:
            raise SynthError("alpha_star must be positive")
        for p in (self.noise.occlusion_p, self.noise.dropout_frac):
            if not 0.0 <= p <= 1.0:
                raise SynthError("probabilities must be in [0, 1]")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_image_size(*self.image_size)


@dataclass
class PersonTruth:
    root_orient: np.ndarray   # (T, 3)
    body_pose: np.ndarray     # (T, 22, 3)
    trans: np.ndarray         # (T, 3)
    betas: np.ndarray         # (16,)
    contacts: np.ndarray      # (T, 4) bool over FOOT_JOINTS (toes labeled)
    joints: np.ndarray        # (T, 22, 3)


@dataclass
class SyntheticScene:
    config: SceneConfig
    skel: Skeleton
    persons: list                     # list[PersonTruth]
    cams_metric: CameraTrajectory     # metric world-to-camera
    cams_file: CameraTrajectory       # translations divided by alpha_star
    detections: list                  # list[Detection2D]
    planes: list                      # GroundPlane per floor level
    floor_labels: np.ndarray          # (N,) plane index per person


# ---------------------------------------------------------------------------
# Path families
# ---------------------------------------------------------------------------

def _path_xy_heading(spec: PersonSpec, t: float):
    """Returns (xy (2,), heading rad) of the root path at time t seconds."""
    c, s = np.cos(spec.heading), np.sin(spec.heading)
    fwd = np.array([c, s])
    if spec.family == "static":
        return np.asarray(spec.start, dtype=np.float64), spec.heading
    if spec.family == "line":
        return np.asarray(spec.start) + fwd * spec.speed * t, spec.heading
    if spec.family == "circle":
        omega = spec.speed / spec.radius
        ang = spec.heading + omega * t
        center = np.asarray(spec.start) - spec.radius * np.array(
            [np.sin(spec.heading), -np.cos(spec.heading)])
        xy = center + spec.radius * np.array([np.sin(ang), -np.cos(ang)])
        return xy, ang
    # sinusoid-walk: line plus lateral sway; heading follows the tangent
    perp = np.array([-s, c])
    w = 2.0 * np.pi / spec.sway_period
    xy = np.asarray(spec.start) + fwd * spec.speed * t + perp * spec.sway_amp * np.sin(w * t)
    d_along = spec.speed
    d_perp = spec.sway_amp * w * np.cos(w * t)
    return xy, spec.heading + np.arctan2(d_perp, max(d_along, 1e-9))


# ---------------------------------------------------------------------------
# Exact-stance gait via two-link leg IK
# ---------------------------------------------------------------------------

def _rot_x(q):
    c, s = np.cos(q), np.sin(q)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def _rot_z(q):
    c, s = np.cos(q), np.sin(q)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def _minimal_rotation(u, v):
    """Rotation matrix taking unit vector u to unit vector v (shortest arc)."""
    axis = np.cross(u, v)
    s = np.linalg.norm(axis)
    c = float(np.dot(u, v))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: rotate 180 degrees about any perpendicular
        perp = np.array([1.0, 0, 0]) if abs(u[0]) < 0.9 else np.array([0, 1.0, 0])
        axis = np.cross(u, perp)
        axis /= np.linalg.norm(axis)
        return so3.aa_to_matrix(axis * np.pi)
    angle = np.arctan2(s, c)
    return so3.aa_to_matrix(axis / s * angle)


def _leg_ik(hip_world, ankle_target, pelvis_rot, b_knee, b_ankle, foot_heading):
    """Closed-form hip/knee/ankle rotations placing the ankle exactly at the
    target with the foot flat at foot_heading. Returns (hip aa, knee aa,
    ankle aa, clamped flag)."""
    v_world = ankle_target - hip_world
    v_local = pelvis_rot.T @ v_world
    r = float(np.linalg.norm(v_local))
    l1 = float(np.linalg.norm(b_knee))
    l2 = float(np.linalg.norm(b_ankle))
    lo, hi = abs(l1 - l2) + 1e-4, l1 + l2 - 1e-5
    clamped = not (lo <= r <= hi)
    r_eff = float(np.clip(r, lo, hi))

    # knee angle about local +x: b_knee . R_x(q) b_ankle = (r^2-l1^2-l2^2)/2
    a_c = b_knee[1] * b_ankle[1] + b_knee[2] * b_ankle[2]
    b_c = b_knee[2] * b_ankle[1] - b_knee[1] * b_ankle[2]
    c_c = b_knee[0] * b_ankle[0]
    target = (r_eff**2 - l1**2 - l2**2) / 2.0
    amp = float(np.hypot(a_c, b_c))
    phase = float(np.arctan2(b_c, a_c))
    val = np.clip((target - c_c) / max(amp, 1e-12), -1.0, 1.0)
    q_knee = phase - float(np.arccos(val))   # branch with the heel trailing
    if q_knee > 0:
        q_knee = phase + float(np.arccos(val)) - 2 * np.pi

    knee_rot = _rot_x(q_knee)
    u = b_knee + knee_rot @ b_ankle
    u_hat = u / np.linalg.norm(u)
    v_hat = v_local / max(r, 1e-12)
    hip_rot = _minimal_rotation(u_hat, v_hat)

    chain = pelvis_rot @ hip_rot @ knee_rot
    ankle_rot = chain.T @ _rot_z(foot_heading)
    return (so3.matrix_to_aa(hip_rot), np.array([q_knee, 0.0, 0.0]),
            so3.matrix_to_aa(ankle_rot), clamped)


def _generate_person(spec: PersonSpec, n_frames: int, fps: float,
                     skel: Skeleton) -> PersonTruth:
    betas = np.asarray(spec.betas, dtype=np.float64)
    bones = shape_to_bones(betas, skel)
    b_hip = {"l": bones[1], "r": bones[2]}
    b_knee = {"l": bones[4], "r": bones[5]}
    b_ankle = {"l": bones[7], "r": bones[8]}

    walking = spec.family != "static" and spec.speed > 1e-9
    root_h = WALK_ROOT_HEIGHT if walking else STAND_ROOT_HEIGHT
    # a hip at +x in the template sits at -perp(heading) in the world
    lateral = {"l": -float(b_hip["l"][0]), "r": -float(b_hip["r"][0])}

    def anchor(side: str, k: int):
        """Foot anchor for stance cycle k: path point at mid-stance, offset
        laterally; returns (xy, heading)."""
        mid_phase = 0.25 if side == "l" else 0.75
        t_mid = (k + mid_phase - spec.phase) * CYCLE_SECONDS
        xy, h = _path_xy_heading(spec, t_mid)
        perp = np.array([-np.sin(h), np.cos(h)])
        return xy + lateral[side] * perp, h

    root_orient = np.zeros((n_frames, 3))
    body_pose = np.zeros((n_frames, NUM_JOINTS, 3))
    trans = np.zeros((n_frames, 3))
    contacts = np.zeros((n_frames, len(FOOT_JOINTS)), dtype=bool)
    toe_cols = {7: 0, 8: 1, 10: 2, 11: 3}
    clamp_hit = False

    for f in range(n_frames):
        t = f / fps
        xy, heading = _path_xy_heading(spec, t)
        pelvis_rot = _rot_z(heading - np.pi / 2)  # template faces +y
        root = np.array([xy[0], xy[1], spec.floor_z + root_h])
        trans[f] = root
        root_orient[f] = so3.matrix_to_aa(pelvis_rot)

        phi = t / CYCLE_SECONDS + spec.phase
        cyc = int(np.floor(phi))
        frac = phi - cyc
        for side, joint_ids in (("l", (1, 4, 7, 10)), ("r", (2, 5, 8, 11))):
            if not walking:
                a_xy, a_h = anchor(side, 0)
                target = np.array([a_xy[0], a_xy[1], spec.floor_z + ANKLE_ANCHOR_Z])
                foot_h = a_h
                in_stance = True
            else:
                stance = frac < 0.5 if side == "l" else frac >= 0.5
                if side == "l":
                    k_st, su = cyc, (frac - 0.5) * 2.0
                else:
                    k_st = cyc if frac >= 0.5 else cyc - 1
                    su = frac * 2.0 if frac < 0.5 else 0.0
                if stance:
                    a_xy, a_h = anchor(side, k_st)
                    target = np.array([a_xy[0], a_xy[1], spec.floor_z + ANKLE_ANCHOR_Z])
                    foot_h = a_h
                    in_stance = True
                else:
                    a0_xy, a0_h = anchor(side, k_st)
                    a1_xy, a1_h = anchor(side, k_st + 1)
                    w = su * su * (3.0 - 2.0 * su)  # smoothstep: lands with zero speed
                    xy_sw = a0_xy + w * (a1_xy - a0_xy)
                    lift = SWING_LIFT * np.sin(np.pi * su)
                    target = np.array([xy_sw[0], xy_sw[1],
                                       spec.floor_z + ANKLE_ANCHOR_Z + lift])
                    dh = np.arctan2(np.sin(a1_h - a0_h), np.cos(a1_h - a0_h))
                    foot_h = a0_h + w * dh
                    in_stance = False
            hip_world = root + pelvis_rot @ b_hip[side]
            hip_aa, knee_aa, ankle_aa, clamped = _leg_ik(
                hip_world, target, pelvis_rot, b_knee[side], b_ankle[side],
                foot_h - np.pi / 2)
            clamp_hit = clamp_hit or clamped
            hip_j, knee_j, ankle_j, toe_j = joint_ids
            body_pose[f, hip_j] = hip_aa
            body_pose[f, knee_j] = knee_aa
            body_pose[f, ankle_j] = ankle_aa
            if in_stance:
                contacts[f, toe_cols[toe_j]] = True
    if clamp_hit:
        warnings.warn("leg IK target out of reach; feet were clamped (reduce speed)")

    joints, _ = fk_batch(root_orient, body_pose, bones, trans, skel.parents)
    return PersonTruth(root_orient=root_orient, body_pose=body_pose, trans=trans,
                       betas=betas, contacts=contacts, joints=joints)


# ---------------------------------------------------------------------------
# Camera paths
# ---------------------------------------------------------------------------

def _look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at center looking at target
    (OpenCV axes: +z forward, +y down)."""
    fwd = target - center
    n = np.linalg.norm(fwd)
    if n < 1e-9:
        raise SynthError("camera target coincides with its position")
    z = fwd / n
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-6:  # looking straight up/down
        x = np.array([1.0, 0.0, 0.0])
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def _generate_cameras(cfg: SceneConfig, persons) -> CameraTrajectory:
    spec = cfg.camera
    n = cfg.n_frames
    rot = np.empty((n, 3, 3))
    trans = np.empty((n, 3))
    ts = np.arange(n) / cfg.fps

    if spec.family == "follow":
        target = persons[spec.target]
        offset = np.asarray(spec.offset, dtype=np.float64)
        r_fix = _look_at(target.trans[0] + offset, target.trans[0])
        for f in range(n):
            center = target.trans[f] + offset
            rot[f] = r_fix
            trans[f] = -r_fix @ center
    elif spec.family == "static":
        r_fix = _look_at(np.asarray(spec.position, dtype=np.float64),
                         np.asarray(spec.look_at, dtype=np.float64))
        center = np.asarray(spec.position, dtype=np.float64)
        for f in range(n):
            rot[f] = r_fix
            trans[f] = -r_fix @ center
    elif spec.family == "orbit":
        look = np.asarray(spec.look_at, dtype=np.float64)
        for f in range(n):
            ang = spec.angular_speed * ts[f]
            center = look + np.array([spec.radius * np.cos(ang),
                                      spec.radius * np.sin(ang),
                                      spec.height - look[2]])
            r = _look_at(center, look)
            rot[f] = r
            trans[f] = -r @ center
    else:  # lateral-track
        base = np.asarray(spec.position, dtype=np.float64)
        r_fix = _look_at(base, np.asarray(spec.look_at, dtype=np.float64))
        for f in range(n):
            center = base + np.array([spec.track_speed * ts[f], 0.0, 0.0])
            rot[f] = r_fix
            trans[f] = -r_fix @ center
    return CameraTrajectory(rot, trans, ts)


# ---------------------------------------------------------------------------
# Detection rendering
# ---------------------------------------------------------------------------

def _dropout_gaps(rng, n_frames: int, frac: float, max_gap: int):
    """Frame mask with ~frac of frames dropped in contiguous gaps <= max_gap;
    the first and last two frames always stay observed."""
    keep = np.ones(n_frames, dtype=bool)
    if frac <= 0:
        return keep
    target = int(round(frac * n_frames))
    dropped = 0
    attempts = 0
    while dropped < target and attempts < 200:
        attempts += 1
        length = int(rng.integers(3, max_gap + 1))
        length = min(length, target - dropped + 2)
        if length < 1:
            break
        start = int(rng.integers(2, max(3, n_frames - length - 2)))
        seg = slice(start, start + length)
        # keep at least one observed frame between gaps
        lo = max(0, start - 1)
        hi = min(n_frames, start + length + 1)
        if np.all(keep[lo:hi]):
            keep[seg] = False
            dropped += length
    return keep


def render_detections(scene_persons, cams_metric: CameraTrajectory,
                      k: CameraIntrinsics, noise: NoiseConfig, rng,
                      skel: Skeleton):
    """Project ground-truth joints into noisy detections (one rng stream)."""
    dets = []
    n = len(cams_metric)
    for pid, person in enumerate(scene_persons):
        keep = _dropout_gaps(rng, n, noise.dropout_frac, noise.dropout_max_gap)
        beta_hat = person.betas + (rng.normal(scale=noise.beta_sigma, size=16)
                                   if noise.beta_sigma > 0 else 0.0)
        for f in range(n):
            cam = CameraPose(cams_metric.rot[f], cams_metric.trans[f])
            y = (cam.rot @ person.joints[f].T).T + cam.trans
            if np.any(y[:, 2] <= 1e-3):
                continue  # person behind the camera: no detection
            if not keep[f]:
                continue
            px = np.stack([k.fx * y[:, 0] / y[:, 2] + k.cx,
                           k.fy * y[:, 1] / y[:, 2] + k.cy], axis=-1)
            conf = np.ones(NUM_JOINTS)
            if noise.px_sigma > 0:
                px = px + rng.normal(scale=noise.px_sigma, size=px.shape)
            if noise.occlusion_p > 0:
                occ = rng.uniform(size=NUM_JOINTS) < noise.occlusion_p
                conf[occ] = 0.0
                px[occ] = 0.0
            world_pose = PoseParams(person.root_orient[f], person.body_pose[f],
                                    person.betas, person.trans[f])
            cam_pose = world_pose_to_camera(world_pose, cam, 1.0)
            if noise.pose_rot_sigma > 0:
                cam_pose.root_orient = cam_pose.root_orient + rng.normal(
                    scale=noise.pose_rot_sigma, size=3)
                cam_pose.body_pose = cam_pose.body_pose + rng.normal(
                    scale=noise.pose_rot_sigma, size=(NUM_JOINTS, 3))
            if noise.pose_trans_sigma > 0:
                cam_pose.trans = cam_pose.trans + rng.normal(
                    scale=noise.pose_trans_sigma, size=3)
            cam_pose.betas = beta_hat
            dets.append(Detection2D(frame=f, person_id=pid, keypoints=px, conf=conf,
                                    pose=cam_pose, root3d=cam_pose.trans.copy()))
    return dets


# ---------------------------------------------------------------------------
# Scene assembly and files
# ---------------------------------------------------------------------------

def generate(config: SceneConfig, skel: Skeleton | None = None) -> SyntheticScene:
    """Deterministic given config.seed; the seed only affects noise."""
    skel = skel or default_skeleton()
    persons = [_generate_person(spec, config.n_frames, config.fps, skel)
               for spec in config.persons]
    cams_metric = _generate_cameras(config, persons)
    cams_file = CameraTrajectory(cams_metric.rot.copy(),
                                 cams_metric.trans / config.alpha_star,
                                 cams_metric.timestamps.copy(),
                                 quat=cams_metric.quat.copy())
    rng = np.random.default_rng(config.seed)
    dets = render_detections(persons, cams_metric, config.intrinsics, config.noise,
                             rng, skel)
    floors = sorted({spec.floor_z for spec in config.persons})
    planes = [GroundPlane.horizontal(z) for z in floors]
    labels = np.array([floors.index(spec.floor_z) for spec in config.persons])
    return SyntheticScene(config=config, skel=skel, persons=persons,
                          cams_metric=cams_metric, cams_file=cams_file,
                          detections=dets, planes=planes, floor_labels=labels)


def config_to_ini(config: SceneConfig) -> str:
    cp = configparser.ConfigParser()
    cp["scene"] = {
        "n_frames": str(config.n_frames),
        "fps": repr(float(config.fps)),
        "alpha_star": repr(float(config.alpha_star)),
        "image_width": str(config.image_size[0]),
        "image_height": str(config.image_size[1]),
        "seed": str(config.seed),
        "n_persons": str(len(config.persons)),
    }
    for i, p in enumerate(config.persons):
        cp[f"person{i}"] = {
            "family": p.family, "speed": repr(float(p.speed)),
            "start": f"{p.start[0]!r} {p.start[1]!r}",
            "heading": repr(float(p.heading)), "phase": repr(float(p.phase)),
            "floor_z": repr(float(p.floor_z)), "radius": repr(float(p.radius)),
            "sway_amp": repr(float(p.sway_amp)),
            "sway_period": repr(float(p.sway_period)),
            "betas": " ".join(repr(float(b)) for b in p.betas),
        }
    c = config.camera
    cp["camera"] = {
        "family": c.family, "target": str(c.target),
        "offset": " ".join(repr(float(v)) for v in c.offset),
        "position": " ".join(repr(float(v)) for v in c.position),
        "look_at": " ".join(repr(float(v)) for v in c.look_at),
        "radius": repr(float(c.radius)), "height": repr(float(c.height)),
        "angular_speed": repr(float(c.angular_speed)),
        "track_speed": repr(float(c.track_speed)),
    }
    nz = config.noise
    cp["noise"] = {
        "px_sigma": repr(float(nz.px_sigma)),
        "occlusion_p": repr(float(nz.occlusion_p)),
        "dropout_frac": repr(float(nz.dropout_frac)),
        "dropout_max_gap": str(nz.dropout_max_gap),
        "pose_rot_sigma": repr(float(nz.pose_rot_sigma)),
        "pose_trans_sigma": repr(float(nz.pose_trans_sigma)),
        "beta_sigma": repr(float(nz.beta_sigma)),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_from_ini(text: str) -> SceneConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    sc = cp["scene"]
    persons = []
    for i in range(sc.getint("n_persons")):
        ps = cp[f"person{i}"]
        persons.append(PersonSpec(
            family=ps["family"], speed=ps.getfloat("speed"),
            start=tuple(float(v) for v in ps["start"].split()),
            heading=ps.getfloat("heading"), phase=ps.getfloat("phase"),
            floor_z=ps.getfloat("floor_z"), radius=ps.getfloat("radius"),
            sway_amp=ps.getfloat("sway_amp"), sway_period=ps.getfloat("sway_period"),
            betas=tuple(float(v) for v in ps["betas"].split()),
        ))
    cam = cp["camera"]
    camera = CameraSpec(
        family=cam["family"], target=cam.getint("target"),
        offset=tuple(float(v) for v in cam["offset"].split()),
        position=tuple(float(v) for v in cam["position"].split()),
        look_at=tuple(float(v) for v in cam["look_at"].split()),
        radius=cam.getfloat("radius"), height=cam.getfloat("height"),
        angular_speed=cam.getfloat("angular_speed"),
        track_speed=cam.getfloat("track_speed"),
    )
    nz = cp["noise"]
    noise = NoiseConfig(
        px_sigma=nz.getfloat("px_sigma"), occlusion_p=nz.getfloat("occlusion_p"),
        dropout_frac=nz.getfloat("dropout_frac"),
        dropout_max_gap=nz.getint("dropout_max_gap"),
        pose_rot_sigma=nz.getfloat("pose_rot_sigma"),
        pose_trans_sigma=nz.getfloat("pose_trans_sigma"),
        beta_sigma=nz.getfloat("beta_sigma"),
    )
    return SceneConfig(
        n_frames=sc.getint("n_frames"), fps=sc.getfloat("fps"), persons=persons,
        camera=camera, alpha_star=sc.getfloat("alpha_star"),
        image_size=(sc.getint("image_width"), sc.getint("image_height")),
        noise=noise, seed=sc.getint("seed"))


def save_gt_world(scene: SyntheticScene, path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for pid, person in enumerate(scene.persons):
            for f in range(scene.config.n_frames):
                pose = PoseParams(person.root_orient[f], person.body_pose[f],
                                  person.betas, person.trans[f])
                rec = {"frame": f, "id": pid, "pose": pose.flat().tolist(),
                       "contact": [int(v) for v in person.contacts[f]]}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_gt_world(path):
    """Returns (poses dict pid -> {frame: PoseParams}, contacts pid -> {frame:
    (4,) bool}, meta dict or None)."""
    poses: dict = {}
    contacts: dict = {}
    meta = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            rec = json.loads(line)
            if "meta" in rec and "frame" not in rec:
                meta = rec["meta"]
                continue
            pid = int(rec["id"])
            poses.setdefault(pid, {})[int(rec["frame"])] = PoseParams.from_flat(rec["pose"])
            if "contact" in rec:
                contacts.setdefault(pid, {})[int(rec["frame"])] = np.array(
                    rec["contact"], dtype=bool)
    return poses, contacts, meta


def write_scene(scene: SyntheticScene, out_dir, meta: dict | None = None) -> None:
    """Scene directory: cameras.tum, detections.ndj, gt_world.ndj, scene_config."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    from .camera import save_camera_trajectory

    save_camera_trajectory(scene.cams_file, os.path.join(out_dir, "cameras.tum"))
    save_detections(scene.detections, os.path.join(out_dir, "detections.ndj"), meta=meta)
    save_gt_world(scene, os.path.join(out_dir, "gt_world.ndj"), meta=meta)
    with open(os.path.join(out_dir, "scene_config"), "w", encoding="utf-8") as fh:
        fh.write(config_to_ini(scene.config))


# ---------------------------------------------------------------------------
# Named presets
# ---------------------------------------------------------------------------

def preset(name: str, n_frames: int = 100, seed: int = 0, alpha_star: float = 2.0,
           noise: NoiseConfig | None = None) -> SceneConfig:
    """Shipped scenario presets; noise defaults to zero (pass
    NoiseConfig.standard() for the noisy variants)."""
    noise = noise if noise is not None else NoiseConfig()
    if name == "follow-walk":
        persons = [
            PersonSpec(family="line", speed=1.0, start=(0.0, 0.0), heading=np.pi / 2),
            PersonSpec(family="line", speed=0.7, start=(-2.5, 3.5), heading=0.0,
                       phase=0.37),
        ]
        camera = CameraSpec(family="follow", target=0, offset=(0.0, -3.5, 0.7))
    elif name == "orbit-two-people":
        persons = [
            PersonSpec(family="circle", speed=0.8, start=(1.5, 0.0), heading=np.pi / 2,
                       radius=1.5),
            PersonSpec(family="static", start=(-1.0, 0.5), heading=0.3, phase=0.5),
        ]
        camera = CameraSpec(family="orbit", radius=6.0, height=1.7,
                            angular_speed=0.5, look_at=(0.0, 0.0, 0.9))
    elif name == "colinear-degenerate":
        # camera translates exactly with the walker: the scale-ambiguous case
        persons = [PersonSpec(family="line", speed=1.0, start=(0.0, 0.0),
                              heading=np.pi / 2)]
        camera = CameraSpec(family="follow", target=0, offset=(0.0, -4.0, 0.5))
    elif name == "two-floor":
        persons = [
            PersonSpec(family="line", speed=0.6, start=(-1.0, 2.0), heading=0.0,
                       floor_z=0.0),
            PersonSpec(family="line", speed=0.6, start=(-1.0, 4.0), heading=0.0,
                       floor_z=3.0, phase=0.5),
        ]
        camera = CameraSpec(family="lateral-track", position=(0.0, -6.0, 2.2),
                            look_at=(0.0, 3.0, 1.5), track_speed=0.8)
    elif name == "crossing-track":
        persons = [
            PersonSpec(family="line", speed=1.1, start=(-2.0, 3.4), heading=0.0),
            PersonSpec(family="line", speed=1.1, start=(2.0, 4.4), heading=np.pi,
                       phase=0.5),
        ]
        camera = CameraSpec(family="lateral-track", position=(0.0, -3.0, 1.6),
                            look_at=(0.0, 4.0, 0.9), track_speed=1.8)
    else:
        raise SynthError(f"unknown preset {name!r}")
    return SceneConfig(n_frames=n_frames, persons=persons, camera=camera,
                       alpha_star=alpha_star, noise=noise, seed=seed)


PRESETS = ("follow-walk", "orbit-two-people", "colinear-degenerate", "two-floor",
           "crossing-track")
