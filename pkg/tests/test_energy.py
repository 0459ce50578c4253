import numpy as np
import pytest

from worldtraj import body, energy, motion_prior as mp, so3
from worldtraj.camera import CameraIntrinsics
from worldtraj.energy import LossWeights, PosePriorMap
from worldtraj.ground import GroundPlane

from fd import numeric_grad, max_rel_error

RNG = np.random.default_rng(41)
SKEL = body.default_skeleton()
BETAS = np.zeros(16)
K = CameraIntrinsics(1000.0, 1000.0, 500.0, 400.0)
PRIOR = mp.ConstVelPrior().bind(SKEL, BETAS)


def test_robust_gm_values():
    assert energy.robust_gm(np.zeros(2), 100.0) == 0.0
    sigma = 77.0
    r = np.array([sigma, 0.0])
    assert np.isclose(energy.robust_gm(r, sigma), sigma**2 / 2.0)
    r = np.array([100 * sigma, 0.0])
    assert abs(energy.robust_gm(r, sigma) - sigma**2) / sigma**2 < 2e-4
    with pytest.raises(energy.EnergyError):
        energy.robust_gm(r, 0.0)


def test_robust_gm_hand_value():
    # residual (3, 4) px, sigma 100 -> 100^2 * 25 / (100^2 + 25)
    val = energy.robust_gm(np.array([3.0, 4.0]), 100.0)
    assert np.isclose(val, 1e4 * 25.0 / (1e4 + 25.0))
    assert np.isclose(val, 24.937655860349127)


def scene_one_person(n=5, depth=4.0):
    """A person in front of a slightly rotated/translated camera path."""
    root = RNG.normal(scale=0.2, size=(n, 3))
    bp = RNG.normal(scale=0.2, size=(n, 22, 3))
    trans = RNG.normal(scale=0.3, size=(n, 3))
    rot = so3.aa_to_matrix(RNG.normal(scale=0.05, size=(n, 3)))
    cam_t = RNG.normal(scale=0.2, size=(n, 3)) + np.array([0, 0, depth])
    bones = body.shape_to_bones(BETAS, SKEL)
    joints, _ = body.fk_batch(root, bp, bones, trans, SKEL.parents)
    return joints, rot, cam_t


def test_e_data_zero_at_exact_projection():
    joints, rot, cam_t = scene_one_person()
    alpha = 1.7
    y = np.einsum("tij,tkj->tki", rot, joints) + alpha * cam_t[:, None, :]
    kp = np.stack([K.fx * y[..., 0] / y[..., 2] + K.cx,
                   K.fy * y[..., 1] / y[..., 2] + K.cy], axis=-1)
    conf = np.ones(kp.shape[:2])
    val = energy.e_data_person(joints, rot, cam_t, alpha, K, kp, conf, 100.0)
    assert val < 1e-20


def test_e_data_confidence_gating():
    joints, rot, cam_t = scene_one_person()
    kp = RNG.normal(size=(joints.shape[0], 22, 2)) * 100
    conf = np.zeros(kp.shape[:2])
    assert energy.e_data_person(joints, rot, cam_t, 1.0, K, kp, conf, 100.0) == 0.0


def test_e_data_hand_value():
    joints = np.zeros((1, 22, 3))
    joints[0, :, 2] = 2.0
    rot = np.eye(3)[None]
    cam_t = np.zeros((1, 3))
    y = joints.copy()
    kp = np.stack([K.fx * y[..., 0] / y[..., 2] + K.cx,
                   K.fy * y[..., 1] / y[..., 2] + K.cy], axis=-1)
    kp[0, 0] -= np.array([3.0, 4.0])  # one joint offset by (3, 4) px
    conf = np.zeros((1, 22))
    conf[0, 0] = 1.0
    val = energy.e_data_person(joints, rot, cam_t, 1.0, K, kp, conf, 100.0)
    assert np.isclose(val, 1e4 * 25.0 / (1e4 + 25.0))


def test_e_data_behind_camera_masked():
    joints, rot, cam_t = scene_one_person()
    cam_t_bad = cam_t.copy()
    cam_t_bad[:, 2] = -50.0  # pushes everyone behind the camera
    kp = RNG.normal(size=(joints.shape[0], 22, 2))
    conf = np.ones(kp.shape[:2])
    val, dj, da = energy.e_data_person(joints, rot, cam_t_bad, 1.0, K, kp, conf, 100.0,
                                       want_grad=True)
    assert val == 0.0
    assert np.all(dj == 0.0) and da == 0.0


def test_e_data_gradients():
    joints, rot, cam_t = scene_one_person(n=3)
    alpha = 1.3
    kp = RNG.normal(scale=50, size=(3, 22, 2)) + [500, 400]
    conf = RNG.uniform(0.2, 1.0, size=(3, 22))
    val, dj, da = energy.e_data_person(joints, rot, cam_t, alpha, K, kp, conf, 100.0,
                                       want_grad=True)

    def f_j(j):
        return energy.e_data_person(j, rot, cam_t, alpha, K, kp, conf, 100.0)

    def f_a(a):
        return energy.e_data_person(joints, rot, cam_t, float(a[0]), K, kp, conf, 100.0)

    # eps tuned to the term's ~1e5 magnitude so FD roundoff stays below 1e-5
    assert max_rel_error(dj, numeric_grad(f_j, joints, eps=1e-5)) < 1e-5
    assert max_rel_error(np.array([da]), numeric_grad(f_a, np.array([alpha]), eps=1e-5)) < 1e-5


def test_e_smooth_examples():
    joints = np.tile(RNG.normal(size=(1, 22, 3)), (4, 1, 1))
    assert energy.e_smooth(joints) == 0.0

    j2 = joints[:2].copy()
    j2[1] += np.array([0.1, 0.0, 0.0])
    assert np.isclose(energy.e_smooth(j2), 22 * 0.01)

    vel = RNG.normal(scale=0.05, size=(22, 3))
    t = 7
    lin = joints[0][None] + np.arange(t)[:, None, None] * vel[None]
    assert np.isclose(energy.e_smooth(lin), (t - 1) * np.sum(vel**2))


def test_e_smooth_grad():
    joints = RNG.normal(size=(5, 22, 3))
    val, dj = energy.e_smooth(joints, want_grad=True)
    assert max_rel_error(dj, numeric_grad(lambda j: energy.e_smooth(j), joints)) < 1e-6


def test_e_shape_and_pose():
    assert energy.e_shape([np.zeros(16)]) == 0.0
    b = np.zeros(16)
    b[0] = 2.0
    assert np.isclose(energy.e_shape([b]), 4.0)

    pm = PosePriorMap.default()
    assert energy.e_pose(np.zeros((3, 22, 3)), pm) == 0.0
    theta = np.zeros((1, 22, 3))
    theta[0, :11] = RNG.normal(size=(11, 3))
    flat = theta[0].ravel()
    assert np.isclose(energy.e_pose(theta, pm), np.sum(flat[:32] ** 2))

    val, dth = energy.e_pose(theta, pm, want_grad=True)
    assert max_rel_error(dth, numeric_grad(lambda th: energy.e_pose(th, pm), theta)) < 1e-6


def test_pose_map_file_round_trip(tmp_path):
    pm = PosePriorMap(weight=RNG.normal(size=(32, 66)), bias=RNG.normal(size=32))
    pm.save(tmp_path / "map.bin")
    loaded = PosePriorMap.load(tmp_path / "map.bin")
    assert np.array_equal(loaded.weight, pm.weight)
    assert np.array_equal(loaded.bias, pm.bias)


def legs_seq(n=6):
    root = np.cumsum(RNG.normal(scale=0.02, size=(n, 3)), axis=0)
    trans = np.cumsum(RNG.normal(scale=0.03, size=(n, 3)), axis=0)
    bp = np.zeros((n, 22, 3))
    bp[:, :14] = np.cumsum(RNG.normal(scale=0.04, size=(n, 14, 3)), axis=0)
    return mp.states_from_poses(root, bp, trans, BETAS, SKEL)


def test_e_cvae_examples():
    seq = legs_seq()
    unit = mp.ConstVelPrior(sigma_lin=1, sigma_ang=1, sigma_body=1)
    zs = np.zeros((len(seq) - 1, 48))
    base = (len(seq) - 1) * 24.0 * np.log(2 * np.pi)
    assert np.isclose(energy.e_cvae([zs], [seq], unit), base)

    # two identical people -> exactly twice the one-person value
    zs2 = mp.encode_sequence(seq, PRIOR)
    one = energy.e_cvae([zs2], [seq], PRIOR)
    two = energy.e_cvae([zs2, zs2], [seq, seq], PRIOR)
    assert np.isclose(two, 2.0 * one)


def test_e_stab_zero_on_lifted_states():
    seq = legs_seq()
    assert energy.e_stab(seq, SKEL, BETAS) < 1e-20


def test_e_stab_perturbation_hand_value():
    seq = legs_seq(6)
    d = np.array([0.02, -0.01, 0.03])
    seq.joints[2, 5] += d
    # position term ||d||^2; joint_vel residuals at t=2 and t=3 add ||d||^2 each
    expected = 3.0 * float(d @ d)
    assert np.isclose(energy.e_stab(seq, SKEL, BETAS), expected)


def test_e_stab_single_frame_position_only():
    seq = legs_seq(2)
    one = mp.StateSequence(*(getattr(seq, f)[:1] for f in mp.StateSequence.FIELDS))
    one.joints = one.joints + 0.01
    assert np.isclose(energy.e_stab(one, SKEL, BETAS), 22 * 3 * 0.01**2)


def test_e_stab_gradients():
    seq = legs_seq(4)
    # perturb everything so all residuals are active
    for f in mp.StateSequence.FIELDS:
        arr = getattr(seq, f)
        arr += RNG.normal(scale=0.01, size=arr.shape)
    val, g, dbetas = energy.e_stab(seq, SKEL, BETAS, want_grad=True)

    for fname in mp.StateSequence.FIELDS:
        def f(x, fname=fname):
            s2 = mp.StateSequence(*(np.array(getattr(seq, ff), copy=True)
                                    for ff in mp.StateSequence.FIELDS))
            setattr(s2, fname, x)
            return energy.e_stab(s2, SKEL, BETAS)

        num = numeric_grad(f, np.array(getattr(seq, fname), copy=True))
        assert max_rel_error(getattr(g, fname), num) < 1e-5, fname

    def f_b(b):
        return energy.e_stab(seq, SKEL, b)

    assert max_rel_error(dbetas, numeric_grad(f_b, BETAS.copy())) < 1e-5


def test_e_skate_examples():
    n = 6
    joints = np.tile(RNG.normal(size=(1, 22, 3)), (n, 1, 1))
    contacts = np.ones((n, 4))
    assert energy.e_skate(joints, np.zeros((n, 4))) == 0.0
    assert energy.e_skate(joints, contacts) == 0.0

    j2 = joints.copy()
    j2[1:, body.FOOT_JOINTS[0]] += np.array([0.05, 0.0, 0.0])
    c = np.zeros((n, 4))
    c[0, 0] = 1.0  # contact at frame 0 only: one sliding pair
    assert np.isclose(energy.e_skate(j2, c), 0.05)


def test_e_skate_grad():
    joints = RNG.normal(size=(4, 22, 3))
    contacts = RNG.uniform(0.1, 1.0, size=(4, 4))
    val, dj = energy.e_skate(joints, contacts, want_grad=True)
    num = numeric_grad(lambda j: energy.e_skate(j, contacts), joints)
    assert max_rel_error(dj, num) < 1e-5


def test_e_contact_examples():
    plane = GroundPlane.horizontal(0.0)
    n = 3
    joints = np.zeros((n, 22, 3))
    contacts = np.ones((n, 4))
    assert energy.e_contact(joints, contacts, plane, 0.08) == 0.0

    joints[:, body.FOOT_JOINTS[0], 2] = 0.05  # inside threshold
    assert energy.e_contact(joints, contacts, plane, 0.08) == 0.0

    joints2 = np.zeros((1, 22, 3))
    joints2[0, body.FOOT_JOINTS[0], 2] = 0.2
    c = np.zeros((1, 4))
    c[0, 0] = 1.0
    assert np.isclose(energy.e_contact(joints2, c, plane, 0.08), 0.12)


def test_e_contact_grad():
    plane = GroundPlane([0.1, -0.05, 0.2])
    joints = RNG.normal(scale=0.5, size=(4, 22, 3))
    contacts = RNG.uniform(0.1, 1.0, size=(4, 4))
    val, dj, dplane = energy.e_contact(joints, contacts, plane, 0.08, want_grad=True)
    num_j = numeric_grad(lambda j: energy.e_contact(j, contacts, plane, 0.08), joints)
    num_p = numeric_grad(
        lambda c: energy.e_contact(joints, contacts, GroundPlane(c), 0.08),
        plane.coeffs.copy())
    assert max_rel_error(dj, num_j) < 1e-5
    assert max_rel_error(dplane, num_p) < 1e-5


def test_loss_weights_validation():
    with pytest.raises(energy.EnergyError):
        LossWeights(data=-1.0)
    with pytest.raises(energy.EnergyError):
        LossWeights(sigma_gm=0.0)
    w = LossWeights()
    assert w.data == 0.001 and w.smooth == 5.0 and w.cvae == 0.075
    assert w.skate == 100.0 and w.contact == 10.0 and w.beta == 0.05 and w.pose == 0.04
