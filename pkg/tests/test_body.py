import numpy as np
import pytest

from worldtraj import body, so3
from worldtraj.body import PoseParams, Skeleton

from fd import numeric_grad, max_rel_error

RNG = np.random.default_rng(11)
SKEL = body.default_skeleton()


def random_pose(scale=0.4, betas_scale=0.5):
    return PoseParams(
        root_orient=RNG.normal(scale=scale, size=3),
        body_pose=RNG.normal(scale=scale, size=(22, 3)),
        betas=RNG.normal(scale=betas_scale, size=16),
        trans=RNG.normal(scale=1.0, size=3),
    )


def chain_rest_positions(skel):
    pos = np.zeros((skel.n_joints, 3))
    for j in range(1, skel.n_joints):
        pos[j] = pos[skel.parents[j]] + skel.offsets[j]
    return pos


def test_zero_pose_gives_template():
    joints = body.forward_kinematics(PoseParams.rest(), SKEL)
    assert np.allclose(joints, chain_rest_positions(SKEL), atol=1e-12)


def test_translation_equivariance():
    pose = random_pose()
    j0 = body.forward_kinematics(pose, SKEL)
    shifted = pose.copy()
    shifted.trans = pose.trans + np.array([1.0, 2.0, 3.0])
    j1 = body.forward_kinematics(shifted, SKEL)
    assert np.allclose(j1, j0 + np.array([1.0, 2.0, 3.0]), atol=1e-12)


def test_single_bone_rotation():
    # one bone of length 1 along +y, root rotation 90 deg about z -> (-1, 0, 0)
    skel = Skeleton(
        parents=[-1, 0],
        offsets=[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        shape_basis=np.zeros((6, 16)),
        foot_joints=(1,),
        toe_joints=(1,),
        names=["a", "b"],
    )
    # local rotation of the root joint rotates the child's offset
    body_pose = np.array([[0.0, 0.0, np.pi / 2], [0.0, 0.0, 0.0]])
    joints, _ = body.fk_batch(np.zeros((1, 3)), body_pose[None],
                              skel.offsets, np.zeros((1, 3)), skel.parents)
    assert np.allclose(joints[0, 1], [-1.0, 0.0, 0.0], atol=1e-12)


def test_root_rotation_equivariance():
    pose = random_pose()
    pose.trans = np.array([0.5, -0.2, 1.0])
    j0 = body.forward_kinematics(pose, SKEL)
    extra = RNG.normal(size=3)
    rot = so3.aa_to_matrix(extra)
    rotated = pose.copy()
    rotated.root_orient = so3.matrix_to_aa(rot @ so3.aa_to_matrix(pose.root_orient))
    j1 = body.forward_kinematics(rotated, SKEL)
    expected = (rot @ (j0 - pose.trans).T).T + pose.trans
    assert np.allclose(j1, expected, atol=1e-9)


def test_bone_length_preservation():
    betas = RNG.normal(scale=0.5, size=16)
    bones = body.shape_to_bones(betas, SKEL)
    expected = np.linalg.norm(bones, axis=1)
    for _ in range(5):
        pose = random_pose()
        pose.betas = betas
        joints = body.forward_kinematics(pose, SKEL)
        for j in range(1, SKEL.n_joints):
            d = np.linalg.norm(joints[j] - joints[SKEL.parents[j]])
            assert abs(d - expected[j]) < 1e-9


def test_shape_to_bones_zero_and_linear():
    assert np.allclose(body.shape_to_bones(np.zeros(16), SKEL), SKEL.offsets)
    b0 = RNG.normal(size=16)
    d1 = body.shape_to_bones(b0, SKEL) - SKEL.offsets
    d2 = body.shape_to_bones(2 * b0, SKEL) - SKEL.offsets
    assert np.allclose(d2, 2 * d1, atol=1e-12)


def test_shape_to_bones_matches_matrix_product():
    betas = RNG.normal(size=16)
    manual = SKEL.offsets.ravel().copy()
    for r in range(SKEL.shape_basis.shape[0]):
        acc = 0.0
        for c in range(16):
            acc += SKEL.shape_basis[r, c] * betas[c]
        manual[r] += acc
    assert np.allclose(body.shape_to_bones(betas, SKEL).ravel(), manual, atol=1e-12)


def test_interpolate_endpoints_and_midpoint():
    a = random_pose()
    b = random_pose()
    b.betas = a.betas.copy()
    assert np.allclose(body.interpolate_pose(a, b, 0.0).flat(), a.flat())
    assert np.allclose(body.interpolate_pose(a, b, 1.0).flat(), b.flat())

    a2 = PoseParams.rest()
    b2 = PoseParams.rest()
    b2.trans = np.array([2.0, 0.0, 0.0])
    b2.root_orient = np.array([0.0, 0.0, np.pi / 2])
    mid = body.interpolate_pose(a2, b2, 0.5)
    assert np.allclose(mid.trans, [1.0, 0.0, 0.0])
    assert np.allclose(mid.root_orient, [0.0, 0.0, np.pi / 4], atol=1e-12)


def test_fk_gradients_match_finite_differences():
    pose = random_pose()
    target = RNG.normal(size=(22, 3))

    def loss_parts(root, bp, betas, trans):
        bones = body.shape_to_bones(betas, SKEL)
        joints, _ = body.fk_batch(root[None], bp[None], bones, trans[None], SKEL.parents)
        return float(np.sum(target * joints[0]))

    bones = body.shape_to_bones(pose.betas, SKEL)
    joints, cache = body.fk_batch(pose.root_orient[None], pose.body_pose[None],
                                  bones, pose.trans[None], SKEL.parents)
    droot, dbody, dbones, dtrans = body.fk_batch_backward(cache, target[None], SKEL.parents)
    dbetas = SKEL.shape_basis.T @ dbones[0].ravel()

    num_root = numeric_grad(lambda r: loss_parts(r, pose.body_pose, pose.betas, pose.trans),
                            pose.root_orient)
    num_body = numeric_grad(lambda b: loss_parts(pose.root_orient, b, pose.betas, pose.trans),
                            pose.body_pose)
    num_betas = numeric_grad(lambda bt: loss_parts(pose.root_orient, pose.body_pose, bt, pose.trans),
                             pose.betas)
    num_trans = numeric_grad(lambda t: loss_parts(pose.root_orient, pose.body_pose, pose.betas, t),
                             pose.trans)

    assert max_rel_error(droot[0], num_root) < 1e-5
    assert max_rel_error(dbody[0], num_body) < 1e-5
    assert max_rel_error(dbetas, num_betas) < 1e-5
    assert max_rel_error(dtrans[0], num_trans) < 1e-5


def test_fk_rejects_wrong_joint_count():
    pose = random_pose()
    with pytest.raises(body.SkeletonError):
        body.fk_batch(pose.root_orient[None], pose.body_pose[None, :21],
                      SKEL.offsets, pose.trans[None], SKEL.parents)


def test_skeleton_file_round_trip(tmp_path):
    path = tmp_path / "skel.txt"
    body.save_skeleton(SKEL, path)
    loaded = body.load_skeleton(path)
    assert np.array_equal(loaded.parents, SKEL.parents)
    assert np.array_equal(loaded.offsets, SKEL.offsets)


def test_skeleton_parse_errors():
    with pytest.raises(body.SkeletonError):
        body.parse_skeleton_text("0 -1 0 0\n")  # short row
    with pytest.raises(body.SkeletonError):
        body.parse_skeleton_text("0 -1 0 0 0\n0 -1 0 0 0\n")  # duplicate
    with pytest.raises(body.SkeletonError):
        Skeleton(parents=[-1, 2, 1], offsets=np.zeros((3, 3)),
                 shape_basis=np.zeros((9, 16)), foot_joints=(0,), toe_joints=(0,))


def test_matrix_file_round_trip(tmp_path):
    mat = RNG.normal(size=(66, 16))
    path = tmp_path / "basis.bin"
    body.save_matrix(mat, path)
    assert np.array_equal(body.load_matrix(path), mat)


def test_load_skeleton_with_basis_file(tmp_path):
    spath = tmp_path / "skel.txt"
    bpath = tmp_path / "basis.bin"
    body.save_skeleton(SKEL, spath)
    basis = RNG.normal(size=(66, 16))
    body.save_matrix(basis, bpath)
    loaded = body.load_skeleton(spath, bpath)
    assert np.array_equal(loaded.shape_basis, basis)
