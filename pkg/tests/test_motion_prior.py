import numpy as np
import pytest

from worldtraj import body, motion_prior as mp, so3
from worldtraj.ground import GroundPlane

from fd import numeric_grad, max_rel_error

RNG = np.random.default_rng(31)
SKEL = body.default_skeleton()
BETAS = np.zeros(16)
PRIOR = mp.ConstVelPrior().bind(SKEL, BETAS)
UNIT_PRIOR = mp.ConstVelPrior(sigma_lin=1.0, sigma_ang=1.0, sigma_body=1.0).bind(SKEL, BETAS)


def random_state(seed=None):
    rng = np.random.default_rng(seed) if seed is not None else RNG
    trans = rng.normal(size=3)
    root = rng.normal(scale=0.4, size=3)
    bp = rng.normal(scale=0.25, size=(22, 3))
    joints, _ = body.fk_batch(root[None], bp[None], body.shape_to_bones(BETAS, SKEL),
                              trans[None], SKEL.parents)
    return mp.MotionState(
        trans=trans, root_orient=root, body_pose=bp,
        lin_vel=rng.normal(scale=0.03, size=3), ang_vel=rng.normal(scale=0.03, size=3),
        joints=joints[0], joint_vel=rng.normal(scale=0.02, size=(22, 3)))


def legs_only_pose_sequence(n=8):
    """Pose sequence whose body motion stays within the latent's 14 joints."""
    root_orient = np.cumsum(RNG.normal(scale=0.02, size=(n, 3)), axis=0)
    trans = np.cumsum(RNG.normal(scale=0.03, size=(n, 3)), axis=0)
    bp = np.tile(RNG.normal(scale=0.2, size=(1, 22, 3)), (n, 1, 1))
    walk = np.cumsum(RNG.normal(scale=0.05, size=(n, mp.N_DYNAMIC_BODY, 3)), axis=0)
    bp[:, : mp.N_DYNAMIC_BODY] += walk
    return root_orient, bp, trans


def test_state_vector_round_trip():
    s = random_state()
    assert np.allclose(mp.MotionState.from_vector(s.vector()).vector(), s.vector())
    assert s.vector().shape == (210,)


def test_encode_zero_at_cv_prediction():
    a = random_state(seed=1)
    b = mp.decode_step(np.zeros(48), a, PRIOR)
    z = mp.encode_transition(a, b, PRIOR)
    assert np.allclose(z, 0.0, atol=1e-12)


def test_encode_linearity():
    a = random_state(seed=2)
    z = RNG.normal(scale=0.05, size=48)
    b1 = mp.decode_step(z, a, PRIOR)
    b2 = mp.decode_step(2 * z, a, PRIOR)
    assert np.allclose(mp.encode_transition(a, b1, PRIOR), z, atol=1e-10)
    assert np.allclose(mp.encode_transition(a, b2, PRIOR), 2 * z, atol=1e-10)


def test_decode_encode_exact_inverse():
    a = random_state(seed=3)
    z = RNG.normal(scale=0.08, size=48)
    b = mp.decode_step(z, a, PRIOR)
    back = mp.decode_step(mp.encode_transition(a, b, PRIOR), a, PRIOR)
    assert np.allclose(back.vector(), b.vector(), atol=1e-9)


def test_decode_encode_inverse_on_lifted_sequences():
    root, bp, trans = legs_only_pose_sequence()
    seq = mp.states_from_poses(root, bp, trans, BETAS, SKEL)
    for t in range(len(seq) - 1):
        a, b = seq.state(t), seq.state(t + 1)
        z = mp.encode_transition(a, b, PRIOR)
        back = mp.decode_step(z, a, PRIOR)
        assert np.allclose(back.vector(), b.vector(), atol=1e-9)


def test_decode_zero_is_constant_velocity():
    a = random_state(seed=4)
    b = mp.decode_step(np.zeros(48), a, PRIOR)
    assert np.allclose(b.trans, a.trans + a.lin_vel, atol=1e-12)
    assert np.allclose(b.lin_vel, a.lin_vel)
    assert np.allclose(b.ang_vel, a.ang_vel)
    r_expect = so3.aa_to_matrix(a.ang_vel) @ so3.aa_to_matrix(a.root_orient)
    assert np.allclose(so3.aa_to_matrix(b.root_orient), r_expect, atol=1e-12)
    assert np.allclose(b.body_pose, a.body_pose)


def test_prior_nll_values():
    a = random_state(seed=5)
    d = 48
    base = d * np.log(np.sqrt(2 * np.pi))  # == 24 ln(2 pi)
    assert np.isclose(mp.prior_nll(np.zeros(48), a, UNIT_PRIOR), base)
    assert np.isclose(base, 24.0 * np.log(2 * np.pi))
    z = np.zeros(48)
    z[0] = np.sqrt(2.0)
    assert np.isclose(mp.prior_nll(z, a, UNIT_PRIOR), base + 1.0)
    # minimized at z = 0
    for _ in range(5):
        z = RNG.normal(size=48) * 0.1
        assert mp.prior_nll(z, a, PRIOR) >= mp.prior_nll(np.zeros(48), a, PRIOR)


def test_prior_nll_grad():
    a = random_state(seed=6)
    z = RNG.normal(scale=0.05, size=48)
    val, dz, ds = mp.prior_nll_grad(z, a, PRIOR)
    assert np.isclose(val, mp.prior_nll(z, a, PRIOR))
    num = numeric_grad(lambda zz: mp.prior_nll(zz, a, PRIOR), z)
    assert max_rel_error(dz, num) < 1e-6
    assert np.allclose(ds, 0.0)


def test_rollout_length_and_h1():
    s0 = random_state(seed=7)
    z = RNG.normal(scale=0.03, size=(5, 48))
    seq = mp.rollout(s0, z, PRIOR)
    assert len(seq) == 6
    one = mp.rollout(s0, z[:1], PRIOR)
    step = mp.decode_step(z[0], s0, PRIOR)
    assert np.allclose(one.state(1).vector(), step.vector(), atol=1e-12)


def test_rollout_zero_latents_straight_line():
    s0 = random_state(seed=8)
    s0.ang_vel = np.zeros(3)
    z = np.zeros((10, 48))
    seq = mp.rollout(s0, z, PRIOR)
    expect = s0.trans[None] + np.arange(11)[:, None] * s0.lin_vel
    assert np.allclose(seq.trans, expect, atol=1e-12)


def test_rollout_divergence_error():
    s0 = random_state(seed=9)
    z = np.zeros((4, 48))
    z[2, 0] = np.inf
    with pytest.raises(mp.RolloutDivergenceError) as exc:
        mp.rollout(s0, z, PRIOR)
    assert exc.value.step == 3


def test_states_from_poses_basics():
    n = 6
    static = mp.states_from_poses(np.zeros((n, 3)), np.zeros((n, 22, 3)),
                                  np.zeros((n, 3)), BETAS, SKEL)
    assert np.allclose(static.lin_vel, 0.0)
    assert np.allclose(static.joint_vel, 0.0)

    trans = np.arange(n)[:, None] * np.array([0.03, 0.0, 0.0])
    seq = mp.states_from_poses(np.zeros((n, 3)), np.zeros((n, 22, 3)), trans, BETAS, SKEL)
    assert np.allclose(seq.lin_vel, [0.03, 0, 0])

    root, bp, tr = legs_only_pose_sequence(5)
    seq = mp.states_from_poses(root, bp, tr, BETAS, SKEL)
    for t in range(5):
        joints, _ = body.fk_batch(root[t][None], bp[t][None],
                                  body.shape_to_bones(BETAS, SKEL), tr[t][None], SKEL.parents)
        assert np.allclose(seq.joints[t], joints[0], atol=1e-12)

    with pytest.raises(mp.PriorError):
        mp.states_from_poses(np.zeros((1, 3)), np.zeros((1, 22, 3)), np.zeros((1, 3)),
                             BETAS, SKEL)


def test_fast_rollout_matches_generic():
    s0 = random_state(seed=10)
    z = RNG.normal(scale=0.04, size=(12, 48))
    slow = mp.rollout(s0, z, PRIOR)
    fast, _ = mp.rollout_cv(s0, z, PRIOR)
    for f in mp.StateSequence.FIELDS:
        assert np.allclose(getattr(slow, f), getattr(fast, f), atol=1e-9), f


def test_rollout_backward_matches_finite_differences():
    s0 = random_state(seed=11)
    h = 6
    z0 = RNG.normal(scale=0.04, size=(h, 48))
    weights = {f: RNG.normal(size=getattr(mp.StateSequence.zeros(h + 1), f).shape)
               for f in mp.StateSequence.FIELDS}

    def loss_from(s0v, zf):
        s = mp.MotionState(trans=s0v[0:3], root_orient=s0v[3:6],
                           body_pose=s0v[6:72].reshape(22, 3),
                           lin_vel=s0v[72:75], ang_vel=s0v[75:78],
                           joints=s0.joints, joint_vel=s0.joint_vel)
        seq, _ = mp.rollout_cv(s, zf.reshape(h, 48), PRIOR)
        return float(sum(np.sum(weights[f] * getattr(seq, f))
                         for f in mp.StateSequence.FIELDS))

    s0_free = np.concatenate([s0.trans, s0.root_orient, s0.body_pose.ravel(),
                              s0.lin_vel, s0.ang_vel])
    seq, cache = mp.rollout_cv(s0, z0, PRIOR)
    grads = mp.zero_state_grads(h + 1)
    for f in mp.StateSequence.FIELDS:
        setattr(grads, f, weights[f].astype(np.float64))
    ds0, dz, dbetas = mp.rollout_cv_backward(cache, grads)

    analytic_s0 = np.concatenate([ds0["trans"], ds0["root_orient"],
                                  ds0["body_pose"].ravel(), ds0["lin_vel"], ds0["ang_vel"]])
    num_s0 = numeric_grad(lambda v: loss_from(v, z0.ravel()), s0_free)
    num_z = numeric_grad(lambda v: loss_from(s0_free, v), z0.ravel())
    assert max_rel_error(analytic_s0, num_s0) < 1e-5
    assert max_rel_error(dz.ravel(), num_z) < 1e-5


def test_rollout_final_root_grad_wrt_z1():
    s0 = random_state(seed=12)
    h = 5
    z0 = RNG.normal(scale=0.03, size=(h, 48))
    seq, cache = mp.rollout_cv(s0, z0, PRIOR)
    grads = mp.zero_state_grads(h + 1)
    g = RNG.normal(size=3)
    grads.trans[-1] = g
    _, dz, _ = mp.rollout_cv_backward(cache, grads)

    def loss(zw):
        zz = z0.copy()
        zz[0] = zw
        s, _ = mp.rollout_cv(s0, zz, PRIOR)
        return float(g @ s.trans[-1])

    num = numeric_grad(loss, z0[0].copy())
    assert max_rel_error(dz[0], num) < 1e-4


def test_encode_sequence_matches_per_transition():
    root, bp, trans = legs_only_pose_sequence(7)
    seq = mp.states_from_poses(root, bp, trans, BETAS, SKEL)
    zs = mp.encode_sequence(seq, PRIOR)
    for t in range(len(seq) - 1):
        z = mp.encode_transition(seq.state(t), seq.state(t + 1), PRIOR)
        assert np.allclose(zs[t], z, atol=1e-12)


def test_contact_probabilities_heuristic():
    plane = GroundPlane.horizontal(0.0)
    n = 4
    seq = mp.StateSequence.zeros(n)
    # foot joint 7 high and fast, foot joint 8 on the plane and static
    seq.joints[:, 7, 2] = 1.0
    seq.joint_vel[:, 7, 0] = 0.5
    seq.joints[:, 8, 2] = 0.0
    probs = mp.contact_probabilities(seq, PRIOR, plane)
    i7 = body.FOOT_JOINTS.index(7)
    i8 = body.FOOT_JOINTS.index(8)
    assert np.all(probs[:, i7] < 0.01)
    assert np.all(probs[:, i8] > 0.99)
    assert np.all(probs >= 0.0) and np.all(probs <= 1.0)

    # exactly at thresholds -> 0.25
    seq2 = mp.StateSequence.zeros(1)
    seq2.joints[:, 7, 2] = PRIOR.contact_h0
    seq2.joint_vel[:, 7, 0] = PRIOR.contact_v0
    p = mp.contact_probabilities(seq2, PRIOR, plane)
    assert np.isclose(p[0, i7], 0.25, atol=1e-12)


def test_contact_monotonicity():
    plane = GroundPlane.horizontal(0.0)
    i7 = body.FOOT_JOINTS.index(7)
    heights = np.linspace(0.0, 0.5, 8)
    last = 1.1
    for hgt in heights:
        seq = mp.StateSequence.zeros(1)
        seq.joints[:, 7, 2] = hgt
        p = mp.contact_probabilities(seq, PRIOR, plane)[0, i7]
        assert p <= last + 1e-12
        last = p
    last = 1.1
    for spd in np.linspace(0.0, 0.2, 8):
        seq = mp.StateSequence.zeros(1)
        seq.joint_vel[:, 7, 0] = spd
        p = mp.contact_probabilities(seq, PRIOR, plane)[0, i7]
        assert p <= last + 1e-12
        last = p


# ---------------------------------------------------------------------------
# MLP backend
# ---------------------------------------------------------------------------

def tiny_mlp_nets(rng):
    def net(d_in, hidden, d_out, out_act):
        w1 = rng.normal(scale=0.1, size=(hidden, d_in))
        b1 = rng.normal(scale=0.1, size=hidden)
        w2 = rng.normal(scale=0.1, size=(d_out, hidden))
        b2 = rng.normal(scale=0.1, size=d_out)
        return mp.Mlp([(w1, b1, "tanh"), (w2, b2, out_act)])

    return {
        "prior_mu": net(210, 16, 48, "linear"),
        "prior_sigma": net(210, 16, 48, "softplus"),
        "decoder": net(258, 16, 210, "linear"),
        "encoder": net(420, 16, 48, "linear"),
        "contact": net(210, 8, 4, "linear"),
    }


def test_mlp_weight_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    nets = tiny_mlp_nets(rng)
    path = tmp_path / "prior.bin"
    mp.save_prior_weights(path, nets)
    loaded = mp.load_prior_weights(path)
    for name in ("prior_mu", "prior_sigma", "decoder", "encoder", "contact"):
        for (w1, b1, a1), (w2, b2, a2) in zip(nets[name].layers,
                                              getattr(loaded, name).layers):
            assert np.array_equal(w1, w2)
            assert np.array_equal(b1, b2)
            assert a1 == a2


def test_mlp_encoder_matches_hand_forward(tmp_path):
    rng = np.random.default_rng(1)
    nets = tiny_mlp_nets(rng)
    path = tmp_path / "prior.bin"
    mp.save_prior_weights(path, nets)
    prior = mp.load_prior_weights(path)

    a = random_state(seed=20)
    b = random_state(seed=21)
    z = mp.encode_transition(a, b, prior)
    x = np.concatenate([b.vector(), a.vector()])
    (w1, b1, _), (w2, b2, _) = prior.encoder.layers
    hand = w2 @ np.tanh(w1 @ x + b1) + b2
    assert np.allclose(z, hand, atol=1e-12)

    # bit-stable across repeated calls
    assert np.array_equal(z, mp.encode_transition(a, b, prior))


def test_mlp_decode_and_nll(tmp_path):
    rng = np.random.default_rng(2)
    nets = tiny_mlp_nets(rng)
    path = tmp_path / "prior.bin"
    mp.save_prior_weights(path, nets)
    prior = mp.load_prior_weights(path)

    a = random_state(seed=22)
    z = rng.normal(size=48) * 0.1
    out = mp.decode_step(z, a, prior)
    x = np.concatenate([z, a.vector()])
    (w1, b1, _), (w2, b2, _) = prior.decoder.layers
    delta = w2 @ np.tanh(w1 @ x + b1) + b2
    assert np.allclose(out.vector(), a.vector() + delta, atol=1e-12)

    # NLL at the conditional mean equals the log-partition constant
    mu = prior.prior_mu.forward(a.vector())[0]
    sigma = prior.prior_sigma.forward(a.vector())[0]
    val = mp.prior_nll(mu, a, prior)
    assert np.isclose(val, np.sum(np.log(sigma * np.sqrt(2 * np.pi))))

    # gradient check incl. the s_prev path through the nets
    val2, dz, ds = mp.prior_nll_grad(z, a, prior)
    num_dz = numeric_grad(lambda zz: mp.prior_nll(zz, a, prior), z)
    assert max_rel_error(dz, num_dz) < 1e-5

    def nll_of_state(v):
        return mp.prior_nll(z, mp.MotionState.from_vector(v), prior)

    num_ds = numeric_grad(nll_of_state, a.vector())
    assert max_rel_error(ds, num_ds) < 1e-5


def test_mlp_validation_errors(tmp_path):
    rng = np.random.default_rng(3)
    nets = tiny_mlp_nets(rng)
    # sigma head must be softplus or exp
    bad = dict(nets)
    (w1, b1, a1), (w2, b2, _) = nets["prior_sigma"].layers
    bad["prior_sigma"] = mp.Mlp([(w1, b1, a1), (w2, b2, "linear")])
    path = tmp_path / "bad.bin"
    mp.save_prior_weights(path, bad)
    with pytest.raises(mp.PriorError, match="sigma head"):
        mp.load_prior_weights(path)

    # wrong dimensions
    bad2 = dict(nets)
    bad2["encoder"] = nets["contact"]
    path2 = tmp_path / "bad2.bin"
    mp.save_prior_weights(path2, bad2)
    with pytest.raises(mp.PriorError, match="encoder"):
        mp.load_prior_weights(path2)


def test_mlp_rollout_runs(tmp_path):
    rng = np.random.default_rng(4)
    nets = tiny_mlp_nets(rng)
    path = tmp_path / "prior.bin"
    mp.save_prior_weights(path, nets)
    prior = mp.load_prior_weights(path)
    s0 = random_state(seed=30)
    z = rng.normal(size=(4, 48)) * 0.05
    seq = mp.rollout(s0, z, prior)
    assert len(seq) == 5
    probs = mp.contact_probabilities(seq, prior, GroundPlane.horizontal(0.0))
    assert probs.shape == (5, 4)
    assert np.all((probs >= 0) & (probs <= 1))
