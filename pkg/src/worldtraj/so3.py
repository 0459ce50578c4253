"""Batched SO(3) utilities: axis-angle, quaternions, matrices, and the
tangent-space machinery used by the hand-written backward passes.

Conventions used throughout the package:
  * axis-angle vectors are radians, rotation angle = vector norm
  * quaternions are (w, x, y, z), unit norm, canonicalized to w >= 0
  * "left perturbation" of a rotation R means R <- exp(hat(eta)) @ R;
    all rotation adjoints passed between backward passes are plain 3x3
    matrix adjoints dL/dR (the feasible component is what propagates)

All functions broadcast over arbitrary leading batch dimensions.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-8


def hat(w: np.ndarray) -> np.ndarray:
    """(..., 3) -> (..., 3, 3) skew-symmetric cross-product matrices."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3), dtype=np.float64)
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def vee_skew(m: np.ndarray) -> np.ndarray:
    """Antisymmetric part of (..., 3, 3) as a vector: vee(M - M^T)."""
    return np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )


def _sinc_coeffs(theta: np.ndarray):
    """Stable (sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)."""
    theta = np.asarray(theta, dtype=np.float64)
    small = theta < 1e-4
    t2 = theta * theta
    # Taylor expansions keep everything smooth through theta = 0.
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    c = np.where(
        small,
        1.0 / 6.0 - t2 / 120.0,
        (theta - np.sin(theta)) / np.where(small, 1.0, t2 * theta),
    )
    return a, b, c


def aa_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues formula, (..., 3) axis-angle -> (..., 3, 3)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    a, b, _ = _sinc_coeffs(theta)
    k = hat(aa)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * k2


def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    """(..., 3, 3) -> (..., 4) unit quaternion (w, x, y, z), w >= 0.

    Branches on the largest diagonal combination for numerical stability
    near pi rotations.
    """
    rot = np.asarray(rot, dtype=np.float64)
    m00, m01, m02 = rot[..., 0, 0], rot[..., 0, 1], rot[..., 0, 2]
    m10, m11, m12 = rot[..., 1, 0], rot[..., 1, 1], rot[..., 1, 2]
    m20, m21, m22 = rot[..., 2, 0], rot[..., 2, 1], rot[..., 2, 2]

    tr = m00 + m11 + m22
    q = np.empty(rot.shape[:-2] + (4,), dtype=np.float64)

    # four candidate formulations; pick the one with the largest pivot
    cand = np.stack([tr, m00, m11, m22], axis=-1)
    choice = np.argmax(cand, axis=-1)

    sw = np.sqrt(np.maximum(1.0 + tr, 0.0)) * 0.5  # |w|
    # w-dominant
    s0 = 2.0 * np.sqrt(np.maximum(1.0 + tr, 1e-30))
    q0 = np.stack([0.25 * s0, (m21 - m12) / s0, (m02 - m20) / s0, (m10 - m01) / s0], axis=-1)
    # x-dominant
    s1 = 2.0 * np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 1e-30))
    q1 = np.stack([(m21 - m12) / s1, 0.25 * s1, (m01 + m10) / s1, (m02 + m20) / s1], axis=-1)
    # y-dominant
    s2 = 2.0 * np.sqrt(np.maximum(1.0 - m00 + m11 - m22, 1e-30))
    q2 = np.stack([(m02 - m20) / s2, (m01 + m10) / s2, 0.25 * s2, (m12 + m21) / s2], axis=-1)
    # z-dominant
    s3 = 2.0 * np.sqrt(np.maximum(1.0 - m00 - m11 + m22, 1e-30))
    q3 = np.stack([(m10 - m01) / s3, (m02 + m20) / s3, (m12 + m21) / s3, 0.25 * s3], axis=-1)

    del sw
    stacked = np.stack([q0, q1, q2, q3], axis=-2)
    q = np.take_along_axis(stacked, choice[..., None, None].repeat(4, axis=-1), axis=-2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # canonical sign: nonnegative scalar part
    q = np.where(q[..., :1] < 0.0, -q, q)
    return q


def quat_to_aa(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternion -> (..., 3) axis-angle with angle in [0, pi]."""
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., 0]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    theta = 2.0 * np.arctan2(s, w)
    small = s < 1e-8
    # theta / sin(theta/2): Taylor around 0 keeps the map smooth
    factor = np.where(
        small,
        2.0 / np.maximum(w, 1e-30) * (1.0 - s * s / (3.0 * np.maximum(w, 1e-30) ** 2)),
        theta / np.where(small, 1.0, s),
    )
    return v * factor[..., None]


def matrix_to_aa(rot: np.ndarray) -> np.ndarray:
    """Log map via the quaternion route (stable near 0 and pi)."""
    return quat_to_aa(matrix_to_quat(rot))


def aa_to_quat(aa: np.ndarray) -> np.ndarray:
    """(..., 3) -> (..., 4) unit quaternion (w, x, y, z), w >= 0."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    half = 0.5 * theta
    small = theta < 1e-8
    k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    q = np.concatenate([np.cos(half)[..., None], aa * k[..., None]], axis=-1)
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternion -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def quat_slerp(qa: np.ndarray, qb: np.ndarray, u: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = np.sum(qa * qb, axis=-1, keepdims=True)
    qb = np.where(dot < 0.0, -qb, qb)
    dot = np.abs(dot)

    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    near = dot > 1.0 - 1e-10
    wa = np.where(near, 1.0 - u, np.sin((1.0 - u) * theta) / np.where(near, 1.0, sin_theta))
    wb = np.where(near, u, np.sin(u * theta) / np.where(near, 1.0, sin_theta))
    q = wa * qa + wb * qb
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[..., :1] < 0.0, -q, q)


def slerp_aa(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    """Geodesic interpolation of axis-angle rotations, endpoints exact."""
    if u <= 0.0:
        return np.array(a, dtype=np.float64, copy=True)
    if u >= 1.0:
        return np.array(b, dtype=np.float64, copy=True)
    return quat_to_aa(quat_slerp(aa_to_quat(a), aa_to_quat(b), float(u)))


# ---------------------------------------------------------------------------
# Tangent-space Jacobians for the backward passes
# ---------------------------------------------------------------------------

def left_jacobian(aa: np.ndarray) -> np.ndarray:
    """SO(3) left Jacobian J_l: exp(w + dw) ~ exp(hat(J_l dw)) exp(w)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    _, b, c = _sinc_coeffs(theta)
    k = hat(aa)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + b[..., None, None] * k + c[..., None, None] * (k @ k)


def left_jacobian_inv(aa: np.ndarray) -> np.ndarray:
    """Inverse of the left Jacobian (valid for |aa| < 2 pi)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    small = theta < 1e-4
    t2 = theta * theta
    half = 0.5 * theta
    # 1/t^2 - (1 + cos t) / (2 t sin t) == (1/t^2)(1 - (t/2) cot(t/2))
    cot_term = np.where(
        small,
        1.0 / 12.0 + t2 / 720.0,
        (1.0 - half / np.tan(np.where(small, 1.0, half))) / np.where(small, 1.0, t2),
    )
    k = hat(aa)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye - 0.5 * k + cot_term[..., None, None] * (k @ k)


def aa_grad_from_matrix_adjoint(aa: np.ndarray, rot: np.ndarray, adj: np.ndarray) -> np.ndarray:
    """Chain a matrix adjoint dL/dR back to the axis-angle parameters.

    aa:  (..., 3) parameters with rot == aa_to_matrix(aa)
    adj: (..., 3, 3) adjoint dL/dR
    """
    ghat = vee_skew(adj @ np.swapaxes(rot, -1, -2))
    jl = left_jacobian(aa)
    return np.einsum("...ji,...j->...i", jl, ghat)


def matrix_adjoint_from_left_grad(ghat: np.ndarray, rot: np.ndarray) -> np.ndarray:
    """Matrix adjoint carrying gradient ghat w.r.t. a left perturbation of rot."""
    return 0.5 * hat(ghat) @ rot


def log_backward_adjoint(aa: np.ndarray, rot: np.ndarray, daa: np.ndarray) -> np.ndarray:
    """Adjoint on R contributed by a gradient w.r.t. aa = log(R)."""
    ghat = np.einsum("...ji,...j->...i", left_jacobian_inv(aa), daa)
    return matrix_adjoint_from_left_grad(ghat, rot)


def rotate_backward(rot: np.ndarray, x: np.ndarray, dout: np.ndarray):
    """Backward of y = rot @ x. Returns (adjoint on rot, grad on x)."""
    adj = dout[..., :, None] * x[..., None, :]
    dx = np.einsum("...ji,...j->...i", rot, dout)
    return adj, dx
