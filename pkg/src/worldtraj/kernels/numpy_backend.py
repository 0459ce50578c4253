"""Pure-numpy reference implementations of the hot kernels.

The compiled extension (worldtraj.kernels._core) mirrors these exactly;
tests assert parity between the two. All rotation adjoints are plain 3x3
matrix adjoints dL/dR.
"""

from __future__ import annotations

import numpy as np


def fk_chain_forward(loc_rot, bones, parents, root_rot):
    """Kinematic chain over a batch of frames.

    loc_rot:  (B, J, 3, 3) local joint rotations
    bones:    (B, J, 3) parent-relative offsets (root offset rotated by root_rot)
    parents:  (J,) int, parents[0] == -1, parents[j] < j
    root_rot: (B, 3, 3) global rotation prepended at the root

    Returns (chain_rot (B, J, 3, 3), pos (B, J, 3)); pos is relative to the
    root anchor (add the root translation afterwards).
    """
    B, J = loc_rot.shape[0], loc_rot.shape[1]
    chain = np.empty((B, J, 3, 3), dtype=np.float64)
    pos = np.empty((B, J, 3), dtype=np.float64)
    chain[:, 0] = root_rot @ loc_rot[:, 0]
    pos[:, 0] = np.einsum("bij,bj->bi", root_rot, bones[:, 0])
    for j in range(1, J):
        p = parents[j]
        chain[:, j] = chain[:, p] @ loc_rot[:, j]
        pos[:, j] = pos[:, p] + np.einsum("bij,bj->bi", chain[:, p], bones[:, j])
    return chain, pos


def fk_chain_backward(loc_rot, bones, parents, root_rot, chain_rot, dpos, dchain_adj=None):
    """Backward of fk_chain_forward.

    dpos:       (B, J, 3) gradient w.r.t. pos
    dchain_adj: optional (B, J, 3, 3) matrix adjoints w.r.t. chain_rot

    Returns (dloc_adj (B, J, 3, 3), dbones (B, J, 3), droot_adj (B, 3, 3)).
    """
    B, J = loc_rot.shape[0], loc_rot.shape[1]
    dpos = np.array(dpos, dtype=np.float64, copy=True)
    G = (
        np.array(dchain_adj, dtype=np.float64, copy=True)
        if dchain_adj is not None
        else np.zeros((B, J, 3, 3), dtype=np.float64)
    )
    dloc = np.empty((B, J, 3, 3), dtype=np.float64)
    dbones = np.empty((B, J, 3), dtype=np.float64)
    for j in range(J - 1, 0, -1):
        p = parents[j]
        parent_chain = chain_rot[:, p]
        dbones[:, j] = np.einsum("bji,bj->bi", parent_chain, dpos[:, j])
        G[:, p] += dpos[:, j, :, None] * bones[:, j, None, :]
        dpos[:, p] += dpos[:, j]
        dloc[:, j] = np.einsum("bji,bjk->bik", parent_chain, G[:, j])
        G[:, p] += G[:, j] @ np.swapaxes(loc_rot[:, j], -1, -2)
    dloc[:, 0] = np.einsum("bji,bjk->bik", root_rot, G[:, 0])
    droot = G[:, 0] @ np.swapaxes(loc_rot[:, 0], -1, -2)
    droot += dpos[:, 0, :, None] * bones[:, 0, None, :]
    dbones[:, 0] = np.einsum("bji,bj->bi", root_rot, dpos[:, 0])
    return dloc, dbones, droot


def rot_scan_forward(init, inc):
    """Cumulative left-composition: out[0] = init, out[t] = inc[t-1] @ out[t-1].

    init: (K, 3, 3); inc: (T-1, K, 3, 3) -> out (T, K, 3, 3)
    """
    T = inc.shape[0] + 1
    K = init.shape[0]
    out = np.empty((T, K, 3, 3), dtype=np.float64)
    out[0] = init
    for t in range(1, T):
        out[t] = inc[t - 1] @ out[t - 1]
    return out


def rot_scan_backward(inc, out, dout_adj):
    """Backward of rot_scan_forward given matrix adjoints on every output.

    Returns (dinit_adj (K, 3, 3), dinc_adj (T-1, K, 3, 3)).
    """
    T = out.shape[0]
    dinc = np.zeros_like(inc)
    G = np.array(dout_adj[T - 1], dtype=np.float64, copy=True)
    for t in range(T - 1, 0, -1):
        dinc[t - 1] = G @ np.swapaxes(out[t - 1], -1, -2)
        G = np.swapaxes(inc[t - 1], -1, -2) @ G + dout_adj[t - 1]
    return G, dinc
