"""Independent numpy re-implementation of the training objective.

Written directly from the loss definitions, sharing no code with the torch
implementation (only the mesh SDF oracle from oracles.py and basic
quaternion identities). Used to pin the torch losses to 1e-10.
"""

import numpy as np

from oracles import mesh_sdf_oracle


def np_quat_mul(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def np_quat_log(q):
    q = np.where(q[..., :1] < 0, -q, q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    xyz = q[..., 1:]
    n = np.linalg.norm(xyz, axis=-1)
    angle = 2.0 * np.arctan2(n, w)
    k = np.where(n > 1e-12, angle / np.where(n > 1e-12, n, 1.0), 2.0)
    return xyz * k[..., None]


def np_rotate(q, v):
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def oracle_pc_loss(pred, gt, mask):
    d = np.linalg.norm(pred - gt, axis=-1)          # (B,T,M)
    num = (d * mask[..., None]).sum()
    return num / (mask.sum() * pred.shape[-2])


def oracle_ja_loss(pred, gt, mask):
    sq = ((pred - gt) ** 2).sum(-1)
    return (sq * mask).sum() / mask.sum()


def oracle_smooth_loss(wq, wt, oq, ot, valid):
    total = 0.0
    for q, tr in ((wq, wt), (oq, ot)):
        B, T = q.shape[:2]
        for b in range(B):
            for t in range(1, T - 1):
                if not (valid[b, t - 1] and valid[b, t] and valid[b, t + 1]):
                    continue
                conj = q[b, t - 1] * np.array([1.0, -1.0, -1.0, -1.0])
                r1 = np_quat_log(np_quat_mul(conj, q[b, t]))
                conj = q[b, t] * np.array([1.0, -1.0, -1.0, -1.0])
                r2 = np_quat_log(np_quat_mul(conj, q[b, t + 1]))
                total += max(0.0, -float(np.dot(r1, r2)))
                v1 = tr[b, t] - tr[b, t - 1]
                v2 = tr[b, t + 1] - tr[b, t]
                n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
                if n1 >= 1e-12 and n2 >= 1e-12:
                    gamma = float(np.dot(v1, v2)) / (n1 * n2)
                    total += max(0.0, -gamma)
    return total


def oracle_pene_loss(hand_points, object_quat, object_trans, vertices, faces, mask, rng):
    """hand_points (B,T,V,3) world; mesh given raw so the SDF is independent."""
    B, T, V, _ = hand_points.shape
    total = 0.0
    for b in range(B):
        for t in range(T):
            if not mask[b, t]:
                continue
            conj = object_quat[b, t] * np.array([1.0, -1.0, -1.0, -1.0])
            local = np_rotate(conj, hand_points[b, t] - object_trans[b, t])
            for v in range(V):
                sd = mesh_sdf_oracle(local[v], vertices, faces, rng)
                total += max(0.0, -sd)
    return total / (mask.sum() * V)


def oracle_total(rec, smooth, pene, w_rec, w_smooth, w_pene):
    return w_rec * rec + w_smooth * smooth + w_pene * pene
