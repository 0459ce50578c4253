"""Trajectory evaluation: Procrustes alignment, the world/local MPJPE family,
acceleration error, and the foot-skate diagnostic."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


class DegenerateAlignmentError(MetricError):
    pass


@dataclass
class Alignment:
    """Similarity (or rigid, scale == 1) transform y ~ scale * rot @ x + trans."""

    rot: np.ndarray    # (3, 3)
    trans: np.ndarray  # (3,)
    scale: float = 1.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.scale * np.einsum("ij,...j->...i", self.rot, x) + self.trans


def procrustes(x: np.ndarray, y: np.ndarray, mode: str = "rigid") -> Alignment:
    """Least-squares alignment of x onto y (both (N, 3)), reflections excluded.

    mode "rigid" fixes scale = 1; "similarity" solves for it (Umeyama).
    """
    if mode not in ("rigid", "similarity"):
        raise MetricError(f"unknown procrustes mode {mode!r}")
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 3)
    if x.shape != y.shape or x.shape[0] < 3:
        raise MetricError("point sets must match and contain at least 3 points")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    h = xc.T @ yc
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-12 * max(s[0], 1e-12):
        raise DegenerateAlignmentError("point configuration does not span a plane")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d])
    rot = vt.T @ flip @ u.T
    if mode == "similarity":
        denom = float(np.sum(xc * xc))
        scale = float(np.trace(flip @ np.diag(s))) / denom
    else:
        scale = 1.0
    trans = my - scale * rot @ mx
    return Alignment(rot=rot, trans=trans, scale=scale)


def _mean_joint_error_mm(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(a - b, axis=-1))) * 1000.0


def _check_pair(pred, gt, valid):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3:
        raise MetricError(f"trajectory shapes disagree: {pred.shape} vs {gt.shape}")
    if valid is None:
        valid = np.ones(pred.shape[0], dtype=bool)
    valid = np.asarray(valid, dtype=bool).reshape(-1)
    if valid.shape[0] != pred.shape[0]:
        raise MetricError("valid mask length mismatch")
    if valid.sum() == 0:
        raise MetricError("no valid frames")
    return pred, gt, valid


def w_mpjpe(pred: np.ndarray, gt: np.ndarray, valid=None) -> float:
    """World MPJPE (mm) after rigid alignment fit on the first valid frame."""
    pred, gt, valid = _check_pair(pred, gt, valid)
    t0 = int(np.flatnonzero(valid)[0])
    align = procrustes(pred[t0], gt[t0], mode="rigid")
    return _mean_joint_error_mm(align.apply(pred[valid]), gt[valid])


def wa_mpjpe(pred: np.ndarray, gt: np.ndarray, valid=None) -> float:
    """World MPJPE (mm) after one rigid alignment fit on all valid frames."""
    pred, gt, valid = _check_pair(pred, gt, valid)
    stacked_p = pred[valid].reshape(-1, 3)
    stacked_g = gt[valid].reshape(-1, 3)
    align = procrustes(stacked_p, stacked_g, mode="rigid")
    return _mean_joint_error_mm(align.apply(pred[valid]), gt[valid])


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray, valid=None) -> float:
    """Local MPJPE (mm): per-frame similarity Procrustes."""
    pred, gt, valid = _check_pair(pred, gt, valid)
    errs = []
    for t in np.flatnonzero(valid):
        align = procrustes(pred[t], gt[t], mode="similarity")
        errs.append(np.linalg.norm(align.apply(pred[t]) - gt[t], axis=-1))
    return float(np.mean(np.concatenate(errs))) * 1000.0


def accel_error(pred: np.ndarray, gt: np.ndarray, fps: float, valid=None) -> float:
    """Mean | |a_pred| - |a_gt| | over joints and frames, in mm/s^2.

    Acceleration is the central second difference scaled by fps^2; frames
    whose three-frame stencil is not fully valid are dropped.
    """
    pred, gt, valid = _check_pair(pred, gt, valid)
    if pred.shape[0] < 3:
        raise MetricError("acceleration needs at least 3 frames")
    ok = valid[:-2] & valid[1:-1] & valid[2:]
    if ok.sum() == 0:
        raise MetricError("no valid acceleration stencils")
    ap = (pred[2:] - 2.0 * pred[1:-1] + pred[:-2]) * fps * fps
    ag = (gt[2:] - 2.0 * gt[1:-1] + gt[:-2]) * fps * fps
    mag_p = np.linalg.norm(ap[ok], axis=-1)
    mag_g = np.linalg.norm(ag[ok], axis=-1)
    return float(np.mean(np.abs(mag_p - mag_g))) * 1000.0


def skate_metric(foot_joints: np.ndarray, contact: np.ndarray):
    """Mean horizontal (xy) slide per labeled-contact frame pair, in mm.

    foot_joints: (T, F, 3); contact: (T, F) bool. Pairs count when both
    endpoints carry the label. Returns None when no contact pairs exist.
    """
    foot_joints = np.asarray(foot_joints, dtype=np.float64)
    contact = np.asarray(contact, dtype=bool)
    if foot_joints.shape[:2] != contact.shape:
        raise MetricError("contact labels misaligned with foot joints")
    both = contact[:-1] & contact[1:]
    if both.sum() == 0:
        return None
    slide = np.linalg.norm((foot_joints[1:, :, :2] - foot_joints[:-1, :, :2])[both], axis=-1)
    return float(np.mean(slide)) * 1000.0


@dataclass
class MetricReport:
    w_mpjpe_mm: float
    wa_mpjpe_mm: float
    pa_mpjpe_mm: float
    accel_err_mm_s2: float
    skate_mm: float | None
    dropped_frames: int

    KEYS = ("w_mpjpe_mm", "wa_mpjpe_mm", "pa_mpjpe_mm",
            "accel_err_mm_s2", "skate_mm", "dropped_frames")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.KEYS}

    def save(self, txt_path, json_path) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        lines = []
        for k in self.KEYS:
            v = getattr(self, k)
            lines.append(f"{k} {'absent' if v is None else repr(v) if isinstance(v, float) else v}")
        with open(txt_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load_json(cls, path) -> "MetricReport":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(**{k: data[k] for k in cls.KEYS})
