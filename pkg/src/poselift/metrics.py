"""Pose accuracy metrics. All positional arguments are numpy mm arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PCK_THRESHOLD_MM = 150.0
AUC_STEPS = 31


def mpjpe(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean Euclidean joint error over all frames and joints."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.linalg.norm(pred - target, axis=-1).mean())


def similarity_align(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, bool]:
    """Least-squares similarity transform (scale, rotation, translation).

    Operates on point sets flattened over frames. A degenerate all-zero
    spread on either side skips alignment and reports it.
    """
    p = pred.reshape(-1, 3)
    q = target.reshape(-1, 3)
    mu_p = p.mean(axis=0)
    mu_q = q.mean(axis=0)
    pc = p - mu_p
    qc = q - mu_q
    norm_p = np.linalg.norm(pc)
    norm_q = np.linalg.norm(qc)
    if norm_p == 0.0 or norm_q == 0.0:
        return pred.copy(), False
    cov = pc.T @ qc
    u, s, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    d = np.diag([1.0, 1.0, sign])
    rot = vt.T @ d @ u.T
    scale = (s * np.diag(d)).sum() / (norm_p ** 2)
    aligned = scale * pc @ rot.T + mu_q
    return aligned.reshape(pred.shape), True


def p_mpjpe(pred: np.ndarray, target: np.ndarray) -> tuple[float, bool]:
    """MPJPE after per-sequence similarity alignment; flag False when the
    degenerate fallback (no alignment) was used."""
    aligned, ok = similarity_align(pred, target)
    return mpjpe(aligned, target), ok


def pck(pred: np.ndarray, target: np.ndarray, threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    """Percentage of joints with error within the threshold."""
    errors = np.linalg.norm(pred - target, axis=-1)
    return float((errors <= threshold_mm).mean() * 100.0)


def auc(pred: np.ndarray, target: np.ndarray, max_threshold_mm: float = PCK_THRESHOLD_MM,
        steps: int = AUC_STEPS) -> float:
    """Mean PCK over evenly spaced thresholds from 0 to the maximum."""
    thresholds = np.linspace(0.0, max_threshold_mm, steps)
    errors = np.linalg.norm(pred - target, axis=-1)
    return float(np.mean([(errors <= th).mean() * 100.0 for th in thresholds]))


@dataclass
class MetricReport:
    mpjpe_mm: float
    p_mpjpe_mm: float
    pck_pct: float
    auc_pct: float
    aligned_all: bool
    per_sequence: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "p_mpjpe_mm": self.p_mpjpe_mm,
            "pck_pct": self.pck_pct,
            "auc_pct": self.auc_pct,
            "aligned_all": self.aligned_all,
            "per_sequence": self.per_sequence,
        }


def evaluate_poses(pred: np.ndarray, target: np.ndarray) -> MetricReport:
    """Score (S, T, J, 3) predictions sequence by sequence, then average."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    rows = []
    aligned_all = True
    for i in range(pred.shape[0]):
        pm, ok = p_mpjpe(pred[i], target[i])
        aligned_all = aligned_all and ok
        rows.append({
            "index": i,
            "mpjpe_mm": mpjpe(pred[i], target[i]),
            "p_mpjpe_mm": pm,
            "pck_pct": pck(pred[i], target[i]),
            "auc_pct": auc(pred[i], target[i]),
            "aligned": ok,
        })
    return MetricReport(
        mpjpe_mm=float(np.mean([r["mpjpe_mm"] for r in rows])),
        p_mpjpe_mm=float(np.mean([r["p_mpjpe_mm"] for r in rows])),
        pck_pct=float(np.mean([r["pck_pct"] for r in rows])),
        auc_pct=float(np.mean([r["auc_pct"] for r in rows])),
        aligned_all=aligned_all,
        per_sequence=rows,
    )


def constant_pose_baseline(train_targets: np.ndarray, eval_targets: np.ndarray) -> float:
    """Eval MPJPE of the best constant prediction: the train-split mean pose."""
    mean_pose = train_targets.mean(axis=(0, 1))  # (J, 3)
    broadcast = np.broadcast_to(mean_pose, eval_targets.shape)
    return mpjpe(broadcast, eval_targets)
