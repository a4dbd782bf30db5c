"""Losses and evaluation metrics.

The trained objective combines, per scale, the three recognition losses
(agent actions, group activities, multi-label scene classes) plus that
scale's auxiliary scene loss; scale terms are averaged with the
configured weights.  Two structural regularizers sit on top:

* a hierarchy-consistency penalty charging probability mass placed on
  (action, group-activity) and (group-activity, scene-label) pairs the
  taxonomy forbids;
* a temporal-smoothness penalty on consecutive scene probability
  vectors.

Metrics are plain numpy on finished predictions: per-sample
precision/recall/F1 for the multi-label scene head and per-class/mean
accuracies for the two categorical heads.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .config import RunConfig
from .errors import DataError
from .tape import (
    Tensor,
    gather_flat,
    log_softmax,
    matmul,
    mean_reduce,
    mul,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    sub,
    sum_reduce,
)
from . import taxonomy


# ---------------------------------------------------------------------------
# loss primitives


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` over the last axis."""
    targets = np.asarray(targets, dtype=np.int64)
    *lead, c = logits.shape
    if tuple(targets.shape) != tuple(lead):
        raise DataError(f"targets {targets.shape} do not match logits {logits.shape}")
    logp = log_softmax(logits, axis=-1)
    offsets = np.arange(targets.size, dtype=np.int64) * c
    picked = gather_flat(logp, offsets + targets.reshape(-1))
    return scale(mean_reduce(picked), -1.0)


def binary_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean of ``softplus(z) - z*y`` over all elements; stable for any z."""
    targets = np.asarray(targets, dtype=np.float64)
    if tuple(targets.shape) != tuple(logits.shape):
        raise DataError("target shape must match logits")
    return mean_reduce(sub(softplus(logits), mul(logits, Tensor(targets))))


# ---------------------------------------------------------------------------
# structural penalties


def hierarchy_consistency_loss(action_logits: Tensor, group_logits: Tensor,
                               scene_logits: Tensor,
                               membership: np.ndarray) -> Tensor:
    """Mass on taxonomy-forbidden pairs, averaged over frames and pairs.

    For every (agent, its group) pair the penalty is
    ``p_action^T (1 - C_ag) p_group``; for every group it is
    ``p_group^T (1 - C_gs) p_scene`` with independent per-label scene
    probabilities.  Both terms live in [0, 1]; scenes without groups
    contribute zero.
    """
    membership = np.asarray(membership, dtype=np.float64)
    groups, agents = membership.shape
    if agents != action_logits.shape[1]:
        raise DataError("membership columns must match agent count")
    if groups != group_logits.shape[1]:
        raise DataError("membership rows must match group count")
    if groups == 0:
        return Tensor(0.0)
    frames = action_logits.shape[0]
    p_act = softmax(action_logits, axis=-1)
    p_grp = softmax(group_logits, axis=-1)
    p_scn = sigmoid(scene_logits)

    pair_agent, pair_group = np.nonzero(membership.T)  # ordered by agent
    sel_a = np.zeros((len(pair_agent), agents))
    sel_g = np.zeros((len(pair_agent), groups))
    sel_a[np.arange(len(pair_agent)), pair_agent] = 1.0
    sel_g[np.arange(len(pair_agent)), pair_group] = 1.0
    forbid_ag = 1.0 - taxonomy.action_group_compat
    forbid_gs = 1.0 - taxonomy.group_scene_compat

    a = matmul(Tensor(sel_a), p_act)                      # [T, P, A]
    g = matmul(Tensor(sel_g), p_grp)                      # [T, P, C]
    pair_pen = sum_reduce(mul(matmul(a, Tensor(forbid_ag)), g), axis=-1)
    scn_pen = sum_reduce(
        mul(matmul(p_grp, Tensor(forbid_gs)),
            reshape(p_scn, (frames, 1, p_scn.shape[-1]))), axis=-1)
    return mean_reduce(pair_pen) + mean_reduce(scn_pen)


def temporal_smoothness_loss(scene_logits: Tensor) -> Tensor:
    """Mean squared L2 distance between consecutive scene probability rows."""
    frames = scene_logits.shape[0]
    if frames < 2:
        return Tensor(0.0)
    p = sigmoid(scene_logits)
    diff_matrix = np.zeros((frames - 1, frames))
    idx = np.arange(frames - 1)
    diff_matrix[idx, idx + 1] = 1.0
    diff_matrix[idx, idx] = -1.0
    d = matmul(Tensor(diff_matrix), p)
    return scale(sum_reduce(mul(d, d)), 1.0 / (frames - 1))


# ---------------------------------------------------------------------------
# assembled objective


def task_losses(action_logits: Tensor, group_logits: Tensor,
                scene_logits: Tensor, aux_logits: list[Tensor],
                targets: dict) -> list[Tensor]:
    """Per-scale task loss: shared recognition terms plus that scale's
    auxiliary scene term."""
    frames, agents, _ = action_logits.shape
    act = softmax_cross_entropy(
        action_logits, np.broadcast_to(targets["actions"], (frames, agents)))
    scene_rows = np.broadcast_to(targets["scene"],
                                 (frames, targets["scene"].shape[-1]))
    scn = binary_cross_entropy(scene_logits, scene_rows)
    base = act + scn
    if group_logits.shape[1] > 0:
        base = base + softmax_cross_entropy(
            group_logits,
            np.broadcast_to(targets["activities"],
                            (frames, group_logits.shape[1])))
    return [base + binary_cross_entropy(aux, scene_rows) for aux in aux_logits]


def total_loss(action_logits: Tensor, group_logits: Tensor,
               scene_logits: Tensor, aux_logits: list[Tensor],
               targets: dict, cfg: RunConfig) -> tuple[Tensor, dict]:
    """Weighted scale losses plus the structural penalties.

    Returns the scalar loss tensor and a float breakdown for logging.
    """
    per_scale = task_losses(action_logits, group_logits, scene_logits,
                            aux_logits, targets)
    weights = cfg.weights()
    if len(weights) != len(per_scale):
        raise DataError("one weight per scale required")
    total = None
    for w, term in zip(weights, per_scale):
        part = scale(term, w)
        total = part if total is None else total + part
    consistency = hierarchy_consistency_loss(
        action_logits, group_logits, scene_logits, targets["membership"])
    smoothness = temporal_smoothness_loss(scene_logits)
    total = total + scale(consistency, cfg.consistency_weight)
    total = total + scale(smoothness, cfg.smoothness_weight)
    breakdown = {
        "task": [float(t.data) for t in per_scale],
        "consistency": float(consistency.data),
        "smoothness": float(smoothness.data),
        "total": float(total.data),
    }
    return total, breakdown


# ---------------------------------------------------------------------------
# predictions and metrics (plain numpy, evaluation side)


def action_predictions(action_logits: np.ndarray) -> np.ndarray:
    """[T, n, A] logits -> [n] class ids, frame-averaged probabilities."""
    p = np.exp(action_logits - action_logits.max(axis=-1, keepdims=True))
    p /= p.sum(axis=-1, keepdims=True)
    return p.mean(axis=0).argmax(axis=-1)


def group_predictions(group_logits: np.ndarray) -> np.ndarray:
    if group_logits.shape[1] == 0:
        return np.zeros(0, dtype=np.int64)
    return action_predictions(group_logits)


def scene_predictions(scene_logits: np.ndarray, threshold: float) -> np.ndarray:
    """[T, S] logits -> boolean [S], frame-averaged probabilities."""
    return expit(scene_logits).mean(axis=0) >= threshold


def precision_recall_f1(pred: np.ndarray, true: np.ndarray) -> tuple:
    """Set-style scores for one multi-label prediction.

    An empty prediction scores precision 1 against an empty truth and 0
    against a non-empty one; empty truths score recall 1.  F1 is 0 when
    precision + recall is 0.
    """
    pred = np.asarray(pred, dtype=bool)
    true = np.asarray(true, dtype=bool)
    hit = float((pred & true).sum())
    if pred.any():
        p = hit / pred.sum()
    else:
        p = 1.0 if not true.any() else 0.0
    r = hit / true.sum() if true.any() else 1.0
    f = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def multilabel_scores(preds: np.ndarray, trues: np.ndarray) -> dict:
    """Sample-averaged precision/recall/F1 over [N, S] boolean arrays."""
    preds = np.atleast_2d(preds)
    trues = np.atleast_2d(trues)
    if preds.shape != trues.shape:
        raise DataError("prediction and truth shapes differ")
    rows = [precision_recall_f1(p, t) for p, t in zip(preds, trues)]
    arr = np.array(rows)
    return {"precision": float(arr[:, 0].mean()),
            "recall": float(arr[:, 1].mean()),
            "f1": float(arr[:, 2].mean())}


def class_accuracies(pred: np.ndarray, true: np.ndarray,
                     n_classes: int) -> tuple[np.ndarray, float]:
    """Per-class accuracy (NaN for absent classes) and their mean."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise DataError("prediction and truth shapes differ")
    per = np.full(n_classes, np.nan)
    for c in range(n_classes):
        mask = true == c
        if mask.any():
            per[c] = float((pred[mask] == c).mean())
    present = ~np.isnan(per)
    mca = float(per[present].mean()) if present.any() else float("nan")
    return per, mca


def overall_accuracy(pred: np.ndarray, true: np.ndarray) -> float:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.size == 0:
        return float("nan")
    return float((pred == true).mean())
