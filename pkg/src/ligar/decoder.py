"""Hierarchical decoding heads.

Recognition runs over known agent positions (the task is labeling, not
detection): each agent becomes a query built from its normalized
position and velocity plus a learned base vector.  Queries cross-attend
the finest anchor tokens, concatenate the fused frame feature, and an
MLP scores the action classes.

Group heads pool the softmaxed action scores of their members (known
membership, row-normalized) and score group activities; the scene head
pools group probabilities (zeros when the scene has no groups) and
scores the multi-label scene classes.  Each stage therefore reads the
previous stage's beliefs, which is what the consistency loss leans on.

Per-scale auxiliary scene heads read the pooled anchor tokens; they only
contribute training signal and are ignored at prediction time.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .errors import DataError
from .nn import (
    AttentionConfig,
    init_bias,
    init_matrix,
    init_mlp,
    linear,
    mlp,
    multi_head_attention,
)
from .tape import (
    Tensor,
    add,
    concat,
    matmul,
    mean_reduce,
    reshape,
    softmax,
)
from .taxonomy import N_ACTIONS, N_GROUP_ACTIVITIES, N_SCENE_LABELS

QUERY_FEATURES = 6  # normalized position plus per-axis velocity


def init_decoder(params: dict, rng: np.random.Generator, cfg: RunConfig) -> None:
    d = cfg.feature_dim
    wide = d + len(cfg.scales) * d
    params["dec.query.base"] = Tensor(rng.standard_normal(d) / np.sqrt(d),
                                      requires_grad=True)
    init_matrix(params, "dec.query.w", rng, QUERY_FEATURES, d)
    init_bias(params, "dec.query.b", d)
    for name in ("wq", "wk", "wv", "wo"):
        init_matrix(params, f"dec.att.{name}", rng, d, d)
    for name in ("bq", "bk", "bv", "bo"):
        init_bias(params, f"dec.att.{name}", d)
    init_mlp(params, "dec.ind.mlp", rng, wide, 2 * d, N_ACTIONS)
    init_mlp(params, "dec.grp.mlp", rng,
             N_ACTIONS + len(cfg.scales) * d, 2 * d, N_GROUP_ACTIVITIES)
    init_mlp(params, "dec.scn.mlp", rng,
             N_GROUP_ACTIVITIES + len(cfg.scales) * d, 2 * d, N_SCENE_LABELS)
    for k in range(len(cfg.scales)):
        init_matrix(params, f"dec.aux{k}.w", rng, d, N_SCENE_LABELS)
        init_bias(params, f"dec.aux{k}.b", N_SCENE_LABELS)


def agent_query_features(tracks: np.ndarray, frame_period: float,
                         arena_size: float) -> np.ndarray:
    """[n, T, 3] annotated positions -> [T, n, 6] query features.

    Velocity uses the backward difference; frame 0 borrows frame 1's so a
    constant-velocity agent gets a constant feature row.
    """
    tracks = np.asarray(tracks, dtype=np.float64)
    if tracks.ndim != 3 or tracks.shape[-1] != 3:
        raise DataError("expected [n, T, 3] agent tracks")
    pos = tracks / arena_size
    vel = np.zeros_like(tracks)
    if tracks.shape[1] > 1:
        vel[:, 1:] = np.diff(tracks, axis=1) / frame_period
        vel[:, 0] = vel[:, 1]
    feats = np.concatenate([pos, vel], axis=-1)
    return feats.transpose(1, 0, 2)


def _broadcast_rows(fused: Tensor, rows: int) -> Tensor:
    """[T, c] -> [T, rows, c] by explicit broadcast against zeros."""
    t, c = fused.shape
    return add(Tensor(np.zeros((t, rows, c))), reshape(fused, (t, 1, c)))


def decode_individual(query_feats: np.ndarray, anchor: Tensor, fused: Tensor,
                      params: dict, cfg: RunConfig) -> Tensor:
    """Action logits [T, n, A] for every agent and frame."""
    q = add(linear(Tensor(np.asarray(query_feats, dtype=np.float64)),
                   params["dec.query.w"], params["dec.query.b"]),
            params["dec.query.base"])
    att = multi_head_attention(
        linear(q, params["dec.att.wq"], params["dec.att.bq"]),
        linear(anchor, params["dec.att.wk"], params["dec.att.bk"]),
        linear(anchor, params["dec.att.wv"], params["dec.att.bv"]),
        AttentionConfig(cfg.feature_dim, cfg.head_count))
    x = add(q, linear(att, params["dec.att.wo"], params["dec.att.bo"]))
    h = concat([x, _broadcast_rows(fused, x.shape[1])], axis=-1)
    return mlp(h, params, "dec.ind.mlp")


def decode_group(action_logits: Tensor, membership: np.ndarray, fused: Tensor,
                 params: dict) -> Tensor:
    """Group-activity logits [T, G, C] from member action beliefs.

    ``membership`` is a constant [G, n] 0/1 matrix; rows are normalized so
    each group reads the mean belief of its members.
    """
    t = action_logits.shape[0]
    membership = np.asarray(membership, dtype=np.float64)
    groups = membership.shape[0]
    if groups == 0:
        return Tensor(np.zeros((t, 0, N_GROUP_ACTIVITIES)))
    if membership.shape[1] != action_logits.shape[1]:
        raise DataError("membership columns must match agent count")
    weights = membership / membership.sum(axis=1, keepdims=True)
    pooled = matmul(Tensor(weights), softmax(action_logits, axis=-1))
    h = concat([pooled, _broadcast_rows(fused, groups)], axis=-1)
    return mlp(h, params, "dec.grp.mlp")


def decode_scene(group_logits: Tensor, fused: Tensor, params: dict) -> Tensor:
    """Multi-label scene logits [T, S]; no groups means a zero prior."""
    t = group_logits.shape[0]
    if group_logits.shape[1] == 0:
        prior = Tensor(np.zeros((t, N_GROUP_ACTIVITIES)))
    else:
        prior = mean_reduce(softmax(group_logits, axis=-1), axis=1)
    return mlp(concat([prior, fused], axis=-1), params, "dec.scn.mlp")


def aux_scene_logits(anchors: list[Tensor], params: dict) -> list[Tensor]:
    """Training-only per-scale scene logits from pooled anchor tokens."""
    out = []
    for k, anchor in enumerate(anchors):
        pooled = mean_reduce(anchor, axis=1)
        out.append(linear(pooled, params[f"dec.aux{k}.w"],
                          params[f"dec.aux{k}.b"]))
    return out
