"""Cross-modal fusion.

Point-cloud tokens act as the anchor representation: at every scale the
video and text tokens query the anchor tokens through single-head
cross-attention (keys and values from the anchor, residual back onto
the querying modality), pulling geometric context into each branch.
The projection weights are shared by both queries at a given scale.

Each of the three streams is then mean-pooled per frame (a validity
mask keeps padded text positions out of the average), a small causal
encoder watches the pooled triple over time, and a softmax head emits a
convex weight per stream and frame; the fused frame vector is the
weighted sum, concatenated across scales.

Any modality may be declared missing, in which case its token matrix is
replaced by a learned placeholder row before any of the above runs, so
the fused output is exactly independent of the raw input on that branch
while staying differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .errors import DataError
from .nn import (
    AttentionConfig,
    encoder,
    init_bias,
    init_encoder,
    init_matrix,
    init_mlp,
    mlp,
)
from .tape import (
    Tensor,
    add,
    concat,
    embedding_lookup,
    matmul,
    mean_reduce,
    reshape,
    scale,
    softmax,
    transpose,
)


@dataclass(frozen=True)
class ModalityMask:
    """Which modalities the model may look at for one sample."""

    video: bool = True
    lidar: bool = True
    text: bool = True


FULL_MASK = ModalityMask()
MASK_BY_NAME = {
    "all": FULL_MASK,
    "video": ModalityMask(video=True, lidar=False, text=False),
    "video+lidar": ModalityMask(video=True, lidar=True, text=False),
    "video+text": ModalityMask(video=True, lidar=False, text=True),
}


def sample_training_mask(rng: np.random.Generator,
                         drop_probability: float) -> ModalityMask:
    """Keep everything with probability ``1 - drop_probability``; otherwise
    drop down to one of the three reduced sensor sets, uniformly."""
    if rng.random() < drop_probability:
        return MASK_BY_NAME[("video", "video+lidar", "video+text")[
            int(rng.integers(3))]]
    return FULL_MASK


def init_fusion(params: dict, rng: np.random.Generator, cfg: RunConfig) -> None:
    d = cfg.feature_dim
    wide = 3 * d
    for k in range(len(cfg.scales)):
        for name in ("wq", "wk", "wv"):
            init_matrix(params, f"cmga{k}.{name}", rng, d, d)
        for modality in ("lidar", "video", "text"):
            params[f"miss.{modality}{k}"] = Tensor(
                rng.standard_normal((1, d)) / np.sqrt(d), requires_grad=True)
        # Zero-started frame embedding: ordering information is learned.
        params[f"afm{k}.time"] = Tensor(np.zeros((cfg.frames, wide)),
                                        requires_grad=True)
        init_encoder(params, f"afm{k}.enc", rng, wide, layers=2)
        init_mlp(params, f"afm{k}.mlp", rng, wide, d, 3)
        # Zero-started gate head: fusion opens at exactly uniform weights
        # so no stream is starved before it has learned anything.
        params[f"afm{k}.mlp.w2"].data[...] = 0.0
        params[f"afm{k}.mlp.b2"].data[...] = 0.0


def guided_cross_attention(query: Tensor, anchor: Tensor, params: dict,
                           prefix: str) -> Tensor:
    """Residual single-head attention from modality tokens onto the anchor.

    ``query`` is the video or text token matrix ``[T, n, d]`` (or a
    broadcastable placeholder row); keys and values both come from the
    anchor ``[T, M, d]``.  Output shape follows the query.
    """
    d = query.shape[-1]
    q = matmul(query, params[f"{prefix}.wq"])
    k = matmul(anchor, params[f"{prefix}.wk"])
    v = matmul(anchor, params[f"{prefix}.wv"])
    nd = k.ndim
    scores = scale(matmul(q, transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2))),
                   1.0 / np.sqrt(d))
    return add(query, matmul(softmax(scores, axis=-1), v))


def _placeholder(params: dict, name: str, frames: int) -> Tensor:
    """Learned [1, d] row broadcast to a [T, 1, d] token matrix."""
    row = reshape(params[name], (1, 1, params[name].shape[-1]))
    return add(Tensor(np.zeros((frames, 1, row.shape[-1]))), row)


def pooled_tokens(tokens: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Per-frame mean over tokens, [T, n, d] -> [T, d].

    ``valid`` restricts the mean to marked positions (frames with none
    marked fall back to the plain mean, keeping the result finite).
    """
    t, n, d = tokens.shape
    if valid is None:
        return mean_reduce(tokens, axis=1)
    counts = valid.sum(axis=1, keepdims=True)
    weights = np.where(counts > 0, valid / np.maximum(counts, 1),
                       np.full(valid.shape, 1.0 / n))
    return reshape(matmul(Tensor(weights[:, None, :]), tokens), (t, d))


def modality_weights(pooled: Tensor, params: dict, prefix: str,
                     cfg: RunConfig) -> Tensor:
    """Convex combination weights [T, 3] from the concatenated pooled
    streams [T, 3d], computed causally over frames."""
    t, wide = pooled.shape
    if t > cfg.frames:
        raise DataError(f"got {t} frames, config allows {cfg.frames}")
    x = add(pooled, embedding_lookup(params[f"{prefix}.time"], np.arange(t)))
    acfg = AttentionConfig(wide, cfg.head_count, causal=True)
    x = encoder(x, params, f"{prefix}.enc", 2, acfg)
    return softmax(mlp(x, params, f"{prefix}.mlp"), axis=-1)


def fuse_modalities(
    lidar_tokens: list[Tensor] | None,
    video_tokens: list[Tensor] | None,
    text_reads: list[Tensor] | None,
    text_valid: np.ndarray | None,
    params: dict,
    cfg: RunConfig,
    mask: ModalityMask = FULL_MASK,
):
    """Fused per-frame features plus per-scale modality weights.

    A masked modality's token list may (and should) be ``None``: its
    branch is never run, and the learned placeholder row stands in, so
    the result is exactly independent of that raw input.

    Returns ``(fused, alphas, anchor_tokens)`` where ``fused`` is
    ``[T, K*d]``, ``alphas`` is a list of ``[T, 3]`` arrays ordered
    (point cloud, video, text), and ``anchor_tokens`` is the per-scale
    anchor token list actually used (with placeholders substituted),
    which downstream decoding attends to.
    """
    k_scales = len(cfg.scales)
    present = [toks for toks, keep in ((lidar_tokens, mask.lidar),
                                       (video_tokens, mask.video),
                                       (text_reads, mask.text)) if keep]
    if not present:
        raise DataError("at least one modality must be present")
    for toks in present:
        if toks is None or len(toks) != k_scales:
            raise DataError("token lists must cover every scale")
    frames = present[0][0].shape[0]
    fused_parts = []
    alphas = []
    anchors = []
    for k in range(k_scales):
        anchor = (lidar_tokens[k] if mask.lidar
                  else _placeholder(params, f"miss.lidar{k}", frames))
        q_video = (video_tokens[k] if mask.video
                   else _placeholder(params, f"miss.video{k}", frames))
        q_text = (text_reads[k] if mask.text
                  else _placeholder(params, f"miss.text{k}", frames))
        valid = text_valid if mask.text else None
        guided_video = guided_cross_attention(q_video, anchor, params,
                                              f"cmga{k}")
        guided_text = guided_cross_attention(q_text, anchor, params,
                                             f"cmga{k}")
        pooled = [pooled_tokens(anchor),
                  pooled_tokens(guided_video),
                  pooled_tokens(guided_text, valid)]
        alpha = modality_weights(concat(pooled, axis=-1), params,
                                 f"afm{k}", cfg)
        stacked = concat([reshape(p, (frames, 1, cfg.feature_dim))
                          for p in pooled], axis=1)
        mixed = matmul(reshape(alpha, (frames, 1, 3)), stacked)
        fused_parts.append(reshape(mixed, (frames, cfg.feature_dim)))
        alphas.append(alpha.data.copy())
        anchors.append(anchor)
    return concat(fused_parts, axis=-1), alphas, anchors
