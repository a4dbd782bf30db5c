"""Per-modality encoders producing aligned multi-scale token matrices.

Each branch maps one raw modality to K token matrices, one per scale,
all sharing the feature width ``cfg.feature_dim``:

* point clouds: farthest-point sampling and ball grouping feed a shared
  point MLP; the pooled neighborhood features pass through a small
  transformer per scale and then a refinement stage;
* video: each frame is paired with its deviation from the clip-mean
  grid, then a stack of non-overlapping patch convolutions yields one
  grid per scale whose cells become tokens, mixed across frames by
  attention at fixed grid positions;
* text: token plus position embeddings run through a padding-masked
  encoder whose successive layers provide the per-scale readouts.

Coarser scales mean fewer tokens in every branch, so scale k of one
modality can cross-attend scale k of another without reshaping.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .errors import ConfigError, DataError
from .nn import (
    MASK_OFF,
    AttentionConfig,
    attention_block,
    encoder,
    init_attention_block,
    init_bias,
    init_encoder,
    init_layer_norm,
    init_matrix,
    init_mlp,
    layer_norm,
    linear,
)
from .pointcloud import grouped_relative, set_abstraction_batch
from .synthgen import PAD_ID, VOCAB
from .tape import Tensor, add, embedding_lookup, matmul, relu, reshape, transpose

# (patch edge, output channels) per pyramid level; 32x32 input cells give
# 8x8, 4x4, and 2x2 grids, i.e. 64/16/4 tokens per scale.
VIDEO_LEVELS = ((4, 16), (2, 32), (2, 32))


def token_attention(cfg: RunConfig, causal: bool = False) -> AttentionConfig:
    return AttentionConfig(cfg.feature_dim, cfg.head_count, causal)


# ---------------------------------------------------------------------------
# point-cloud branch


def init_lidar_backbone(params: dict, rng: np.random.Generator,
                        cfg: RunConfig) -> None:
    d = cfg.feature_dim
    for k in range(len(cfg.scales)):
        init_mlp(params, f"lidar.sa{k}", rng, 3, d, d)
        init_encoder(params, f"lidar.enc{k}", rng, d, layers=2)
        init_attention_block(params, f"lidar.ref{k}.block", rng, d, 2 * d)
        init_layer_norm(params, f"lidar.ref{k}.lnf", d)
        init_matrix(params, f"lidar.ref{k}.head.w", rng, d, d)
        init_bias(params, f"lidar.ref{k}.head.b", d)


def lidar_neighborhoods(frames: list[np.ndarray],
                        cfg: RunConfig) -> list[np.ndarray]:
    """Centroid-relative neighborhoods per scale, stacked over frames.

    Returns one ``[T, M_k, n_max, 3]`` array per scale.  This is pure
    geometry (no parameters), so callers cache it per sample.
    """
    out = []
    for scale in cfg.scales:
        rel = []
        for pts in frames:
            r = grouped_relative(pts, scale)
            if r.shape[0] != scale.sample_count:
                raise DataError(
                    f"frame has {len(pts)} points, fewer than the "
                    f"{scale.sample_count} centroids this scale samples")
            rel.append(r)
        out.append(np.stack(rel))
    return out


def encode_lidar(neighborhoods: list[np.ndarray], params: dict,
                 cfg: RunConfig) -> list[Tensor]:
    """Per-scale token matrices ``[T, M_k, d]`` from cached neighborhoods."""
    acfg = token_attention(cfg)
    tokens = []
    for k, rel in enumerate(neighborhoods):
        tok = set_abstraction_batch(rel, params, f"lidar.sa{k}")
        tokens.append(encoder(tok, params, f"lidar.enc{k}", 2, acfg))
    return tokens


def refine_lidar_tokens(tokens: list[Tensor], params: dict,
                        cfg: RunConfig) -> list[Tensor]:
    """Second-stage refinement: one attention block, a norm, and a residual
    linear head per scale.  With zero weights this is a plain layer norm."""
    acfg = token_attention(cfg)
    out = []
    for k, tok in enumerate(tokens):
        x = attention_block(tok, params, f"lidar.ref{k}.block", acfg)
        x = layer_norm(x, params[f"lidar.ref{k}.lnf.g"],
                       params[f"lidar.ref{k}.lnf.b"])
        out.append(add(x, linear(x, params[f"lidar.ref{k}.head.w"],
                                 params[f"lidar.ref{k}.head.b"])))
    return out


# ---------------------------------------------------------------------------
# video branch


def _patchify(x: Tensor, edge: int) -> Tensor:
    """[T, H, W, C] -> [T, H/edge, W/edge, edge*edge*C] non-overlapping."""
    t, h, w, c = x.shape
    if h % edge or w % edge:
        raise DataError(f"grid {h}x{w} not divisible by patch edge {edge}")
    x = reshape(x, (t, h // edge, edge, w // edge, edge, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (t, h // edge, w // edge, edge * edge * c))


def init_video_backbone(params: dict, rng: np.random.Generator,
                        cfg: RunConfig) -> None:
    if len(cfg.scales) != len(VIDEO_LEVELS):
        raise ConfigError(
            f"video pyramid provides {len(VIDEO_LEVELS)} scales, "
            f"config asks for {len(cfg.scales)}")
    d = cfg.feature_dim
    channels = 2  # occupancy plus its deviation from the clip mean
    edge_cells = cfg.video_cells
    for k, (edge, out_ch) in enumerate(VIDEO_LEVELS):
        if edge_cells % edge:
            raise ConfigError("video_cells not divisible by patch pyramid")
        init_matrix(params, f"video.conv{k}.w", rng, edge * edge * channels, out_ch)
        init_bias(params, f"video.conv{k}.b", out_ch)
        init_matrix(params, f"video.proj{k}.w", rng, out_ch, d)
        init_bias(params, f"video.proj{k}.b", d)
        edge_cells //= edge
        # Zero-started position grid: spatial layout is learned, not imposed.
        params[f"video.pos{k}"] = Tensor(np.zeros((edge_cells * edge_cells, d)),
                                         requires_grad=True)
        init_attention_block(params, f"video.time{k}", rng, d, 2 * d)
        init_layer_norm(params, f"video.lnf{k}", d)
        channels = out_ch


def encode_video(grids: np.ndarray, params: dict, cfg: RunConfig) -> list[Tensor]:
    """[T, cells, cells] frames -> K token matrices [T, P_k, d].

    The first convolution sees two channels per cell, the frame itself
    and its deviation from the clip-mean grid, so occupancy and its
    direction of change are both visible before any pooling (occupancy
    shifts cancel under a spatial mean, which would otherwise hide
    converging-versus-spreading motion).  Cells become tokens after each
    pyramid level; attention then runs along the frame axis
    independently at every grid position (cross-scale and cross-modal
    mixing happen downstream).
    """
    grids = np.asarray(grids, dtype=np.float64)
    if grids.ndim != 3 or grids.shape[1:] != (cfg.video_cells, cfg.video_cells):
        raise DataError(f"expected [T, {cfg.video_cells}, {cfg.video_cells}] video")
    t = grids.shape[0]
    acfg = token_attention(cfg)
    x = Tensor(np.stack([grids, grids - grids.mean(axis=0)], axis=-1))
    tokens = []
    for k, (edge, out_ch) in enumerate(VIDEO_LEVELS):
        x = relu(add(matmul(_patchify(x, edge), params[f"video.conv{k}.w"]),
                     params[f"video.conv{k}.b"]))
        side = x.shape[1]
        tok = reshape(x, (t, side * side, out_ch))
        tok = linear(tok, params[f"video.proj{k}.w"], params[f"video.proj{k}.b"])
        tok = add(tok, params[f"video.pos{k}"])
        tok = transpose(tok, (1, 0, 2))
        tok = attention_block(tok, params, f"video.time{k}", acfg)
        tok = layer_norm(tok, params[f"video.lnf{k}.g"], params[f"video.lnf{k}.b"])
        tokens.append(transpose(tok, (1, 0, 2)))
    return tokens


# ---------------------------------------------------------------------------
# text branch


def init_text_backbone(params: dict, rng: np.random.Generator,
                       cfg: RunConfig) -> None:
    d = cfg.feature_dim
    params["text.embed"] = Tensor(
        rng.standard_normal((len(VOCAB), d)) / np.sqrt(d), requires_grad=True)
    params["text.pos"] = Tensor(
        rng.standard_normal((cfg.text_max_len, d)) / np.sqrt(d),
        requires_grad=True)
    for i in range(len(cfg.scales)):
        init_attention_block(params, f"text.layer{i}", rng, d, 2 * d)
        init_layer_norm(params, f"text.read{i}.ln", d)
        init_matrix(params, f"text.read{i}.w", rng, d, d)
        init_bias(params, f"text.read{i}.b", d)


def padding_mask(ids: np.ndarray) -> np.ndarray:
    """Additive [T, 1, L, L] mask hiding padded keys.

    A padded position may still read itself so its softmax row stays
    finite; nothing downstream consumes padded outputs.
    """
    t, l = ids.shape
    m = np.where(ids[:, None, None, :] == PAD_ID, MASK_OFF, 0.0)
    m = np.broadcast_to(m, (t, 1, l, l)).copy()
    diag = np.arange(l)
    m[:, :, diag, diag] = 0.0
    return m


def encode_text(ids: np.ndarray, params: dict,
                cfg: RunConfig) -> tuple[list[Tensor], np.ndarray]:
    """[T, L] token ids -> (K readout matrices [T, L, d], validity [T, L]).

    Layer i of the encoder feeds the scale-i readout, so coarser scales
    see more heavily mixed text.  The validity mask marks non-pad tokens
    for downstream pooling and cross-attention.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise DataError("expected [T, L] token ids")
    if ids.shape[1] > cfg.text_max_len:
        raise DataError("token line longer than text_max_len")
    x = add(embedding_lookup(params["text.embed"], ids),
            embedding_lookup(params["text.pos"], np.arange(ids.shape[1])))
    mask = padding_mask(ids)
    acfg = token_attention(cfg)
    readouts = []
    for i in range(len(cfg.scales)):
        x = attention_block(x, params, f"text.layer{i}", acfg, mask=mask)
        read = linear(
            layer_norm(x, params[f"text.read{i}.ln.g"], params[f"text.read{i}.ln.b"]),
            params[f"text.read{i}.w"], params[f"text.read{i}.b"])
        readouts.append(read)
    return readouts, ids != PAD_ID
