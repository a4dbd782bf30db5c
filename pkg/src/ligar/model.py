"""Full network assembly: scene -> rendered modalities -> predictions.

A :class:`Sample` bundles everything the network needs for one scene:
the raw rendered modalities, the per-agent query features, and the
training targets.  :func:`forward` wires the three backbones into the
fusion stage and the hierarchical decoder; :func:`sample_loss` adds the
objective on top.  All parameters live in one flat dict keyed by dotted
names, so optimizers and checkpoints can treat the model as a list of
named arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbone, decoder, fusion, objective, synthgen
from .config import RunConfig
from .fusion import FULL_MASK, ModalityMask
from .tape import Tensor


@dataclass
class Sample:
    """One scene rendered into every modality, plus targets."""

    script: synthgen.SceneScript
    lidar_frames: list[np.ndarray]
    video: np.ndarray
    text_ids: np.ndarray
    query_feats: np.ndarray
    targets: dict


@dataclass
class ModelOutput:
    action_logits: Tensor
    group_logits: Tensor
    scene_logits: Tensor
    aux_logits: list[Tensor]
    alphas: list[np.ndarray]
    fused: Tensor


def init_params(rng: np.random.Generator, cfg: RunConfig) -> dict:
    """Fresh parameter dict covering backbones, fusion, and decoder."""
    params: dict = {}
    backbone.init_lidar_backbone(params, rng, cfg)
    backbone.init_video_backbone(params, rng, cfg)
    backbone.init_text_backbone(params, rng, cfg)
    fusion.init_fusion(params, rng, cfg)
    decoder.init_decoder(params, rng, cfg)
    return params


def prepare_sample(script: synthgen.SceneScript, cfg: RunConfig) -> Sample:
    """Render a scripted scene into model-ready arrays."""
    tracks = np.stack([a.positions for a in script.agents])
    return Sample(
        script=script,
        lidar_frames=synthgen.render_lidar(script, cfg),
        video=synthgen.render_video(script, cfg),
        text_ids=synthgen.render_text(script, cfg),
        query_feats=decoder.agent_query_features(
            tracks, script.frame_period, script.arena_size),
        targets=synthgen.script_targets(script),
    )


def make_sample(cfg: RunConfig, entropy: tuple[int, ...]) -> Sample:
    return prepare_sample(synthgen.sample_scene(cfg, entropy), cfg)


def perturb_lidar(frames: list[np.ndarray], rng: np.random.Generator,
                  sigma: float) -> list[np.ndarray]:
    """Independent Gaussian jitter on every point coordinate."""
    return [f + rng.normal(0.0, sigma, size=f.shape) for f in frames]


def forward(sample: Sample, params: dict, cfg: RunConfig,
            mask: ModalityMask = FULL_MASK,
            lidar_frames: list[np.ndarray] | None = None) -> ModelOutput:
    """Run the network on one sample under a modality mask.

    ``lidar_frames`` overrides the sample's stored point clouds (used
    for noise augmentation and robustness probes); masked modalities are
    never encoded at all.
    """
    lidar_tokens = None
    if mask.lidar:
        frames = sample.lidar_frames if lidar_frames is None else lidar_frames
        neighborhoods = backbone.lidar_neighborhoods(frames, cfg)
        lidar_tokens = backbone.refine_lidar_tokens(
            backbone.encode_lidar(neighborhoods, params, cfg), params, cfg)
    video_tokens = (backbone.encode_video(sample.video, params, cfg)
                    if mask.video else None)
    text_reads, text_valid = (backbone.encode_text(sample.text_ids, params, cfg)
                              if mask.text else (None, None))
    fused, alphas, anchors = fusion.fuse_modalities(
        lidar_tokens, video_tokens, text_reads, text_valid, params, cfg, mask)
    action = decoder.decode_individual(sample.query_feats, anchors[0],
                                       fused, params, cfg)
    group = decoder.decode_group(action, sample.targets["membership"],
                                 fused, params)
    scene = decoder.decode_scene(group, fused, params)
    aux = decoder.aux_scene_logits(anchors, params)
    return ModelOutput(action, group, scene, aux, alphas, fused)


def sample_loss(sample: Sample, params: dict, cfg: RunConfig,
                mask: ModalityMask = FULL_MASK,
                lidar_frames: list[np.ndarray] | None = None):
    """(scalar loss tensor, model output, float breakdown) for one sample."""
    out = forward(sample, params, cfg, mask, lidar_frames)
    loss, breakdown = objective.total_loss(
        out.action_logits, out.group_logits, out.scene_logits,
        out.aux_logits, sample.targets, cfg)
    return loss, out, breakdown


def predict(sample: Sample, params: dict, cfg: RunConfig,
            mask: ModalityMask = FULL_MASK,
            lidar_frames: list[np.ndarray] | None = None) -> dict:
    """Finished predictions as plain arrays (no record is kept)."""
    out = forward(sample, params, cfg, mask, lidar_frames)
    return {
        "actions": objective.action_predictions(out.action_logits.data),
        "activities": objective.group_predictions(out.group_logits.data),
        "scene": objective.scene_predictions(out.scene_logits.data,
                                             cfg.scene_threshold),
        "alphas": out.alphas,
    }
