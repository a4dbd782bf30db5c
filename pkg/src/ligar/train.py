"""Training loop, evaluation, and metric reporting.

Every source of randomness is derived from ``(seed, epoch, sample)``
seed sequences, so a run is a pure function of config plus dataset:
logs are bitwise reproducible, and resuming from a checkpoint at any
epoch boundary continues exactly the run that would have happened
without the interruption.

Per sample, training draws a modality mask (occasionally hiding all but
one or two sensors) and, with configured probability, re-jitters the
point clouds with a random sigma; both augmentations teach the fusion
weights to lean on whichever modalities are trustworthy.  Gradients are
averaged over the mini-batch and applied with Adam under a stepwise
learning-rate decay.

The evaluation side runs the model deterministically and reduces
predictions to a :class:`MetricReport`; ``report_line`` renders reports
with ``repr`` floats so identical runs produce identical log bytes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from . import dataio, model, objective, taxonomy
from .config import RunConfig
from .errors import ConfigError
from .fusion import FULL_MASK, ModalityMask, sample_training_mask
from .nn import AdamState, adam_step
from .tape import ComputationRecord, NumericsError


@dataclass
class MetricReport:
    """Split-level summary of hierarchical predictions."""

    count: int
    scene_precision: float
    scene_recall: float
    scene_f1: float
    group_accuracy: float
    group_mean_class_accuracy: float
    action_accuracy: float
    alpha_lidar: float
    alpha_video: float
    alpha_text: float
    loss: float = float("nan")


class _Collector:
    """Accumulates per-sample predictions into one report."""

    def __init__(self):
        self.scene_pred: list[np.ndarray] = []
        self.scene_true: list[np.ndarray] = []
        self.group_pred: list[np.ndarray] = []
        self.group_true: list[np.ndarray] = []
        self.action_pred: list[np.ndarray] = []
        self.action_true: list[np.ndarray] = []
        self.alpha: list[np.ndarray] = []
        self.losses: list[float] = []

    def add(self, sample: model.Sample, pred: dict,
            loss: float | None = None) -> None:
        self.scene_pred.append(pred["scene"])
        self.scene_true.append(sample.targets["scene"] > 0.5)
        self.group_pred.append(pred["activities"])
        self.group_true.append(sample.targets["activities"])
        self.action_pred.append(pred["actions"])
        self.action_true.append(sample.targets["actions"])
        self.alpha.append(np.mean([a.mean(axis=0) for a in pred["alphas"]],
                                  axis=0))
        if loss is not None:
            self.losses.append(loss)

    def report(self) -> MetricReport:
        scene = objective.multilabel_scores(np.array(self.scene_pred),
                                            np.array(self.scene_true))
        group_pred = np.concatenate(self.group_pred)
        group_true = np.concatenate(self.group_true)
        _, group_mpca = objective.class_accuracies(
            group_pred, group_true, taxonomy.N_GROUP_ACTIVITIES)
        alpha = np.mean(self.alpha, axis=0)
        return MetricReport(
            count=len(self.scene_pred),
            scene_precision=scene["precision"],
            scene_recall=scene["recall"],
            scene_f1=scene["f1"],
            group_accuracy=objective.overall_accuracy(group_pred, group_true),
            group_mean_class_accuracy=group_mpca,
            action_accuracy=objective.overall_accuracy(
                np.concatenate(self.action_pred),
                np.concatenate(self.action_true)),
            alpha_lidar=float(alpha[0]),
            alpha_video=float(alpha[1]),
            alpha_text=float(alpha[2]),
            loss=float(np.mean(self.losses)) if self.losses else float("nan"),
        )


def report_line(split: str, epoch: int, rep: MetricReport) -> str:
    """One log line; repr floats keep identical runs byte-identical."""
    parts = [f"epoch={epoch}", f"split={split}", f"n={rep.count}",
             f"loss={rep.loss!r}",
             f"scene_p={rep.scene_precision!r}",
             f"scene_r={rep.scene_recall!r}",
             f"scene_f1={rep.scene_f1!r}",
             f"group_mca={rep.group_accuracy!r}",
             f"group_mpca={rep.group_mean_class_accuracy!r}",
             f"action_acc={rep.action_accuracy!r}",
             f"alpha={rep.alpha_lidar!r},{rep.alpha_video!r},{rep.alpha_text!r}"]
    return " ".join(parts)


def evaluate(samples: list[model.Sample], params: dict, cfg: RunConfig,
             mask: ModalityMask = FULL_MASK, lidar_sigma: float = 0.0,
             noise_seed: int = 0) -> MetricReport:
    """Deterministic evaluation; ``lidar_sigma`` optionally corrupts the
    point clouds (a robustness probe, seeded per sample)."""
    collector = _Collector()
    for i, sample in enumerate(samples):
        frames = None
        if lidar_sigma > 0.0 and mask.lidar:
            rng = np.random.default_rng(
                np.random.SeedSequence([noise_seed, i]))
            frames = model.perturb_lidar(sample.lidar_frames, rng, lidar_sigma)
        collector.add(sample, model.predict(sample, params, cfg, mask, frames))
    return collector.report()


def _sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))


def _train_epoch(samples: list[model.Sample], params: dict, state: AdamState,
                 cfg: RunConfig, epoch: int, lr: float) -> MetricReport:
    collector = _Collector()
    order = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 7919, epoch])).permutation(
            len(samples))
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        grads: dict[str, np.ndarray] = {}
        for index in batch:
            sample = samples[index]
            rng = _sample_rng(cfg.seed, epoch, int(index))
            mask = sample_training_mask(rng, cfg.drop_probability)
            frames = None
            if mask.lidar and rng.random() < cfg.noise_probability:
                sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max)
                frames = model.perturb_lidar(sample.lidar_frames, rng, sigma)
            with ComputationRecord() as rec:
                loss, out, _ = model.sample_loss(sample, params, cfg,
                                                 mask, frames)
                if not np.isfinite(loss.data):
                    raise NumericsError(
                        f"non-finite loss at epoch {epoch} batch "
                        f"{start // cfg.batch_size} sample {index}")
                rec.backward(loss)
            for name, tensor in params.items():
                g = rec.grad(tensor)
                if g is None:
                    continue
                if name in grads:
                    grads[name] += g
                else:
                    grads[name] = g.copy()
            collector.add(sample, {
                "actions": objective.action_predictions(out.action_logits.data),
                "activities": objective.group_predictions(out.group_logits.data),
                "scene": objective.scene_predictions(out.scene_logits.data,
                                                     cfg.scene_threshold),
                "alphas": out.alphas,
            }, float(loss.data))
        for name in grads:
            grads[name] /= len(batch)
        adam_step(params, grads, state, lr)
    return collector.report()


def run_training(cfg: RunConfig, data_root: str, out_dir: str,
                 resume: str | None = None, log=None) -> dict:
    """Train on a dataset directory; returns params, state, and log lines.

    Writes ``last.bin`` every epoch and keeps the checkpoint with the
    best validation scene F1 as ``best.bin``.  ``resume`` continues an
    interrupted run from its ``last.bin`` at the next epoch boundary.
    """
    os.makedirs(out_dir, exist_ok=True)
    train_samples = dataio.load_split(data_root, "train", cfg)
    val_samples = dataio.load_split(data_root, "val", cfg)
    if resume is not None:
        ck_cfg, params, state, seed, start_epoch, extras = \
            dataio.load_checkpoint(resume)
        # Extending the epoch budget or moving directories is fine; every
        # field that shapes the model or the update rule must match.
        softened = replace(ck_cfg, epochs=cfg.epochs, threads=cfg.threads,
                           data_dir=cfg.data_dir, out_dir=cfg.out_dir)
        if softened != cfg:
            raise ConfigError("checkpoint config does not match the run config")
        if seed != cfg.seed:
            raise ConfigError("checkpoint seed does not match the run config")
        best = float(extras.get("best_f1", -1.0))
    else:
        params = model.init_params(
            np.random.default_rng(np.random.SeedSequence([cfg.seed])), cfg)
        state = AdamState(params)
        start_epoch = 0
        best = -1.0
    lines: list[str] = []

    def emit(line: str) -> None:
        lines.append(line)
        if log is not None:
            log(line)

    last = os.path.join(out_dir, "last.bin")
    for epoch in range(start_epoch, cfg.epochs):
        lr = cfg.learning_rate * cfg.decay_factor ** (epoch // cfg.decay_every)
        train_rep = _train_epoch(train_samples, params, state, cfg, epoch, lr)
        val_rep = evaluate(val_samples, params, cfg)
        emit(report_line("train", epoch, train_rep))
        emit(report_line("val", epoch, val_rep))
        if val_rep.scene_f1 > best:
            best = val_rep.scene_f1
            dataio.save_checkpoint(os.path.join(out_dir, "best.bin"), cfg,
                                   params, state, cfg.seed, epoch + 1,
                                   extras={"best_f1": np.asarray(best)})
        dataio.save_checkpoint(last, cfg, params, state, cfg.seed, epoch + 1,
                               extras={"best_f1": np.asarray(best)})
    if not os.path.exists(last):
        dataio.save_checkpoint(last, cfg, params, state, cfg.seed,
                               start_epoch, extras={"best_f1": np.asarray(best)})
    return {"params": params, "state": state, "lines": lines, "best": best}
