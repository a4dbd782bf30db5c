"""Command-line entry points.

Subcommands: ``generate`` writes a synthetic dataset directory,
``train`` fits a model, ``eval`` scores a checkpoint on a split,
``infer`` dumps per-frame predictions for one sample, ``gradcheck``
compares tape gradients against central differences on the full model,
and ``embed`` exports per-sample fused feature vectors.

Exit codes: 0 success, 1 usage or configuration error, 2 missing or
malformed data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace

import numpy as np
from scipy.special import expit

from . import dataio, model, taxonomy, train
from .config import RunConfig, load_config, worker_count
from .errors import ConfigError, DataError
from .fusion import MASK_BY_NAME
from .tape import ComputationRecord, NumericsError

MASK_CHOICES = ("all", "video", "video+lidar", "video+text")


class CommandLineParser(argparse.ArgumentParser):
    """argparse's usage failures exit 2; the contract here is exit 1."""

    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()
    worker_count(cfg)
    return cfg


def _load_checkpoint_config(args):
    cfg, params, state, seed, epoch, extras = dataio.load_checkpoint(
        args.checkpoint)
    cfg.validate()
    worker_count(cfg)
    return cfg, params


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = _load_run_config(args)
    counts = {"train": args.train, "val": args.val, "test": args.test}
    if min(counts.values()) < 0:
        raise ConfigError("split sizes must be >= 0")
    dataio.write_dataset(args.out, cfg, cfg.seed, counts)
    total = sum(counts.values())
    print(f"wrote {total} samples to {args.out} "
          f"(train={args.train} val={args.val} test={args.test} "
          f"seed={cfg.seed})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "training.log")
    with open(log_path, "a", encoding="utf-8") as fh:
        def log(line: str) -> None:
            print(line)
            fh.write(line + "\n")
            fh.flush()

        result = train.run_training(cfg, args.data, args.out,
                                    resume=args.resume, log=log)
    print(f"best_val_f1={result['best']!r}")
    return 0


def _mask(args):
    return MASK_BY_NAME[args.mask]


def cmd_eval(args) -> int:
    cfg, params = _load_checkpoint_config(args)
    mask = _mask(args)
    samples = dataio.load_split(args.data, args.split, cfg, mask)
    rep = train.evaluate(samples, params, cfg, mask,
                         lidar_sigma=args.noise_sigma, noise_seed=cfg.seed)
    print(f"split={args.split} mask={args.mask} n={rep.count}")
    print(f"scene  precision={rep.scene_precision:.4f} "
          f"recall={rep.scene_recall:.4f} f1={rep.scene_f1:.4f}")
    print(f"group  accuracy={rep.group_accuracy:.4f} "
          f"mean_class_accuracy={rep.group_mean_class_accuracy:.4f}")
    print(f"action accuracy={rep.action_accuracy:.4f}")
    print(f"alpha  lidar={rep.alpha_lidar:.4f} video={rep.alpha_video:.4f} "
          f"text={rep.alpha_text:.4f}")
    line = train.report_line(f"{args.split}/{args.mask}", 0, rep)
    print(line)
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    return 0


def cmd_infer(args) -> int:
    cfg, params = _load_checkpoint_config(args)
    mask = _mask(args)
    samples = dataio.load_split(args.data, args.split, cfg, mask)
    if not 0 <= args.index < len(samples):
        raise DataError(f"sample index {args.index} outside split of "
                        f"{len(samples)}")
    sample = samples[args.index]
    out = model.forward(sample, params, cfg, mask)
    frames = out.action_logits.shape[0]
    actions = out.action_logits.data.argmax(axis=-1)
    groups = out.group_logits.data.argmax(axis=-1) \
        if out.group_logits.shape[1] else np.zeros((frames, 0), np.int64)
    scene = expit(out.scene_logits.data) >= cfg.scene_threshold
    print(f"sample={args.split}[{args.index}] mask={args.mask} "
          f"frames={frames} agents={actions.shape[1]} "
          f"groups={groups.shape[1]}")
    for t in range(frames):
        act = ",".join(taxonomy.ACTIONS[a] for a in actions[t])
        grp = ",".join(taxonomy.GROUP_ACTIVITIES[g] for g in groups[t]) or "-"
        scn = ",".join(np.array(taxonomy.SCENE_LABELS)[scene[t]]) or "-"
        alphas = " ".join(
            f"alpha{k}=" + ",".join(f"{v:.6f}" for v in a[t])
            for k, a in enumerate(out.alphas))
        print(f"frame={t} actions={act} groups={grp} scene={scn} {alphas}")
    return 0


def cmd_gradcheck(args) -> int:
    """Full-model gradient check at a generic parameter point.

    All parameters are nudged off their initialization (zero biases on
    mostly-zero video grids would park rectifiers exactly at the kink,
    where central differences are meaningless), then one randomly chosen
    coordinate per tensor is compared against central differences.
    """
    started = time.time()
    cfg = _load_run_config(args)
    probe = replace(cfg, agents_min=3, agents_max=3)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31]))
    params = model.init_params(rng, probe)
    for name in sorted(params):
        data = params[name].data
        data += 0.01 * rng.standard_normal(data.shape)
    sample = model.make_sample(probe, (cfg.seed, 977))
    with ComputationRecord() as rec:
        loss, _, _ = model.sample_loss(sample, params, probe)
        rec.backward(loss)
    h = 1e-5
    worst = 0.0
    worst_name = ""
    by_module: dict[str, float] = {}
    for name in sorted(params):
        tensor = params[name]
        flat = tensor.data.reshape(-1)
        coord = int(rng.integers(flat.size))
        grad = rec.grad(tensor)
        analytic = 0.0 if grad is None else float(grad.reshape(-1)[coord])
        keep = flat[coord]
        flat[coord] = keep + h
        up, _, _ = model.sample_loss(sample, params, probe)
        flat[coord] = keep - h
        down, _, _ = model.sample_loss(sample, params, probe)
        flat[coord] = keep
        numeric = float(up.data - down.data) / (2.0 * h)
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        module = name.split(".")[0].rstrip("0123456789")
        by_module[module] = max(by_module.get(module, 0.0), err)
        if err > worst:
            worst, worst_name = err, name
    for module in sorted(by_module):
        print(f"module={module} max_rel_err={by_module[module]!r}")
    elapsed = time.time() - started
    print(f"tensors={len(params)} h={h} max_rel_err={worst!r} "
          f"worst={worst_name} seconds={elapsed:.1f}")
    if not worst < 1e-4:
        raise NumericsError(f"gradient check failed at {worst_name}: {worst}")
    return 0


def cmd_embed(args) -> int:
    cfg, params = _load_checkpoint_config(args)
    mask = _mask(args)
    samples = dataio.load_split(args.data, args.split, cfg, mask)
    with open(args.out, "w", encoding="utf-8") as fh:
        for sample in samples:
            out = model.forward(sample, params, cfg, mask)
            row = out.fused.data.mean(axis=0)
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {len(samples)} embedding rows of width "
          f"{len(cfg.scales) * cfg.feature_dim} to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> CommandLineParser:
    parser = CommandLineParser(
        prog="ligar",
        description="Multi-modal hierarchical group activity recognition "
                    "on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=CommandLineParser)

    def common(p, checkpoint=False):
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint file")
        else:
            p.add_argument("--config", default=None, help="config file")
            p.add_argument("--seed", type=int, default=None,
                           help="override the config seed")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--test", type=int, default=500)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint to continue")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    common(p, checkpoint=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=dataio.SPLITS, default="test")
    p.add_argument("--mask", choices=MASK_CHOICES, default="all")
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="corrupt point clouds with this sigma before eval")
    p.add_argument("--out", default=None, help="append the report line here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="per-frame predictions for one sample")
    common(p, checkpoint=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=dataio.SPLITS, default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--mask", choices=MASK_CHOICES, default="all")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("embed", help="export fused feature vectors")
    common(p, checkpoint=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=dataio.SPLITS, default="test")
    p.add_argument("--mask", choices=MASK_CHOICES, default="all")
    p.add_argument("--out", required=True, help="output text file")
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
