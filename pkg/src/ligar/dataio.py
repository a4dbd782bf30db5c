"""Dataset directories and checkpoint files.

A dataset is a directory of plain text: a manifest listing every sample
with its generator entropy, a config snapshot, and one subdirectory per
sample holding point clouds, agent tracks, group/scene labels, and
narration token ids as CSV/text.  Floats are written with ``repr`` so
every value round-trips exactly and regeneration is byte-identical.

Video grids are not stored: they are a pure function of the agent
tracks and the sample entropy, so loading re-renders them bitwise.
Point clouds and narration are read only when the modality mask asks
for them, which lets a video-only evaluation run without those files.

Checkpoints are little-endian binary: magic ``LGAR``, a u32 format
version, a config snapshot, the (seed, epoch, step) counters, then
length-prefixed named float64 arrays covering parameters and optimizer
moments.  Saving is canonical (sorted names), so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from . import synthgen
from .config import RunConfig, format_config, parse_config, save_config
from .errors import DataError
from .fusion import FULL_MASK, ModalityMask
from .model import Sample
from .nn import AdamState
from .tape import Tensor

MAGIC = b"LGAR"
VERSION = 1
SPLITS = ("train", "val", "test")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# sample files


def write_sample(path: str, script: synthgen.SceneScript,
                 cfg: RunConfig) -> None:
    os.makedirs(path, exist_ok=True)
    clouds = synthgen.render_lidar(script, cfg)
    with open(os.path.join(path, "points.csv"), "w", encoding="utf-8") as fh:
        fh.write("frame,x,y,z\n")
        for t, cloud in enumerate(clouds):
            for x, y, z in cloud:
                fh.write(f"{t},{_fmt(x)},{_fmt(y)},{_fmt(z)}\n")
    group_of = {}
    for gi, group in enumerate(script.groups):
        for member in group.members:
            group_of[member] = gi
    with open(os.path.join(path, "agents.csv"), "w", encoding="utf-8") as fh:
        fh.write("frame,agent,x,y,z,action,group\n")
        for t in range(script.frames):
            for i, agent in enumerate(script.agents):
                x, y, z = agent.positions[t]
                fh.write(f"{t},{i},{_fmt(x)},{_fmt(y)},{_fmt(z)},"
                         f"{agent.action},{group_of.get(i, -1)}\n")
    with open(os.path.join(path, "groups.csv"), "w", encoding="utf-8") as fh:
        fh.write("group,activity\n")
        for gi, group in enumerate(script.groups):
            fh.write(f"{gi},{group.activity}\n")
    with open(os.path.join(path, "scene.csv"), "w", encoding="utf-8") as fh:
        fh.write("frame,labels\n")
        for t in range(script.frames):
            fh.write(",".join([str(t)] + list(script.scene_labels)) + "\n")
    ids = synthgen.render_text(script, cfg)
    with open(os.path.join(path, "text.txt"), "w", encoding="utf-8") as fh:
        for row in ids:
            fh.write(" ".join(str(i) for i in row) + "\n")


def read_script(path: str, entropy: tuple[int, ...],
                cfg: RunConfig) -> synthgen.SceneScript:
    """Rebuild the scene script from agents/groups/scene files."""
    rows = []
    with open(os.path.join(path, "agents.csv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            t, i, x, y, z, action, group = line.rstrip("\n").split(",")
            rows.append((int(t), int(i), float(x), float(y), float(z),
                         action, int(group)))
    if not rows:
        raise DataError(f"{path}: no agent rows")
    frames = max(r[0] for r in rows) + 1
    count = max(r[1] for r in rows) + 1
    positions = np.zeros((count, frames, 3))
    actions = [""] * count
    for t, i, x, y, z, action, _ in rows:
        positions[i, t] = (x, y, z)
        actions[i] = action
    agents = [synthgen.AgentTrack(i, actions[i], positions[i])
              for i in range(count)]
    members: dict[int, list[int]] = {}
    for t, i, _x, _y, _z, _action, group in rows:
        if group >= 0 and t == 0:
            members.setdefault(group, []).append(i)
    groups = []
    with open(os.path.join(path, "groups.csv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            gi, activity = line.rstrip("\n").split(",")
            groups.append(synthgen.GroupSpec(tuple(members[int(gi)]), activity))
    with open(os.path.join(path, "scene.csv"), encoding="utf-8") as fh:
        next(fh)
        labels = next(fh).rstrip("\n").split(",")[1:]
    return synthgen.SceneScript(frames, cfg.frame_period, cfg.arena_size,
                                agents, groups, labels, tuple(entropy))


def read_points(path: str) -> list[np.ndarray]:
    frames: dict[int, list] = {}
    with open(os.path.join(path, "points.csv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            t, x, y, z = line.rstrip("\n").split(",")
            frames.setdefault(int(t), []).append((float(x), float(y), float(z)))
    return [np.array(frames[t]) for t in sorted(frames)]


def read_text(path: str) -> np.ndarray:
    with open(os.path.join(path, "text.txt"), encoding="utf-8") as fh:
        rows = [[int(w) for w in line.split()] for line in fh]
    return np.array(rows, dtype=np.int64)


def load_sample(path: str, entropy: tuple[int, ...], cfg: RunConfig,
                mask: ModalityMask = FULL_MASK) -> Sample:
    """Read one sample directory; masked modality files are never opened."""
    from .decoder import agent_query_features

    script = read_script(path, entropy, cfg)
    tracks = np.stack([a.positions for a in script.agents])
    return Sample(
        script=script,
        lidar_frames=read_points(path) if mask.lidar else None,
        video=synthgen.render_video(script, cfg) if mask.video else None,
        text_ids=read_text(path) if mask.text else None,
        query_feats=agent_query_features(tracks, script.frame_period,
                                         script.arena_size),
        targets=synthgen.script_targets(script),
    )


# ---------------------------------------------------------------------------
# dataset directory


def sample_entropy(seed: int, split: str, index: int) -> tuple[int, ...]:
    return (seed, SPLITS.index(split), index)


def write_dataset(root: str, cfg: RunConfig, seed: int,
                  counts: dict[str, int]) -> None:
    """Generate and write a full dataset; byte-identical given (cfg, seed)."""
    os.makedirs(root, exist_ok=True)
    save_config(cfg, os.path.join(root, "config.cfg"))
    lines = ["[dataset]", f"seed = {seed}", "config = config.cfg"]
    for split in SPLITS:
        lines.append(f"{split} = {counts.get(split, 0)}")
    for split in SPLITS:
        if not counts.get(split, 0):
            continue
        lines.append(f"[{split}]")
        for i in range(counts[split]):
            entropy = sample_entropy(seed, split, i)
            rel = os.path.join(split, f"sample_{i:05d}")
            script = synthgen.sample_scene(cfg, entropy)
            write_sample(os.path.join(root, rel), script, cfg)
            lines.append(f"{i} = {rel} " + " ".join(str(e) for e in entropy))
    with open(os.path.join(root, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(root: str) -> dict:
    """Manifest -> {"seed", "config", splits: [(abs path, entropy), ...]}."""
    manifest = os.path.join(root, "manifest.txt")
    if not os.path.exists(manifest):
        raise DataError(f"no manifest at {manifest}")
    out: dict = {split: [] for split in SPLITS}
    section = ""
    with open(manifest, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("["):
                section = line.strip("[]")
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            if section == "dataset":
                if key == "seed":
                    out["seed"] = int(value)
                elif key == "config":
                    out["config"] = parse_config(
                        open(os.path.join(root, value), encoding="utf-8").read())
            elif section in SPLITS:
                rel, *entropy = value.split()
                out[section].append((os.path.join(root, rel),
                                     tuple(int(e) for e in entropy)))
    for split in SPLITS:
        for path, _ in out[split]:
            if not os.path.isdir(path):
                raise DataError(f"manifest references missing sample {path}")
    return out


def load_split(root: str, split: str, cfg: RunConfig,
               mask: ModalityMask = FULL_MASK) -> list[Sample]:
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}")
    entries = read_manifest(root)[split]
    if not entries:
        raise DataError(f"split {split!r} is empty")
    return [load_sample(path, entropy, cfg, mask) for path, entropy in entries]


# ---------------------------------------------------------------------------
# checkpoints


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    # np.ascontiguousarray would widen 0-d arrays to 1-d and break the
    # shape round-trip for scalar extras.
    raw = np.asarray(arr, dtype="<f8", order="C")
    head = struct.pack("<I", len(name.encode())) + name.encode()
    dims = struct.pack("<I", raw.ndim) + struct.pack(
        f"<{raw.ndim}Q", *raw.shape)
    return head + dims + raw.tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.blob):
            raise DataError("checkpoint truncated")
        out = self.blob[self.at:self.at + n]
        self.at += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64s(self, n: int) -> tuple:
        return struct.unpack(f"<{n}Q", self.take(8 * n))


def save_checkpoint(path: str, cfg: RunConfig, params: dict,
                    state: AdamState, seed: int, epoch: int,
                    extras: dict | None = None) -> None:
    """``extras`` holds auxiliary float arrays (training-state scalars)."""
    cfg_text = format_config(cfg).encode()
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(cfg_text)), cfg_text,
             struct.pack("<QQQ", seed, epoch, state.step)]
    names = sorted(params)
    extras = extras or {}
    parts.append(struct.pack("<I", 3 * len(names) + len(extras)))
    for name in names:
        parts.append(_pack_array(name, params[name].data))
        parts.append(_pack_array("m:" + name, state.m[name]))
        parts.append(_pack_array("v:" + name, state.v[name]))
    for name in sorted(extras):
        parts.append(_pack_array("x:" + name, np.asarray(extras[name])))
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """-> (cfg, params, AdamState, seed, epoch, extras)."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version = reader.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    cfg = parse_config(reader.take(reader.u32()).decode())
    seed, epoch, step = reader.u64s(3)
    arrays = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode()
        shape = reader.u64s(reader.u32())
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arrays[name] = np.frombuffer(
            reader.take(8 * count), dtype="<f8").reshape(shape).copy()
    params = {name: Tensor(arr, requires_grad=True)
              for name, arr in arrays.items()
              if not name.startswith(("m:", "v:", "x:"))}
    if not params:
        raise DataError(f"{path}: checkpoint holds no parameters")
    state = AdamState(params)
    state.step = step
    for name in params:
        if "m:" + name not in arrays or "v:" + name not in arrays:
            raise DataError(f"{path}: missing optimizer moments for {name}")
        state.m[name] = arrays["m:" + name]
        state.v[name] = arrays["v:" + name]
    extras = {name[2:]: arr for name, arr in arrays.items()
              if name.startswith("x:")}
    return cfg, params, state, seed, epoch, extras
