"""Synthetic multi-agent scene generation and its three renderings.

A sampled :class:`SceneScript` holds ground truth: agent trajectories
with per-agent actions, group memberships with activities, and the
derived scene descriptor set.  Labels are constructed to land only on
compatible entries of the taxonomy matrices, so the consistency loss has
a reachable zero on real data.

Renderings are derived views of the script:

* LiDAR: per frame, roughly Poisson(points_per_agent) points inside a
  0.4 m-radius vertical ellipsoid per agent, plus uniform clutter, plus
  Gaussian jitter.  The only stochastic rendering; it is persisted.
* video: a32x32 occupancy grid of Gaussian bumps at agent positions
  with a per-sample constant background speckle; deterministic given the
  script, so loaders re-render it instead of storing it.
* text: a per-frame narration "<count> agents <action>, ..." over a
  closed vocabulary, also deterministic.

Agents at the first frame keep a minimum mutual spacing, so the agent
count is recoverable from every modality; that shared signal is what
makes cross-modal fusion learnable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import taxonomy
from .config import RunConfig
from .errors import DataError

VOCAB = ("<pad>", "empty", "scene", "agents", ",",
         "1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12",
         "walk", "stand", "run", "sit")
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}
PAD_ID = 0

WALK_SPEED = (1.0, 1.4)   # m/s; bands are disjoint so speed implies action
RUN_SPEED = (2.2, 3.0)
STAND_HEIGHT = 0.9        # body-center height doubles as ellipsoid half-height
SIT_HEIGHT = 0.45
AGENT_RADIUS = 0.4
CLUTTER_MAX_Z = 2.2
MIN_SPACING = 1.4         # ungrouped agents keep this from every path
GROUP_GAP = 1.5           # clearance between members of different groups
QUEUE_SPACING = 1.6
ROW_SPACING = 1.5
SPECKLE_DENSITY = 0.06
SPECKLE_AMP = (0.03, 0.10)  # kept below half the agent-bump floor
BUMP_SIGMA_CELLS = 0.5


@dataclass
class AgentTrack:
    ident: int
    action: str
    positions: np.ndarray  # [T, 3]


@dataclass
class GroupSpec:
    members: tuple[int, ...]
    activity: str


@dataclass
class SceneScript:
    frames: int
    frame_period: float
    arena_size: float
    agents: list[AgentTrack]
    groups: list[GroupSpec]
    scene_labels: list[str]
    seed: tuple[int, ...]


def _rng(seed: tuple[int, ...], tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(seed) + [tag]))


def _height(action: str) -> float:
    return SIT_HEIGHT if action == "sit" else STAND_HEIGHT


def _straight_track(start_xy, direction, speed, frames, period, z):
    t = np.arange(frames)[:, None] * period
    xy = start_xy[None, :] + direction[None, :] * speed * t
    return np.concatenate([xy, np.full((frames, 1), z)], axis=1)


def _static_track(xy, frames, z):
    pos = np.empty((frames, 3))
    pos[:, 0] = xy[0]
    pos[:, 1] = xy[1]
    pos[:, 2] = z
    return pos


def _ring_angles(rng, n):
    base = rng.uniform(0.0, 2.0 * np.pi)
    jitter = rng.uniform(-0.25, 0.25, size=n)
    return base + np.arange(n) * (2.0 * np.pi / n) + jitter


def _moving_action_speed(rng):
    if rng.random() < 0.5:
        return "walk", rng.uniform(*WALK_SPEED)
    return "run", rng.uniform(*RUN_SPEED)


def _group_tracks(rng, activity, size, anchor, frames, period):
    """Member tracks (positions relative to the arena) plus their actions."""
    duration = (frames - 1) * period
    tracks, actions = [], []
    if activity in ("gather", "disperse"):
        angles = _ring_angles(rng, size)
        for i in range(size):
            action, speed = _moving_action_speed(rng)
            r_end = 0.5 + 0.15 * i
            r_start = r_end + speed * duration
            direction = np.array([np.cos(angles[i]), np.sin(angles[i])])
            radii = (r_start - speed * np.arange(frames) * period
                     if activity == "gather"
                     else r_end + speed * np.arange(frames) * period)
            xy = anchor[None, :] + direction[None, :] * radii[:, None]
            z = _height(action)
            tracks.append(np.concatenate([xy, np.full((frames, 1), z)], axis=1))
            actions.append(action)
    elif activity == "walk-together":
        heading = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(heading), np.sin(heading)])
        normal = np.array([-direction[1], direction[0]])
        speed = rng.uniform(*WALK_SPEED)
        offsets = (np.arange(size) - (size - 1) / 2.0) * ROW_SPACING
        start = anchor - direction * speed * duration / 2.0
        for i in range(size):
            xy0 = start + normal * offsets[i]
            tracks.append(_straight_track(xy0, direction, speed, frames, period,
                                          _height("walk")))
            actions.append("walk")
    elif activity == "queue":
        heading = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(heading), np.sin(heading)])
        offsets = (np.arange(size) - (size - 1) / 2.0) * QUEUE_SPACING
        for i in range(size):
            xy = anchor + direction * offsets[i]
            tracks.append(_static_track(xy, frames, _height("stand")))
            actions.append("stand")
    elif activity == "stand-still":
        placed = []
        for i in range(size):
            for _ in range(200):
                xy = anchor + rng.uniform(-2.2, 2.2, size=2)
                if all(np.hypot(*(xy - q)) >= MIN_SPACING for q in placed):
                    placed.append(xy)
                    break
            else:
                placed.append(anchor + np.array([MIN_SPACING * (i + 1), 0.0]))
            action = "sit" if rng.random() < 0.5 else "stand"
            tracks.append(_static_track(placed[-1], frames, _height(action)))
            actions.append(action)
    else:
        raise DataError(f"unknown group activity {activity}")
    return tracks, actions


MOVING_GROUPS = ("gather", "disperse", "walk-together")
STATIC_GROUPS = ("queue", "stand-still")


def sample_scene(cfg: RunConfig, entropy: tuple[int, ...]) -> SceneScript:
    """Draw one scene script; identical entropy reproduces it exactly.

    At most one moving-style and one static-style group appear per scene,
    so global context disambiguates activities that share member-action
    signatures (gather vs disperse, queue vs stand-still).
    """
    rng = _rng(tuple(entropy), 0)
    frames, period, arena = cfg.frames, cfg.frame_period, cfg.arena_size

    roll = rng.random()
    if roll < 0.05:
        kinds: list[str] = []
    elif roll < 0.55:
        kinds = [str(rng.choice(taxonomy.GROUP_ACTIVITIES))]
    else:
        kinds = [str(rng.choice(MOVING_GROUPS)), str(rng.choice(STATIC_GROUPS))]
    sizes = []
    for kind in kinds:
        lo, hi = (2, 4) if kind == "stand-still" else (3, 5)
        sizes.append(int(rng.integers(lo, hi + 1)))
    while sum(sizes) > cfg.agents_max and sizes:
        sizes[int(np.argmax(sizes))] -= 1
        sizes = [s for s in sizes if s > 1] or sizes
    lo_extra = max(0, cfg.agents_min - sum(sizes))
    hi_extra = max(lo_extra, min(3, cfg.agents_max - sum(sizes)))
    extras = int(rng.integers(lo_extra, hi_extra + 1)) if hi_extra > 0 else 0

    # Build group member tracks around sampled anchors. A candidate group is
    # accepted only if every member stays inside the arena margin and keeps
    # GROUP_GAP clearance from all previously placed members in every frame.
    group_tracks: list[list[np.ndarray]] = []
    group_actions: list[list[str]] = []
    placed_paths: list[np.ndarray] = []  # [frames, 2] xy per placed agent
    for kind, size in zip(kinds, sizes):
        for _ in range(300):
            anchor = rng.uniform(3.0, arena - 3.0, size=2)
            tracks, actions = _group_tracks(rng, kind, size, anchor, frames, period)
            xy = np.stack([t[:, :2] for t in tracks])
            if xy.min() < 1.0 or xy.max() > arena - 1.0:
                continue
            if placed_paths:
                gaps = np.linalg.norm(
                    xy[:, None] - np.stack(placed_paths)[None], axis=-1)
                if gaps.min() < GROUP_GAP:
                    continue
            placed_paths.extend(xy)
            group_tracks.append(tracks)
            group_actions.append(actions)
            break
        else:
            raise DataError("could not place scene groups; arena too small")

    agents: list[AgentTrack] = []
    groups: list[GroupSpec] = []
    for gi, (tracks, actions) in enumerate(zip(group_tracks, group_actions)):
        member_ids = []
        for track, action in zip(tracks, actions):
            member_ids.append(len(agents))
            agents.append(AgentTrack(len(agents), action, track))
        groups.append(GroupSpec(tuple(member_ids), kinds[gi]))

    ungrouped_actions = ("walk", "stand", "run", "sit")
    ungrouped_weights = (0.35, 0.3, 0.2, 0.15)
    for _ in range(extras):
        action = str(rng.choice(ungrouped_actions, p=ungrouped_weights))
        for _ in range(400):
            start = rng.uniform(1.5, arena - 1.5, size=2)
            if action in taxonomy.MOVING_ACTIONS:
                speed = rng.uniform(*WALK_SPEED if action == "walk" else RUN_SPEED)
                heading = rng.uniform(0.0, 2.0 * np.pi)
                direction = np.array([np.cos(heading), np.sin(heading)])
                end = start + direction * speed * (frames - 1) * period
                if end.min() < 1.0 or end.max() > arena - 1.0:
                    continue
                track = _straight_track(start, direction, speed, frames, period,
                                        _height(action))
            else:
                track = _static_track(start, frames, _height(action))
            if placed_paths:
                gaps = np.linalg.norm(
                    track[None, :, :2] - np.stack(placed_paths), axis=-1)
                if gaps.min() < MIN_SPACING:
                    continue
            placed_paths.append(track[:, :2])
            agents.append(AgentTrack(len(agents), action, track))
            break
        else:
            raise DataError("could not place ungrouped agent")

    labels = taxonomy.scene_labels_for([a.action for a in agents],
                                       [g.activity for g in groups])
    script = SceneScript(frames, period, arena, agents, groups, labels,
                         tuple(int(v) for v in entropy))
    if not taxonomy.check_compatible(
            [a.action for a in script.agents],
            [list(g.members) for g in script.groups],
            [g.activity for g in script.groups],
            script.scene_labels):
        raise DataError("sampled scene violates compatibility matrices")
    return script


# ---------------------------------------------------------------------------
# renderings


def render_lidar(script: SceneScript, cfg: RunConfig) -> list[np.ndarray]:
    """Per-frame point clouds: agent ellipsoids plus clutter plus jitter."""
    rng = _rng(script.seed, 1)
    frames = []
    for t in range(script.frames):
        chunks = []
        for agent in script.agents:
            count = int(rng.poisson(cfg.points_per_agent))
            if count == 0:
                continue
            direction = rng.standard_normal((count, 3))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            radii = rng.random(count) ** (1.0 / 3.0)
            offsets = direction * radii[:, None]
            center = agent.positions[t]
            half_height = center[2]  # body-center height == half extent
            offsets *= np.array([AGENT_RADIUS, AGENT_RADIUS, half_height])
            chunks.append(center[None, :] + offsets)
        clutter = np.column_stack([
            rng.uniform(0.0, script.arena_size, size=cfg.clutter_points),
            rng.uniform(0.0, script.arena_size, size=cfg.clutter_points),
            rng.uniform(0.0, CLUTTER_MAX_Z, size=cfg.clutter_points),
        ])
        chunks.append(clutter)
        points = np.concatenate(chunks, axis=0)
        points += rng.normal(0.0, cfg.jitter_sigma, size=points.shape)
        frames.append(points)
    return frames


def render_video(script: SceneScript, cfg: RunConfig) -> np.ndarray:
    """[T, 32, 32] occupancy grids in [0, 1]; deterministic given the script."""
    cells = cfg.video_cells
    cell_size = script.arena_size / cells
    sigma = BUMP_SIGMA_CELLS * cell_size
    centers = (np.arange(cells) + 0.5) * cell_size
    rng = _rng(script.seed, 2)
    speckle = np.where(rng.random((cells, cells)) < SPECKLE_DENSITY,
                       rng.uniform(*SPECKLE_AMP, size=(cells, cells)), 0.0)
    grids = np.empty((script.frames, cells, cells))
    for t in range(script.frames):
        grid = speckle.copy()
        for agent in script.agents:
            x, y = agent.positions[t, 0], agent.positions[t, 1]
            gx = np.exp(-0.5 * ((centers - x) / sigma) ** 2)
            gy = np.exp(-0.5 * ((centers - y) / sigma) ** 2)
            grid += gy[:, None] * gx[None, :]  # row = y cell, column = x cell
        grids[t] = np.clip(grid, 0.0, 1.0)
    return grids


def narration_words(script: SceneScript, frame: int) -> list[str]:
    """Count-action pairs for one frame, ordered by action id."""
    if not script.agents:
        return ["empty", "scene"]
    counts = {}
    for agent in script.agents:
        counts[agent.action] = counts.get(agent.action, 0) + 1
    words: list[str] = []
    for action in taxonomy.ACTIONS:
        if action not in counts:
            continue
        if words:
            words.append(",")
        words.extend([str(counts[action]), "agents", action])
    return words


def render_text(script: SceneScript, cfg: RunConfig) -> np.ndarray:
    """[T, L] token ids over VOCAB, zero-padded at the tail."""
    lines = [narration_words(script, t) for t in range(script.frames)]
    width = max(len(line) for line in lines)
    if width > cfg.text_max_len:
        raise DataError("narration exceeds text_max_len")
    ids = np.zeros((script.frames, width), dtype=np.int64)
    for t, line in enumerate(lines):
        for j, word in enumerate(line):
            ids[t, j] = TOKEN_ID[word]
    return ids


def decode_tokens(ids) -> list[str]:
    return [VOCAB[i] for i in np.asarray(ids).reshape(-1) if i != PAD_ID]


def agent_count_from_text(ids) -> int:
    """Sum of the count tokens in one narration line."""
    total = 0
    for word in decode_tokens(np.asarray(ids)):
        if word.isdigit():
            total += int(word)
    return total


# ---------------------------------------------------------------------------
# targets


def script_targets(script: SceneScript) -> dict:
    """Integer/multi-hot training targets derived from a script."""
    n = len(script.agents)
    actions = np.array([taxonomy.ACTION_ID[a.action] for a in script.agents],
                       dtype=np.int64)
    activities = np.array([taxonomy.GROUP_ID[g.activity] for g in script.groups],
                          dtype=np.int64)
    membership = np.zeros((len(script.groups), n), dtype=np.float64)
    for gi, g in enumerate(script.groups):
        membership[gi, list(g.members)] = 1.0
    scene = np.zeros(taxonomy.N_SCENE_LABELS, dtype=np.float64)
    for label in script.scene_labels:
        scene[taxonomy.SCENE_ID[label]] = 1.0
    return {"actions": actions, "activities": activities,
            "membership": membership, "scene": scene}
