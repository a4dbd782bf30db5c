"""Label taxonomy and the compatibility structure between its levels.

Three nested vocabularies describe a scene: per-agent actions, per-group
activities, and scene-wide descriptors (multi-label).  Two 0/1 matrices
state which combinations can co-occur; the consistency loss penalizes
probability mass that lands on the zero entries, and the scene sampler
only emits label combinations whose entries are one.
"""

from __future__ import annotations

import numpy as np

ACTIONS = ("walk", "stand", "run", "sit")
GROUP_ACTIVITIES = ("gather", "disperse", "walk-together", "queue", "stand-still")
SCENE_LABELS = ("crowded", "moving", "stationary", "queuing", "mixed")

ACTION_ID = {name: i for i, name in enumerate(ACTIONS)}
GROUP_ID = {name: i for i, name in enumerate(GROUP_ACTIVITIES)}
SCENE_ID = {name: i for i, name in enumerate(SCENE_LABELS)}

N_ACTIONS = len(ACTIONS)
N_GROUP_ACTIVITIES = len(GROUP_ACTIVITIES)
N_SCENE_LABELS = len(SCENE_LABELS)

# action_group_compat[a, g] == 1 iff an agent doing action a can belong to
# a group performing activity g.
#                 gather  disperse  walk-together  queue  stand-still
action_group_compat = np.array([
    [1, 1, 1, 0, 0],  # walk
    [0, 0, 0, 1, 1],  # stand
    [1, 1, 0, 0, 0],  # run
    [0, 0, 0, 0, 1],  # sit
], dtype=np.float64)

# group_scene_compat[g, s] == 1 iff a group with activity g can appear in a
# scene carrying descriptor s.  "moving" means every agent is in motion and
# "stationary" means none is, which rules out the static/moving groups
# respectively; the remaining descriptors constrain nothing.
#                 crowded  moving  stationary  queuing  mixed
group_scene_compat = np.array([
    [1, 1, 0, 1, 1],  # gather
    [1, 1, 0, 1, 1],  # disperse
    [1, 1, 0, 1, 1],  # walk-together
    [1, 0, 1, 1, 1],  # queue
    [1, 0, 1, 1, 1],  # stand-still
], dtype=np.float64)

MOVING_ACTIONS = frozenset({"walk", "run"})
STATIC_ACTIONS = frozenset({"stand", "sit"})
CROWDED_THRESHOLD = 7  # scene is "crowded" at this many agents or more


def compatible_actions(activity: str) -> tuple[str, ...]:
    g = GROUP_ID[activity]
    return tuple(a for a in ACTIONS if action_group_compat[ACTION_ID[a], g] == 1.0)


def scene_labels_for(actions: list[str], activities: list[str]) -> list[str]:
    """Derive the scene descriptor set from agent actions and group activities."""
    if not actions:
        return []
    labels = []
    if len(actions) >= CROWDED_THRESHOLD:
        labels.append("crowded")
    moving = [a in MOVING_ACTIONS for a in actions]
    if all(moving):
        labels.append("moving")
    elif not any(moving):
        labels.append("stationary")
    else:
        labels.append("mixed")
    if "queue" in activities:
        labels.append("queuing")
    return labels


def check_compatible(actions: list[str], memberships: list[list[int]],
                     activities: list[str], labels: list[str]) -> bool:
    """True iff every (member action, group) and (group, scene label) pair
    lands on a 1 entry of the compatibility matrices."""
    for members, activity in zip(memberships, activities):
        g = GROUP_ID[activity]
        for m in members:
            if action_group_compat[ACTION_ID[actions[m]], g] == 0.0:
                return False
    for activity in activities:
        g = GROUP_ID[activity]
        for label in labels:
            if group_scene_compat[g, SCENE_ID[label]] == 0.0:
                return False
    return True
