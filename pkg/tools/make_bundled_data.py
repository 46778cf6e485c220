"""Regenerate the bundled robot and task documents in src/morphmotion/data.

Run from the repository root:  python3 tools/make_bundled_data.py
"""
import dataclasses
import math
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from morphmotion import gait, kinematics, objective  # noqa: E402
from morphmotion.session import files  # noqa: E402

DATA = pathlib.Path(__file__).resolve().parents[1] / "src" / "morphmotion" / "data"


def leg(prefix, sx, sz, segments):
    """Chained links for one leg: segments = [(name, dir, length, kind, axis)]."""
    links, acts = [], []
    parent = "body"
    for i, (name, d, length, kind, axis) in enumerate(segments):
        lid = f"{prefix}_{name}"
        links.append({
            "id": lid,
            "parent": parent,
            "attach": [sx, -0.02, sz] if parent == "body" else [0.0, 0.0, 0.0],
            "localDirection": list(d),
            "defaultLength": length,
        })
        acts.append({
            "id": f"{lid}_drive",
            "parent": lid,
            "kind": kind,
            "defaultAxisOrAttachment": list(axis),
        })
        parent = lid
    return links, acts


def build_robot(name, body, legs, feet_suffix, bounds=None):
    links, acts, ee = [], [], []
    for prefix, sx, sz, segs in legs:
        l, a = leg(prefix, sx, sz, segs)
        links += l
        acts += a
        ee.append(f"{prefix}_{feet_suffix}")
    doc = {
        "version": 1,
        "kind": "robot",
        "name": name,
        "body": body,
        "links": links,
        "actuators": acts,
        "endEffectors": ee,
    }
    if bounds is not None:
        doc["bounds"] = bounds
    topology, s = files.parse_robot_document(doc)
    files.save_robot(topology, s, DATA / f"{name}.robot.json")
    print(f"{name}: g={topology.g} n={topology.n} k={topology.k} n_s={topology.n_s}")
    return topology, s


# Foot order convention everywhere: left-front, right-front, (left-mid,
# right-mid,) left-hind, right-hind; left is +X, forward is +Z.

# All three hinges share the x axis and their brackets pin it there (the
# axis bounds below freeze each triple), so every foot keeps a fixed lateral
# offset of one body width no matter what the joints do: lateral support is
# a design property, not a stance choice, which is what makes body width a
# real trade-off between gaits with different support patterns.
QUAD_SEGS = [
    ("hip", (0, -1, 0), 0.05, "rotary", (1, 0, 0)),
    ("upper", (0, -1, 0.25), 0.10, "rotary", (1, 0, 0)),
    ("lower", (0, -1, -0.3), 0.12, "rotary", (1, 0, 0)),
]
PINNED_X_AXIS = [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
quad = build_robot(
    "quadruped",
    {"mass": 3.0, "height": 0.06, "defaultWidth": 0.16, "defaultLength": 0.30,
     "comOffset": [0.0, 0.0, 0.0]},
    [("lf", 1, 0.9, QUAD_SEGS), ("rf", -1, 0.9, QUAD_SEGS),
     ("lh", 1, -0.9, QUAD_SEGS), ("rh", -1, -0.9, QUAD_SEGS)],
    "lower",
    bounds={"actuator": {f"{p}_{seg}_drive": PINNED_X_AXIS
                         for p in ("lf", "rf", "lh", "rh")
                         for seg in ("hip", "upper", "lower")}},
)

# dog-leg zigzag: a straight vertical leg sits at a kinematic singularity
# (foot height insensitive to the joints), which would pin the stance pose
# at zero joint angles and with it the axis sensitivities
PUPPY_SEGS = [
    ("upper", (0, -1, 0.25), 0.10, "rotary", (1, 0, 0)),
    ("lower", (0, -1, -0.3), 0.12, "rotary", (1, 0, 0)),
]
puppy = build_robot(
    "puppy",
    {"mass": 2.0, "height": 0.05, "defaultWidth": 0.14, "defaultLength": 0.26,
     "comOffset": [0.0, 0.0, 0.0]},
    [("lf", 1, 0.9, PUPPY_SEGS), ("rf", -1, 0.9, PUPPY_SEGS),
     ("lh", 1, -0.9, PUPPY_SEGS), ("rh", -1, -0.9, PUPPY_SEGS)],
    "lower",
)


def hex_segs(sx, splay, lean):
    """Insect leg: outward lean, fore-aft splay, knee pre-bend of +-0.06."""
    return [
        ("upper", (lean * sx, -1, splay + 0.06), 0.11, "rotary", (1, 0, 0)),
        ("lower", (lean * sx, -1, splay - 0.06), 0.13, "rotary", (1, 0, 0)),
    ]


# Front legs splay forward and hind legs backward, so growing the body or the
# limbs spreads the foot rows fore-aft; the mid legs lean a touch further
# outward, so growing limbs also separates the foot tracks sideways.  At rest
# adjacent foot rows sit ~0.14 apart, which clears a moderate stride but not a
# fast one (a swinging foot sweeps half a stride past each stance neighbor).
hexa = build_robot(
    "hexapod",
    {"mass": 2.5, "height": 0.05, "defaultWidth": 0.06, "defaultLength": 0.22,
     "comOffset": [0.0, 0.0, 0.0]},
    [("lf", 1, 0.5, hex_segs(1, 0.15, 0.35)), ("rf", -1, 0.5, hex_segs(-1, 0.15, 0.35)),
     ("lm", 1, 0.0, hex_segs(1, 0.0, 0.38)), ("rm", -1, 0.0, hex_segs(-1, 0.0, 0.38)),
     ("lh", 1, -0.5, hex_segs(1, -0.15, 0.35)), ("rh", -1, -0.5, hex_segs(-1, -0.15, 0.35))],
    "lower",
)


def stepping_stones(pattern, rest_feet, travel, free_z=False, swing_lift=None):
    """Per-foot world targets: one fixed stone per stance phase, advancing one
    travel step per cycle; swing frames are left unset (null in the document).

    free_z drops the z component of every stone (lateral footholds only),
    leaving fore-aft foot placement to the optimizer.

    swing_lift fills the swing frames too: the foot tracks a lift arc of that
    height while its horizontal target slides from the departed stone to the
    next one.  This keeps the optimal motion stepping instead of parking,
    which matters for design sensitivity: a parked foot centers itself on its
    stones and the residuals cancel out of the structure gradient.
    """
    C = pattern.contacts
    T, k = C.shape
    travel = np.asarray(travel, dtype=np.float64)
    rest_feet = np.asarray(rest_feet, dtype=np.float64)
    tgt = np.full((T, k, 3), np.nan)
    for j in range(k):
        col = C[:, j]
        if col.all():
            tgt[:, j] = rest_feet[j] + np.outer(np.arange(T) / (T - 1), travel)
            continue
        starts = [t for t in range(T) if col[t] == 1 and col[t - 1] == 0]
        runs = []
        for t0 in starts:
            span = 0
            while col[(t0 + span) % T] == 1:
                span += 1
            mid = t0 + (span - 1) / 2.0
            stone = rest_feet[j] + travel * (mid / (T - 1))
            runs.append((t0, span, stone))
            for u in range(t0, t0 + span):
                # frames past the cycle end stand on the previous cycle's stone
                tgt[u % T, j] = stone - travel * (1.0 if u >= T else 0.0)
        if swing_lift is None:
            continue
        runs.sort()
        for i, (t0, span, stone) in enumerate(runs):
            end = t0 + span - 1
            if i + 1 < len(runs):
                t1, _, nxt = runs[i + 1]
            else:
                t1, _, nxt = runs[0][0] + T, 0, runs[0][2] + travel
            for u in range(end + 1, t1):
                frac = (u - end) / (t1 - end)
                p = stone + (nxt - stone) * frac
                p[1] = swing_lift * math.sin(math.pi * frac)
                tgt[u % T, j] = p - travel * (1.0 if u >= T else 0.0)
    if free_z:
        tgt[:, :, 2] = np.nan
    return tgt


def make_task(filename, robot, threshold=0.0, stones=False, stones_free_z=False,
              swing_lift=None, crouch=None, **kwargs):
    topology, s = robot
    if "contacts" in kwargs:
        pattern = gait.FootfallPattern(
            style=kwargs.pop("style", "custom"),
            contacts=np.asarray(kwargs.pop("contacts"), dtype=np.int64),
            cycle_duration=kwargs.pop("cycle_duration", gait.DEFAULT_CYCLE_DURATION),
            duty_factor=kwargs.pop("duty_factor", None),
        )
    else:
        pattern = gait.make_footfall(
            kwargs.pop("style"),
            kwargs.pop("frames"),
            topology.k,
            duty_factor=kwargs.pop("duty_factor", 0.5),
            cycle_duration=kwargs.pop("cycle_duration", gait.DEFAULT_CYCLE_DURATION),
        )
    task = objective.TaskSpec(gait=pattern, **kwargs)
    if stones:
        rest_feet = gait.init_trajectory(topology, s, task).frames[0].e
        task = dataclasses.replace(
            task,
            style_ee=stepping_stones(
                pattern, rest_feet, task.desired_travel,
                free_z=stones_free_z, swing_lift=swing_lift,
            ),
        )
    if crouch is not None:
        # COM rides the straight progression line at crouch height; the
        # crouch bends the stance legs, the line forbids waddling (travel
        # by rolling about the stance diagonal sways the COM sideways)
        steps = np.arange(pattern.T)[:, None] / (pattern.T - 1)
        com_tgt = steps * np.asarray(task.desired_travel, dtype=np.float64)[None, :]
        com_tgt[:, 1] = crouch
        task = dataclasses.replace(task, style_com=com_tgt)
    files.save_task(task, DATA / filename, threshold=threshold)
    print(f"{filename}: T={pattern.T} k={pattern.k} n_m={(9 + topology.n + 6 * topology.k) * pattern.T}")


# The walk follows marked foot tracks (stones), which sit one body width out
# from the midline, so walking rewards keeping the stance wide.  The pace has
# no tracks: its same-side support line makes every centimeter of width
# another centimeter of rocking to get the weight over the stance pair, so
# pacing rewards a slim body.  Optimizing for both at once should settle on
# an intermediate width.
make_task("walk.task.json", quad, name="walk", style="trot", frames=25,
          desired_travel=(0.0, 0.0, 0.20), desired_turn=0.0, stones=True)
make_task("pace.task.json", quad, name="pace", style="pace", frames=25,
          desired_travel=(0.0, 0.0, 0.24), desired_turn=0.0)
make_task("stand.task.json", quad, name="stand",
          contacts=gait.stand_pattern(15, 4).contacts, style="stand",
          desired_travel=(0.0, 0.0, 0.0), desired_turn=0.0)
# Stepping stones pinned in all three coordinates keep the sideways walker
# facing forward (without them the cheapest design is a 90-degree body yaw
# that never moves the axes) and deny the fore-aft drift that would let a
# barely tilted leg track its stones.  The swing arcs keep the optimum
# marching (a parked foot centers itself on its stones and drops out of the
# structure gradient), the crouch keeps the stance joints bent (a straight
# leg zeros out the axis sensitivities and deadlocks the design gradient),
# the heavy COM-line weight forbids travel by body sway or diagonal rolling,
# and the smooth weight prices out the roll-waddle gait.
make_task("sideways.task.json", puppy, name="sideways", style="walk", frames=16,
          duty_factor=0.75, desired_travel=(0.15, 0.0, 0.0), desired_turn=0.0,
          stones=True, swing_lift=0.05, crouch=0.20,
          objective_weights={"styleCOM": 8.0, "styleEE": 4.0, "smooth": 3.0})
make_task("fastwalk.task.json", hexa, name="fastwalk", style="trot", frames=16,
          cycle_duration=0.5, desired_travel=(0.0, 0.0, 0.30), desired_turn=0.0,
          collision_threshold=0.02)
