"""Motion parameterization over one gait cycle.

Trajectory container, footfall pattern library, finite-difference
accelerations, and trajectory initialization.  The optimized motion vector m
is the flattened per-frame (q, x, e, f); contact flags are fixed inputs taken
from the footfall pattern and are not optimization variables.
"""
from dataclasses import dataclass

import numpy as np

from . import kinematics
from .kinematics import Pose

STYLES = ("walk", "trot", "pace", "gallop", "custom")

# per-style stance phase offsets, in the fixed foot order:
# k=4: (LF, RF, LH, RH); k=6: (LF, RF, LM, RM, LH, RH); k=2: (L, R)
_OFFSETS = {
    ("trot", 4): (0.0, 0.5, 0.5, 0.0),
    ("pace", 4): (0.0, 0.5, 0.0, 0.5),
    ("walk", 4): (0.0, 0.5, 0.75, 0.25),
    ("gallop", 4): (0.0, 0.1, 0.5, 0.6),
    ("trot", 6): (0.0, 0.5, 0.5, 0.0, 0.0, 0.5),
    ("pace", 6): (0.0, 0.5, 0.0, 0.5, 0.0, 0.5),
    ("walk", 6): (0.0, 0.5, 1.0 / 3.0, 5.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0),
    ("trot", 2): (0.0, 0.5),
    ("pace", 2): (0.0, 0.5),
    ("walk", 2): (0.0, 0.5),
}

DEFAULT_CYCLE_DURATION = 0.8


@dataclass
class FootfallPattern:
    """Per-frame contact flag schedule defining a gait style."""

    style: str
    contacts: np.ndarray
    cycle_duration: float = DEFAULT_CYCLE_DURATION
    duty_factor: float = None

    def __post_init__(self):
        self.contacts = np.asarray(self.contacts, dtype=np.int64)
        if self.contacts.ndim != 2:
            raise ValueError("contacts must be a T x k matrix")
        if self.contacts.shape[0] < 3:
            raise ValueError("need at least 3 frames")
        if not np.all((self.contacts == 0) | (self.contacts == 1)):
            raise ValueError("contact flags must be 0 or 1")
        if np.any(self.contacts.sum(axis=0) == 0):
            raise ValueError("every foot needs at least one stance frame")
        if self.cycle_duration <= 0:
            raise ValueError("cycle duration must be positive")

    @property
    def T(self):
        return self.contacts.shape[0]

    @property
    def k(self):
        return self.contacts.shape[1]


def make_footfall(style, T, k, duty_factor, cycle_duration=DEFAULT_CYCLE_DURATION):
    """Build a named footfall pattern.

    Feet are grounded when frac(i/T - offset) < duty.  Walk is forced to
    duty >= 0.75 (four-beat support); gallop keeps the given duty, which
    below ~0.4 produces flight frames.  For k >= 4 the non-gallop styles
    guarantee at least two grounded feet per frame.
    """
    if T < 4:
        raise ValueError("need at least 4 frames")
    if k not in (2, 4, 6):
        raise ValueError(f"unsupported foot count {k}")
    if not 0.0 < duty_factor < 1.0:
        raise ValueError("duty factor must be in (0, 1)")
    if style == "custom":
        raise ValueError("custom patterns are built directly from a contact matrix")
    if style == "walk":
        duty_factor = max(duty_factor, 0.75)
    key = (style, k)
    if key not in _OFFSETS:
        raise ValueError(f"unsupported style/foot-count combination {key}")
    offsets = _OFFSETS[key]
    phases = np.arange(T)[:, None] / T
    rel = np.mod(phases - np.asarray(offsets)[None, :], 1.0)
    contacts = (rel < duty_factor - 1e-12).astype(np.int64)
    pattern = FootfallPattern(style, contacts, cycle_duration, duty_factor)
    if style in ("walk", "trot", "pace") and k >= 4:
        if np.any(pattern.contacts.sum(axis=1) < 2):
            raise ValueError(f"{style} with T={T}, duty={duty_factor} drops below 2 stance feet")
    return pattern


def stand_pattern(T, k, cycle_duration=DEFAULT_CYCLE_DURATION):
    """All feet grounded in every frame."""
    return FootfallPattern("custom", np.ones((T, k), dtype=np.int64), cycle_duration, 1.0)


@dataclass
class FrameLayout:
    """Index bookkeeping for the flattened motion vector.

    Per frame: [q (6+n), x (3), e (3k), f (3k)]; frames are contiguous.
    """

    n: int
    k: int
    T: int

    @property
    def nq(self):
        return 6 + self.n

    @property
    def n_p(self):
        return self.nq + 3 + 6 * self.k

    @property
    def n_m(self):
        return self.T * self.n_p

    @property
    def x_off(self):
        return self.nq

    @property
    def e_off(self):
        return self.nq + 3

    @property
    def f_off(self):
        return self.nq + 3 + 3 * self.k

    def cols(self, frames, offset, width):
        """Global column indices (N, width) for a per-frame block."""
        frames = np.asarray(frames, dtype=np.int64)
        return frames[:, None] * self.n_p + offset + np.arange(width)[None, :]

    def cols_q(self, frames):
        return self.cols(frames, 0, self.nq)

    def cols_p(self, frames):
        return self.cols(frames, 0, 3)

    def cols_o(self, frames):
        return self.cols(frames, 3, 3)

    def cols_x(self, frames):
        return self.cols(frames, self.x_off, 3)

    def cols_e(self, frames, j):
        return self.cols(frames, self.e_off + 3 * j, 3)

    def cols_f(self, frames, j):
        return self.cols(frames, self.f_off + 3 * j, 3)


@dataclass
class MotionFrame:
    """State of one trajectory frame."""

    q: Pose
    x: np.ndarray
    e: np.ndarray
    f: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(3)
        self.e = np.asarray(self.e, dtype=np.float64).reshape(-1, 3)
        self.f = np.asarray(self.f, dtype=np.float64).reshape(-1, 3)
        self.c = np.asarray(self.c, dtype=np.int64).ravel()
        k = self.c.shape[0]
        if self.e.shape[0] != k or self.f.shape[0] != k:
            raise ValueError("e, f, c must all have one row per foot")


@dataclass
class MotionTrajectory:
    """T frames at uniform spacing h = cycleDuration / (T - 1)."""

    frames: list
    h: float

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("time step must be positive")
        if len(self.frames) < 3:
            raise ValueError("need at least 3 frames")
        n = self.frames[0].q.joint_angles.shape[0]
        k = self.frames[0].c.shape[0]
        for fr in self.frames:
            if fr.q.joint_angles.shape[0] != n or fr.c.shape[0] != k:
                raise ValueError("inconsistent frame dimensions")

    @property
    def T(self):
        return len(self.frames)

    @property
    def k(self):
        return self.frames[0].c.shape[0]

    @property
    def n(self):
        return self.frames[0].q.joint_angles.shape[0]

    def layout(self):
        return FrameLayout(self.n, self.k, self.T)

    def contacts(self):
        return np.stack([fr.c for fr in self.frames])

    def poses(self):
        return np.stack([fr.q.flatten() for fr in self.frames])

    def flatten(self):
        lay = self.layout()
        m = np.empty(lay.n_m)
        for i, fr in enumerate(self.frames):
            base = i * lay.n_p
            m[base : base + lay.nq] = fr.q.flatten()
            m[base + lay.x_off : base + lay.x_off + 3] = fr.x
            m[base + lay.e_off : base + lay.e_off + 3 * self.k] = fr.e.ravel()
            m[base + lay.f_off : base + lay.f_off + 3 * self.k] = fr.f.ravel()
        return m

    @staticmethod
    def unflatten(layout, m, contacts, h):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (layout.n_m,):
            raise ValueError(f"expected motion vector of length {layout.n_m}")
        contacts = np.asarray(contacts, dtype=np.int64)
        frames = []
        for i in range(layout.T):
            base = i * layout.n_p
            q = Pose.from_flat(m[base : base + layout.nq], layout.n)
            x = m[base + layout.x_off : base + layout.x_off + 3]
            e = m[base + layout.e_off : base + layout.e_off + 3 * layout.k].reshape(layout.k, 3)
            f = m[base + layout.f_off : base + layout.f_off + 3 * layout.k].reshape(layout.k, 3)
            frames.append(MotionFrame(q, x, e, f, contacts[i]))
        return MotionTrajectory(frames, h)


def nearest_orientation(ref, o):
    """Representation of the rotation o closest to ref (2-pi shifts along its axis)."""
    o = np.asarray(o, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    theta = np.linalg.norm(o)
    if theta < 1e-12:
        return o.copy()
    axis = o / theta
    best = o
    best_d = np.linalg.norm(o - ref)
    for shift in (-2.0 * np.pi, 2.0 * np.pi):
        cand = axis * (theta + shift)
        d = np.linalg.norm(cand - ref)
        if d < best_d:
            best, best_d = cand, d
    return best.copy()


def finite_diff_accel(traj, i):
    """Second differences (x_ddot, o_ddot) at interior frame i (0-based)."""
    if not 1 <= i <= traj.T - 2:
        raise ValueError(f"frame {i} is not interior")
    h2 = traj.h * traj.h
    xm, x0, xp = traj.frames[i - 1].x, traj.frames[i].x, traj.frames[i + 1].x
    o0 = traj.frames[i].q.root_orientation
    om = nearest_orientation(o0, traj.frames[i - 1].q.root_orientation)
    op = nearest_orientation(o0, traj.frames[i + 1].q.root_orientation)
    return (xm - 2.0 * x0 + xp) / h2, (om - 2.0 * o0 + op) / h2


def yaw_series(traj):
    """Per-frame heading, unwrapped to be continuous over the cycle."""
    raw = np.array([kinematics.extract_yaw(fr.q) for fr in traj.frames])
    return np.unwrap(raw)


def init_trajectory(topology, s, task):
    """Rest-pose starting trajectory for a task.

    Zero joint angles, root at stand height (lowest foot touching y=0), root
    advanced linearly toward the desired travel, stance feet pinned to the
    ground plane, stance forces sharing the robot's weight vertically.
    """
    pattern = task.gait
    if pattern.k != topology.k:
        raise ValueError(f"pattern has {pattern.k} feet, robot has {topology.k}")
    T = pattern.T
    h = pattern.cycle_duration / (T - 1)
    n = topology.n

    rest = Pose(np.zeros(3), np.zeros(3), np.zeros(n))
    _, D, _, _, _, _ = kinematics.chain_points(topology, s, rest.flatten()[None, :])
    foot_y = np.array([D[0, le, 1] for le in topology.end_effectors])
    stand_height = -foot_y.min()
    if stand_height <= 0:
        raise ValueError("rest pose cannot reach the ground; stand height infeasible")

    travel = np.asarray(task.desired_travel, dtype=np.float64)
    mass = topology.body_mass_kg
    frames = []
    for i in range(T):
        root = np.array([0.0, stand_height, 0.0]) + (i / (T - 1)) * travel
        q = Pose(root, np.zeros(3), np.zeros(n))
        _, Di, _, _, _, _ = kinematics.chain_points(topology, s, q.flatten()[None, :])
        e = np.stack([Di[0, le] for le in topology.end_effectors])
        c = pattern.contacts[i]
        e[c == 1, 1] = 0.0
        f = np.zeros((topology.k, 3))
        grounded = int(c.sum())
        if grounded > 0:
            f[c == 1, 1] = mass * 9.81 / grounded
        x = kinematics.forward_kinematics_com(topology, s, q)
        frames.append(MotionFrame(q, x, e, f, c))
    return MotionTrajectory(frames, h)
