"""Kinematic-tree robot model.

Structure parameterization, forward kinematics, mass properties, limb segment
geometry, and pose bookkeeping.  Conventions: Y is world-vertical (gravity
points along -Y), Z is the default forward direction, X is sideways.  All mass
sits in the body box; limbs are massless.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

GRAVITY = np.array([0.0, -9.81, 0.0])

DEFAULT_LENGTH_BOUNDS = (0.02, 0.5)
DEFAULT_BODY_BOUNDS = (0.05, 0.6)
DEFAULT_ACTUATOR_BOUNDS = (-2.0, 2.0)

ROTARY = "rotary"
LINEAR = "linear"


@dataclass
class RobotTopology:
    """Connectivity and fixed geometry of a legged robot.

    Links form a tree hanging off the root body; ``link_parents[i] == -1``
    attaches link i directly to the body at ``link_attach[i]``, whose x and z
    components scale with the body width and length while y is literal meters.
    Non-root links attach at their parent's distal tip.  Each actuator drives
    exactly one link (rotating or translating it relative to its parent).
    """

    name: str
    link_parents: tuple
    link_attach: tuple
    link_dirs: tuple
    act_link: tuple
    act_kinds: tuple
    end_effectors: tuple
    body_mass_kg: float
    body_height_m: float
    body_com_offset: tuple = (0.0, 0.0, 0.0)
    link_names: tuple = ()
    act_names: tuple = ()
    length_bounds: tuple = ()
    body_width_bounds: tuple = DEFAULT_BODY_BOUNDS
    body_length_bounds: tuple = DEFAULT_BODY_BOUNDS
    actuator_bounds: tuple = ()

    def __post_init__(self):
        g = len(self.link_parents)
        n = len(self.act_link)
        if g < 1:
            raise ValueError("topology needs at least one link")
        for il, par in enumerate(self.link_parents):
            # parents must precede children so chains evaluate in one pass
            if par >= il:
                raise ValueError(f"link {il} has parent {par}; parents must come first")
            if par < -1:
                raise ValueError(f"link {il} has invalid parent {par}")
        seen = set()
        for j, il in enumerate(self.act_link):
            if not 0 <= il < g:
                raise ValueError(f"actuator {j} drives unknown link {il}")
            if il in seen:
                raise ValueError(f"link {il} driven by more than one actuator")
            seen.add(il)
        for j, kind in enumerate(self.act_kinds):
            if kind not in (ROTARY, LINEAR):
                raise ValueError(f"actuator {j} has unknown kind {kind!r}")
        if len(self.end_effectors) < 1:
            raise ValueError("at least one end effector required")
        children = {il for il in range(g) if il in self.link_parents}
        for le in self.end_effectors:
            if not 0 <= le < g:
                raise ValueError(f"end effector index {le} out of range")
            if le in children:
                raise ValueError(f"end effector {le} is not a leaf link")
        if self.body_mass_kg <= 0:
            raise ValueError("body mass must be positive")
        if self.body_height_m <= 0:
            raise ValueError("body height must be positive")
        if not self.link_names:
            self.link_names = tuple(f"link{i}" for i in range(g))
        if not self.act_names:
            self.act_names = tuple(f"act{j}" for j in range(n))
        if not self.length_bounds:
            self.length_bounds = tuple(DEFAULT_LENGTH_BOUNDS for _ in range(g))
        if not self.actuator_bounds:
            self.actuator_bounds = tuple(DEFAULT_ACTUATOR_BOUNDS for _ in range(n))

        self._parent_arr = np.asarray(self.link_parents, dtype=np.int64)
        self._attach_arr = np.asarray(self.link_attach, dtype=np.float64).reshape(g, 3)
        self._dirs_arr = np.asarray(self.link_dirs, dtype=np.float64).reshape(g, 3)
        norms = np.linalg.norm(self._dirs_arr, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("link direction must be nonzero")
        self._dirs_arr = self._dirs_arr / norms[:, None]
        self._act_index = np.full(g, -1, dtype=np.int64)
        for j, il in enumerate(self.act_link):
            self._act_index[il] = j
        self._act_kind_arr = np.asarray(
            [0 if kk == ROTARY else 1 for kk in self.act_kinds], dtype=np.int64
        )
        self._com_offset_arr = np.asarray(self.body_com_offset, dtype=np.float64)

    @property
    def g(self):
        return len(self.link_parents)

    @property
    def n(self):
        return len(self.act_link)

    @property
    def k(self):
        return len(self.end_effectors)

    @property
    def n_s(self):
        return self.g + 3 * self.n + 2

    @property
    def nq(self):
        return 6 + self.n

    def root_link_of(self, il):
        """Index of the body-attached ancestor of link il (the leg identity)."""
        while self.link_parents[il] >= 0:
            il = self.link_parents[il]
        return il

    def collision_pairs(self):
        """Unordered link pairs checked for clearance.

        Pairs on different legs, plus same-leg pairs that are not
        parent-child adjacent (those always touch at the shared joint).
        """
        g = self.g
        pairs = []
        for a in range(g):
            for b in range(a + 1, g):
                if self.root_link_of(a) != self.root_link_of(b):
                    pairs.append((a, b))
                elif self.link_parents[b] != a and self.link_parents[a] != b:
                    pairs.append((a, b))
        return tuple(pairs)


@dataclass
class StructureParams:
    """Morphology vector: link lengths, actuator axes/attachments, body size."""

    link_lengths: np.ndarray
    actuator_params: np.ndarray
    body_width: float
    body_length: float

    def __post_init__(self):
        self.link_lengths = np.asarray(self.link_lengths, dtype=np.float64).copy()
        self.actuator_params = np.asarray(self.actuator_params, dtype=np.float64).reshape(-1, 3).copy()
        self.body_width = float(self.body_width)
        self.body_length = float(self.body_length)

    def to_vector(self):
        return np.concatenate(
            [self.link_lengths, self.actuator_params.ravel(), [self.body_width, self.body_length]]
        )

    @staticmethod
    def from_vector(topology, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (topology.n_s,):
            raise ValueError(f"expected structure vector of length {topology.n_s}, got {vec.shape}")
        g, n = topology.g, topology.n
        return StructureParams(
            link_lengths=vec[:g],
            actuator_params=vec[g : g + 3 * n].reshape(n, 3),
            body_width=vec[g + 3 * n],
            body_length=vec[g + 3 * n + 1],
        )


@dataclass
class Pose:
    """Root position, root axis-angle orientation, and joint values."""

    root_position: np.ndarray
    root_orientation: np.ndarray
    joint_angles: np.ndarray

    def __post_init__(self):
        self.root_position = np.asarray(self.root_position, dtype=np.float64).reshape(3)
        self.root_orientation = np.asarray(self.root_orientation, dtype=np.float64).reshape(3)
        self.joint_angles = np.asarray(self.joint_angles, dtype=np.float64).ravel()

    def flatten(self):
        return np.concatenate([self.root_position, self.root_orientation, self.joint_angles])

    @staticmethod
    def from_flat(vec, n):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (6 + n,):
            raise ValueError(f"expected pose vector of length {6 + n}")
        return Pose(vec[0:3], vec[3:6], vec[6:])

    def canonicalized(self):
        """Wrap the orientation angle into [0, pi], flipping the axis if needed.

        Construction deliberately does not canonicalize: flatten/unflatten must
        round-trip exactly and optimizer iterates live on the raw chart.
        """
        o = self.root_orientation
        theta = float(np.linalg.norm(o))
        if theta < 1e-12:
            return Pose(self.root_position, np.zeros(3), self.joint_angles)
        axis = o / theta
        wrapped = np.mod(theta, 2.0 * np.pi)
        if wrapped > np.pi:
            wrapped = 2.0 * np.pi - wrapped
            axis = -axis
        return Pose(self.root_position, axis * wrapped, self.joint_angles)


@dataclass
class MassProperties:
    total_mass: float
    inertia: np.ndarray


@dataclass
class LimbSegment:
    limb_id: int
    point_a: np.ndarray
    point_b: np.ndarray


def structure_bounds(topology):
    """Box bounds (lo, hi) over the flattened structure vector."""
    lo = np.empty(topology.n_s)
    hi = np.empty(topology.n_s)
    for i, (a, b) in enumerate(topology.length_bounds):
        lo[i], hi[i] = a, b
    g = topology.g
    # an actuator bound is either one (lo, hi) box shared by the triple or a
    # ((lo, lo, lo), (hi, hi, hi)) pair of triples; equal triples freeze the
    # parameter (a hinge whose bracket fixes its axis)
    for j, (a, b) in enumerate(topology.actuator_bounds):
        lo[g + 3 * j : g + 3 * j + 3] = np.broadcast_to(np.asarray(a, dtype=np.float64), (3,))
        hi[g + 3 * j : g + 3 * j + 3] = np.broadcast_to(np.asarray(b, dtype=np.float64), (3,))
    lo[-2], hi[-2] = topology.body_width_bounds
    lo[-1], hi[-1] = topology.body_length_bounds
    return lo, hi


def project_structure(topology, s_vec):
    """Clip a structure vector to the configured box bounds."""
    lo, hi = structure_bounds(topology)
    return np.clip(np.asarray(s_vec, dtype=np.float64), lo, hi)


def validate_structure(topology, s):
    """Check dimensions and bounds; return s with rotary axes normalized."""
    if s.link_lengths.shape != (topology.g,):
        raise ValueError(
            f"structure has {s.link_lengths.shape[0]} link lengths, topology has {topology.g} links"
        )
    if s.actuator_params.shape != (topology.n, 3):
        raise ValueError(
            f"structure has {s.actuator_params.shape[0]} actuator triples, topology has {topology.n}"
        )
    if np.any(s.link_lengths <= 0):
        bad = int(np.argmin(s.link_lengths))
        raise ValueError(f"non-positive link length at index {bad}")
    if s.body_width <= 0 or s.body_length <= 0:
        raise ValueError("body dimensions must be positive")
    lo, hi = structure_bounds(topology)
    vec = s.to_vector()
    if np.any(vec < lo - 1e-12) or np.any(vec > hi + 1e-12):
        bad = int(np.argmax((vec < lo - 1e-12) | (vec > hi + 1e-12)))
        raise ValueError(f"structure component {bad} = {vec[bad]:g} outside bounds")
    params = s.actuator_params.copy()
    for j, kind in enumerate(topology.act_kinds):
        if kind == ROTARY:
            norm = np.linalg.norm(params[j])
            if norm < 1e-8:
                raise ValueError(f"zero-norm rotary axis for actuator {j}")
            params[j] = params[j] / norm
    return StructureParams(s.link_lengths, params, s.body_width, s.body_length)


def chain_points(topology, s, Q, want_jac=False):
    """Batched FK over poses Q (T, 6+n).

    Returns (P, D, JP, JD, R0, dR0): proximal/distal world points of every
    link, their Jacobians wrt the pose vector (None unless requested), the
    root rotations, and the root rotation derivatives.
    """
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != topology.nq:
        raise ValueError(f"expected poses of shape (T, {topology.nq})")
    return _kernels.chain_fk(
        topology._parent_arr,
        topology._attach_arr,
        topology._act_index,
        topology._act_kind_arr,
        topology._dirs_arr,
        s.link_lengths,
        s.actuator_params,
        s.body_width,
        s.body_length,
        Q,
        want_jac=want_jac,
    )


def forward_kinematics_com(topology, s, q):
    """World COM position for one pose (body box center)."""
    R = _kernels.rotation_matrices(q.root_orientation[None, :])[0]
    return q.root_position + R @ topology._com_offset_arr


def forward_kinematics_ee(topology, s, q, j):
    """World position of end effector j (distal tip of its leaf link)."""
    if not 0 <= j < topology.k:
        raise IndexError(f"end effector index {j} out of range")
    _, D, _, _, _, _ = chain_points(topology, s, q.flatten()[None, :])
    return D[0, topology.end_effectors[j]]


def limb_segments(topology, s, q):
    """One world-space segment per link at the given pose."""
    P, D, _, _, _, _ = chain_points(topology, s, q.flatten()[None, :])
    return [LimbSegment(il, P[0, il].copy(), D[0, il].copy()) for il in range(topology.g)]


def segment_distance(a, b):
    """Minimum distance between two limb segments."""
    dist, _, _ = _kernels.segment_closest_points(
        a.point_a[None, :], a.point_b[None, :], b.point_a[None, :], b.point_b[None, :]
    )
    return float(dist[0])


def yaw_from_orientation(o):
    """Heading about world +Y of the rotated forward (+Z) axis."""
    R = _kernels.rotation_matrices(np.asarray(o, dtype=np.float64)[None, :])[0]
    v = R[:, 2]
    return float(np.arctan2(v[0], v[2]))


def yaw_and_gradient(o):
    """Yaw and its derivative wrt the three axis-angle components."""
    o = np.asarray(o, dtype=np.float64)
    R = _kernels.rotation_matrices(o[None, :])[0]
    dR = _kernels.rotation_derivatives(o[None, :], R[None, :])[0]
    v = R[:, 2]
    denom = v[0] * v[0] + v[2] * v[2]
    tau = float(np.arctan2(v[0], v[2]))
    if denom < 1e-12:
        return tau, np.zeros(3)
    grad = np.empty(3)
    for i in range(3):
        dv = dR[i][:, 2]
        grad[i] = (v[2] * dv[0] - v[0] * dv[2]) / denom
    return tau, grad


def extract_yaw(q):
    """Turning angle of a pose about the world vertical axis."""
    return yaw_from_orientation(q.root_orientation)


def extract_joint_vector(q):
    """Pose minus root position: [root orientation, joint angles]."""
    return np.concatenate([q.root_orientation, q.joint_angles])


def box_inertia(mass, width, height, length):
    """Inertia of a solid box about its center, axes aligned (x, y, z)."""
    return (
        np.diag(
            [
                height * height + length * length,
                width * width + length * length,
                width * width + height * height,
            ]
        )
        * mass
        / 12.0
    )


def mass_properties(topology, s, q):
    """Total mass and world-frame body-box inertia at the given pose."""
    I_box = box_inertia(topology.body_mass_kg, s.body_width, topology.body_height_m, s.body_length)
    R = _kernels.rotation_matrices(q.root_orientation[None, :])[0]
    return MassProperties(topology.body_mass_kg, R @ I_box @ R.T)
