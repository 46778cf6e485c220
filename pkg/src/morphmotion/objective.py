"""The task cost F(s, m) and its derivatives.

Objective terms (travel, turn, style, smoothness) and constraint penalties
(kinematic consistency, Newton-Euler force/torque balance, no-slip, friction
cone, ground plane, self-collision clearance, periodicity), all expressed as
weighted sums of squared residuals.  Derivatives wrt the motion vector are
analytic (gradient exact, Hessian Gauss-Newton); derivatives wrt the
structure vector use central finite differences over the few s-dependent
terms, which is exact for the rest since their s-derivative is identically
zero.

Each residual touches at most frames i-1, i, i+1, except travel, turn, and
periodicity which tie the first and last frame; the Hessian is therefore a
band plus a low-rank boundary correction, stored that way for the solver.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, gait, kinematics
from ._linalg import BandedPlusLowRank
from .kinematics import StructureParams

OBJECTIVE_WEIGHT_NAMES = ("travel", "turn", "styleCOM", "styleEE", "smooth")
PENALTY_WEIGHT_NAMES = (
    "kinematic",
    "dynamics",
    "noSlip",
    "frictionCone",
    "groundPlane",
    "collision",
    "periodicity",
)

OBJECTIVE_KEYS = {
    "travel": "E_Travel",
    "turn": "E_Turn",
    "styleCOM": "E_StyleCOM",
    "styleEE": "E_StyleEE",
    "smooth": "E_Smooth",
}

DEFAULT_OBJECTIVE_WEIGHTS = {name: 1.0 for name in OBJECTIVE_WEIGHT_NAMES}
DEFAULT_PENALTY_WEIGHTS = {
    "kinematic": 1e4,
    "dynamics": 1.0,
    "noSlip": 1e4,
    "frictionCone": 1e2,
    "groundPlane": 1e4,
    "collision": 1e4,
    "periodicity": 1e3,
}

# sub-terms whose value depends on s; everything else cancels exactly in
# central differences over s
S_DEPENDENT = frozenset({"kinematicEE", "dynamicsTorque", "collision"})

_EPS_DIST = 1e-9


def fd_workers():
    """Worker count for finite-difference columns (MORPHMOTION_THREADS caps it)."""
    raw = os.environ.get("MORPHMOTION_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class TaskSpec:
    """One locomotion task: targets, gait, physics constants, and weights."""

    name: str
    desired_travel: np.ndarray
    desired_turn: float
    gait: gait.FootfallPattern
    style_com: np.ndarray = None
    style_ee: np.ndarray = None
    friction_coeff: float = 0.6
    collision_threshold: float = 0.02
    periodic: bool = True
    objective_weights: dict = None
    penalty_weights: dict = None
    task_weight: float = 1.0

    def __post_init__(self):
        self.desired_travel = np.asarray(self.desired_travel, dtype=np.float64).reshape(3)
        self.desired_turn = float(self.desired_turn)
        if self.style_com is not None:
            self.style_com = np.asarray(self.style_com, dtype=np.float64).reshape(self.gait.T, 3)
        if self.style_ee is not None:
            self.style_ee = np.asarray(self.style_ee, dtype=np.float64).reshape(
                self.gait.T, self.gait.k, 3
            )
        if self.friction_coeff < 0:
            raise ValueError("friction coefficient must be >= 0")
        if self.collision_threshold < 0:
            raise ValueError("collision threshold must be >= 0")
        ow = dict(DEFAULT_OBJECTIVE_WEIGHTS)
        ow.update(self.objective_weights or {})
        pw = dict(DEFAULT_PENALTY_WEIGHTS)
        pw.update(self.penalty_weights or {})
        unknown = (set(ow) - set(OBJECTIVE_WEIGHT_NAMES)) | (set(pw) - set(PENALTY_WEIGHT_NAMES))
        if unknown:
            raise ValueError(f"unknown weight names {sorted(unknown)}")
        if any(v < 0 for v in ow.values()) or any(v < 0 for v in pw.values()):
            raise ValueError("weights must be >= 0")
        if not 0.0 <= self.task_weight <= 1.0:
            raise ValueError("task weight must be in [0, 1]")
        self.objective_weights = ow
        self.penalty_weights = pw

    def apply_edit(self, changes):
        """Apply a between-iterations edit (targets, weights, task weight)."""
        allowed = {"desiredTravel", "desiredTurn", "objectiveWeights", "penaltyWeights", "taskWeight"}
        unknown = set(changes) - allowed
        if unknown:
            raise ValueError(f"cannot edit fields {sorted(unknown)}")
        if "desiredTravel" in changes:
            self.desired_travel = np.asarray(changes["desiredTravel"], dtype=np.float64).reshape(3)
        if "desiredTurn" in changes:
            self.desired_turn = float(changes["desiredTurn"])
        if "objectiveWeights" in changes:
            for name, val in changes["objectiveWeights"].items():
                if name not in OBJECTIVE_WEIGHT_NAMES:
                    raise ValueError(f"unknown objective weight {name!r}")
                if val < 0:
                    raise ValueError("weights must be >= 0")
                self.objective_weights[name] = float(val)
        if "penaltyWeights" in changes:
            for name, val in changes["penaltyWeights"].items():
                if name not in PENALTY_WEIGHT_NAMES:
                    raise ValueError(f"unknown penalty weight {name!r}")
                if val < 0:
                    raise ValueError("weights must be >= 0")
                self.penalty_weights[name] = float(val)
        if "taskWeight" in changes:
            w = float(changes["taskWeight"])
            if not 0.0 <= w <= 1.0:
                raise ValueError("task weight must be in [0, 1]")
            self.task_weight = w


@dataclass
class GradientBundle:
    """Value and derivatives of F at one (s, m) point."""

    value: float
    grad_m: np.ndarray = None
    hess_mm: BandedPlusLowRank = None
    grad_s: np.ndarray = None
    jac_gs: np.ndarray = None
    term_values: dict = None


class _Accum:
    """Collects residual contributions into value / gradient / GN Hessian."""

    def __init__(self, n_m, hb, want_grad, want_hess):
        self.value = 0.0
        self.terms = {}
        self.grad = np.zeros(n_m) if want_grad else None
        self.band = np.zeros((hb + 1, n_m)) if want_hess else None
        self.wcols = [] if want_hess else None
        self.n_m = n_m

    def add(self, name, weight, factor, r, blocks, boundary=False):
        """r: (N, d) residual rows; blocks: [(cols (N, w), J (N, d, w)), ...]."""
        r = np.asarray(r, dtype=np.float64)
        if r.size == 0:
            self.terms[name] = self.terms.get(name, 0.0) + 0.0
            return
        raw = factor * float(np.sum(r * r))
        self.terms[name] = self.terms.get(name, 0.0) + raw
        if weight == 0.0:
            return
        self.value += weight * raw
        coef = weight * factor
        if self.grad is not None:
            for cols, J in blocks:
                contrib = 2.0 * coef * np.einsum("nd,ndw->nw", r, J)
                np.add.at(self.grad, cols, contrib)
        if self.band is not None:
            if boundary:
                # boundary residuals become explicit low-rank columns
                N, d = r.shape
                if N != 1:
                    raise ValueError("boundary terms are single-residual")
                Wblk = np.zeros((self.n_m, d))
                for cols, J in blocks:
                    Wblk[cols[0], :] += J[0].T
                self.wcols.append(np.sqrt(2.0 * coef) * Wblk)
            else:
                for ci, Ji in blocks:
                    for cj, Jj in blocks:
                        H = 2.0 * coef * np.einsum("ndi,ndj->nij", Ji, Jj)
                        rows_b = np.broadcast_to(ci[:, :, None], H.shape)
                        cols_b = np.broadcast_to(cj[:, None, :], H.shape)
                        mask = rows_b >= cols_b
                        np.add.at(
                            self.band, (rows_b[mask] - cols_b[mask], cols_b[mask]), H[mask]
                        )

    def operator(self):
        W = np.hstack(self.wcols) if self.wcols else None
        return BandedPlusLowRank(self.band, W)


class _Context:
    """Per-evaluation workspace: views into m and lazily computed FK."""

    def __init__(self, model, s_vec, m, want_jac):
        self.model = model
        lay = model.layout
        self.lay = lay
        self.s_vec = np.asarray(s_vec, dtype=np.float64)
        self.s = StructureParams.from_vector(model.topology, self.s_vec)
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (lay.n_m,):
            raise ValueError(f"expected motion vector of length {lay.n_m}")
        M = m.reshape(lay.T, lay.n_p)
        self.Q = M[:, : lay.nq]
        self.O = M[:, 3:6]
        self.X = M[:, lay.x_off : lay.x_off + 3]
        self.E = M[:, lay.e_off : lay.e_off + 3 * lay.k].reshape(lay.T, lay.k, 3)
        self.Fg = M[:, lay.f_off :].reshape(lay.T, lay.k, 3)
        self.want_jac = want_jac
        self._fk = None
        self._rot = None

    @property
    def fk(self):
        if self._fk is None:
            self._fk = kinematics.chain_points(
                self.model.topology, self.s, self.Q, want_jac=self.want_jac
            )
        return self._fk

    @property
    def rot(self):
        """(R0, dR0) without the full chain, for terms that only need the root."""
        if self._fk is not None:
            return self._fk[4], self._fk[5]
        if self._rot is None:
            R0 = _kernels.rotation_matrices(self.O)
            dR0 = _kernels.rotation_derivatives(self.O, R0)
            self._rot = (R0, dR0)
        return self._rot


def _eye_blocks(N, d):
    return np.broadcast_to(np.eye(d), (N, d, d))


class RobotCostModel:
    """F(s, m) for one robot and task, with every derivative the solvers need.

    Also the cost-model protocol implementation used by the optimizers; toy
    models in the tests implement the same small surface (value,
    motion_bundle, grad_s, jac_gs, project_s).
    """

    def __init__(self, topology, task, fd_step=1e-5):
        self.topology = topology
        self.task = task
        if task.gait.k != topology.k:
            raise ValueError(f"task gait has {task.gait.k} feet, robot has {topology.k}")
        self.layout = gait.FrameLayout(topology.n, topology.k, task.gait.T)
        self.contacts = task.gait.contacts.copy()
        self.h = task.gait.cycle_duration / (task.gait.T - 1)
        self.fd_step = fd_step
        self.leaf = np.asarray(topology.end_effectors, dtype=np.int64)
        self.pairs = topology.collision_pairs()
        lay = self.layout
        self.hb = min(2 * lay.n_p + lay.nq - 1, lay.n_m - 1)
        self._bounds = kinematics.structure_bounds(topology)

    @property
    def n_s(self):
        return self.topology.n_s

    @property
    def n_m(self):
        return self.layout.n_m

    # ---- term implementations -------------------------------------------

    def _term_travel(self, ctx, emit):
        lay = ctx.lay
        r = (ctx.X[lay.T - 1] - ctx.X[0] - self.task.desired_travel)[None, :]
        N1 = _eye_blocks(1, 3)
        emit(
            r,
            [(lay.cols_x([lay.T - 1]), N1), (lay.cols_x([0]), -N1)],
            boundary=True,
        )

    def _term_turn(self, ctx, emit):
        lay = ctx.lay
        tau_t, g_t = kinematics.yaw_and_gradient(ctx.O[lay.T - 1])
        tau_0, g_0 = kinematics.yaw_and_gradient(ctx.O[0])
        r = np.array([[tau_t - tau_0 - self.task.desired_turn]])
        emit(
            r,
            [
                (lay.cols_o([lay.T - 1]), g_t[None, None, :]),
                (lay.cols_o([0]), -g_0[None, None, :]),
            ],
            boundary=True,
        )

    def _term_style_com(self, ctx, emit):
        # non-finite target components are unconstrained
        tgt = self.task.style_com
        if tgt is None:
            emit(np.zeros((0, 1)), [])
            return
        lay = ctx.lay
        finite = np.isfinite(tgt)
        for c in range(3):
            rows = np.nonzero(finite[:, c])[0]
            if rows.size == 0:
                emit(np.zeros((0, 1)), [])
                continue
            r = (ctx.X[rows, c] - tgt[rows, c])[:, None]
            J = np.zeros((rows.size, 1, 3))
            J[:, 0, c] = 1.0
            emit(r, [(lay.cols_x(rows), J)])

    def _term_style_ee(self, ctx, emit):
        tgt = self.task.style_ee
        if tgt is None:
            emit(np.zeros((0, 1)), [])
            return
        lay = ctx.lay
        finite = np.isfinite(tgt)
        for j in range(lay.k):
            for c in range(3):
                rows = np.nonzero(finite[:, j, c])[0]
                if rows.size == 0:
                    emit(np.zeros((0, 1)), [])
                    continue
                r = (ctx.E[rows, j, c] - tgt[rows, j, c])[:, None]
                J = np.zeros((rows.size, 1, 3))
                J[:, 0, c] = 1.0
                emit(r, [(lay.cols_e(rows, j), J)])

    def _term_smooth(self, ctx, emit):
        lay = ctx.lay
        if lay.T < 3:
            emit(np.zeros((0, lay.nq)), [])
            return
        idx = np.arange(1, lay.T - 1)
        r = ctx.Q[idx - 1] - 2.0 * ctx.Q[idx] + ctx.Q[idx + 1]
        Iq = _eye_blocks(idx.size, lay.nq)
        emit(
            r,
            [
                (lay.cols_q(idx - 1), Iq),
                (lay.cols_q(idx), -2.0 * Iq),
                (lay.cols_q(idx + 1), Iq),
            ],
        )

    def _term_kinematic_com(self, ctx, emit):
        lay = ctx.lay
        offset = self.topology._com_offset_arr
        idx = np.arange(lay.T)
        if np.any(offset != 0.0):
            R0, dR0 = ctx.rot
            com = ctx.Q[:, :3] + np.einsum("tij,j->ti", R0, offset)
            Jo = np.einsum("tkij,j->tik", dR0, offset)
            blocks = [
                (lay.cols_p(idx), _eye_blocks(lay.T, 3)),
                (lay.cols_o(idx), Jo),
                (lay.cols_x(idx), -_eye_blocks(lay.T, 3)),
            ]
        else:
            com = ctx.Q[:, :3]
            blocks = [
                (lay.cols_p(idx), _eye_blocks(lay.T, 3)),
                (lay.cols_x(idx), -_eye_blocks(lay.T, 3)),
            ]
        emit(com - ctx.X, blocks)

    def _term_kinematic_ee(self, ctx, emit):
        lay = ctx.lay
        P, D, JP, JD, R0, dR0 = ctx.fk
        idx = np.arange(lay.T)
        for j in range(lay.k):
            le = self.leaf[j]
            r = D[:, le] - ctx.E[:, j]
            blocks = [(lay.cols_e(idx, j), -_eye_blocks(lay.T, 3))]
            if JD is not None:
                blocks.insert(0, (lay.cols_q(idx), JD[:, le]))
            elif ctx.want_jac:
                raise RuntimeError("FK Jacobians requested but missing")
            else:
                blocks.insert(0, (lay.cols_q(idx), np.zeros((lay.T, 3, lay.nq))))
            emit(r, blocks)

    def _term_dynamics_force(self, ctx, emit):
        lay = ctx.lay
        if lay.T < 3:
            emit(np.zeros((0, 3)), [])
            return
        mass = self.topology.body_mass_kg
        h2 = self.h * self.h
        idx = np.arange(1, lay.T - 1)
        C = self.contacts[idx].astype(np.float64)
        sumf = np.einsum("nj,njd->nd", C, ctx.Fg[idx])
        xdd = (ctx.X[idx - 1] - 2.0 * ctx.X[idx] + ctx.X[idx + 1]) / h2
        r = sumf + mass * kinematics.GRAVITY[None, :] - mass * xdd
        I3 = _eye_blocks(idx.size, 3)
        blocks = [
            (lay.cols_x(idx - 1), -(mass / h2) * I3),
            (lay.cols_x(idx), (2.0 * mass / h2) * I3),
            (lay.cols_x(idx + 1), -(mass / h2) * I3),
        ]
        for j in range(lay.k):
            blocks.append((lay.cols_f(idx, j), C[:, j, None, None] * I3))
        emit(r, blocks)

    def _term_dynamics_torque(self, ctx, emit):
        lay = ctx.lay
        if lay.T < 3:
            emit(np.zeros((0, 3)), [])
            return
        h2 = self.h * self.h
        idx = np.arange(1, lay.T - 1)
        C = self.contacts[idx].astype(np.float64)
        R0, dR0 = ctx.rot
        I_box = kinematics.box_inertia(
            self.topology.body_mass_kg,
            ctx.s.body_width,
            self.topology.body_height_m,
            ctx.s.body_length,
        )
        Ri = R0[idx]
        Iw = np.einsum("nab,bc,ndc->nad", Ri, I_box, Ri)
        odd = (ctx.O[idx - 1] - 2.0 * ctx.O[idx] + ctx.O[idx + 1]) / h2
        lever = ctx.E[idx] - ctx.X[idx][:, None, :]
        torque = np.einsum("nj,njd->nd", C, np.cross(lever, ctx.Fg[idx]))
        r = torque - np.einsum("nab,nb->na", Iw, odd)

        sumF = np.einsum("nj,njd->nd", C, ctx.Fg[idx])
        dRi = dR0[idx]
        # d(Iw)/do_k add the rotation derivative through both sides
        dIw = np.einsum("nkab,bc,ndc->nkad", dRi, I_box, Ri)
        dIw = dIw + np.einsum("nab,cb,nkdc->nkad", Ri, I_box, dRi)
        Jo = -np.einsum("nkab,nb->nak", dIw, odd) + (2.0 / h2) * Iw
        Jnb = -(1.0 / h2) * Iw
        blocks = [
            (lay.cols_x(idx), _kernels.skew_many(sumF)),
            (lay.cols_o(idx), Jo),
            (lay.cols_o(idx - 1), Jnb),
            (lay.cols_o(idx + 1), Jnb),
        ]
        for j in range(lay.k):
            cj = C[:, j, None, None]
            blocks.append((lay.cols_e(idx, j), -cj * _kernels.skew_many(ctx.Fg[idx, j])))
            blocks.append((lay.cols_f(idx, j), cj * _kernels.skew_many(lever[:, j])))
        emit(r, blocks)

    def _term_no_slip(self, ctx, emit):
        lay = ctx.lay
        if lay.T < 3:
            emit(np.zeros((0, 3)), [])
            return
        interior = np.arange(1, lay.T - 1)
        for j in range(lay.k):
            stance = interior[self.contacts[interior, j] == 1]
            if stance.size == 0:
                emit(np.zeros((0, 3)), [])
                continue
            I3 = _eye_blocks(stance.size, 3)
            emit(
                ctx.E[stance - 1, j] - ctx.E[stance, j],
                [(lay.cols_e(stance - 1, j), I3), (lay.cols_e(stance, j), -I3)],
            )
            emit(
                ctx.E[stance, j] - ctx.E[stance + 1, j],
                [(lay.cols_e(stance, j), I3), (lay.cols_e(stance + 1, j), -I3)],
            )

    def _term_friction_cone(self, ctx, emit):
        lay = ctx.lay
        mu = self.task.friction_coeff
        for j in range(lay.k):
            stance = np.nonzero(self.contacts[:, j])[0]
            if stance.size == 0:
                emit(np.zeros((0, 1)), [])
                continue
            f = ctx.Fg[stance, j]
            fpar = np.sqrt(f[:, 0] ** 2 + f[:, 2] ** 2)
            slack = fpar - mu * f[:, 1]
            act = slack > 0.0
            if np.any(act):
                rows = stance[act]
                safe = np.maximum(fpar[act], 1e-12)
                J = np.zeros((rows.size, 1, 3))
                J[:, 0, 0] = f[act, 0] / safe
                J[:, 0, 1] = -mu
                J[:, 0, 2] = f[act, 2] / safe
                emit(slack[act, None], [(lay.cols_f(rows, j), J)])
            else:
                emit(np.zeros((0, 1)), [])
            neg = f[:, 1] < 0.0
            if np.any(neg):
                rows = stance[neg]
                J = np.zeros((rows.size, 1, 3))
                J[:, 0, 1] = -1.0
                emit(-f[neg, 1][:, None], [(lay.cols_f(rows, j), J)])
            else:
                emit(np.zeros((0, 1)), [])

    def _term_ground_plane(self, ctx, emit):
        lay = ctx.lay
        for j in range(lay.k):
            stance = np.nonzero(self.contacts[:, j])[0]
            swing = np.nonzero(self.contacts[:, j] == 0)[0]
            if stance.size:
                J = np.zeros((stance.size, 1, 3))
                J[:, 0, 1] = 1.0
                emit(ctx.E[stance, j, 1][:, None], [(lay.cols_e(stance, j), J)])
            else:
                emit(np.zeros((0, 1)), [])
            if swing.size:
                below = swing[ctx.E[swing, j, 1] < 0.0]
                if below.size:
                    J = np.zeros((below.size, 1, 3))
                    J[:, 0, 1] = -1.0
                    emit(-ctx.E[below, j, 1][:, None], [(lay.cols_e(below, j), J)])
                else:
                    emit(np.zeros((0, 1)), [])
            else:
                emit(np.zeros((0, 1)), [])

    def _term_collision(self, ctx, emit):
        lay = ctx.lay
        if not self.pairs:
            emit(np.zeros((0, 1)), [])
            return
        delta = self.task.collision_threshold
        P, D, JP, JD, R0, dR0 = ctx.fk
        a_idx = np.asarray([p[0] for p in self.pairs])
        b_idx = np.asarray([p[1] for p in self.pairs])
        npairs = a_idx.size
        A = P[:, a_idx].reshape(-1, 3)
        B = D[:, a_idx].reshape(-1, 3)
        C2 = P[:, b_idx].reshape(-1, 3)
        E2 = D[:, b_idx].reshape(-1, 3)
        dist, t, u = _kernels.segment_closest_points(A, B, C2, E2)
        act = (dist < delta) & (dist > _EPS_DIST)
        if not np.any(act):
            emit(np.zeros((0, 1)), [])
            return
        rows = np.nonzero(act)[0]
        frames = rows // npairs
        pair = rows % npairs
        pa = A[rows] + t[rows, None] * (B[rows] - A[rows])
        pb = C2[rows] + u[rows, None] * (E2[rows] - C2[rows])
        nhat = (pa - pb) / dist[rows, None]
        r = (delta - dist[rows])[:, None]
        if ctx.want_jac:
            la = a_idx[pair]
            lb = b_idx[pair]
            tt = t[rows, None, None]
            uu = u[rows, None, None]
            Jseg = (
                (1.0 - tt) * JP[frames, la]
                + tt * JD[frames, la]
                - (1.0 - uu) * JP[frames, lb]
                - uu * JD[frames, lb]
            )
            Jd = np.einsum("ni,niw->nw", nhat, Jseg)
            emit(r, [(lay.cols_q(frames), -Jd[:, None, :])])
        else:
            emit(r, [(lay.cols_q(frames), np.zeros((rows.size, 1, lay.nq)))])

    def _term_periodicity(self, ctx, emit):
        lay = ctx.lay
        if not self.task.periodic:
            emit(np.zeros((0, 1)), [])
            return
        width = 3 + lay.n
        r = (ctx.Q[lay.T - 1, 3:] - ctx.Q[0, 3:])[None, :]
        Iw = _eye_blocks(1, width)
        emit(
            r,
            [
                (lay.cols([lay.T - 1], 3, width), Iw),
                (lay.cols([0], 3, width), -Iw),
            ],
            boundary=True,
        )

    # (term key, weight name, residual-square factor, implementation)
    def _terms(self):
        return (
            ("travel", "travel", 0.5, self._term_travel),
            ("turn", "turn", 0.5, self._term_turn),
            ("styleCOM", "styleCOM", 0.5, self._term_style_com),
            ("styleEE", "styleEE", 0.5, self._term_style_ee),
            ("smooth", "smooth", 0.5, self._term_smooth),
            ("kinematicCOM", "kinematic", 1.0, self._term_kinematic_com),
            ("kinematicEE", "kinematic", 1.0, self._term_kinematic_ee),
            ("dynamicsForce", "dynamics", 1.0, self._term_dynamics_force),
            ("dynamicsTorque", "dynamics", 1.0, self._term_dynamics_torque),
            ("noSlip", "noSlip", 1.0, self._term_no_slip),
            ("frictionCone", "frictionCone", 1.0, self._term_friction_cone),
            ("groundPlane", "groundPlane", 1.0, self._term_ground_plane),
            ("collision", "collision", 1.0, self._term_collision),
            ("periodicity", "periodicity", 1.0, self._term_periodicity),
        )

    def _weight_of(self, weight_name):
        if weight_name in self.task.objective_weights:
            return float(self.task.objective_weights[weight_name])
        return float(self.task.penalty_weights[weight_name])

    def evaluate(self, s_vec, m, want_grad=False, want_hess=False, subset=None, want_terms=False):
        """Run the active terms and return the accumulator."""
        ctx = _Context(self, s_vec, m, want_jac=(want_grad or want_hess))
        acc = _Accum(self.layout.n_m, self.hb, want_grad, want_hess)
        for key, wname, factor, fn in self._terms():
            if subset is not None and key not in subset:
                continue
            weight = self._weight_of(wname)
            if weight == 0.0 and not want_terms:
                continue
            fn(ctx, lambda r, blocks, boundary=False: acc.add(key, weight, factor, r, blocks, boundary))
        return acc

    # ---- public evaluation surface --------------------------------------

    def value(self, s_vec, m, subset=None):
        return self.evaluate(s_vec, m, subset=subset).value

    def term_values(self, s_vec, m):
        """Raw (unweighted) term map, sub-terms merged into their public names."""
        acc = self.evaluate(s_vec, m, want_terms=True)
        out = dict(acc.terms)
        out["kinematic"] = out.pop("kinematicCOM", 0.0) + out.pop("kinematicEE", 0.0)
        out["dynamics"] = out.pop("dynamicsForce", 0.0) + out.pop("dynamicsTorque", 0.0)
        return out

    def grad_m(self, s_vec, m, subset=None):
        return self.evaluate(s_vec, m, want_grad=True, subset=subset).grad

    def motion_bundle(self, s_vec, m, want_hess=True, want_terms=False):
        acc = self.evaluate(m=m, s_vec=s_vec, want_grad=True, want_hess=want_hess, want_terms=want_terms)
        return GradientBundle(
            value=acc.value,
            grad_m=acc.grad,
            hess_mm=acc.operator() if want_hess else None,
            term_values=acc.terms if want_terms else None,
        )

    def _fd_steps(self, s_vec):
        return self.fd_step * np.maximum(1.0, np.abs(s_vec))

    def _fd_pair(self, s_vec, i):
        """Perturbed vectors and divisor honoring the box bounds."""
        lo, hi = self._bounds
        step = self._fd_steps(s_vec)[i]
        up = s_vec.copy()
        dn = s_vec.copy()
        if s_vec[i] + step > hi[i]:
            dn[i] -= step
            return up, dn, step
        if s_vec[i] - step < lo[i]:
            up[i] += step
            return up, dn, step
        up[i] += step
        dn[i] -= step
        return up, dn, 2.0 * step

    def grad_s(self, s_vec, m):
        """dF/ds by central differences over the s-dependent terms."""
        s_vec = np.asarray(s_vec, dtype=np.float64)

        def column(i):
            up, dn, div = self._fd_pair(s_vec, i)
            return (self.value(up, m, subset=S_DEPENDENT) - self.value(dn, m, subset=S_DEPENDENT)) / div

        return self._fd_map(column, self.n_s)

    def jac_gs(self, s_vec, m):
        """dG/ds (G = dF/dm) by central differences, one n_m column per s component."""
        s_vec = np.asarray(s_vec, dtype=np.float64)

        def column(i):
            up, dn, div = self._fd_pair(s_vec, i)
            gu = self.grad_m(up, m, subset=S_DEPENDENT)
            gd = self.grad_m(dn, m, subset=S_DEPENDENT)
            return (gu - gd) / div

        cols = self._fd_map(column, self.n_s)
        return np.stack(cols, axis=1) if isinstance(cols, list) else cols.T

    def _fd_map(self, column, count):
        workers = fd_workers()
        if workers <= 1:
            out = [column(i) for i in range(count)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                out = list(pool.map(column, range(count)))
        first = np.asarray(out[0])
        if first.ndim == 0:
            return np.array(out, dtype=np.float64)
        return out

    def bundle(self, s_vec, m, want_s=False, want_terms=False):
        b = self.motion_bundle(s_vec, m, want_terms=want_terms)
        if want_s:
            b.grad_s = self.grad_s(s_vec, m)
            b.jac_gs = self.jac_gs(s_vec, m)
        return b

    # ---- structure handling ----------------------------------------------

    def apply_edit(self, changes):
        self.task.apply_edit(changes)

    def project_s(self, s_vec):
        return kinematics.project_structure(self.topology, s_vec)

    def structure(self, s_vec):
        return StructureParams.from_vector(self.topology, s_vec)

    def init_motion(self, s_vec):
        traj = gait.init_trajectory(self.topology, self.structure(s_vec), self.task)
        return traj.flatten()

    def trajectory(self, m):
        return gait.MotionTrajectory.unflatten(self.layout, m, self.contacts, self.h)


# ---- free-function surface over (topology, s, traj, task) ----------------


def _model_and_point(topology, s, traj, task):
    model = RobotCostModel(topology, task)
    return model, s.to_vector(), traj.flatten()


def eval_objectives(topology, s, traj, task):
    """Raw objective values keyed E_Travel, E_Turn, E_StyleCOM, E_StyleEE, E_Smooth."""
    model, sv, m = _model_and_point(topology, s, traj, task)
    acc = model.evaluate(sv, m, want_terms=True)
    return {OBJECTIVE_KEYS[k]: acc.terms.get(k, 0.0) for k in OBJECTIVE_WEIGHT_NAMES}


def eval_penalties(topology, s, traj, task):
    """Raw penalty values (weights not applied)."""
    model, sv, m = _model_and_point(topology, s, traj, task)
    terms = model.term_values(sv, m)
    return {k: terms.get(k, 0.0) for k in PENALTY_WEIGHT_NAMES}


def eval_total(topology, s, traj, task):
    model, sv, m = _model_and_point(topology, s, traj, task)
    return model.value(sv, m)


def grad_m(topology, s, traj, task):
    model, sv, m = _model_and_point(topology, s, traj, task)
    return model.grad_m(sv, m)


def hess_mm(topology, s, traj, task, damping=0.0):
    """Gauss-Newton Hessian operator; damping is added to the diagonal."""
    model, sv, m = _model_and_point(topology, s, traj, task)
    acc = model.evaluate(sv, m, want_grad=True, want_hess=True)
    op = acc.operator()
    if damping:
        op.band[0, :] += damping
    return op


def grad_s(topology, s, traj, task):
    model, sv, m = _model_and_point(topology, s, traj, task)
    return model.grad_s(sv, m)


def jac_gs(topology, s, traj, task):
    model, sv, m = _model_and_point(topology, s, traj, task)
    return model.jac_gs(sv, m)


def residual_report(topology, s, traj, task):
    """Worst-case physical residuals of a trajectory, in physical units.

    Computed directly from the frames with plain finite differences, not
    through the penalty residual machinery, so it doubles as an independent
    check on the solver output.  Keys: kinematicM, forceN, torqueNM,
    periodicity, slipMPerFrame, frictionExcessN, penetrationM, minClearanceM
    (inf when the robot has no clearance pairs).
    """
    lay = traj.layout()
    M = traj.flatten().reshape(lay.T, lay.n_p)
    Q = M[:, : lay.nq]
    X = M[:, lay.x_off : lay.x_off + 3]
    E = M[:, lay.e_off : lay.e_off + 3 * lay.k].reshape(lay.T, lay.k, 3)
    Fg = M[:, lay.f_off : lay.f_off + 3 * lay.k].reshape(lay.T, lay.k, 3)
    C = np.stack([fr.c for fr in traj.frames]).astype(np.float64)
    P, D, _, _, R0, _ = kinematics.chain_points(topology, s, Q)
    mass = topology.body_mass_kg
    h2 = traj.h * traj.h

    com = np.stack(
        [kinematics.forward_kinematics_com(topology, s, fr.q) for fr in traj.frames]
    )
    kin = float(np.linalg.norm(X - com, axis=1).max())
    for j, leaf in enumerate(topology.end_effectors):
        kin = max(kin, float(np.linalg.norm(E[:, j] - D[:, leaf], axis=1).max()))

    idx = np.arange(1, lay.T - 1)
    sumf = np.einsum("nj,njd->nd", C[idx], Fg[idx])
    xdd = (X[idx - 1] - 2.0 * X[idx] + X[idx + 1]) / h2
    force = float(
        np.linalg.norm(sumf + mass * kinematics.GRAVITY[None, :] - mass * xdd, axis=1).max()
    )

    O = Q[:, 3:6]
    I_box = kinematics.box_inertia(mass, s.body_width, topology.body_height_m, s.body_length)
    Iw = np.einsum("nab,bc,ndc->nad", R0[idx], I_box, R0[idx])
    odd = (O[idx - 1] - 2.0 * O[idx] + O[idx + 1]) / h2
    lever = E[idx] - X[idx][:, None, :]
    tq = np.einsum("nj,njd->nd", C[idx], np.cross(lever, Fg[idx]))
    torque = float(np.linalg.norm(tq - np.einsum("nab,nb->na", Iw, odd), axis=1).max())

    periodicity = 0.0
    if task.periodic:
        periodicity = float(np.abs(Q[lay.T - 1, 3:] - Q[0, 3:]).max())

    slip = 0.0
    for j in range(lay.k):
        both = (C[:-1, j] == 1) & (C[1:, j] == 1)
        if both.any():
            d = np.linalg.norm(E[1:, j][both] - E[:-1, j][both], axis=1)
            slip = max(slip, float(d.max()))

    stance = C == 1
    tang = np.hypot(Fg[:, :, 0], Fg[:, :, 2])
    excess = tang - task.friction_coeff * Fg[:, :, 1]
    friction = float(excess[stance].max()) if stance.any() else 0.0

    penetration = float(np.maximum(0.0, -E[:, :, 1]).max())
    if stance.any():
        penetration = max(penetration, float(np.abs(E[:, :, 1][stance]).max()))

    pairs = topology.collision_pairs()
    clearance = np.inf
    if pairs:
        a_idx = np.asarray([p[0] for p in pairs])
        b_idx = np.asarray([p[1] for p in pairs])
        dist, _, _ = _kernels.segment_closest_points(
            P[:, a_idx].reshape(-1, 3),
            D[:, a_idx].reshape(-1, 3),
            P[:, b_idx].reshape(-1, 3),
            D[:, b_idx].reshape(-1, 3),
        )
        clearance = float(dist.min())

    return {
        "kinematicM": kin,
        "forceN": force,
        "torqueNM": torque,
        "periodicity": periodicity,
        "slipMPerFrame": slip,
        "frictionExcessN": friction,
        "penetrationM": penetration,
        "minClearanceM": clearance,
    }
