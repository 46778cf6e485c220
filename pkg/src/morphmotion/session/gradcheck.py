"""Randomized derivative verification.

One harness drives both the `check-gradients` CLI subcommand and the
correctness tests: finite-difference checks of the motion gradient and of
the Gauss-Newton Hessian (on residual configurations where it is the exact
Hessian), the adjoint gradient against the dense sensitivity path through
dm/ds, and the reduced gradient against finite differences of the inner
solve itself.
"""
import numpy as np

from .. import gait, kinematics, objective
from .._linalg import FactorizationError
from ..design_opt import adjoint_gradient_model
from ..motion_opt import MotionOptSettings, optimize_motion_model

LEG_QUADRANTS = ((1, 1), (-1, 1), (1, -1), (-1, -1), (0, 1), (0, -1))


def rel_error(approx, ref):
    """max_i |approx_i - ref_i| / max(1, ||ref||_inf)."""
    approx = np.asarray(approx, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if approx.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(ref))))
    return float(np.max(np.abs(approx - ref))) / scale


def random_topology(rng, n_legs=None, max_links=3, force_rotary=False):
    """A small random legged tree: 2-4 legs, 1..max_links chained links each."""
    if n_legs is None:
        n_legs = int(rng.integers(2, 5))
    parents = []
    attach = []
    dirs = []
    act_link = []
    act_kinds = []
    ee = []
    for leg in range(n_legs):
        sx, sz = LEG_QUADRANTS[leg % len(LEG_QUADRANTS)]
        links = int(rng.integers(1, max_links + 1))
        for d in range(links):
            idx = len(parents)
            parents.append(-1 if d == 0 else idx - 1)
            attach.append((sx, float(rng.uniform(-0.03, 0.0)), sz))
            v = rng.normal(0.0, 0.35, 3) + np.array([0.0, -1.0, 0.0])
            while v[1] > -0.05:  # keep legs pointing down so rest poses can stand
                v = rng.normal(0.0, 0.35, 3) + np.array([0.0, -1.0, 0.0])
            dirs.append(tuple(v / np.linalg.norm(v)))
            act_link.append(idx)
            if force_rotary or rng.random() < 0.8:
                act_kinds.append(kinematics.ROTARY)
            else:
                act_kinds.append(kinematics.LINEAR)
        ee.append(len(parents) - 1)
    return kinematics.RobotTopology(
        name=f"random{n_legs}leg",
        link_parents=tuple(parents),
        link_attach=tuple(attach),
        link_dirs=tuple(dirs),
        act_link=tuple(act_link),
        act_kinds=tuple(act_kinds),
        end_effectors=tuple(ee),
        body_mass_kg=float(rng.uniform(0.5, 6.0)),
        body_height_m=float(rng.uniform(0.04, 0.12)),
        body_com_offset=(
            (0.0, 0.0, 0.0) if rng.random() < 0.5 else tuple(rng.normal(0.0, 0.02, 3))
        ),
    )


def random_structure(rng, topology):
    g, n = topology.g, topology.n
    act = rng.normal(0.0, 1.0, (n, 3))
    act /= np.linalg.norm(act, axis=1, keepdims=True)
    act *= rng.uniform(0.5, 1.5, (n, 1))
    s = kinematics.StructureParams(
        link_lengths=rng.uniform(0.06, 0.22, g),
        actuator_params=act,
        body_width=float(rng.uniform(0.1, 0.35)),
        body_length=float(rng.uniform(0.12, 0.4)),
    )
    return kinematics.validate_structure(topology, s)


def random_pattern(rng, T, k):
    """Random contact matrix with at least one stance and one swing per foot."""
    contacts = (rng.random((T, k)) < 0.6).astype(np.int64)
    for j in range(k):
        if contacts[:, j].sum() == 0:
            contacts[int(rng.integers(0, T)), j] = 1
        if contacts[:, j].sum() == T:
            contacts[int(rng.integers(0, T)), j] = 0
    return gait.FootfallPattern(
        style="custom",
        contacts=contacts,
        cycle_duration=float(rng.uniform(0.5, 1.2)),
        duty_factor=float(np.mean(contacts)),
    )


def random_task(rng, topology, T=8):
    style_com = None
    if rng.random() < 0.5:
        style_com = rng.normal(0.15, 0.05, (T, 3))
        style_com[rng.random(T) < 0.3] = np.nan
    style_ee = None
    if rng.random() < 0.3:
        style_ee = rng.normal(0.0, 0.1, (T, topology.k, 3))
        style_ee[rng.random((T, topology.k)) < 0.5] = np.nan
    ow = {name: float(rng.uniform(0.3, 3.0)) for name in objective.OBJECTIVE_WEIGHT_NAMES}
    pw = {
        name: base * float(rng.uniform(0.3, 3.0))
        for name, base in objective.DEFAULT_PENALTY_WEIGHTS.items()
    }
    return objective.TaskSpec(
        name="random",
        desired_travel=rng.normal(0.0, 0.05, 3),
        desired_turn=float(rng.normal(0.0, 0.4)),
        gait=random_pattern(rng, T, topology.k),
        style_com=style_com,
        style_ee=style_ee,
        friction_coeff=float(rng.uniform(0.3, 1.0)),
        collision_threshold=float(rng.uniform(0.01, 0.05)),
        objective_weights=ow,
        penalty_weights=pw,
    )


def random_motion(rng, model, s_vec):
    """Generic point in motion space: feasible start plus per-group noise."""
    m = model.init_motion(s_vec)
    lay = model.layout
    rows = np.arange(lay.T)
    o_scale = float(rng.choice([0.0, 0.3, 1.2], p=[0.1, 0.7, 0.2]))
    mass_g = model.topology.body_mass_kg * 9.81

    def bump(cols, scale):
        if scale > 0.0:
            m[cols.ravel()] += rng.normal(0.0, scale, cols.size)

    bump(lay.cols(rows, 0, 3), 0.05)
    bump(lay.cols_o(rows), o_scale)
    bump(lay.cols(rows, 6, lay.nq - 6), 0.4)
    bump(lay.cols_x(rows), 0.04)
    for j in range(lay.k):
        bump(lay.cols_e(rows, j), 0.04)
        stance = np.nonzero(model.contacts[:, j])[0]
        if stance.size:
            bump(lay.cols_f(stance, j), 0.5 * mass_g)
        if rng.random() < 0.5:
            swing = np.nonzero(model.contacts[:, j] == 0)[0]
            if swing.size:
                bump(lay.cols_f(swing, j), 5.0)
    return m


def random_instance(rng, T=8, n_legs=None, max_links=3, force_rotary=False):
    """(model, s_vec, m) triple for one randomized check."""
    topology = random_topology(rng, n_legs=n_legs, max_links=max_links, force_rotary=force_rotary)
    s = random_structure(rng, topology)
    task = random_task(rng, topology, T=T)
    model = objective.RobotCostModel(topology, task)
    s_vec = s.to_vector()
    return model, s_vec, random_motion(rng, model, s_vec)


def fd_grad_m(model, s_vec, m, step=1e-6, coords=None):
    """Central differences of F over the listed motion coordinates."""
    idx = np.arange(m.size) if coords is None else np.asarray(coords)
    out = np.zeros(idx.size)
    for r, i in enumerate(idx):
        d = step * max(1.0, abs(m[i]))
        hi = m.copy()
        lo = m.copy()
        hi[i] += d
        lo[i] -= d
        out[r] = (model.value(s_vec, hi) - model.value(s_vec, lo)) / (2.0 * d)
    return out


def check_gradient(model, s_vec, m, step=1e-6, coords=None):
    """Max relative error of the analytic motion gradient against FD."""
    ga = model.grad_m(s_vec, m)
    if coords is not None:
        ga = ga[np.asarray(coords)]
    gfd = fd_grad_m(model, s_vec, m, step=step, coords=coords)
    return rel_error(ga, gfd)


QUADRATIC_ZERO_WEIGHTS = {
    "objectiveWeights": {"turn": 0.0},
    "penaltyWeights": {
        "kinematic": 0.0,
        "dynamics": 0.0,
        "frictionCone": 0.0,
        "groundPlane": 0.0,
        "collision": 0.0,
    },
}


def quadratic_residual_task(task):
    """Copy of the task keeping only terms whose residuals are linear in m.

    On that configuration the Gauss-Newton matrix is the exact Hessian, so
    finite differences of the gradient are a true oracle for it.
    """
    import copy

    out = copy.deepcopy(task)
    out.apply_edit(QUADRATIC_ZERO_WEIGHTS)
    return out


def check_hessian(model, s_vec, m, rng, directions=6, step=1e-6):
    """Hessian action H v against FD of the gradient along random directions."""
    bundle = model.motion_bundle(s_vec, m)
    delta = step * max(1.0, float(np.max(np.abs(m))))
    worst = 0.0
    for _ in range(directions):
        v = rng.normal(0.0, 1.0, m.size)
        v /= np.linalg.norm(v)
        hv = bundle.hess_mm.matvec(v)
        gp = model.grad_m(s_vec, m + delta * v)
        gm = model.grad_m(s_vec, m - delta * v)
        worst = max(worst, rel_error(hv, (gp - gm) / (2.0 * delta)))
    return worst


def check_adjoint_vs_dense(model, s_vec, m, damping=1e-8):
    """Adjoint dF/ds against the dense path through dm/ds = -H^-1 dG/ds."""
    bundle = model.bundle(s_vec, m, want_s=True)
    op = bundle.hess_mm
    current = damping
    lam = None
    for _ in range(10):
        try:
            op.factor(current)
            lam = op.solve(-bundle.grad_m, kind="adjoint_solves")
            break
        except FactorizationError:
            current = current * 10.0 if current > 0 else 1e-12
    if lam is None:
        raise FactorizationError("Hessian stayed singular during adjoint check")
    adj = bundle.jac_gs.T @ lam + bundle.grad_s
    H = op.toarray() + current * np.eye(m.size)
    dm_ds = -np.linalg.solve(H, bundle.jac_gs)
    dense = bundle.grad_s + dm_ds.T @ bundle.grad_m
    return rel_error(adj, dense)


def check_reduced_gradient(model, s_vec, fd_step=1e-4, tol_scale=1e-8):
    """Adjoint reduced gradient vs FD of [solve motion, then evaluate] over s."""
    settings = MotionOptSettings(
        max_iterations=3000, grad_tolerance=tol_scale * model.n_m
    )
    res = optimize_motion_model(model, s_vec, model.init_motion(s_vec), settings)
    # the FD probe differentiates min_m F; it is only meaningful at inner
    # optimality, so fail loudly when the solve truncated early
    if not res.converged:
        raise RuntimeError("inner solve did not reach tolerance; reduced FD undefined")
    m_star = res.m
    dfds, _ = adjoint_gradient_model(model, s_vec, m_star, damping=1e-10)

    lo, hi = model._bounds
    fd = np.zeros(model.n_s)
    for i in range(model.n_s):
        d = fd_step * max(1.0, abs(s_vec[i]))
        up = np.clip(s_vec[i] + d, lo[i], hi[i])
        dn = np.clip(s_vec[i] - d, lo[i], hi[i])
        sp = s_vec.copy()
        sp[i] = up
        f_up = optimize_motion_model(model, sp, m_star, settings).f_history[-1]
        sp[i] = dn
        f_dn = optimize_motion_model(model, sp, m_star, settings).f_history[-1]
        fd[i] = (f_up - f_dn) / (up - dn)
    return rel_error(dfds, fd)


def run_check(topology, s, task, seed=0, coord_limit=300, hess_directions=4):
    """The check-gradients suite over one concrete robot and task.

    Returns a report dict; `ok` is True when every suite is under its
    threshold (gradient 1e-5, Hessian 1e-6, adjoint vs dense 1e-8 for
    small structure spaces, 1e-6 once roundoff from the dense solve of a
    full-size robot dominates the comparison).
    """
    rng = np.random.default_rng(seed)
    model = objective.RobotCostModel(topology, task)
    s_vec = s.to_vector()
    m = random_motion(rng, model, s_vec)

    n_m = model.n_m
    if n_m > coord_limit:
        coords = rng.choice(n_m, size=coord_limit, replace=False)
        coords.sort()
    else:
        coords = None
    grad_err = check_gradient(model, s_vec, m, coords=coords)

    qmodel = objective.RobotCostModel(topology, quadratic_residual_task(task))
    hess_err = check_hessian(qmodel, s_vec, m, rng, directions=hess_directions)

    adj_err = check_adjoint_vs_dense(model, s_vec, m)

    adj_tol = 1e-8 if model.n_s <= 10 else 1e-6
    report = {
        "gradM": grad_err,
        "hessMM": hess_err,
        "adjointVsDense": adj_err,
        "adjointTol": adj_tol,
        "coordsChecked": int(coord_limit if coords is not None else n_m),
        "nM": int(n_m),
        "nS": int(model.n_s),
        "seed": int(seed),
    }
    report["ok"] = bool(grad_err < 1e-5 and hess_err < 1e-6 and adj_err < adj_tol)
    return report
