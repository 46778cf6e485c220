"""Task cost terms against closed forms and finite differences."""
import numpy as np
import pytest

from morphmotion import gait, kinematics, objective
from morphmotion.kinematics import RobotTopology, StructureParams
from morphmotion.objective import RobotCostModel, TaskSpec


def biped():
    # diagonal feet balance the stand torque about the centered COM
    topology = RobotTopology(
        name="biped",
        link_parents=(-1, 0, -1, 2),
        link_attach=((0.5, 0.0, 0.5), (0.0, 0.0, 0.0), (-0.5, 0.0, -0.5), (0.0, 0.0, 0.0)),
        link_dirs=((0.0, -1.0, 0.0),) * 4,
        act_link=(0, 1, 2, 3),
        act_kinds=("rotary",) * 4,
        end_effectors=(1, 3),
        body_mass_kg=2.0,
        body_height_m=0.05,
    )
    s = StructureParams(
        np.array([0.1, 0.12, 0.1, 0.12]),
        np.array([[1.0, 0.0, 0.0]] * 4),
        0.2,
        0.3,
    )
    return topology, s


def biped_task(**overrides):
    kwargs = dict(
        name="hop",
        desired_travel=(0.0, 0.0, 0.1),
        desired_turn=0.1,
        gait=gait.make_footfall("trot", 8, 2, duty_factor=0.5),
    )
    kwargs.update(overrides)
    return TaskSpec(**kwargs)


def perturbed_point(model, s, scale=0.05, seed=0):
    """A non-degenerate evaluation point with active one-sided penalties."""
    rng = np.random.default_rng(seed)
    sv = s.to_vector()
    m = model.init_motion(sv)
    m = m + scale * rng.standard_normal(m.shape)
    M = m.reshape(model.layout.T, model.layout.n_p)
    # large tangential forces push stance frames outside the friction cone
    F = M[:, model.layout.f_off :].reshape(model.layout.T, model.layout.k, 3)
    F[:, :, 0] += 3.0
    F[:, :, 1] = np.abs(F[:, :, 1]) + 0.5
    F[0, 0, 1] = -0.4  # one pulling foot exercises the unilateral branch
    return sv, M.ravel()


def split(model, m):
    lay = model.layout
    M = m.reshape(lay.T, lay.n_p)
    Q = M[:, : lay.nq]
    X = M[:, lay.x_off : lay.x_off + 3]
    E = M[:, lay.e_off : lay.e_off + 3 * lay.k].reshape(lay.T, lay.k, 3)
    F = M[:, lay.f_off :].reshape(lay.T, lay.k, 3)
    return Q, X, E, F


def raw_term(model, sv, m, key):
    return model.evaluate(sv, m, want_terms=True).terms[key]


# ---- closed-form term values ------------------------------------------------


def test_travel_term_value():
    topology, s = biped()
    model = RobotCostModel(topology, biped_task())
    sv, m = perturbed_point(model, s)
    _, X, _, _ = split(model, m)
    want = 0.5 * np.sum((X[-1] - X[0] - model.task.desired_travel) ** 2)
    assert raw_term(model, sv, m, "travel") == pytest.approx(want, rel=1e-12)


def test_turn_term_value():
    topology, s = biped()
    model = RobotCostModel(topology, biped_task())
    sv, m = perturbed_point(model, s)
    Q, _, _, _ = split(model, m)
    tau_t, _ = kinematics.yaw_and_gradient(Q[-1, 3:6])
    tau_0, _ = kinematics.yaw_and_gradient(Q[0, 3:6])
    want = 0.5 * (tau_t - tau_0 - model.task.desired_turn) ** 2
    assert raw_term(model, sv, m, "turn") == pytest.approx(want, rel=1e-12)


def test_style_terms_skip_non_finite_components():
    topology, s = biped()
    T = 8
    com_tgt = np.full((T, 3), np.nan)
    com_tgt[:, 1] = 0.25  # only height is pinned
    ee_tgt = np.full((T, 2, 3), np.nan)
    ee_tgt[3, 1, :] = [0.1, 0.05, 0.0]  # one foot, one frame
    task = biped_task(style_com=com_tgt, style_ee=ee_tgt)
    model = RobotCostModel(topology, task)
    sv, m = perturbed_point(model, s)
    _, X, E, _ = split(model, m)
    want_com = 0.5 * np.sum((X[:, 1] - 0.25) ** 2)
    want_ee = 0.5 * np.sum((E[3, 1] - ee_tgt[3, 1]) ** 2)
    assert raw_term(model, sv, m, "styleCOM") == pytest.approx(want_com, rel=1e-12)
    assert raw_term(model, sv, m, "styleEE") == pytest.approx(want_ee, rel=1e-12)


def test_smooth_and_periodicity_values():
    topology, s = biped()
    model = RobotCostModel(topology, biped_task())
    sv, m = perturbed_point(model, s)
    Q, _, _, _ = split(model, m)
    want_smooth = 0.5 * np.sum((Q[:-2] - 2.0 * Q[1:-1] + Q[2:]) ** 2)
    want_per = np.sum((Q[-1, 3:] - Q[0, 3:]) ** 2)
    assert raw_term(model, sv, m, "smooth") == pytest.approx(want_smooth, rel=1e-12)
    assert raw_term(model, sv, m, "periodicity") == pytest.approx(want_per, rel=1e-12)


def test_ground_plane_is_one_sided_for_swing_feet():
    topology, s = biped()
    model = RobotCostModel(topology, biped_task())
    sv, m = perturbed_point(model, s)
    _, _, E, _ = split(model, m)
    C = model.contacts
    want = 0.0
    for j in range(2):
        want += np.sum(E[C[:, j] == 1, j, 1] ** 2)
        swing_y = E[C[:, j] == 0, j, 1]
        want += np.sum(np.minimum(swing_y, 0.0) ** 2)
    assert raw_term(model, sv, m, "groundPlane") == pytest.approx(want, rel=1e-12)


def test_no_slip_vanishes_for_stationary_stance_feet():
    # zero travel keeps the starting feet put; any travel drags them along
    topology, s = biped()
    task = biped_task(desired_travel=(0.0, 0.0, 0.0), gait=gait.stand_pattern(8, 2))
    model = RobotCostModel(topology, task)
    sv = s.to_vector()
    m = model.init_motion(sv)
    assert raw_term(model, sv, m, "noSlip") == pytest.approx(0.0, abs=1e-20)
    # shifting one stance foot at one frame turns the penalty on
    lay = model.layout
    stance0 = np.nonzero(model.contacts[1 : lay.T - 1, 0])[0] + 1
    i = stance0[len(stance0) // 2]
    m2 = m.copy()
    m2[lay.cols_e([i], 0).ravel()[0]] += 0.01
    assert raw_term(model, sv, m2, "noSlip") > 1e-5


def test_friction_cone_inactive_inside_the_cone():
    topology, s = biped()
    model = RobotCostModel(topology, biped_task())
    sv = s.to_vector()
    m = model.init_motion(sv)  # purely vertical stance forces
    assert raw_term(model, sv, m, "frictionCone") == 0.0
    sv2, m2 = perturbed_point(model, s)
    assert raw_term(model, sv2, m2, "frictionCone") > 0.1


def test_collision_term_tracks_clearance_threshold():
    topology, s = biped()
    # rest leg separation is 0.36, so delta = 0.5 puts every pair in violation
    close = biped_task(collision_threshold=0.5)
    far = biped_task(collision_threshold=0.01)
    sv = s.to_vector()
    model_c = RobotCostModel(topology, close)
    m = model_c.init_motion(sv)
    assert raw_term(model_c, sv, m, "collision") > 1e-4
    model_f = RobotCostModel(topology, far)
    assert raw_term(model_f, sv, m, "collision") == 0.0


def test_value_is_weighted_sum_of_raw_terms():
    topology, s = biped()
    task = biped_task(
        objective_weights={"travel": 2.0, "smooth": 0.5},
        penalty_weights={"kinematic": 500.0},
    )
    model = RobotCostModel(topology, task)
    sv, m = perturbed_point(model, s)
    terms = model.term_values(sv, m)
    weights = dict(task.objective_weights)
    weights.update(task.penalty_weights)
    want = sum(weights[k] * v for k, v in terms.items())
    assert model.value(sv, m) == pytest.approx(want, rel=1e-12)
    # merged names cover the public weight vocabulary exactly
    assert set(terms) == set(objective.OBJECTIVE_WEIGHT_NAMES) | set(
        objective.PENALTY_WEIGHT_NAMES
    )


def test_free_function_surface_reports_raw_values():
    topology, s = biped()
    task = biped_task(penalty_weights={"groundPlane": 123.0})
    model = RobotCostModel(topology, task)
    sv, m = perturbed_point(model, s)
    traj = model.trajectory(m)
    obj = objective.eval_objectives(topology, s, traj, task)
    assert set(obj) == {"E_Travel", "E_Turn", "E_StyleCOM", "E_StyleEE", "E_Smooth"}
    assert obj["E_Travel"] == pytest.approx(raw_term(model, sv, m, "travel"), rel=1e-12)
    pen = objective.eval_penalties(topology, s, traj, task)
    # raw values: scaling the weight must not change the report
    assert pen["groundPlane"] == pytest.approx(
        raw_term(model, sv, m, "groundPlane"), rel=1e-12
    )
    assert objective.eval_total(topology, s, traj, task) == pytest.approx(
        model.value(sv, m), rel=1e-12
    )


# ---- derivative oracles ------------------------------------------------------

TERM_KEYS = (
    "travel",
    "turn",
    "styleCOM",
    "styleEE",
    "smooth",
    "kinematicCOM",
    "kinematicEE",
    "dynamicsForce",
    "dynamicsTorque",
    "noSlip",
    "frictionCone",
    "groundPlane",
    "collision",
    "periodicity",
)


@pytest.mark.parametrize("key", TERM_KEYS)
def test_term_gradient_matches_finite_differences(key):
    topology, s = biped()
    task = biped_task(
        style_com=np.full((8, 3), 0.2),
        style_ee=np.zeros((8, 2, 3)),
        collision_threshold=0.5,
    )
    model = RobotCostModel(topology, task)
    sv, m = perturbed_point(model, s, seed=3)
    grad = model.evaluate(sv, m, want_grad=True, subset={key}).grad
    rng = np.random.default_rng(17)
    coords = rng.choice(m.size, size=60, replace=False)
    step = 1e-7
    worst = 0.0
    for i in coords:
        up = m.copy()
        dn = m.copy()
        up[i] += step
        dn[i] -= step
        fd = (model.value(sv, up, subset={key}) - model.value(sv, dn, subset={key})) / (2 * step)
        worst = max(worst, abs(fd - grad[i]))
    scale = max(1.0, np.abs(grad).max())
    assert worst / scale < 1e-6


def test_gauss_newton_hessian_exact_for_linear_residuals():
    topology, s = biped()
    task = biped_task(style_com=np.full((8, 3), 0.2))
    model = RobotCostModel(topology, task)
    sv, m = perturbed_point(model, s, seed=5)
    # terms whose residuals are linear in m, where GN equals the true Hessian
    subset = {"travel", "styleCOM", "smooth", "periodicity", "kinematicCOM",
              "dynamicsForce", "noSlip"}
    acc = model.evaluate(sv, m, want_grad=True, want_hess=True, subset=subset)
    H = acc.operator().toarray()
    np.testing.assert_allclose(H, H.T, atol=1e-12)
    step = 1e-6
    rng = np.random.default_rng(9)
    for _ in range(4):
        v = rng.standard_normal(m.size)
        gu = model.evaluate(sv, m + step * v, want_grad=True, subset=subset).grad
        gd = model.evaluate(sv, m - step * v, want_grad=True, subset=subset).grad
        fd = (gu - gd) / (2 * step)
        np.testing.assert_allclose(H @ v, fd, rtol=1e-5, atol=1e-5)


def test_structure_gradient_covers_every_s_dependent_term():
    # central differences of the FULL objective over s must agree with the
    # model's shortcut that differentiates only the s-dependent terms
    topology, s = biped()
    task = biped_task(collision_threshold=0.5)
    model = RobotCostModel(topology, task)
    sv, m = perturbed_point(model, s, seed=11)
    shortcut = model.grad_s(sv, m)
    full = np.zeros_like(shortcut)
    for i in range(sv.size):
        up, dn, div = model._fd_pair(sv, i)
        full[i] = (model.value(up, m) - model.value(dn, m)) / div
    np.testing.assert_allclose(shortcut, full, rtol=1e-6, atol=1e-9)


def test_structure_jacobian_of_motion_gradient():
    topology, s = biped()
    model = RobotCostModel(topology, biped_task())
    sv, m = perturbed_point(model, s, seed=13)
    J = model.jac_gs(sv, m)
    assert J.shape == (model.n_m, model.n_s)
    i = 2  # a link length
    up, dn, div = model._fd_pair(sv, i)
    fd = (model.grad_m(up, m) - model.grad_m(dn, m)) / div
    np.testing.assert_allclose(J[:, i], fd, rtol=1e-8, atol=1e-10)


# ---- task validation and edits ------------------------------------------------


def test_task_rejects_bad_weights_and_targets():
    with pytest.raises(ValueError, match="unknown weight names"):
        biped_task(objective_weights={"glide": 1.0})
    with pytest.raises(ValueError, match=">= 0"):
        biped_task(penalty_weights={"kinematic": -1.0})
    with pytest.raises(ValueError, match="friction"):
        biped_task(friction_coeff=-0.5)
    with pytest.raises(ValueError, match="task weight"):
        biped_task(task_weight=1.5)


def test_apply_edit_changes_targets_and_weights():
    task = biped_task()
    task.apply_edit(
        {
            "desiredTravel": [0.0, 0.0, 0.5],
            "desiredTurn": -0.2,
            "objectiveWeights": {"travel": 3.0},
            "penaltyWeights": {"collision": 0.0},
            "taskWeight": 0.25,
        }
    )
    np.testing.assert_allclose(task.desired_travel, [0.0, 0.0, 0.5])
    assert task.desired_turn == -0.2
    assert task.objective_weights["travel"] == 3.0
    assert task.penalty_weights["collision"] == 0.0
    assert task.task_weight == 0.25
    with pytest.raises(ValueError, match="cannot edit"):
        task.apply_edit({"gait": None})
    with pytest.raises(ValueError, match="unknown objective weight"):
        task.apply_edit({"objectiveWeights": {"hop": 1.0}})
    with pytest.raises(ValueError, match="task weight"):
        task.apply_edit({"taskWeight": -0.1})


def test_edit_changes_the_objective_value():
    topology, s = biped()
    model = RobotCostModel(topology, biped_task())
    sv, m = perturbed_point(model, s)
    before = model.value(sv, m)
    travel_raw = raw_term(model, sv, m, "travel")
    model.apply_edit({"objectiveWeights": {"travel": 5.0}})
    assert model.value(sv, m) == pytest.approx(before + 4.0 * travel_raw, rel=1e-12)


# ---- residual report -----------------------------------------------------------


def test_residual_report_on_a_resting_stand():
    topology, s = biped()
    task = biped_task(
        desired_travel=(0.0, 0.0, 0.0),
        desired_turn=0.0,
        gait=gait.stand_pattern(6, 2),
    )
    traj = gait.init_trajectory(topology, s, task)
    rep = objective.residual_report(topology, s, traj, task)
    assert rep["kinematicM"] < 1e-12
    assert rep["forceN"] < 1e-10
    assert rep["torqueNM"] < 1e-10  # symmetric feet, centered weight
    assert rep["periodicity"] == 0.0
    assert rep["slipMPerFrame"] == 0.0
    assert rep["frictionExcessN"] < 0.0  # vertical forces sit inside the cone
    assert rep["penetrationM"] == 0.0
    assert rep["minClearanceM"] == pytest.approx(np.hypot(0.2, 0.3), abs=1e-12)


def test_fd_worker_env(monkeypatch):
    monkeypatch.setenv("MORPHMOTION_THREADS", "4")
    assert objective.fd_workers() == 4
    monkeypatch.setenv("MORPHMOTION_THREADS", "bogus")
    assert objective.fd_workers() == 1
    monkeypatch.delenv("MORPHMOTION_THREADS")
    assert objective.fd_workers() == 1
