"""Outer structure loop: adjoint gradient, L-BFGS, line search, steering."""
import threading
import time

import numpy as np
import pytest

from morphmotion import gait, kinematics
from morphmotion._linalg import DenseSymmetric
from morphmotion.design_opt import (
    CoDesignResult,
    DesignOptSettings,
    RunControl,
    adjoint_gradient_model,
    co_optimize,
    co_optimize_model,
    co_optimize_multi,
    lbfgs_direction,
    update_line_search,
)
from morphmotion.motion_opt import MotionOptSettings
from morphmotion.objective import GradientBundle
from morphmotion.session import gradcheck

from test_objective import biped, biped_task


class ScalarToy:
    """F = 1/2 (m - s)^2 + 1/2 (s - target)^2 over scalar m and s."""

    n_s = 1
    n_m = 1

    def __init__(self, target=2.0):
        self.target = target

    def value(self, s_vec, m):
        return 0.5 * float((m[0] - s_vec[0]) ** 2) + 0.5 * float((s_vec[0] - self.target) ** 2)

    def motion_bundle(self, s_vec, m, want_hess=True, want_terms=False):
        return GradientBundle(
            value=self.value(s_vec, m),
            grad_m=np.array([m[0] - s_vec[0]]),
            hess_mm=DenseSymmetric(np.array([[1.0]])) if want_hess else None,
        )

    def grad_s(self, s_vec, m):
        return np.array([-(m[0] - s_vec[0]) + (s_vec[0] - self.target)])

    def jac_gs(self, s_vec, m):
        return np.array([[-1.0]])

    def project_s(self, s_vec):
        return np.asarray(s_vec, dtype=np.float64).copy()

    def init_motion(self, s_vec):
        return np.zeros(1)

    def apply_edit(self, changes):
        self.target = float(changes["target"])


class HalfQuadratic(ScalarToy):
    """F = 1/2 (m - s)^2 + 1/2 s^2: on the manifold m = s, dF/ds = s."""

    def grad_s(self, s_vec, m):
        return np.array([-(m[0] - s_vec[0]) + s_vec[0]])


def test_adjoint_gradient_on_the_manifold_is_exact():
    model = HalfQuadratic()
    dfds, bundle = adjoint_gradient_model(model, np.array([3.0]), np.array([3.0]), damping=0.0)
    assert dfds[0] == 3.0  # exact, not approximately
    assert bundle.grad_s is not None and bundle.jac_gs is not None


def test_adjoint_equals_dense_reduced_gradient_on_small_robot():
    rng = np.random.default_rng(12)
    model, s_vec, m = gradcheck.random_instance(rng, T=8, n_legs=2, max_links=2)
    assert model.n_s <= 14
    err = gradcheck.check_adjoint_vs_dense(model, s_vec, m)
    assert err < 1e-8


def test_one_adjoint_solve_per_outer_iteration():
    model = ScalarToy()
    settings = DesignOptSettings(max_design_iterations=25,
                                 motion=MotionOptSettings(max_iterations=40))
    res = co_optimize_model(model, np.array([5.0]), settings)
    assert res.iterations >= 1
    assert res.stats.adjoint_solves == res.iterations


def test_toy_co_design_reaches_the_joint_optimum():
    model = ScalarToy(target=2.0)
    res = co_optimize_model(model, np.array([5.0]),
                            DesignOptSettings(max_design_iterations=50))
    assert abs(res.s_star[0] - 2.0) < 1e-4
    assert abs(res.m_star[0][0] - 2.0) < 1e-4
    f = [rec[1] for rec in res.f_history[:-1]]
    assert all(b < a for a, b in zip(f, f[1:]))


def test_lbfgs_empty_history_returns_gradient():
    g = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(lbfgs_direction([], g), g)


def test_lbfgs_satisfies_the_secant_equation():
    # the implied inverse Hessian must map the newest dy back onto its ds
    rng = np.random.default_rng(8)
    ds = rng.standard_normal(5)
    dy = ds + 0.3 * rng.standard_normal(5)
    if ds @ dy < 0:
        dy = -dy
    d = lbfgs_direction([(ds, dy)], dy)
    np.testing.assert_allclose(d, ds, rtol=1e-12, atol=1e-12)


def test_lbfgs_directions_stay_descent():
    rng = np.random.default_rng(21)
    B = rng.standard_normal((6, 6))
    A = B @ B.T + 1.0 * np.eye(6)
    history = []
    for _ in range(10):
        ds = rng.standard_normal(6)
        history.append((ds, A @ ds))
        g = rng.standard_normal(6)
        assert lbfgs_direction(history, g, memory=8) @ g > 0.0


def test_lbfgs_drops_curvature_violating_pairs():
    g = np.array([1.0, 1.0])
    bad = [(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))]  # ds . dy < 0
    np.testing.assert_array_equal(lbfgs_direction(bad, g), g)


def test_line_search_rejection_returns_the_incumbent_untouched():
    class Uphill(ScalarToy):
        def value(self, s_vec, m):
            return 7.0

        def motion_bundle(self, s_vec, m, want_hess=True, want_terms=False):
            return GradientBundle(
                value=7.0,
                grad_m=np.zeros(1),
                hess_mm=DenseSymmetric(np.eye(1)) if want_hess else None,
            )

        def grad_s(self, s_vec, m):
            return np.zeros(1)

        def jac_gs(self, s_vec, m):
            return np.zeros((1, 1))

    model = Uphill()
    s = np.array([1.5])
    m = np.array([1.5])
    accepted, s_out, m_out, f_out, step = update_line_search(
        model, s, m, 7.0, np.array([1.0]), DesignOptSettings()
    )
    assert not accepted
    assert s_out is s and m_out is m  # caller state, bit for bit
    assert f_out == 7.0 and step == 0.0


def test_flat_objective_stalls_without_moving():
    class Flat(ScalarToy):
        def value(self, s_vec, m):
            return 7.0

        def motion_bundle(self, s_vec, m, want_hess=True, want_terms=False):
            return GradientBundle(
                value=7.0,
                grad_m=np.zeros(1),
                hess_mm=DenseSymmetric(np.eye(1)) if want_hess else None,
            )

        def grad_s(self, s_vec, m):
            return np.zeros(1)

        def jac_gs(self, s_vec, m):
            return np.zeros((1, 1))

    model = Flat()
    res = co_optimize_model(model, np.array([1.5]), DesignOptSettings(max_design_iterations=10))
    assert res.termination == "stalled"
    np.testing.assert_array_equal(res.s_star, [1.5])
    np.testing.assert_array_equal(res.m_star[0], [0.0])  # init motion, never moved


def test_threshold_termination():
    model = ScalarToy(target=2.0)
    res = co_optimize_model(model, np.array([2.05]),
                            DesignOptSettings(threshold=1e-3, max_design_iterations=50))
    assert res.termination == "threshold"
    assert res.final_value < 1e-3


def test_settings_validation():
    with pytest.raises(ValueError, match="max_design_iterations"):
        DesignOptSettings(max_design_iterations=0)
    with pytest.raises(ValueError, match="lbfgs_memory"):
        DesignOptSettings(lbfgs_memory=0)
    with pytest.raises(ValueError, match="max_line_search_n"):
        DesignOptSettings(max_line_search_n=0)
    with pytest.raises(ValueError, match="fd_step"):
        DesignOptSettings(fd_step=0.0)
    with pytest.raises(ValueError, match="motion_refresh_interval"):
        DesignOptSettings(motion_refresh_interval=0)
    with pytest.raises(ValueError, match="line_search_motion_iterations"):
        DesignOptSettings(line_search_motion_iterations=0)
    one = DesignOptSettings(line_search_motion_iterations=5,
                            inner_max_line_search=7).one_step_motion()
    assert one.max_iterations == 5
    assert one.max_line_search == 7


# ---- steering -----------------------------------------------------------------


def test_run_control_checkpoint_blocks_while_paused():
    control = RunControl()
    control.pause()
    out = {}

    def worker():
        out["result"] = control.checkpoint()

    t = threading.Thread(target=worker)
    t.start()
    t.join(timeout=0.2)
    assert t.is_alive()  # still parked on the pause
    control.resume()
    t.join(timeout=2.0)
    assert not t.is_alive()
    assert out["result"] == (False, [])


def test_run_control_stop_unblocks_pause():
    control = RunControl()
    control.pause()
    out = {}

    def worker():
        out["result"] = control.checkpoint()

    t = threading.Thread(target=worker)
    t.start()
    time.sleep(0.05)
    control.stop()
    t.join(timeout=2.0)
    assert not t.is_alive()
    stopped, edits = out["result"]
    assert stopped and edits == []


def test_run_control_queues_edits_and_drops_oldest_events():
    control = RunControl()
    control.submit_edit({"a": 1})
    control.submit_edit({"b": 2})
    q = control.subscribe(maxsize=2)
    for i in range(4):
        control.emit({"n": i})
    assert [q.get_nowait()["n"] for _ in range(2)] == [2, 3]
    stopped, edits = control.checkpoint()
    assert not stopped
    assert edits == [{"a": 1}, {"b": 2}]
    control.unsubscribe(q)
    control.emit({"n": 9})
    assert q.empty()


def test_stop_before_start_ends_immediately():
    control = RunControl()
    control.stop()
    model = ScalarToy()
    res = co_optimize_model(model, np.array([5.0]), DesignOptSettings(), control=control)
    assert res.termination == "userStop"
    assert res.iterations == 0


def test_edit_retargets_a_running_toy():
    control = RunControl()
    q = control.subscribe()
    control.submit_edit({"changes": {"target": -1.0}})
    model = ScalarToy(target=2.0)
    res = co_optimize_model(model, np.array([5.0]),
                            DesignOptSettings(max_design_iterations=60), control=control)
    assert abs(res.s_star[0] + 1.0) < 1e-4
    kinds = []
    while not q.empty():
        kinds.append(q.get_nowait()["type"])
    assert "editApplied" in kinds
    assert kinds[-1] == "done"


# ---- robot-level wrappers -------------------------------------------------------


def quick_settings(**overrides):
    kwargs = dict(
        max_design_iterations=4,
        motion=MotionOptSettings(max_iterations=40),
        line_search_motion_iterations=3,
    )
    kwargs.update(overrides)
    return DesignOptSettings(**kwargs)


def test_co_optimize_biped_returns_validated_types():
    topology, s = biped()
    task = biped_task(desired_travel=(0.0, 0.0, 0.06))
    res = co_optimize(topology, s, task, quick_settings())
    assert isinstance(res, CoDesignResult)
    assert isinstance(res.s_star, kinematics.StructureParams)
    assert len(res.m_star) == 1
    assert isinstance(res.m_star[0], gait.MotionTrajectory)
    assert res.termination in {"maxIter", "stalled", "threshold"}
    f = [rec[1] for rec in res.f_history[:-1]]
    assert all(b < a for a, b in zip(f, f[1:]))
    # the returned structure respects its own bounds
    lo, hi = kinematics.structure_bounds(topology)
    sv = res.s_star.to_vector()
    assert np.all(sv >= lo - 1e-12) and np.all(sv <= hi + 1e-12)


def test_multi_task_shares_one_structure():
    topology, s = biped()
    stand = biped_task(name="stand", desired_travel=(0.0, 0.0, 0.0), desired_turn=0.0,
                       gait=gait.stand_pattern(6, 2))
    walk = biped_task(name="walk", desired_travel=(0.0, 0.0, 0.05), desired_turn=0.0,
                      gait=gait.make_footfall("trot", 6, 2, duty_factor=0.5))
    res = co_optimize_multi(topology, s, [stand, walk], weights=(0.5, 0.5),
                            settings=quick_settings(max_design_iterations=3))
    assert isinstance(res.s_star, kinematics.StructureParams)
    assert len(res.m_star) == 2
    assert res.m_star[0].T == 6 and res.m_star[1].T == 6
    # one adjoint solve per task per outer iteration
    assert res.stats.adjoint_solves == 2 * res.iterations


def test_multi_task_skips_zero_weight_adjoints():
    topology, s = biped()
    stand = biped_task(name="stand", desired_travel=(0.0, 0.0, 0.0), desired_turn=0.0,
                       gait=gait.stand_pattern(6, 2))
    walk = biped_task(name="walk", desired_travel=(0.0, 0.0, 0.05), desired_turn=0.0,
                      gait=gait.make_footfall("trot", 6, 2, duty_factor=0.5))
    res = co_optimize_multi(topology, s, [stand, walk], weights=(1.0, 0.0),
                            settings=quick_settings(max_design_iterations=2))
    assert res.stats.adjoint_solves == res.iterations


def test_multi_task_validation():
    topology, s = biped()
    stand = biped_task(desired_travel=(0.0, 0.0, 0.0), gait=gait.stand_pattern(6, 2))
    with pytest.raises(ValueError, match="two tasks"):
        co_optimize_multi(topology, s, [stand])
    walk = biped_task()
    with pytest.raises(ValueError, match="one weight per task"):
        co_optimize_multi(topology, s, [stand, walk], weights=(1.0,))
    with pytest.raises(ValueError, match=">= 0"):
        co_optimize_multi(topology, s, [stand, walk], weights=(1.0, -0.5))
