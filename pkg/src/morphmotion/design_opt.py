"""Outer-loop structure optimization.

Hierarchical co-design: the search direction over the structure vector comes
from the adjoint method on the inner motion-optimality manifold (one
transposed Hessian solve per iteration instead of one per structure
component), smoothed through L-BFGS, and applied with a halving line search
in which each structure candidate carries one damped-Newton motion update.
Multi-task co-design shares one structure across per-task motions.
"""
import threading
from collections import deque
from dataclasses import dataclass, field
from queue import Empty, Full, Queue

import numpy as np

from . import gait, objective
from ._linalg import FactorizationError, SolveStats
from .motion_opt import MotionOptSettings, optimize_motion_model


@dataclass
class DesignOptSettings:
    threshold: float = 0.0
    max_design_iterations: int = 200
    lbfgs_memory: int = 8
    max_line_search_n: int = 20
    fd_step: float = 1e-5
    motion_refresh_interval: int = 10
    inner_max_line_search: int = 10
    line_search_motion_iterations: int = 1
    adaptive_step: bool = False
    motion: MotionOptSettings = field(default_factory=MotionOptSettings)

    def __post_init__(self):
        if self.max_design_iterations < 1:
            raise ValueError("max_design_iterations must be >= 1")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if self.max_line_search_n < 1:
            raise ValueError("max_line_search_n must be >= 1")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.motion_refresh_interval < 1:
            raise ValueError("motion_refresh_interval must be >= 1")
        if self.line_search_motion_iterations < 1:
            raise ValueError("line_search_motion_iterations must be >= 1")

    def one_step_motion(self):
        """Settings for the motion update inside the structure line search.

        One Newton step by default; line_search_motion_iterations deepens the
        polish, which helps when a candidate structure needs the motion to
        re-form before its merit shows.
        """
        return MotionOptSettings(
            max_iterations=self.line_search_motion_iterations,
            grad_tolerance=self.motion.grad_tolerance,
            line_search_shrink=self.motion.line_search_shrink,
            max_line_search=self.inner_max_line_search,
            initial_damping=self.motion.initial_damping,
        )


@dataclass
class CoDesignResult:
    s_star: np.ndarray
    m_star: list
    f_history: list
    termination: str
    iterations: int
    stats: SolveStats
    inner_histories: list
    final_value: float


class RunControl:
    """Thread-safe steering handle for a running optimization.

    The optimizer polls checkpoint() between outer iterations: it blocks
    while paused, returns queued edits, and reports a stop request.  Progress
    events fan out to subscriber queues that drop their oldest entry when
    full, so slow consumers never block the optimizer.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._paused = False
        self._stopped = False
        self._edits = deque()
        self._subscribers = []

    def pause(self):
        with self._cond:
            self._paused = True
            self._cond.notify_all()

    def resume(self):
        with self._cond:
            self._paused = False
            self._cond.notify_all()

    def stop(self):
        with self._cond:
            self._stopped = True
            self._paused = False
            self._cond.notify_all()

    @property
    def stop_requested(self):
        with self._cond:
            return self._stopped

    @property
    def paused(self):
        with self._cond:
            return self._paused

    def submit_edit(self, payload):
        with self._cond:
            self._edits.append(dict(payload))

    def subscribe(self, maxsize=256):
        q = Queue(maxsize=maxsize)
        with self._cond:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q):
        with self._cond:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def emit(self, event):
        with self._cond:
            subscribers = list(self._subscribers)
        for q in subscribers:
            while True:
                try:
                    q.put_nowait(event)
                    break
                except Full:
                    try:
                        q.get_nowait()
                    except Empty:
                        pass

    def checkpoint(self):
        """Block while paused; return (stop_requested, pending_edits)."""
        with self._cond:
            while self._paused and not self._stopped:
                self._cond.wait()
            edits = list(self._edits)
            self._edits.clear()
            return self._stopped, edits


def adjoint_gradient_model(model, s_vec, m, damping=1e-6, stats=None, bundle=None):
    """dF/ds via the adjoint system: solve Ht lam = -g once, then assemble.

    Returns (dfds, bundle).  The Hessian is symmetric so the transposed solve
    is the plain solve; exactly one linear solve happens per call.
    """
    stats = stats if stats is not None else SolveStats()
    if bundle is None:
        bundle = model.motion_bundle(s_vec, m)
    if bundle.grad_s is None:
        bundle.grad_s = model.grad_s(s_vec, m)
    if bundle.jac_gs is None:
        bundle.jac_gs = model.jac_gs(s_vec, m)
    op = bundle.hess_mm
    current = damping
    lam = None
    for _ in range(7):
        try:
            op.factor(current, stats=stats)
            lam = op.solve(-bundle.grad_m, stats=stats, kind="adjoint_solves")
            break
        except FactorizationError:
            current = current * 10.0 if current > 0 else 1e-12
    if lam is None:
        raise FactorizationError("adjoint system stayed singular through damping escalation")
    dfds = bundle.jac_gs.T @ lam + bundle.grad_s
    return dfds, bundle


def adjoint_gradient(topology, s, m, task):
    """Spec-level wrapper over (topology, structure, trajectory, task)."""
    model = objective.RobotCostModel(topology, task)
    dfds, _ = adjoint_gradient_model(model, s.to_vector(), m.flatten())
    return dfds


def lbfgs_direction(history, grad, memory=8):
    """Two-loop recursion; curvature-violating pairs are dropped.

    history holds (delta_s, delta_grad) pairs oldest-first.  An empty (or
    fully filtered) history returns the gradient itself.
    """
    grad = np.asarray(grad, dtype=np.float64)
    pairs = [(np.asarray(ds), np.asarray(dy)) for ds, dy in history]
    pairs = [(ds, dy) for ds, dy in pairs if float(ds @ dy) > 0.0]
    pairs = pairs[-memory:]
    if not pairs:
        return grad.copy()
    q = grad.copy()
    alphas = []
    rhos = [1.0 / float(ds @ dy) for ds, dy in pairs]
    for i in range(len(pairs) - 1, -1, -1):
        ds, dy = pairs[i]
        a = rhos[i] * float(ds @ q)
        alphas.append(a)
        q -= a * dy
    alphas.reverse()
    ds_l, dy_l = pairs[-1]
    gamma = float(ds_l @ dy_l) / float(dy_l @ dy_l)
    r = gamma * q
    for i in range(len(pairs)):
        ds, dy = pairs[i]
        beta = rhos[i] * float(dy @ r)
        r += (alphas[i] - beta) * ds
    return r


def update_line_search(model, s_vec, m, f_current, direction, settings, stats=None,
                       start_delta=1.0):
    """Halving line search over the structure step with one motion update each.

    Returns (accepted, s_new, m_new, f_new, step).  On rejection the incumbent
    values are returned untouched.
    """
    stats = stats if stats is not None else SolveStats()
    one_step = settings.one_step_motion()
    delta = start_delta
    for _ in range(settings.max_line_search_n):
        s_cand = model.project_s(s_vec - delta * direction)
        inner = optimize_motion_model(model, s_cand, m, one_step, stats=stats)
        f_cand = inner.f_history[-1]
        if f_cand < f_current:
            return True, s_cand, inner.m, f_cand, delta
        delta *= 0.5
    return False, s_vec, m, f_current, 0.0


def _emit(control, event):
    if control is not None:
        control.emit(event)


def _checkpoint(control):
    if control is None:
        return False, []
    return control.checkpoint()


def co_optimize_model(model, s0_vec, settings=None, control=None, m0=None):
    """Generic co-design driver over any cost model (robot or toy)."""
    settings = settings or DesignOptSettings()
    stats = SolveStats()
    s = model.project_s(np.asarray(s0_vec, dtype=np.float64))
    m = np.asarray(m0, dtype=np.float64).copy() if m0 is not None else model.init_motion(s)

    full = optimize_motion_model(model, s, m, settings.motion, stats=stats)
    m = full.m
    f_current = full.f_history[-1]
    inner_histories = [full.f_history]

    f_history = []
    pairs = deque(maxlen=settings.lbfgs_memory)
    prev_point = None
    termination = None
    iterations = 0
    start_delta = 1.0

    _emit(control, {
        "type": "progress",
        "iteration": 0,
        "F": float(f_current),
        "gradNorm": None,
        "s": s.copy(),
        "m": m.copy(),
        "terms": _terms_or_none(model, s, m),
    })

    for it in range(1, settings.max_design_iterations + 1):
        stop, edits = _checkpoint(control)
        if stop:
            termination = "userStop"
            break
        if edits:
            apply = getattr(model, "apply_edit", None)
            for payload in edits:
                if apply is not None:
                    apply(payload.get("changes", payload))
            f_current = model.value(s, m)
            pairs.clear()
            prev_point = None
            _emit(control, {"type": "editApplied", "iteration": it, "count": len(edits)})

        if f_current < settings.threshold:
            termination = "threshold"
            break

        if it > 1 and settings.motion_refresh_interval > 0 and (it - 1) % settings.motion_refresh_interval == 0:
            refresh = optimize_motion_model(model, s, m, settings.motion, stats=stats)
            # also re-solve cold from the init trajectory at the current
            # design: the warm basin can go stale as s moves far from s0
            init_m = getattr(model, "init_motion", None)
            if init_m is not None:
                cold = optimize_motion_model(model, s, init_m(s), settings.motion, stats=stats)
                if cold.f_history[-1] < refresh.f_history[-1]:
                    refresh = cold
            if refresh.f_history[-1] < f_current:
                m = refresh.m
                f_current = refresh.f_history[-1]
                inner_histories.append(refresh.f_history)
                prev_point = None

        dfds, _ = adjoint_gradient_model(
            model, s, m, damping=settings.motion.initial_damping, stats=stats
        )
        iterations = it
        f_history.append((it, float(f_current), float(np.linalg.norm(dfds))))

        if prev_point is not None:
            ds = s - prev_point[0]
            dy = dfds - prev_point[1]
            if float(ds @ dy) > 0.0:
                pairs.append((ds, dy))
        prev_point = (s.copy(), dfds.copy())

        direction = lbfgs_direction(pairs, dfds, settings.lbfgs_memory)
        accepted, s_new, m_new, f_new, step = update_line_search(
            model, s, m, f_current, direction, settings, stats=stats,
            start_delta=start_delta,
        )
        if accepted:
            s, m, f_current = s_new, m_new, f_new
            if settings.adaptive_step:
                # remember the scale that worked so flat stretches stop
                # re-halving from a full step every iteration
                start_delta = min(1.0, 2.0 * step)
        else:
            # the one-step tracker rejected every halving; a step only counts
            # as a stall once full-tolerance motion also fails to decrease F,
            # so retry a few candidates (and the incumbent) with full solves,
            # falling back to raw steepest descent in case the quasi-Newton
            # direction itself has gone bad
            cands = [(direction, d) for d in (1.0, 0.5, 0.25, 0.125)]
            if pairs:
                unit = dfds / max(1.0, float(np.linalg.norm(dfds)))
                cands += [(unit, d) for d in (0.5, 0.1, 0.02)]
            cands.append((None, 0.0))
            retried = False
            for vec, delta in cands:
                if control is not None and control.stop_requested:
                    break
                s_cand = model.project_s(s - delta * vec) if vec is not None else s
                retry = optimize_motion_model(model, s_cand, m, settings.motion, stats=stats)
                if retry.f_history[-1] < f_current:
                    s, m, f_current = s_cand, retry.m, retry.f_history[-1]
                    inner_histories.append(retry.f_history)
                    accepted = delta > 0.0
                    step = delta
                    pairs.clear()
                    prev_point = None
                    start_delta = 1.0
                    retried = True
                    break
            if not retried:
                # a queued stop or edit outranks the stall verdict: the
                # stall was measured against an objective that is going away
                stop, edits = _checkpoint(control)
                if stop:
                    termination = "userStop"
                    break
                if edits:
                    apply = getattr(model, "apply_edit", None)
                    for payload in edits:
                        if apply is not None:
                            apply(payload.get("changes", payload))
                    f_current = model.value(s, m)
                    pairs.clear()
                    prev_point = None
                    _emit(control, {"type": "editApplied", "iteration": it, "count": len(edits)})
                    continue
                termination = "stalled"
                break

        _emit(control, {
            "type": "progress",
            "iteration": it,
            "F": float(f_current),
            "gradNorm": float(np.linalg.norm(dfds)),
            "s": s.copy(),
            "m": m.copy(),
            "accepted": bool(accepted),
            "step": float(step),
            "terms": _terms_or_none(model, s, m),
        })

    if termination is None:
        termination = "threshold" if f_current < settings.threshold else "maxIter"

    final = optimize_motion_model(model, s, m, settings.motion, stats=stats)
    if final.f_history[-1] < f_current:
        m = final.m
        f_current = final.f_history[-1]
    inner_histories.append(final.f_history)
    f_history.append((iterations + 1, float(f_current), None))

    result = CoDesignResult(
        s_star=s,
        m_star=[m],
        f_history=f_history,
        termination=termination,
        iterations=iterations,
        stats=stats,
        inner_histories=inner_histories,
        final_value=float(f_current),
    )
    _emit(control, {"type": "done", "termination": termination, "F": float(f_current)})
    return result


def _terms_or_none(model, s, m):
    fn = getattr(model, "term_values", None)
    if fn is None:
        return None
    return {k: float(v) for k, v in fn(s, m).items()}


def co_optimize(topology, s0, task, settings=None, control=None):
    """Co-design one robot for one task; returns structures and trajectories."""
    model = objective.RobotCostModel(topology, task)
    result = co_optimize_model(model, s0.to_vector(), settings=settings, control=control)
    return _wrap_robot_result(topology, [model], result)


def _wrap_robot_result(topology, models, result):
    from .kinematics import StructureParams, validate_structure

    s_params = validate_structure(topology, StructureParams.from_vector(topology, result.s_star))
    trajectories = [
        gait.MotionTrajectory.unflatten(model.layout, m, model.contacts, model.h)
        for model, m in zip(models, result.m_star)
    ]
    result.s_star = s_params
    result.m_star = trajectories
    return result


def co_optimize_multi(topology, s0, tasks, weights=None, settings=None, control=None):
    """Joint co-design: one structure, one motion per task, SUM w_i F_i.

    Zero-weight tasks still ride along (their motions are updated) but do
    not contribute adjoint solves or line-search decisions.
    """
    if len(tasks) < 2:
        raise ValueError("multi-task co-design needs at least two tasks")
    settings = settings or DesignOptSettings()
    if weights is None:
        weights = [t.task_weight for t in tasks]
    weights = [float(w) for w in weights]
    if len(weights) != len(tasks):
        raise ValueError("one weight per task required")
    if any(w < 0 for w in weights):
        raise ValueError("task weights must be >= 0")

    models = [objective.RobotCostModel(topology, t) for t in tasks]
    stats = SolveStats()
    s = models[0].project_s(np.asarray(s0.to_vector(), dtype=np.float64))
    ms = []
    inner_histories = []
    for model in models:
        full = optimize_motion_model(model, s, model.init_motion(s), settings.motion, stats=stats)
        ms.append(full.m)
        inner_histories.append(full.f_history)

    def joint_value(s_vec, m_list):
        return sum(w * mdl.value(s_vec, mm) for w, mdl, mm in zip(weights, models, m_list))

    f_current = joint_value(s, ms)
    f_history = []
    pairs = deque(maxlen=settings.lbfgs_memory)
    prev_point = None
    termination = None
    iterations = 0
    one_step = settings.one_step_motion()
    start_delta = 1.0

    _emit(control, {
        "type": "progress",
        "iteration": 0,
        "F": float(f_current),
        "gradNorm": None,
        "s": s.copy(),
        "m": [mm.copy() for mm in ms],
        "taskF": [float(mdl.value(s, mm)) for mdl, mm in zip(models, ms)],
    })

    for it in range(1, settings.max_design_iterations + 1):
        stop, edits = _checkpoint(control)
        if stop:
            termination = "userStop"
            break
        if edits:
            for payload in edits:
                idx = int(payload.get("taskIndex", 0))
                changes = payload.get("changes", {})
                if "taskWeight" in changes:
                    w = float(changes["taskWeight"])
                    if not 0.0 <= w <= 1.0:
                        raise ValueError("task weight must be in [0, 1]")
                    weights[idx] = w
                models[idx].apply_edit(changes)
            f_current = joint_value(s, ms)
            pairs.clear()
            prev_point = None
            _emit(control, {"type": "editApplied", "iteration": it, "count": len(edits)})

        if f_current < settings.threshold:
            termination = "threshold"
            break

        if it > 1 and (it - 1) % settings.motion_refresh_interval == 0:
            improved = list(ms)
            for i, model in enumerate(models):
                refresh = optimize_motion_model(model, s, ms[i], settings.motion, stats=stats)
                init_m = getattr(model, "init_motion", None)
                if init_m is not None:
                    cold = optimize_motion_model(model, s, init_m(s), settings.motion, stats=stats)
                    if cold.f_history[-1] < refresh.f_history[-1]:
                        refresh = cold
                improved[i] = refresh.m
            f_ref = joint_value(s, improved)
            if f_ref < f_current:
                ms = improved
                f_current = f_ref
                prev_point = None

        dfds = np.zeros_like(s)
        for w, model, mm in zip(weights, models, ms):
            if w == 0.0:
                continue
            g_i, _ = adjoint_gradient_model(
                model, s, mm, damping=settings.motion.initial_damping, stats=stats
            )
            dfds += w * g_i
        iterations = it
        f_history.append((it, float(f_current), float(np.linalg.norm(dfds))))

        if prev_point is not None:
            ds = s - prev_point[0]
            dy = dfds - prev_point[1]
            if float(ds @ dy) > 0.0:
                pairs.append((ds, dy))
        prev_point = (s.copy(), dfds.copy())

        direction = lbfgs_direction(pairs, dfds, settings.lbfgs_memory)
        accepted = False
        delta = start_delta
        for _ in range(settings.max_line_search_n):
            s_cand = models[0].project_s(s - delta * direction)
            m_cand = []
            for model, mm in zip(models, ms):
                inner = optimize_motion_model(model, s_cand, mm, one_step, stats=stats)
                m_cand.append(inner.m)
            f_cand = joint_value(s_cand, m_cand)
            if f_cand < f_current:
                s, ms, f_current = s_cand, m_cand, f_cand
                accepted = True
                if settings.adaptive_step:
                    start_delta = min(1.0, 2.0 * delta)
                break
            delta *= 0.5

        if not accepted:
            # as in the single-task loop: only a full-tolerance failure stalls
            cands = [(direction, d) for d in (1.0, 0.5, 0.25, 0.125)]
            if pairs:
                unit = dfds / max(1.0, float(np.linalg.norm(dfds)))
                cands += [(unit, d) for d in (0.5, 0.1, 0.02)]
            cands.append((None, 0.0))
            retried = False
            for vec, delta_try in cands:
                if control is not None and control.stop_requested:
                    break
                s_cand = models[0].project_s(s - delta_try * vec) if vec is not None else s
                improved = []
                for model, mm in zip(models, ms):
                    retry = optimize_motion_model(model, s_cand, mm, settings.motion, stats=stats)
                    improved.append(retry.m)
                f_ref = joint_value(s_cand, improved)
                if f_ref < f_current:
                    s, ms, f_current = s_cand, improved, f_ref
                    accepted = delta_try > 0.0
                    pairs.clear()
                    prev_point = None
                    start_delta = 1.0
                    retried = True
                    break
            if not retried:
                # a queued stop or edit outranks the stall verdict
                stop, edits = _checkpoint(control)
                if stop:
                    termination = "userStop"
                    break
                if edits:
                    for payload in edits:
                        idx = int(payload.get("taskIndex", 0))
                        changes = payload.get("changes", {})
                        if "taskWeight" in changes:
                            w = float(changes["taskWeight"])
                            if not 0.0 <= w <= 1.0:
                                raise ValueError("task weight must be in [0, 1]")
                            weights[idx] = w
                        models[idx].apply_edit(changes)
                    f_current = joint_value(s, ms)
                    pairs.clear()
                    prev_point = None
                    _emit(control, {"type": "editApplied", "iteration": it, "count": len(edits)})
                    continue
                termination = "stalled"
                break

        _emit(control, {
            "type": "progress",
            "iteration": it,
            "F": float(f_current),
            "gradNorm": float(np.linalg.norm(dfds)),
            "s": s.copy(),
            "m": [mm.copy() for mm in ms],
            "accepted": bool(accepted),
            "taskF": [float(mdl.value(s, mm)) for mdl, mm in zip(models, ms)],
        })

    if termination is None:
        termination = "threshold" if f_current < settings.threshold else "maxIter"

    final_ms = []
    for model, mm in zip(models, ms):
        final = optimize_motion_model(model, s, mm, settings.motion, stats=stats)
        final_ms.append(final.m)
        inner_histories.append(final.f_history)
    f_final = joint_value(s, final_ms)
    if f_final < f_current:
        ms = final_ms
        f_current = f_final
    f_history.append((iterations + 1, float(f_current), None))

    result = CoDesignResult(
        s_star=s,
        m_star=list(ms),
        f_history=f_history,
        termination=termination,
        iterations=iterations,
        stats=stats,
        inner_histories=inner_histories,
        final_value=float(f_current),
    )
    _emit(control, {"type": "done", "termination": termination, "F": float(f_current)})
    return _wrap_robot_result(topology, models, result)
