"""Inner-loop motion optimization.

Damped Newton steps on the motion vector m with backtracking line search,
holding the structure fixed.  The Hessian is the Gauss-Newton operator from
the objective module; damping escalates when a factorization fails or a step
produces no decrease, and relaxes again after accepted steps.
"""
from dataclasses import dataclass, field

import numpy as np

from . import gait, objective
from ._linalg import FactorizationError, SolveStats

MAX_DAMPING_ESCALATIONS = 6


@dataclass
class MotionOptSettings:
    max_iterations: int = 500
    grad_tolerance: float = None  # None resolves to 1e-6 * n_m at run time
    line_search_shrink: float = 0.5
    max_line_search: int = 30
    initial_damping: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.grad_tolerance is not None and self.grad_tolerance <= 0:
            raise ValueError("grad_tolerance must be positive")
        if not 0.0 < self.line_search_shrink < 1.0:
            raise ValueError("line_search_shrink must be in (0, 1)")
        if self.max_line_search < 1:
            raise ValueError("max_line_search must be >= 1")
        if self.initial_damping < 0:
            raise ValueError("initial_damping must be >= 0")

    def resolve_tolerance(self, n_m):
        return self.grad_tolerance if self.grad_tolerance is not None else 1e-6 * n_m


@dataclass
class MotionResult:
    m: np.ndarray
    f_history: list
    stalled: bool
    converged: bool
    iterations: int
    grad_inf: float


def newton_step(bundle, settings, damping=None, stats=None):
    """Solve H dm = g with escalating damping; dm is the subtracted step.

    Returns (dm, damping_used).  Raises FactorizationError when the system
    stays unsolvable (or non-descent) through all escalations.
    """
    g = bundle.grad_m
    current = settings.initial_damping if damping is None else damping
    op = bundle.hess_mm
    for _ in range(MAX_DAMPING_ESCALATIONS + 1):
        try:
            op.factor(current, stats=stats)
            dm = op.solve(g, stats=stats, kind="newton_solves")
        except FactorizationError:
            current = current * 10.0 if current > 0 else 1e-12
            continue
        if float(dm @ g) > 0.0 or not np.any(g):
            return dm, current
        # PSD-degenerate direction; more damping turns it toward the gradient
        current = current * 10.0 if current > 0 else 1e-12
    raise FactorizationError(f"no descent step up to damping {current:g}")


def optimize_motion_model(model, s_vec, m0, settings=None, stats=None):
    """Run damped Newton on the model's motion variables at fixed structure."""
    settings = settings or MotionOptSettings()
    stats = stats if stats is not None else SolveStats()
    m = np.asarray(m0, dtype=np.float64).copy()
    tol = settings.resolve_tolerance(m.size)

    bundle = model.motion_bundle(s_vec, m)
    history = [bundle.value]
    damping = settings.initial_damping
    stalled = False
    converged = False
    grad_inf = float(np.max(np.abs(bundle.grad_m))) if m.size else 0.0

    for _ in range(settings.max_iterations):
        grad_inf = float(np.max(np.abs(bundle.grad_m)))
        if grad_inf < tol:
            converged = True
            break
        accepted = None
        escalations = 0
        while accepted is None:
            try:
                dm, damping = newton_step(bundle, settings, damping=damping, stats=stats)
            except FactorizationError:
                stalled = True
                break
            step = 1.0
            for _ in range(settings.max_line_search):
                cand = m - step * dm
                f_cand = model.value(s_vec, cand)
                if f_cand < history[-1]:
                    accepted = (cand, f_cand, step)
                    break
                step *= settings.line_search_shrink
            if accepted is None:
                escalations += 1
                if escalations > MAX_DAMPING_ESCALATIONS:
                    stalled = True
                    break
                damping = damping * 10.0 if damping > 0 else 1e-12
        if stalled:
            break
        m, f_new, step = accepted
        history.append(f_new)
        bundle = model.motion_bundle(s_vec, m)
        if step == 1.0:
            damping = max(settings.initial_damping, damping / 10.0)
        else:
            # full step rejected by the line search: Levenberg rule, more damping
            damping = damping * 10.0 if damping > 0 else 1e-12

    if not converged and not stalled:
        grad_inf = float(np.max(np.abs(bundle.grad_m)))
        converged = grad_inf < tol
    return MotionResult(
        m=m,
        f_history=history,
        stalled=stalled,
        converged=converged,
        iterations=len(history) - 1,
        grad_inf=grad_inf,
    )


def optimize_motion(topology, s, m0, task, settings=None):
    """Public wrapper over trajectories: returns (trajectory, result)."""
    model = objective.RobotCostModel(topology, task)
    result = optimize_motion_model(model, s.to_vector(), m0.flatten(), settings)
    traj = gait.MotionTrajectory.unflatten(model.layout, result.m, model.contacts, model.h)
    return traj, result
