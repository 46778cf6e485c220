"""One design session: an optimizer on a worker thread behind a state machine.

Phases move idle -> running <-> paused -> done and never backwards.  The
service thread talks to the optimizer only through a RunControl (pause and
edits take effect at the next outer-iteration boundary) and a pump thread
that rebroadcasts optimizer events as JSON-ready wire messages.
"""
import threading
import uuid
from queue import Empty, Queue

import numpy as np

from .. import objective
from ..design_opt import (
    DesignOptSettings,
    RunControl,
    co_optimize_model,
    co_optimize_multi,
)
from ..motion_opt import MotionOptSettings
from . import files

PHASES = ("idle", "running", "paused", "done")

# progress payloads above this motion size carry poses and contacts only
DOWNSAMPLE_ABOVE = 2000


class SessionError(ValueError):
    """Invalid session id, phase transition, or edit."""


def settings_from_document(doc):
    """DesignOptSettings from the optional wire settings object."""
    doc = dict(doc or {})
    motion = MotionOptSettings(
        max_iterations=int(doc.pop("motionMaxIterations", 500)),
        grad_tolerance=doc.pop("motionGradTolerance", None),
    )
    out = DesignOptSettings(
        threshold=float(doc.pop("threshold", 0.0)),
        max_design_iterations=int(doc.pop("maxDesignIterations", 200)),
        lbfgs_memory=int(doc.pop("lbfgsMemory", 8)),
        motion_refresh_interval=int(doc.pop("motionRefreshInterval", 10)),
        line_search_motion_iterations=int(doc.pop("lineSearchMotionIterations", 1)),
        adaptive_step=bool(doc.pop("adaptiveStep", False)),
        motion=motion,
    )
    if doc:
        raise SessionError(f"unknown settings fields: {sorted(doc)}")
    return out


def settings_document(settings):
    return {
        "threshold": settings.threshold,
        "maxDesignIterations": settings.max_design_iterations,
        "lbfgsMemory": settings.lbfgs_memory,
        "motionRefreshInterval": settings.motion_refresh_interval,
        "lineSearchMotionIterations": settings.line_search_motion_iterations,
        "adaptiveStep": settings.adaptive_step,
        "motionMaxIterations": settings.motion.max_iterations,
        "motionGradTolerance": settings.motion.grad_tolerance,
    }


def _motion_payload(model, m):
    """Full motion vector, or poses+contacts once it outgrows the budget."""
    m = np.asarray(m)
    if m.size <= DOWNSAMPLE_ABOVE:
        return {"downsampled": False, "vector": m.tolist()}
    lay = model.layout
    M = m.reshape(lay.T, lay.n_p)
    nq = lay.nq
    return {
        "downsampled": True,
        "q": M[:, :nq].tolist(),
        "x": M[:, nq : nq + 3].tolist(),
        "e": M[:, nq + 3 : nq + 3 + 3 * lay.k].tolist(),
        "contacts": np.asarray(model.contacts).tolist(),
    }


class Session:
    """State and threads for one co-design run."""

    def __init__(self, robot_doc, task_docs, weights=None, settings_doc=None, session_id=None):
        self.id = session_id or uuid.uuid4().hex[:12]
        self.topology, self.s0 = files.parse_robot_document(robot_doc)
        if not task_docs:
            raise SessionError("at least one task document required")
        self.tasks = []
        for doc in task_docs:
            task, _ = files.parse_task_document(doc, self.topology)
            self.tasks.append(task)
        self.weights = None
        if weights is not None:
            self.weights = [float(w) for w in weights]
            if len(self.weights) != len(self.tasks):
                raise SessionError("one weight per task required")
        elif len(self.tasks) > 1:
            self.weights = [t.task_weight for t in self.tasks]
        self.settings = settings_from_document(settings_doc)

        self.models = [objective.RobotCostModel(self.topology, t) for t in self.tasks]
        self.control = RunControl()
        self._events = self.control.subscribe(maxsize=65536)
        self._lock = threading.Lock()
        self._phase = "idle"
        self._iteration = 0
        self._f = None
        self._terms = None
        self._s = self.s0.to_vector()
        self._m = [None] * len(self.tasks)
        self._termination = None
        self._subscribers = []
        self._worker = None
        self._pump = threading.Thread(target=self._pump_events, daemon=True)
        self._pump.start()

    # -- state machine -------------------------------------------------

    @property
    def phase(self):
        with self._lock:
            return self._phase

    def start(self):
        with self._lock:
            if self._phase != "idle":
                raise SessionError(f"cannot start from phase {self._phase!r}")
            self._phase = "running"
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def pause(self):
        with self._lock:
            if self._phase != "running":
                raise SessionError(f"cannot pause from phase {self._phase!r}")
            self._phase = "paused"
        self.control.pause()

    def resume(self):
        with self._lock:
            if self._phase != "paused":
                raise SessionError(f"cannot resume from phase {self._phase!r}")
            self._phase = "running"
        self.control.resume()

    def stop(self):
        with self._lock:
            if self._phase == "done":
                return
            idle = self._phase == "idle"
            if idle:
                self._phase = "done"
                self._termination = "userStop"
        if idle:
            self._broadcast({"type": "done", "termination": "userStop", "F": self._f})
            return
        self.control.stop()

    def submit_edit(self, payload):
        """Queue a task edit; it lands at the next outer-iteration boundary."""
        with self._lock:
            if self._phase == "done":
                raise SessionError("session is done; edits rejected")
        payload = dict(payload)
        idx = int(payload.get("taskIndex", 0))
        if not 0 <= idx < len(self.tasks):
            raise SessionError(f"taskIndex {idx} out of range")
        changes = payload.get("changes")
        if not isinstance(changes, dict) or not changes:
            raise SessionError("edit payload needs a non-empty 'changes' object")
        self.control.submit_edit(payload)

    # -- worker / events -------------------------------------------------

    def _run(self):
        try:
            if len(self.models) == 1:
                result = co_optimize_model(
                    self.models[0], self._s, self.settings, control=self.control
                )
            else:
                result = co_optimize_multi(
                    self.topology,
                    self.s0,
                    self.tasks,
                    weights=self.weights,
                    settings=self.settings,
                    control=self.control,
                )
            with self._lock:
                self._termination = result.termination
        except Exception as exc:  # surfaced to stream consumers, not swallowed
            with self._lock:
                self._phase = "done"
                self._termination = "error"
            self._broadcast({"type": "error", "message": str(exc)})

    def _pump_events(self):
        while True:
            ev = self._events.get()
            wire = self._to_wire(ev)
            with self._lock:
                if ev.get("type") == "progress":
                    self._iteration = int(ev["iteration"])
                    self._f = float(ev["F"])
                    self._terms = ev.get("terms")
                    self._s = np.asarray(ev["s"]).copy()
                    m = ev["m"]
                    self._m = [np.asarray(mm).copy() for mm in m] if isinstance(m, list) else [
                        np.asarray(m).copy()
                    ]
                elif ev.get("type") == "done":
                    self._phase = "done"
                    if self._termination is None:
                        self._termination = ev.get("termination")
                    self._f = float(ev["F"]) if ev.get("F") is not None else self._f
            self._broadcast(wire)
            if ev.get("type") == "done":
                return

    def _to_wire(self, ev):
        out = {"sessionId": self.id}
        for key, val in ev.items():
            if key == "s":
                out["s"] = np.asarray(val).tolist()
            elif key == "m":
                ms = val if isinstance(val, list) else [val]
                out["m"] = [_motion_payload(mdl, mm) for mdl, mm in zip(self.models, ms)]
            elif isinstance(val, np.generic):
                out[key] = val.item()
            else:
                out[key] = val
        return out

    def _broadcast(self, wire):
        with self._lock:
            subs = list(self._subscribers)
        for q in subs:
            q.put(wire)

    def subscribe(self):
        """Queue of wire events; a None entry marks the end of the stream."""
        q = Queue()
        with self._lock:
            self._subscribers.append(q)
            if self._phase == "done":
                q.put(None)
        return q

    def unsubscribe(self, q):
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def snapshot(self):
        """Full SessionState at the latest outer-iteration boundary."""
        with self._lock:
            snap = {
                "sessionId": self.id,
                "phase": self._phase,
                "iteration": self._iteration,
                "F": self._f,
                "termination": self._termination,
                "robot": self.topology.name,
                "tasks": [t.name for t in self.tasks],
                "weights": self.weights,
                "settings": settings_document(self.settings),
                "terms": self._terms,
                "s": np.asarray(self._s).tolist(),
                "m": [None if mm is None else np.asarray(mm).tolist() for mm in self._m],
            }
        return snap


class SessionStore:
    """Registry of live sessions keyed by id."""

    def __init__(self):
        self._lock = threading.Lock()
        self._sessions = {}

    def create(self, robot_doc, task_docs, weights=None, settings_doc=None):
        session = Session(robot_doc, task_docs, weights=weights, settings_doc=settings_doc)
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, session_id):
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise SessionError(f"unknown session id {session_id!r}")
        return session

    def list_ids(self):
        with self._lock:
            return sorted(self._sessions)


def drain(queue_, timeout=None):
    """Collect wire events from a subscriber queue until the stream ends."""
    out = []
    while True:
        try:
            item = queue_.get(timeout=timeout)
        except Empty:
            return out
        if item is None:
            return out
        out.append(item)
        if item.get("type") == "done":
            return out
