"""Robot, task, and trajectory file formats.

All three formats are versioned; loaders reject unknown major versions.
Robot and task documents are JSON with canonical field ordering on save so
that save(load(x)) is byte-stable.  Trajectories are CSV with one frame per
row and a `#`-prefixed JSON header carrying the structure vector, the frame
spacing, and optionally the optimization history; values are printed with
%.17g so a reload reproduces F bit-for-bit.
"""
import json

import numpy as np

from .. import gait, kinematics, objective

FORMAT_VERSION = 1


class DocumentError(ValueError):
    """Raised for malformed or wrong-version documents."""


def _check_version(doc, kind):
    if not isinstance(doc, dict):
        raise DocumentError(f"{kind} document must be a JSON object")
    version = doc.get("version")
    if version is None:
        raise DocumentError(f"{kind} document is missing 'version'")
    if int(version) != FORMAT_VERSION:
        raise DocumentError(
            f"unsupported {kind} document version {version} (supported: {FORMAT_VERSION})"
        )
    if "kind" in doc and doc["kind"] != kind:
        raise DocumentError(f"expected a {kind} document, found {doc['kind']!r}")


def _field(doc, name, kind):
    if name not in doc:
        raise DocumentError(f"{kind} document is missing field {name!r}")
    return doc[name]


# ---- robot documents ------------------------------------------------------


def parse_robot_document(doc):
    """Dict form of a robot document -> (RobotTopology, StructureParams)."""
    _check_version(doc, "robot")
    name = _field(doc, "name", "robot")
    body = _field(doc, "body", "robot")
    links = _field(doc, "links", "robot")
    actuators = _field(doc, "actuators", "robot")
    ee_ids = _field(doc, "endEffectors", "robot")

    ids = [link["id"] for link in links]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise DocumentError(f"duplicate link id {dup[0]!r}")
    index = {lid: i for i, lid in enumerate(ids)}

    parents = []
    attach = []
    dirs = []
    lengths = []
    for link in links:
        parent = link.get("parent", "body")
        if parent == "body":
            parents.append(-1)
        elif parent in index:
            parents.append(index[parent])
        else:
            raise DocumentError(f"link {link['id']!r} has unknown parent {parent!r}")
        attach.append(tuple(link.get("attach", (0.0, 0.0, 0.0))))
        dirs.append(tuple(_field(link, "localDirection", "robot link")))
        lengths.append(float(_field(link, "defaultLength", "robot link")))

    act_ids = [a["id"] for a in actuators]
    if len(set(act_ids)) != len(act_ids):
        raise DocumentError("duplicate actuator id")
    act_link = []
    act_kinds = []
    act_params = []
    for act in actuators:
        target = _field(act, "parent", "actuator")
        if target not in index:
            raise DocumentError(f"actuator {act['id']!r} drives unknown link {target!r}")
        act_link.append(index[target])
        act_kinds.append(_field(act, "kind", "actuator"))
        act_params.append(tuple(_field(act, "defaultAxisOrAttachment", "actuator")))

    for ee in ee_ids:
        if ee not in index:
            raise DocumentError(f"end effector {ee!r} is not a link id")

    bounds = doc.get("bounds", {})
    length_bounds = tuple(
        tuple(bounds.get("length", {}).get(lid, kinematics.DEFAULT_LENGTH_BOUNDS))
        for lid in ids
    )
    actuator_bounds = tuple(
        _actuator_bound(bounds.get("actuator", {}).get(aid, kinematics.DEFAULT_ACTUATOR_BOUNDS), aid)
        for aid in act_ids
    )

    topology = kinematics.RobotTopology(
        name=name,
        link_parents=tuple(parents),
        link_attach=tuple(attach),
        link_dirs=tuple(dirs),
        act_link=tuple(act_link),
        act_kinds=tuple(act_kinds),
        end_effectors=tuple(index[e] for e in ee_ids),
        body_mass_kg=float(_field(body, "mass", "robot body")),
        body_height_m=float(_field(body, "height", "robot body")),
        body_com_offset=tuple(body.get("comOffset", (0.0, 0.0, 0.0))),
        link_names=tuple(ids),
        act_names=tuple(act_ids),
        length_bounds=length_bounds,
        body_width_bounds=tuple(bounds.get("bodyWidth", kinematics.DEFAULT_BODY_BOUNDS)),
        body_length_bounds=tuple(bounds.get("bodyLength", kinematics.DEFAULT_BODY_BOUNDS)),
        actuator_bounds=actuator_bounds,
    )
    s = kinematics.StructureParams(
        link_lengths=np.asarray(lengths, dtype=np.float64),
        actuator_params=np.asarray(act_params, dtype=np.float64),
        body_width=float(_field(body, "defaultWidth", "robot body")),
        body_length=float(_field(body, "defaultLength", "robot body")),
    )
    return topology, kinematics.validate_structure(topology, s)


def _actuator_bound(val, aid):
    """[lo, hi] scalars for the whole triple, or [[lo]*3, [hi]*3] triples."""
    try:
        a, b = val
        if isinstance(a, (int, float)) and isinstance(b, (int, float)):
            return float(a), float(b)
        a = tuple(float(v) for v in a)
        b = tuple(float(v) for v in b)
        if len(a) == 3 and len(b) == 3:
            return a, b
    except (TypeError, ValueError):
        pass
    raise DocumentError(
        f"actuator bound for {aid!r} must be [lo, hi] or [[lo,lo,lo],[hi,hi,hi]], got {val!r}"
    )


def _bound_doc(pair):
    a, b = pair
    if isinstance(a, tuple):
        return [list(a), list(b)]
    return [float(a), float(b)]


def robot_document(topology, s):
    """Canonical dict form of (RobotTopology, StructureParams)."""
    links = []
    for i in range(topology.g):
        links.append({
            "id": topology.link_names[i],
            "parent": "body" if topology.link_parents[i] < 0 else topology.link_names[topology.link_parents[i]],
            "attach": [float(v) for v in topology.link_attach[i]],
            "localDirection": [float(v) for v in topology._dirs_arr[i]],
            "defaultLength": float(s.link_lengths[i]),
        })
    actuators = []
    for j in range(topology.n):
        actuators.append({
            "id": topology.act_names[j],
            "parent": topology.link_names[topology.act_link[j]],
            "kind": topology.act_kinds[j],
            "defaultAxisOrAttachment": [float(v) for v in s.actuator_params[j]],
        })
    return {
        "version": FORMAT_VERSION,
        "kind": "robot",
        "name": topology.name,
        "body": {
            "mass": float(topology.body_mass_kg),
            "height": float(topology.body_height_m),
            "defaultWidth": float(s.body_width),
            "defaultLength": float(s.body_length),
            "comOffset": [float(v) for v in topology.body_com_offset],
        },
        "links": links,
        "actuators": actuators,
        "endEffectors": [topology.link_names[e] for e in topology.end_effectors],
        "bounds": {
            "length": {topology.link_names[i]: list(map(float, topology.length_bounds[i]))
                       for i in range(topology.g)},
            "actuator": {topology.act_names[j]: _bound_doc(topology.actuator_bounds[j])
                         for j in range(topology.n)},
            "bodyWidth": list(map(float, topology.body_width_bounds)),
            "bodyLength": list(map(float, topology.body_length_bounds)),
        },
    }


def loads_robot(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"robot document is not valid JSON: {exc}") from exc
    return parse_robot_document(doc)


def dumps_robot(topology, s):
    return json.dumps(robot_document(topology, s), indent=2) + "\n"


def load_robot(path):
    with open(path, encoding="utf-8") as fh:
        return loads_robot(fh.read())


def save_robot(topology, s, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_robot(topology, s))


# ---- task documents -------------------------------------------------------


def _style_array(value):
    """Style target list -> float array; null entries become NaN (frame skipped)."""
    if value is None:
        return None

    def conv(v):
        if isinstance(v, list):
            return [conv(u) for u in v]
        return np.nan if v is None else float(v)

    return np.asarray(conv(value), dtype=np.float64)


def _style_list(arr):
    # inverse of _style_array: NaN -> null so documents stay strict JSON
    if isinstance(arr, np.ndarray):
        arr = arr.tolist()
    if isinstance(arr, list):
        return [_style_list(v) for v in arr]
    return None if not np.isfinite(arr) else float(arr)


def parse_task_document(doc, topology):
    """Dict form of a task document -> (TaskSpec, design threshold)."""
    _check_version(doc, "task")
    name = _field(doc, "name", "task")
    gait_doc = _field(doc, "gait", "task")
    duration = float(gait_doc.get("cycleDuration", gait.DEFAULT_CYCLE_DURATION))
    if "contacts" in gait_doc:
        pattern = gait.FootfallPattern(
            style=gait_doc.get("style", "custom"),
            contacts=np.asarray(gait_doc["contacts"], dtype=np.int64),
            cycle_duration=duration,
            duty_factor=gait_doc.get("dutyFactor"),
        )
    else:
        pattern = gait.make_footfall(
            _field(gait_doc, "style", "task gait"),
            int(_field(gait_doc, "frames", "task gait")),
            topology.k,
            duty_factor=float(gait_doc.get("dutyFactor", 0.5)),
            cycle_duration=duration,
        )
    if pattern.k != topology.k:
        raise DocumentError(
            f"task {name!r} has a {pattern.k}-foot pattern, robot has {topology.k} feet"
        )
    task = objective.TaskSpec(
        name=name,
        desired_travel=np.asarray(_field(doc, "desiredTravel", "task"), dtype=np.float64),
        desired_turn=float(doc.get("desiredTurn", 0.0)),
        gait=pattern,
        style_com=_style_array(doc.get("styleCOM")),
        style_ee=_style_array(doc.get("styleEE")),
        friction_coeff=float(doc.get("frictionCoeff", 0.6)),
        collision_threshold=float(doc.get("collisionThreshold", 0.02)),
        objective_weights=doc.get("objectiveWeights"),
        penalty_weights=doc.get("penaltyWeights"),
        task_weight=float(doc.get("taskWeight", 1.0)),
    )
    return task, float(doc.get("threshold", 0.0))


def task_document(task, threshold=0.0):
    doc = {
        "version": FORMAT_VERSION,
        "kind": "task",
        "name": task.name,
        "desiredTravel": [float(v) for v in task.desired_travel],
        "desiredTurn": float(task.desired_turn),
        "gait": {
            "style": task.gait.style,
            "frames": int(task.gait.T),
            "cycleDuration": float(task.gait.cycle_duration),
            "contacts": task.gait.contacts.tolist(),
        },
        "frictionCoeff": float(task.friction_coeff),
        "collisionThreshold": float(task.collision_threshold),
        "objectiveWeights": {k: float(v) for k, v in sorted(task.objective_weights.items())},
        "penaltyWeights": {k: float(v) for k, v in sorted(task.penalty_weights.items())},
        "taskWeight": float(task.task_weight),
        "threshold": float(threshold),
    }
    if task.gait.duty_factor is not None:
        doc["gait"]["dutyFactor"] = float(task.gait.duty_factor)
    if task.style_com is not None:
        doc["styleCOM"] = _style_list(task.style_com)
    if task.style_ee is not None:
        doc["styleEE"] = _style_list(task.style_ee)
    return doc


def loads_task(text, topology):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"task document is not valid JSON: {exc}") from exc
    return parse_task_document(doc, topology)


def dumps_task(task, threshold=0.0):
    return json.dumps(task_document(task, threshold), indent=2) + "\n"


def load_task(path, topology):
    with open(path, encoding="utf-8") as fh:
        return loads_task(fh.read(), topology)


def save_task(task, path, threshold=0.0):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_task(task, threshold))


# ---- trajectory files -----------------------------------------------------


def trajectory_columns(n, k):
    nq = 6 + n
    cols = ["time"]
    cols += [f"q{i}" for i in range(nq)]
    cols += [f"x{i}" for i in range(3)]
    for j in range(k):
        cols += [f"e{j}_{i}" for i in range(3)]
    for j in range(k):
        cols += [f"f{j}_{i}" for i in range(3)]
    cols += [f"c{j}" for j in range(k)]
    return cols


def dumps_trajectory(traj, s_vec, f_history=None, name=None):
    lay = traj.layout()
    n = lay.nq - 6
    header = {
        "version": FORMAT_VERSION,
        "kind": "trajectory",
        "name": name or "trajectory",
        "h": float(traj.h),
        "s": [float(v) for v in np.asarray(s_vec).ravel()],
        "columns": trajectory_columns(n, lay.k),
    }
    if f_history is not None:
        header["fHistory"] = [
            [int(it), float(f), None if g is None else float(g)] for it, f, g in f_history
        ]
    lines = ["# " + json.dumps(header)]
    M = traj.flatten().reshape(lay.T, lay.n_p)
    C = traj.contacts()
    for i in range(lay.T):
        row = [f"{i * traj.h:.17g}"]
        row += [f"{v:.17g}" for v in M[i]]
        row += [str(int(c)) for c in C[i]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def loads_trajectory(text):
    """CSV text -> (MotionTrajectory, s vector, header dict)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise DocumentError("trajectory file must start with a '#' JSON header line")
    try:
        header = json.loads(lines[0][1:])
    except json.JSONDecodeError as exc:
        raise DocumentError(f"bad trajectory header: {exc}") from exc
    _check_version(header, "trajectory")
    columns = header["columns"]
    width = len(columns)
    k = sum(1 for c in columns if c.startswith("c"))
    n_p = width - 1 - k
    rows = []
    contacts = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != width:
            raise DocumentError(f"trajectory row has {len(parts)} fields, expected {width}")
        rows.append([float(v) for v in parts[1 : 1 + n_p]])
        contacts.append([int(v) for v in parts[1 + n_p :]])
    M = np.asarray(rows, dtype=np.float64)
    contacts = np.asarray(contacts, dtype=np.int64)
    T = M.shape[0]
    n = n_p - 9 - 6 * k
    lay = gait.FrameLayout(n, k, T)
    traj = gait.MotionTrajectory.unflatten(lay, M.ravel(), contacts, float(header["h"]))
    return traj, np.asarray(header["s"], dtype=np.float64), header


def load_trajectory(path):
    with open(path, encoding="utf-8") as fh:
        return loads_trajectory(fh.read())


def save_trajectory(path, traj, s_vec, f_history=None, name=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_trajectory(traj, s_vec, f_history=f_history, name=name))


# ---- bundled examples -----------------------------------------------------


def bundled_text(filename):
    from importlib import resources

    ref = resources.files("morphmotion.data").joinpath(filename)
    if not ref.is_file():
        names = sorted(
            p.name for p in resources.files("morphmotion.data").iterdir() if p.name.endswith(".json")
        )
        raise FileNotFoundError(f"no bundled file {filename!r}; available: {names}")
    return ref.read_text(encoding="utf-8")


def bundled_robot(name):
    """Load a robot shipped with the package, e.g. 'quadruped'."""
    return loads_robot(bundled_text(f"{name}.robot.json"))


def bundled_task(name, topology):
    """Load a task shipped with the package, e.g. 'walk'."""
    return loads_task(bundled_text(f"{name}.task.json"), topology)
