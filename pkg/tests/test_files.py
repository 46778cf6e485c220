"""Robot, task, and trajectory file round trips."""
import json

import numpy as np
import pytest

from morphmotion import gait, objective
from morphmotion.session import files
from morphmotion.session.files import DocumentError

from test_objective import biped, biped_task


def test_robot_round_trip_is_byte_stable():
    topology, s = biped()
    text = files.dumps_robot(topology, s)
    topo2, s2 = files.loads_robot(text)
    assert files.dumps_robot(topo2, s2) == text
    assert topo2.link_names == topology.link_names
    np.testing.assert_array_equal(s2.to_vector(), s.to_vector())


def test_bundled_robots_round_trip():
    for name in ("quadruped", "puppy", "hexapod"):
        topology, s = files.bundled_robot(name)
        text = files.dumps_robot(topology, s)
        topo2, s2 = files.loads_robot(text)
        assert files.dumps_robot(topo2, s2) == text
        np.testing.assert_array_equal(s2.to_vector(), s.to_vector())


def test_quadruped_hinge_axes_are_pinned_by_bounds():
    topology, s = files.bundled_robot("quadruped")
    for lo, hi in topology.actuator_bounds:
        assert lo == hi == (1.0, 0.0, 0.0)
    # projection cannot tilt a pinned axis
    sv = s.to_vector()
    from morphmotion import kinematics

    tilted = sv.copy()
    tilted[topology.g : topology.g + 3] = [0.5, 0.5, 0.5]
    back = kinematics.project_structure(topology, tilted)
    np.testing.assert_array_equal(back[topology.g : topology.g + 3], [1.0, 0.0, 0.0])


def test_per_component_actuator_bounds_round_trip():
    topology, s = biped()
    doc = files.robot_document(topology, s)
    doc["bounds"]["actuator"]["act0"] = [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
    topo2, _ = files.parse_robot_document(doc)
    assert topo2.actuator_bounds[0] == ((1.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    assert topo2.actuator_bounds[1] == tuple(map(float, files.kinematics.DEFAULT_ACTUATOR_BOUNDS))
    doc2 = files.robot_document(topo2, s)
    assert doc2["bounds"]["actuator"]["act0"] == [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]


def test_malformed_actuator_bound_is_rejected():
    topology, s = biped()
    doc = files.robot_document(topology, s)
    doc["bounds"]["actuator"]["act0"] = [[0.0, 0.0], [1.0, 1.0]]
    with pytest.raises(DocumentError, match="actuator bound"):
        files.parse_robot_document(doc)
    doc["bounds"]["actuator"]["act0"] = "wide"
    with pytest.raises(DocumentError, match="actuator bound"):
        files.parse_robot_document(doc)


def test_robot_document_errors():
    topology, s = biped()
    doc = files.robot_document(topology, s)
    bad = json.loads(json.dumps(doc))
    bad["links"][1]["id"] = bad["links"][0]["id"]
    with pytest.raises(DocumentError, match="duplicate link id"):
        files.parse_robot_document(bad)

    bad = json.loads(json.dumps(doc))
    bad["links"][1]["parent"] = "torso"
    with pytest.raises(DocumentError, match="unknown parent"):
        files.parse_robot_document(bad)

    bad = json.loads(json.dumps(doc))
    bad["actuators"][0]["parent"] = "nowhere"
    with pytest.raises(DocumentError, match="unknown link"):
        files.parse_robot_document(bad)

    bad = json.loads(json.dumps(doc))
    bad["endEffectors"] = ["ghost"]
    with pytest.raises(DocumentError, match="not a link id"):
        files.parse_robot_document(bad)

    bad = json.loads(json.dumps(doc))
    del bad["body"]
    with pytest.raises(DocumentError, match="missing field 'body'"):
        files.parse_robot_document(bad)


def test_version_checks():
    topology, s = biped()
    doc = files.robot_document(topology, s)
    doc["version"] = 99
    with pytest.raises(DocumentError, match="version 99"):
        files.parse_robot_document(doc)
    del doc["version"]
    with pytest.raises(DocumentError, match="missing 'version'"):
        files.parse_robot_document(doc)
    with pytest.raises(DocumentError, match="expected a task document"):
        files.parse_task_document(
            {"version": 1, "kind": "robot"}, topology
        )
    with pytest.raises(DocumentError, match="not valid JSON"):
        files.loads_robot("{nope")


def test_task_round_trip_preserves_null_style_components():
    topology, _ = biped()
    style_ee = np.full((8, 2, 3), np.nan)
    style_ee[2, 0] = [0.1, 0.0, 0.2]
    style_ee[5, 1, 1] = 0.07  # single pinned component
    task = biped_task(
        style_com=np.array([[np.nan, 0.25, np.nan]] * 8),
        style_ee=style_ee,
        objective_weights={"styleEE": 4.0},
        penalty_weights={"collision": 0.0},
    )
    text = files.dumps_task(task, threshold=1e-3)
    task2, threshold = files.loads_task(text, topology)
    assert threshold == 1e-3
    assert files.dumps_task(task2, 1e-3) == text
    # NaN placement survives exactly, as JSON nulls
    np.testing.assert_array_equal(np.isnan(task2.style_ee), np.isnan(task.style_ee))
    finite = np.isfinite(task.style_ee)
    np.testing.assert_array_equal(task2.style_ee[finite], task.style_ee[finite])
    assert json.loads(text)["styleCOM"][0][0] is None
    assert task2.objective_weights["styleEE"] == 4.0
    assert task2.gait.style == task.gait.style
    np.testing.assert_array_equal(task2.gait.contacts, task.gait.contacts)


def test_task_document_without_contacts_uses_named_style():
    topology, _ = biped()
    doc = {
        "version": 1,
        "kind": "task",
        "name": "march",
        "desiredTravel": [0.0, 0.0, 0.1],
        "gait": {"style": "trot", "frames": 8, "dutyFactor": 0.5},
    }
    task, threshold = files.parse_task_document(doc, topology)
    assert threshold == 0.0
    want = gait.make_footfall("trot", 8, topology.k, duty_factor=0.5)
    np.testing.assert_array_equal(task.gait.contacts, want.contacts)


def test_bundled_tasks_parse_against_their_robots():
    pairs = [
        ("quadruped", ("walk", "pace", "stand")),
        ("puppy", ("sideways",)),
        ("hexapod", ("fastwalk",)),
    ]
    for robot_name, task_names in pairs:
        topology, _ = files.bundled_robot(robot_name)
        for task_name in task_names:
            task, _ = files.bundled_task(task_name, topology)
            assert task.gait.k == topology.k
            assert task.name == task_name


def test_task_with_wrong_foot_count_is_rejected():
    quad, _ = files.bundled_robot("quadruped")
    with pytest.raises(DocumentError, match="feet"):
        files.bundled_task("fastwalk", quad)  # a six-foot pattern


def test_bundled_missing_file_lists_alternatives():
    with pytest.raises(FileNotFoundError, match="available"):
        files.bundled_text("nonexistent.robot.json")


def test_trajectory_round_trip_reproduces_f_bit_for_bit():
    topology, s = biped()
    task = biped_task()
    model = objective.RobotCostModel(topology, task)
    sv = s.to_vector()
    rng = np.random.default_rng(4)
    m = model.init_motion(sv) + 0.01 * rng.standard_normal(model.n_m)
    traj = model.trajectory(m)
    f_before = model.value(sv, m)
    text = files.dumps_trajectory(
        traj, sv, f_history=[(1, f_before, 0.5), (2, f_before / 2, None)], name="probe"
    )
    traj2, sv2, header = files.loads_trajectory(text)
    np.testing.assert_array_equal(traj2.flatten(), m)
    np.testing.assert_array_equal(sv2, sv)
    assert traj2.h == traj.h
    assert model.value(sv2, traj2.flatten()) == f_before  # bit-identical F
    assert header["name"] == "probe"
    assert header["fHistory"][0] == [1, f_before, 0.5]
    assert header["fHistory"][1][2] is None
    np.testing.assert_array_equal(traj2.contacts(), traj.contacts())


def test_trajectory_errors():
    with pytest.raises(DocumentError, match="header"):
        files.loads_trajectory("1,2,3\n")
    with pytest.raises(DocumentError, match="bad trajectory header"):
        files.loads_trajectory("# {broken\n")
    topology, s = biped()
    traj = gait.init_trajectory(topology, s, biped_task())
    text = files.dumps_trajectory(traj, s.to_vector())
    lines = text.splitlines()
    lines[1] = lines[1] + ",extra"
    with pytest.raises(DocumentError, match="fields"):
        files.loads_trajectory("\n".join(lines))


def test_file_io_round_trip(tmp_path):
    topology, s = biped()
    task = biped_task()
    files.save_robot(topology, s, tmp_path / "r.json")
    topo2, s2 = files.load_robot(tmp_path / "r.json")
    assert topo2.name == topology.name
    files.save_task(task, tmp_path / "t.json", threshold=0.5)
    task2, threshold = files.load_task(tmp_path / "t.json", topo2)
    assert threshold == 0.5
    traj = gait.init_trajectory(topo2, s2, task2)
    files.save_trajectory(tmp_path / "m.csv", traj, s2.to_vector())
    traj2, _, _ = files.load_trajectory(tmp_path / "m.csv")
    np.testing.assert_array_equal(traj2.flatten(), traj.flatten())
