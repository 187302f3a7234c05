from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from app.cli import EXIT_LOCAL, EXIT_NETWORK, EXIT_OK, EXIT_SERVICE, build_block, resolve_field, run
from app.main import create_app
from tests.conftest import IMAGER, LISTING1, STATION

ENDPOINT = ["--endpoint", "http://testserver/sps"]


def sps(client, *argv):
    return run([*ENDPOINT, *argv], client=client)


def _workflow(settings, *extra):
    with TestClient(create_app(settings)) as c:
        return sps(c, "workflow", "--procedure", IMAGER, *extra)


def test_workflow_runs_every_step(settings):
    code, out = _workflow(settings)
    assert code == EXIT_OK, out
    lines = out.splitlines()
    steps = [l.split(":")[0] for l in lines if l.startswith("[")]
    assert steps == [
        "[1] capabilities",
        "[2] describe-tasking",
        "[3] feasibility",
        "[4] submit",
        "[5] status",
        "[6] results",
    ]
    assert "    poll 1: state=InExecution percent=0" in lines
    assert "    poll 2: state=InExecution percent=50" in lines
    assert "    poll 3: state=Completed percent=100" in lines
    events = [l.split()[1] for l in lines if l.startswith("    event ")]
    assert events == ["TaskSubmission", "DataPublication", "DataPublication", "TaskCompletion"]
    assert "    results/task_2/2 partial=false" in lines
    assert lines[-1] == "workflow: ok"


def test_workflow_cancel_keeps_partial_result(settings):
    code, out = _workflow(settings, "--cancel-at-percent", "50")
    assert code == EXIT_OK, out
    lines = out.splitlines()
    assert "    cancel: state=Cancelled" in lines
    assert [l.split()[1] for l in lines if l.startswith("    event ")][-1] == "TaskCancellation"
    assert "    results/task_2/1 partial=true" in lines


def test_workflow_is_reproducible(settings):
    assert _workflow(settings) == _workflow(settings)


def test_workflow_with_assignments(settings):
    code, out = _workflow(settings, "target=pointToLookAt:51.902112,8.192728,0", "priority=4")
    assert code == EXIT_OK, out
    assert "values=" + LISTING1.replace(",3.5", ",4") in out


def test_workflow_stops_on_unknown_procedure(settings):
    with TestClient(create_app(settings)) as c:
        code, out = sps(c, "workflow", "--procedure", "no-such-sensor")
    assert code == EXIT_SERVICE
    assert out.splitlines()[-1] == "procedure no-such-sensor is not offered"


def test_single_commands(client):
    code, out = sps(client, "capabilities")
    assert code == EXIT_OK
    assert out.startswith("operations (12):")
    assert f"offering procedure={STATION} asset=weather-station-2" in out

    code, out = sps(client, "describe-tasking", "--procedure", IMAGER)
    assert "priority Quantity optional,updatable default=3.5" in out.splitlines()

    code, out = sps(client, "submit", "--procedure", IMAGER, *_listing1_assignments())
    assert code == EXIT_OK, out
    assert out.splitlines()[0] == "request=req_1 requestStatus=Accepted task=task_1"

    code, out = sps(client, "update", "--task", "task_1", "priority=4.5")
    assert code == EXIT_OK, out
    assert "taskStatus=InExecution" in out

    code, out = sps(client, "task", "--task", "task_1")
    assert out.splitlines()[0] == "task=task_1 kind=Submission state=InExecution"

    code, out = sps(client, "status", "--request", "req_1")
    assert "requestStatus=Accepted" in out

    code, out = sps(client, "--output", "xml", "status", "--task", "task_1")
    assert out.startswith("<?xml")

    code, out = sps(client, "topics")
    assert out.splitlines()[0] == "TaskEvent"


def _listing1_assignments():
    return [
        "measurementStart=2010-08-20T12:37:00+02:00",
        "measurementEnd=2010-08-20T14:30:00+02:00",
        "target=pointToLookAt:51.902112,8.192728,0",
        "priority=3.5",
    ]


def test_service_errors_exit_3(client):
    assert sps(client, "submit", "--procedure", IMAGER, *_listing1_assignments())[0] == EXIT_OK
    code, out = sps(client, "confirm", "--task", "task_1")
    assert code == EXIT_SERVICE
    assert out.startswith("error: IllegalTransition")

    code, out = sps(client, "submit", "--procedure", IMAGER, "--feasibility-id", "task_1", *_listing1_assignments())
    assert code == EXIT_SERVICE
    assert "InvalidParameterValue" in out

    code, out = sps(client, "subscribe", "--topic", "WeatherEvent")
    assert code == EXIT_SERVICE
    assert out.startswith("error: UnknownTopic")


def test_local_errors_exit_4(client):
    code, out = sps(client, "submit", "--procedure", IMAGER, "priority=7.0")
    assert code == EXIT_LOCAL
    assert "priority: out of range" in out

    assert sps(client, "submit", "--procedure", IMAGER, "target=")[0] == EXIT_LOCAL
    assert sps(client, "submit", "--procedure", IMAGER, "colour=red")[0] == EXIT_LOCAL
    assert sps(client, "submit", "--procedure", IMAGER, "priority")[0] == EXIT_LOCAL
    assert sps(client, "status")[0] == EXIT_LOCAL


def test_network_errors_exit_2():
    code, out = run(["--endpoint", "http://127.0.0.1:9/sps", "--timeout", "2", "capabilities"])
    assert code == EXIT_NETWORK
    assert out.startswith("network error")


def test_field_resolution(imager_desc):
    assert resolve_field(imager_desc, "priority").name == "priority"
    assert resolve_field(imager_desc, "TARGET").name == "measurementTarget"
    with pytest.raises(Exception):
        resolve_field(imager_desc, "t")


def test_build_block_parses_assignments(imager_desc, listing1):
    block = build_block(imager_desc, _listing1_assignments())
    assert block == listing1.blocks[0]
