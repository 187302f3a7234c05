from __future__ import annotations

import asyncio

import pytest
from fastapi.testclient import TestClient
from lxml import etree

from app.clients.sps import SpsClient
from app.main import create_app
from app.notifications import TOPICS, parse_topic_namespace
from app.pipeline import xml_io
from app.pipeline.operator import RequestOperator
from app.pipeline.xml_io import OWS_NS, q
from app.service import SpsService
from swe.description import parse_tasking_description
from swe.models import TextEncodingSpec
from tests.conftest import IMAGER, LISTING1, STATION

ENC = TextEncodingSpec()
STATION_VALUES = "2010-08-20T13:00:00+02:00,2010-08-20T18:00:00+02:00,60,Y,burst,N,Y,Y"


@pytest.fixture
def sps(client):
    return SpsClient("http://testserver/sps", client=client)


@pytest.fixture
def service(app):
    return app.state.service


def _text(root, local):
    return root.findtext(f".//{q(local)}")


def _submit(sps, values=LISTING1, procedure=IMAGER, **kw):
    return sps.tasking("Submit", procedure, ENC, values, **kw)


def test_capabilities_list_operations_and_offerings(sps, client):
    reply = sps.capabilities()
    assert reply.ok
    ops = [el.get("name") for el in reply.root.iter(q("Operation"))]
    assert len(ops) == 12 and "DescribeResultAccess" in ops
    offerings = reply.root.findall(f"{q('Contents')}/{q('offering')}")
    assert [o.findtext(q("procedure")) for o in offerings] == [IMAGER, STATION]

    kvp = client.get("/sps", params={"service": "SPS", "request": "GetCapabilities"})
    assert kvp.status_code == 200
    assert kvp.content == reply.body


def test_unknown_operation_is_not_supported(sps):
    reply = sps.post(b'<sps:Teleport xmlns:sps="http://www.opengis.net/sps/2.0" service="SPS" version="2.0"/>')
    assert reply.status == 501
    assert reply.exception[0] == "OperationNotSupported"


def test_malformed_xml_names_the_byte_offset(sps):
    reply = sps.post(b'<sps:Submit xmlns:sps="http://www.opengis.net/sps/2.0" service="SPS"')
    assert reply.status == 400
    code, _, locator = reply.exception
    assert code == "InvalidRequest"
    assert locator.startswith("byte offset ")


def test_service_and_version_attributes_are_checked(sps):
    reply = sps.post(xml_io.build_request("GetStatus", task="task_1", version=None))
    assert reply.exception[0] == "InvalidRequest" and reply.exception[2] == "version"
    reply = sps.post(xml_io.build_request("GetStatus", task="task_1", version="1.0"))
    assert reply.exception[0] == "InvalidParameterValue"
    raw = xml_io.build_request("GetStatus", task="task_1").replace(b'service="SPS"', b'service="WMS"')
    assert sps.post(raw).exception[:1] == ("InvalidParameterValue",)


def test_describe_tasking_returns_the_description(sps, service):
    reply = sps.describe_tasking(IMAGER)
    assert reply.ok
    el = reply.root.find(f"{q('taskingParameters')}/{q('TaskingParameterDescription')}")
    assert parse_tasking_description(el) == service.description(IMAGER)
    assert sps.describe_sensor(IMAGER).ok
    code, _, locator = sps.describe_tasking("no-such-sensor").exception
    assert (code, locator) == ("InvalidParameterValue", "procedure")


def test_describe_sensor_serves_the_stored_bytes(sps, settings):
    reply = sps.describe_sensor(IMAGER)
    assert reply.ok
    assert reply.body == (settings.sensors_dir / f"{IMAGER}.xml").read_bytes()


def test_describe_sensor_never_parses_the_document(settings):
    odd = b'<?xml version="1.0"?>\n<!DOCTYPE SensorML>\n<SensorML>\n\n   <member/>\n</SensorML>\n'
    truncated = b"<SensorML><member>"
    service = SpsService(settings, sensors={IMAGER: odd, STATION: truncated})
    operator = RequestOperator(service)
    assert operator.dispatch(xml_io.build_request("DescribeSensor", procedure=IMAGER)) == (200, odd)
    assert operator.dispatch(xml_io.build_request("DescribeSensor", procedure=STATION)) == (200, truncated)


def test_feasibility_ids_are_not_reusable(sps):
    study = sps.tasking("GetFeasibility", IMAGER, ENC, LISTING1)
    assert _text(study.root, "requestStatus") == "Accepted"
    assert study.root.findtext(q("feasible")) == "true"
    study_id = study.root.findtext(q("task"))

    reused = _submit(sps, feasibility_id=study_id)
    assert reused.status == 400
    assert reused.exception[0] == "FeasibilityIdNotReusable"
    assert _submit(sps, feasibility_id="task_999").exception[0] == "InvalidParameterValue"


def test_out_of_range_priority_is_a_validation_failure(sps):
    reply = _submit(sps, values=LISTING1.replace("3.5", "7.0"))
    assert reply.status == 400
    code, text, locator = reply.exception
    assert code == "ValidationFailure"
    assert locator == "priority"
    assert "out of range" in text


def test_submit_then_cancel_after_completion(sps):
    reply = _submit(sps)
    assert reply.ok
    assert reply.root.findtext(q("requestStatus")) == "Accepted"
    report = xml_io.read_status_report(xml_io.find_report(reply.root))
    assert report["taskStatus"] == "InExecution"
    task_id = report["task"]

    assert sps.advance(60)["fired"] >= 2
    assert xml_io.read_status_report(xml_io.find_report(sps.status(task_id).root))["taskStatus"] == "Completed"
    cancel = sps.command("Cancel", task_id)
    assert cancel.status == 409
    assert cancel.exception[0] == "IllegalTransition"


def test_update_of_fixed_field_is_not_feasible(sps):
    task_id = _text(_submit(sps).root, "task")
    moved = sps.command("Update", task_id, (ENC, LISTING1.replace("12:37", "12:38")))
    assert moved.status == 409
    assert moved.exception[0] == "UpdateNotFeasible"
    assert moved.exception[2] == "measurementStart"

    ok = sps.command("Update", task_id, (ENC, LISTING1.replace("3.5", "4.5")))
    assert ok.ok
    assert _text(ok.root, "taskStatus") == "InExecution"
    task = sps.task(task_id)
    assert LISTING1.replace("3.5", "4.5") in task.body.decode()


def test_reads_do_not_change_state(sps, service):
    task_id = _text(_submit(sps).root, "task")
    sps.advance(30)
    before = service.snapshot()
    for reply in (
        sps.status(task_id),
        sps.status(request="req_1"),
        sps.task(task_id),
        sps.results(task_id),
        sps.describe_tasking(IMAGER),
        sps.capabilities(),
    ):
        assert reply.ok
    assert service.snapshot() == before


def test_results_follow_execution(sps, client):
    task_id = _text(_submit(sps).root, "task")
    sps.advance(30)
    refs = sps.results(task_id).root.findall(f".//{q('reference')}")
    assert [(r.get("uri"), r.get("partial")) for r in refs] == [(f"results/{task_id}/1", "true")]
    sps.advance(30)
    refs = sps.results(task_id).root.findall(f".//{q('reference')}")
    assert [(r.get("uri"), r.get("partial")) for r in refs] == [(f"results/{task_id}/2", "false")]

    doc = client.get(f"/results/{task_id}/2")
    assert doc.status_code == 200
    assert etree.fromstring(doc.content).findtext(q("procedure")) == IMAGER
    assert client.get(f"/results/{task_id}/9").status_code == 404
    assert sps.results("task_404").exception[0] == "UnknownTask"


def test_semantic_query_sees_submission_immediately(sps, client):
    task_id = _text(_submit(sps).root, "task")
    r = client.get("/sps/semantics/query", params={"q": "?t a sps:Submission .\n?t sps:status ?s ."})
    assert r.status_code == 200
    root = etree.fromstring(r.content)
    rows = root.findall(f"{q('results')}/{q('result')}")
    assert len(rows) == 1
    bindings = {b.get("name"): b.text for b in rows[0]}
    assert bindings == {"t": f"<http://www.opengis.net/sps/2.0#{task_id}>", "s": '"InExecution"'}

    bad = client.get("/sps/semantics/query", params={"q": "?t ?p ."})
    assert bad.status_code == 400
    assert etree.fromstring(bad.content).find(q("Exception", OWS_NS)).get("exceptionCode") == "MalformedPattern"
    assert f"<http://www.opengis.net/sps/2.0#{task_id}>" in client.get("/sps/semantics/dump").text


def test_topics_endpoint(sps):
    reply = sps.topics()
    assert reply.status == 200
    assert parse_topic_namespace(reply.body) == list(TOPICS)


def test_subscriptions(client):
    created = client.post("/sps/subscriptions", json={"topic": "TaskEvent"})
    assert created.status_code == 201
    assert created.json()["events_url"].endswith("/events")
    missing = client.post("/sps/subscriptions", json={"topic": "WeatherEvent"})
    assert missing.status_code == 404
    assert missing.json()["detail"]["code"] == "UnknownTopic"
    assert client.get("/sps/subscriptions/sub_404/events").status_code == 404


def test_pending_request_is_decided_by_the_clock(sps):
    sub = sps.subscribe("TaskingRequestEvent")
    reply = _submit(sps, values=STATION_VALUES, procedure=STATION)
    assert reply.ok
    assert reply.root.findtext(q("requestStatus")) == "Pending"
    assert reply.root.findtext(q("task")) is None
    request_id = reply.root.findtext(q("request"))

    sps.advance(29)
    assert _text(sps.status(request=request_id).root, "requestStatus") == "Pending"
    sps.advance(1)
    status = xml_io.read_status_report(xml_io.find_report(sps.status(request=request_id).root))
    assert status["requestStatus"] == "Accepted"
    assert status["task"]

    events = sps.drain(sub["subscription_id"]).root.findall(q("Notification"))
    assert [e.get("topic") for e in events] == ["TaskingRequestPending", "TaskingRequestAcceptance"]


def test_debug_clock_can_be_disabled(settings):
    app = create_app(settings.model_copy(update={"debug_clock": False}))
    with TestClient(app) as c:
        assert c.post("/clock/advance", params={"seconds": 5}).status_code == 404
        assert c.get("/health").json()["ok"] is True


def test_post_dispatch_runs_in_a_worker_thread(app, client, monkeypatch):
    operator = app.state.operator
    original = operator.dispatch
    seen = []

    def dispatch(raw):
        try:
            asyncio.get_running_loop()
            seen.append("event loop")
        except RuntimeError:
            seen.append("worker")
        return original(raw)

    monkeypatch.setattr(operator, "dispatch", dispatch)
    assert client.post("/sps", content=xml_io.build_request("GetCapabilities", version=None)).status_code == 200
    assert seen == ["worker"]
