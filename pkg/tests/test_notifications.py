from __future__ import annotations

from datetime import timedelta

import pytest

from app.errors import PayloadTypeMismatch, UnknownEventKind, UnknownTopic
from app.models import EventKind, NotificationEvent, ReservationReport, StatusReport, TaskState
from app.notifications import (
    TOPICS,
    NotificationHub,
    parse_topic_namespace,
    topic_for_event,
    topic_namespace_document,
)
from tests.conftest import CLOCK_START, IMAGER

TASK_LEAVES = [
    "TaskFailure",
    "TaskCancellation",
    "TaskCompletion",
    "TaskConfirmation",
    "TaskUpdate",
    "DataPublication",
    "TaskReservation",
    "TaskSubmission",
    "ReservationExpiration",
]
REQUEST_LEAVES = [
    "TaskingRequestExpiration",
    "TaskingRequestRejection",
    "TaskingRequestAcceptance",
    "TaskingRequestPending",
]


def _report(**kw) -> StatusReport:
    return StatusReport(task_id="task_1", procedure_id=IMAGER, state=TaskState.IN_EXECUTION, timestamp=CLOCK_START, **kw)


def _reservation() -> ReservationReport:
    return ReservationReport(
        task_id="task_1",
        procedure_id=IMAGER,
        state=TaskState.RESERVED,
        timestamp=CLOCK_START,
        reservation_expiration=CLOCK_START + timedelta(minutes=5),
    )


def _event(topic: str, payload=None) -> NotificationEvent:
    return NotificationEvent(topic=topic, payload=payload or _report(), emitted_at=CLOCK_START)


def test_topic_tree_shape():
    parents = [t.name for t in TOPICS if not t.is_leaf]
    assert parents == ["TaskEvent", "TaskingRequestEvent"]
    assert [t.name for t in TOPICS if t.parent == "TaskEvent"] == TASK_LEAVES
    assert [t.name for t in TOPICS if t.parent == "TaskingRequestEvent"] == REQUEST_LEAVES
    reservation_typed = {t.name for t in TOPICS if t.message_type == "ReservationReport"}
    assert reservation_typed == {"TaskReservation", "ReservationExpiration"}


def test_every_event_kind_has_a_leaf():
    for kind in EventKind:
        topic = topic_for_event(kind)
        assert topic.is_leaf and topic.name == kind.value
    with pytest.raises(UnknownEventKind):
        topic_for_event("TaskTeleported")


def test_namespace_document_round_trips():
    assert parse_topic_namespace(topic_namespace_document()) == list(TOPICS)


def test_parent_filter_receives_its_leaves_only():
    hub = NotificationHub()
    task_sub = hub.subscribe("TaskEvent")
    leaf_sub = hub.subscribe("TaskCompletion")
    request_sub = hub.subscribe("TaskingRequestEvent")

    hub.publish(_event("TaskSubmission"))
    hub.publish(_event("TaskingRequestAcceptance"))
    hub.publish(_event("TaskCompletion"))

    assert [e.topic for e in task_sub.drain()[0]] == ["TaskSubmission", "TaskCompletion"]
    assert [e.topic for e in leaf_sub.drain()[0]] == ["TaskCompletion"]
    assert [e.topic for e in request_sub.drain()[0]] == ["TaskingRequestAcceptance"]


def test_sequences_are_per_topic_and_ordered():
    hub = NotificationHub()
    sub = hub.subscribe("TaskEvent")
    for _ in range(3):
        hub.publish(_event("TaskUpdate"))
    hub.publish(_event("DataPublication"))
    events, overflowed = sub.drain()
    assert not overflowed
    assert [(e.topic, e.sequence) for e in events] == [
        ("TaskUpdate", 1),
        ("TaskUpdate", 2),
        ("TaskUpdate", 3),
        ("DataPublication", 1),
    ]
    assert hub.last_sequence("TaskUpdate") == 3
    assert sub.drain() == ([], False)


def test_publish_without_subscribers_still_counts():
    hub = NotificationHub()
    assert hub.publish(_event("TaskSubmission")) == 0
    assert hub.last_sequence("TaskSubmission") == 1


def test_overflow_drops_oldest_and_flags_it():
    hub = NotificationHub(queue_limit=2)
    sub = hub.subscribe("TaskUpdate")
    for _ in range(5):
        hub.publish(_event("TaskUpdate"))
    events, overflowed = sub.drain()
    assert overflowed
    assert [e.sequence for e in events] == [4, 5]
    assert sub.drain() == ([], False)


def test_unknown_topics_are_refused():
    hub = NotificationHub()
    with pytest.raises(UnknownTopic):
        hub.subscribe("WeatherEvent")
    with pytest.raises(UnknownTopic):
        hub.publish(_event("TaskEvent"))
    with pytest.raises(UnknownTopic):
        hub.subscription("sub_99")


def test_payload_type_must_match_topic():
    hub = NotificationHub()
    with pytest.raises(PayloadTypeMismatch):
        hub.publish(_event("TaskReservation"))
    with pytest.raises(PayloadTypeMismatch):
        hub.publish(_event("TaskUpdate", _reservation()))
    assert hub.publish(_event("ReservationExpiration", _reservation())) == 0
