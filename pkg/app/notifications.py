from __future__ import annotations

import itertools
import logging
import threading
from collections import deque
from typing import Deque, Dict, List, Optional, Tuple

from lxml import etree
from pydantic import BaseModel

from swe.models import SPS_NS

from .errors import PayloadTypeMismatch, UnknownEventKind, UnknownTopic
from .models import EventKind, NotificationEvent, ReservationReport

logger = logging.getLogger(__name__)

WSTOP_NS = "http://docs.oasis-open.org/wsn/t-1"
NAMESPACE_NAME = "SPS-Topic-Namespace"

STATUS_REPORT = "StatusReport"
RESERVATION_REPORT = "ReservationReport"


class Topic(BaseModel):
    name: str
    parent: Optional[str] = None
    message_type: Optional[str] = None

    @property
    def is_leaf(self) -> bool:
        return self.parent is not None


def _leaf(name: str, parent: str, message_type: str = STATUS_REPORT) -> Topic:
    return Topic(name=name, parent=parent, message_type=message_type)


# document order of the topic namespace
TOPICS: Tuple[Topic, ...] = (
    Topic(name="TaskEvent"),
    _leaf("TaskFailure", "TaskEvent"),
    _leaf("TaskCancellation", "TaskEvent"),
    _leaf("TaskCompletion", "TaskEvent"),
    _leaf("TaskConfirmation", "TaskEvent"),
    _leaf("TaskUpdate", "TaskEvent"),
    _leaf("DataPublication", "TaskEvent"),
    _leaf("TaskReservation", "TaskEvent", RESERVATION_REPORT),
    _leaf("TaskSubmission", "TaskEvent"),
    _leaf("ReservationExpiration", "TaskEvent", RESERVATION_REPORT),
    Topic(name="TaskingRequestEvent"),
    _leaf("TaskingRequestExpiration", "TaskingRequestEvent"),
    _leaf("TaskingRequestRejection", "TaskingRequestEvent"),
    _leaf("TaskingRequestAcceptance", "TaskingRequestEvent"),
    _leaf("TaskingRequestPending", "TaskingRequestEvent"),
)

TOPIC_BY_NAME: Dict[str, Topic] = {t.name: t for t in TOPICS}


def topic_for_event(kind) -> Topic:
    """Event kind (enum or its name) to its leaf topic; the names coincide."""
    try:
        name = EventKind(kind).value
    except ValueError:
        raise UnknownEventKind(f"unknown event kind {kind!r}", str(kind)) from None
    return TOPIC_BY_NAME[name]


def topic_namespace_element() -> etree._Element:
    root = etree.Element(
        f"{{{WSTOP_NS}}}TopicNamespace",
        nsmap={"wstop": WSTOP_NS, "sps": SPS_NS},
        name=NAMESPACE_NAME,
        targetNamespace=SPS_NS,
        final="true",
    )
    parents: Dict[str, etree._Element] = {}
    for t in TOPICS:
        if t.parent is None:
            parents[t.name] = etree.SubElement(root, f"{{{WSTOP_NS}}}Topic", name=t.name)
        else:
            etree.SubElement(
                parents[t.parent], f"{{{WSTOP_NS}}}Topic", name=t.name, messageTypes=f"sps:{t.message_type}"
            )
    return root


def topic_namespace_document() -> bytes:
    return etree.tostring(topic_namespace_element(), pretty_print=True, xml_declaration=True, encoding="UTF-8")


def parse_topic_namespace(xml: bytes) -> List[Topic]:
    root = etree.fromstring(xml, etree.XMLParser(resolve_entities=False, no_network=True))
    out: List[Topic] = []
    for parent in root.iterchildren(f"{{{WSTOP_NS}}}Topic"):
        out.append(Topic(name=parent.get("name")))
        for leaf in parent.iterchildren(f"{{{WSTOP_NS}}}Topic"):
            mt = (leaf.get("messageTypes") or "").split(":")[-1] or None
            out.append(Topic(name=leaf.get("name"), parent=parent.get("name"), message_type=mt))
    return out


def _matches(topic_filter: str, topic: str) -> bool:
    return topic_filter == topic or TOPIC_BY_NAME[topic].parent == topic_filter


class Subscription:
    def __init__(self, subscription_id: str, topic_filter: str, limit: int) -> None:
        self.subscription_id = subscription_id
        self.topic_filter = topic_filter
        self.queue: Deque[NotificationEvent] = deque()
        self.limit = limit
        self.overflowed = False
        self.ready = threading.Condition()

    def offer(self, event: NotificationEvent) -> None:
        with self.ready:
            if len(self.queue) >= self.limit:
                self.queue.popleft()
                self.overflowed = True
            self.queue.append(event)
            self.ready.notify_all()

    def drain(self, wait: float = 0.0) -> Tuple[List[NotificationEvent], bool]:
        with self.ready:
            if not self.queue and wait > 0:
                self.ready.wait(timeout=wait)
            events = list(self.queue)
            self.queue.clear()
            overflowed, self.overflowed = self.overflowed, False
            return events, overflowed


class NotificationHub:
    """Channel-based filtering over the topic namespace with pull subscriptions."""

    def __init__(self, queue_limit: int = 1024) -> None:
        self.queue_limit = queue_limit
        self._lock = threading.RLock()
        self._subs: Dict[str, Subscription] = {}
        self._seq: Dict[str, int] = {t.name: 0 for t in TOPICS if t.is_leaf}
        self._sub_ids = itertools.count(1)

    def subscribe(self, topic_filter: str) -> Subscription:
        if topic_filter not in TOPIC_BY_NAME:
            raise UnknownTopic(f"unknown topic {topic_filter!r}", topic_filter)
        with self._lock:
            sub = Subscription(f"sub_{next(self._sub_ids)}", topic_filter, self.queue_limit)
            self._subs[sub.subscription_id] = sub
        logger.info("notify.subscribe: sub=%s filter=%s", sub.subscription_id, topic_filter)
        return sub

    def subscription(self, subscription_id: str) -> Subscription:
        with self._lock:
            try:
                return self._subs[subscription_id]
            except KeyError:
                raise UnknownTopic(f"unknown subscription {subscription_id}", subscription_id) from None

    def publish(self, event: NotificationEvent) -> int:
        topic = TOPIC_BY_NAME.get(event.topic)
        if topic is None or not topic.is_leaf:
            raise UnknownTopic(f"cannot publish on {event.topic!r}", event.topic)
        wants_reservation = topic.message_type == RESERVATION_REPORT
        if wants_reservation != isinstance(event.payload, ReservationReport):
            raise PayloadTypeMismatch(
                f"{topic.name} carries sps:{topic.message_type}, got {type(event.payload).__name__}", topic.name
            )
        with self._lock:
            self._seq[topic.name] += 1
            stamped = event.model_copy(update={"sequence": self._seq[topic.name]})
            targets = [s for s in self._subs.values() if _matches(s.topic_filter, topic.name)]
            for sub in targets:
                sub.offer(stamped)
        logger.info("notify.publish: topic=%s seq=%s delivered=%s", topic.name, stamped.sequence, len(targets))
        return len(targets)

    def last_sequence(self, topic: str) -> int:
        with self._lock:
            return self._seq.get(topic, 0)
