"""Operation documents: request builders/readers and response writers (lxml)."""
from __future__ import annotations

from datetime import datetime
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from lxml import etree

from swe.codec import decode_parameter_data, encode_parameter_data
from swe.description import parameter_data_element, parameter_data_from_xml, tasking_description_element
from swe.models import SPS_NS, SWE_NS, ParameterData, ParameterDescription, TextEncodingSpec

from ..errors import InvalidRequest, SpsError
from ..models import NotificationEvent, ReservationReport, ResultReference, StatusReport, Task, TaskingRequest

OWS_NS = "http://www.opengis.net/ows/1.1"
VERSION = "2.0"
SERVICE = "SPS"
NSMAP = {"sps": SPS_NS, "swe": SWE_NS}


def q(local: str, ns: str = SPS_NS) -> str:
    return f"{{{ns}}}{local}"


def parser() -> etree.XMLParser:
    return etree.XMLParser(resolve_entities=False, no_network=True, remove_blank_text=True)


def to_bytes(el: etree._Element) -> bytes:
    return etree.tostring(el, pretty_print=True, xml_declaration=True, encoding="UTF-8")


def _sub(parent: etree._Element, local: str, text: Any = None, **attrs: Any) -> etree._Element:
    el = etree.SubElement(parent, q(local), {k: str(v) for k, v in attrs.items() if v is not None})
    if text is not None:
        el.text = _lex(text)
    return el


def _lex(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def response_root(operation: str, **attrs: Any) -> etree._Element:
    return etree.Element(q(f"{operation}Response"), {"version": VERSION, **{k: str(v) for k, v in attrs.items()}}, nsmap=NSMAP)


# ---- parsing ----

def parse_document(raw: bytes) -> etree._Element:
    try:
        return etree.fromstring(raw, parser())
    except etree.XMLSyntaxError as ex:
        raise InvalidRequest(f"malformed XML: {ex.msg}", f"byte offset {byte_offset(raw, ex)}") from ex


def byte_offset(raw: bytes, ex: etree.XMLSyntaxError) -> int:
    line, column = ex.position if ex.position else (1, 1)
    lines = raw.split(b"\n")
    offset = sum(len(l) + 1 for l in lines[: max(line - 1, 0)])
    return offset + max(column - 1, 0)


def child_text(el: etree._Element, local: str, *, required: bool = True) -> Optional[str]:
    child = el.find(q(local))
    if child is None or not (child.text or "").strip():
        if required:
            raise InvalidRequest(f"missing sps:{local}", local)
        return None
    return child.text.strip()


def read_parameter_data(el: etree._Element) -> Tuple[TextEncodingSpec, str]:
    holder = el.find(q("taskingParameters"))
    data = holder.find(q("ParameterData")) if holder is not None else None
    if data is None:
        raise InvalidRequest("missing sps:taskingParameters/sps:ParameterData", "taskingParameters")
    return parameter_data_from_xml(data)


def decode_request_parameters(el: etree._Element, desc: ParameterDescription) -> ParameterData:
    enc, values = read_parameter_data(el)
    return decode_parameter_data(desc, enc, values)


# ---- request builders (client side) ----

def build_request(
    operation: str,
    *,
    procedure: Optional[str] = None,
    parameters: Optional[Tuple[TextEncodingSpec, str]] = None,
    task: Optional[str] = None,
    request: Optional[str] = None,
    feasibility_id: Optional[str] = None,
    version: Optional[str] = VERSION,
) -> bytes:
    attrs = {"service": SERVICE}
    if version is not None:
        attrs["version"] = version
    root = etree.Element(q(operation), attrs, nsmap=NSMAP)
    if procedure is not None:
        _sub(root, "procedure", procedure)
    if task is not None:
        _sub(root, "task", task)
    if request is not None:
        _sub(root, "request", request)
    if parameters is not None:
        holder = _sub(root, "taskingParameters")
        holder.append(parameter_data_element(*parameters))
    if feasibility_id is not None:
        _sub(root, "feasibilityID", feasibility_id)
    return to_bytes(root)


# ---- response writers ----

def alternatives_element(
    parent: etree._Element, alternatives: Sequence[ParameterData], desc: Optional[ParameterDescription]
) -> Optional[etree._Element]:
    if not alternatives or desc is None:
        return None
    holder = _sub(parent, "alternatives")
    for alt in alternatives:
        _sub(holder, "alternative").append(parameter_data_element(alt.encoding, encode_parameter_data(desc, alt)))
    return holder


def status_report_element(
    parent: Optional[etree._Element], report: StatusReport, desc: Optional[ParameterDescription] = None
) -> etree._Element:
    tag = "ReservationReport" if isinstance(report, ReservationReport) else "StatusReport"
    el = etree.SubElement(parent, q(tag)) if parent is not None else etree.Element(q(tag), nsmap=NSMAP)
    if report.task_id:
        _sub(el, "task", report.task_id)
    if report.request_id:
        _sub(el, "request", report.request_id)
    _sub(el, "procedure", report.procedure_id)
    if report.request_status is not None:
        _sub(el, "requestStatus", report.request_status)
    if report.state is not None:
        _sub(el, "taskStatus", report.state)
    _sub(el, "percentCompletion", report.percent_completion)
    _sub(el, "statusMessage", report.message)
    _sub(el, "updateTime", report.timestamp)
    _sub(el, "dataAvailable", report.data_available)
    if isinstance(report, ReservationReport):
        _sub(el, "reservationExpiration", report.reservation_expiration)
    alternatives_element(el, report.alternatives, desc)
    return el


def tasking_response(
    operation: str,
    req: TaskingRequest,
    *,
    report: Optional[StatusReport],
    alternatives: Sequence[ParameterData],
    desc: Optional[ParameterDescription],
    feasible: Optional[bool] = None,
) -> bytes:
    root = response_root(operation)
    _sub(root, "request", req.request_id)
    _sub(root, "requestStatus", req.status)
    if req.task_id:
        _sub(root, "task", req.task_id)
    if feasible is not None:
        _sub(root, "feasible", feasible)
    if req.reason:
        _sub(root, "reason", req.reason)
    if report is not None:
        status_report_element(root, report, desc)
    alternatives_element(root, alternatives, desc)
    return to_bytes(root)


def report_response(operation: str, report: StatusReport, desc: Optional[ParameterDescription] = None) -> bytes:
    root = response_root(operation)
    status_report_element(root, report, desc)
    return to_bytes(root)


def task_response(task: Task, desc: ParameterDescription, references: Iterable[ResultReference]) -> bytes:
    root = response_root("GetTask")
    el = _sub(root, "Task", id=task.task_id)
    _sub(el, "kind", task.kind)
    _sub(el, "taskStatus", task.state)
    _sub(el, "procedure", task.procedure_id)
    if task.request_id:
        _sub(el, "request", task.request_id)
    if task.asset_id:
        _sub(el, "asset", task.asset_id)
    if task.reservation_expiration is not None:
        _sub(el, "reservationExpiration", task.reservation_expiration)
    _sub(el, "percentCompletion", 100 if task.state.value == "Completed" else min(task.progress, 99))
    _sub(el, "taskingParameters").append(
        parameter_data_element(task.parameters.encoding, encode_parameter_data(desc, task.parameters))
    )
    history = _sub(el, "history")
    for entry in task.history:
        _sub(history, "entry", entry.detail or None, at=entry.at.isoformat(), event=entry.event)
    results = _sub(el, "results")
    for ref in references:
        _sub(results, "reference", uri=ref.uri)
    return to_bytes(root)


def result_access_response(task_id: str, references: Sequence[ResultReference]) -> bytes:
    root = response_root("DescribeResultAccess")
    availability = _sub(root, "availability", task=task_id)
    for ref in references:
        r = _sub(
            availability,
            "reference",
            uri=ref.uri,
            producedAt=ref.produced_at.isoformat(),
            partial="true" if ref.partial else "false",
        )
        _sub(r, "description", ref.description)
    return to_bytes(root)


def describe_tasking_response(desc: ParameterDescription) -> bytes:
    root = response_root("DescribeTasking", procedure=desc.procedure_id)
    _sub(root, "taskingParameters").append(tasking_description_element(desc))
    return to_bytes(root)


def capabilities_document(
    *,
    title: str,
    provider: str,
    operations: Sequence[str],
    offerings: Sequence[Tuple[str, str]],
    topics_endpoint: str,
) -> bytes:
    root = etree.Element(q("Capabilities"), {"version": VERSION}, nsmap=NSMAP)
    ident = _sub(root, "ServiceIdentification")
    _sub(ident, "title", title)
    _sub(ident, "serviceType", SERVICE)
    _sub(ident, "serviceTypeVersion", VERSION)
    _sub(_sub(root, "ServiceProvider"), "providerName", provider)
    ops = _sub(root, "OperationsMetadata")
    for name in operations:
        _sub(ops, "Operation", name=name)
    contents = _sub(root, "Contents")
    for procedure_id, asset_id in offerings:
        offering = _sub(contents, "offering")
        _sub(offering, "procedure", procedure_id)
        _sub(offering, "asset", asset_id)
        _sub(offering, "encoding", "TextEncoding")
    _sub(root, "notifications", topics=topics_endpoint)
    return to_bytes(root)


def exception_report(err: SpsError, alternatives: Sequence[ParameterData] = (), desc: Optional[ParameterDescription] = None) -> bytes:
    root = etree.Element(q("ExceptionReport", OWS_NS), {"version": VERSION}, nsmap={"ows": OWS_NS, "sps": SPS_NS})
    exc = etree.SubElement(root, q("Exception", OWS_NS), exceptionCode=err.code)
    if err.locator:
        exc.set("locator", err.locator)
    etree.SubElement(exc, q("ExceptionText", OWS_NS)).text = err.text
    for v in getattr(err, "violations", None) or []:
        etree.SubElement(exc, q("ExceptionText", OWS_NS)).text = f"{v.path}: {v.kind}" + (f" ({v.message})" if v.message else "")
    alternatives_element(root, alternatives, desc)
    return to_bytes(root)


def events_document(
    subscription_id: str, events: Sequence[NotificationEvent], overflowed: bool, desc_for: Any = None
) -> bytes:
    root = etree.Element(
        q("Notifications"),
        {"version": VERSION, "subscription": subscription_id, "overflow": "true" if overflowed else "false"},
        nsmap=NSMAP,
    )
    for e in events:
        n = _sub(root, "Notification", topic=e.topic, sequence=e.sequence, emittedAt=e.emitted_at.isoformat())
        status_report_element(n, e.payload, desc_for(e.payload.procedure_id) if desc_for else None)
    return to_bytes(root)


def bindings_document(variables: Sequence[str], rows: Sequence[Dict[Any, Any]]) -> bytes:
    root = etree.Element(q("QueryResult"), {"version": VERSION}, nsmap=NSMAP)
    head = _sub(root, "head")
    for v in variables:
        _sub(head, "variable", name=v)
    results = _sub(root, "results", count=len(rows))
    for row in rows:
        r = _sub(results, "result")
        for var, term in sorted(row.items(), key=lambda kv: str(kv[0])):
            _sub(r, "binding", term.n3(), name=str(var))
    return to_bytes(root)


def result_document(ref: ResultReference, procedure_id: str) -> bytes:
    root = etree.Element(q("ResultDocument"), {"version": VERSION}, nsmap=NSMAP)
    _sub(root, "task", ref.task_id)
    _sub(root, "procedure", procedure_id)
    _sub(root, "uri", ref.uri)
    _sub(root, "producedAt", ref.produced_at)
    _sub(root, "partial", ref.partial)
    _sub(root, "description", ref.description)
    return to_bytes(root)


# ---- client-side readers ----

def read_exception(root: etree._Element) -> Optional[Tuple[str, str, Optional[str]]]:
    if root.tag != q("ExceptionReport", OWS_NS):
        return None
    exc = root.find(q("Exception", OWS_NS))
    if exc is None:
        return ("NoApplicableCode", "empty exception report", None)
    text = exc.findtext(q("ExceptionText", OWS_NS)) or ""
    return exc.get("exceptionCode") or "NoApplicableCode", text, exc.get("locator")


def read_status_report(el: etree._Element) -> Dict[str, Optional[str]]:
    keys = (
        "task",
        "request",
        "procedure",
        "requestStatus",
        "taskStatus",
        "percentCompletion",
        "statusMessage",
        "updateTime",
        "dataAvailable",
        "reservationExpiration",
    )
    return {k: el.findtext(q(k)) for k in keys}


def find_report(root: etree._Element) -> Optional[etree._Element]:
    for tag in ("StatusReport", "ReservationReport"):
        el = root.find(f".//{q(tag)}")
        if el is not None:
            return el
    return None
