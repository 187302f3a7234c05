"""RequestOperator: validates operation documents, classifies them and hands them to one listener."""
from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Dict, Optional, Tuple

from lxml import etree

from swe.models import SPS_NS, CodecError

from ..errors import (
    InvalidParameterValue,
    InvalidRequest,
    NoApplicableCode,
    OperationNotSupported,
    SpsError,
    UpdateNotFeasible,
    from_codec_error,
)
from ..models import CommandKind, RequestKind
from . import xml_io

if TYPE_CHECKING:
    from ..service import SpsService

logger = logging.getLogger(__name__)

Answer = Tuple[int, bytes]


class Listener:
    """Handles one operation; stateless, all mutation goes through the service."""

    operation: str = ""
    versioned: bool = True

    def handle(self, service: "SpsService", root: etree._Element) -> Answer:
        raise NotImplementedError


class GetCapabilitiesListener(Listener):
    operation = "GetCapabilities"
    versioned = False

    def handle(self, service, root):
        s = service.settings
        return 200, xml_io.capabilities_document(
            title=s.service_title,
            provider=s.service_provider,
            operations=service.enabled_operations(),
            offerings=service.offerings(),
            topics_endpoint="/sps/topics",
        )


class DescribeSensorListener(Listener):
    operation = "DescribeSensor"

    def handle(self, service, root):
        procedure = xml_io.child_text(root, "procedure")
        # stored SensorML is opaque: served as written, never parsed
        return 200, service.sensor_document(procedure)


class DescribeTaskingListener(Listener):
    operation = "DescribeTasking"

    def handle(self, service, root):
        desc = service.description(xml_io.child_text(root, "procedure"))
        return 200, xml_io.describe_tasking_response(desc)


class TaskingListener(Listener):
    def __init__(self, operation: str, kind: RequestKind) -> None:
        self.operation = operation
        self.kind = kind

    def handle(self, service, root):
        procedure = xml_io.child_text(root, "procedure")
        desc = service.description(procedure)
        parameters = xml_io.decode_request_parameters(root, desc)
        feasibility_id = xml_io.child_text(root, "feasibilityID", required=False)
        if feasibility_id and self.kind == RequestKind.FEASIBILITY:
            raise InvalidRequest("GetFeasibility takes no feasibilityID", "feasibilityID")
        outcome = service.tasking_request(self.kind, desc.procedure_id, parameters, feasibility_id)
        return 200, xml_io.tasking_response(
            self.operation,
            outcome.request,
            report=outcome.report,
            alternatives=outcome.alternatives,
            desc=desc,
            feasible=outcome.feasible,
        )


class TaskCommandListener(Listener):
    def __init__(self, kind: CommandKind) -> None:
        self.operation = kind.value
        self.kind = kind

    def handle(self, service, root):
        task_id = xml_io.child_text(root, "task")
        task = service.get_task(task_id)
        desc = service.description(task.procedure_id)
        parameters = None
        if self.kind == CommandKind.UPDATE:
            parameters = xml_io.decode_request_parameters(root, desc)
        try:
            report = service.task_command(self.kind, task_id, parameters)
        except UpdateNotFeasible as ex:
            logger.info("operator.update: task=%s rejected=%s", task_id, ex.text)
            return ex.http_status, xml_io.exception_report(ex, ex.alternatives, desc)
        return 200, xml_io.report_response(self.operation, report, desc)


class GetStatusListener(Listener):
    operation = "GetStatus"

    def handle(self, service, root):
        identifier = xml_io.child_text(root, "task", required=False) or xml_io.child_text(
            root, "request", required=False
        )
        if identifier is None:
            raise InvalidRequest("GetStatus needs sps:task or sps:request", "task")
        report = service.status(identifier)
        return 200, xml_io.report_response(self.operation, report, service.description_or_none(report.procedure_id))


class GetTaskListener(Listener):
    operation = "GetTask"

    def handle(self, service, root):
        task = service.get_task(xml_io.child_text(root, "task"))
        refs = service.result_references(task.task_id)
        return 200, xml_io.task_response(task, service.description(task.procedure_id), refs)


class DescribeResultAccessListener(Listener):
    operation = "DescribeResultAccess"

    def handle(self, service, root):
        task_id = xml_io.child_text(root, "task")
        return 200, xml_io.result_access_response(task_id, service.result_references(task_id))


def default_listeners() -> Dict[str, Listener]:
    listeners = [
        GetCapabilitiesListener(),
        DescribeSensorListener(),
        DescribeTaskingListener(),
        TaskingListener("GetFeasibility", RequestKind.FEASIBILITY),
        TaskingListener("Submit", RequestKind.SUBMIT),
        TaskingListener("Reserve", RequestKind.RESERVE),
        TaskCommandListener(CommandKind.CONFIRM),
        TaskCommandListener(CommandKind.UPDATE),
        TaskCommandListener(CommandKind.CANCEL),
        GetStatusListener(),
        GetTaskListener(),
        DescribeResultAccessListener(),
    ]
    return {l.operation: l for l in listeners}


class RequestOperator:
    def __init__(self, service: "SpsService", enabled: Optional[list[str]] = None) -> None:
        self.service = service
        allowed = set(enabled if enabled is not None else service.enabled_operations())
        self.listeners = {name: l for name, l in default_listeners().items() if name in allowed}

    def classify(self, root: etree._Element) -> Listener:
        qname = etree.QName(root)
        listener = self.listeners.get(qname.localname) if qname.namespace == SPS_NS else None
        if listener is None:
            raise OperationNotSupported(f"operation {qname.localname} is not supported", qname.localname)
        return listener

    def validate(self, root: etree._Element, listener: Listener) -> None:
        service = root.get("service")
        if service is None:
            raise InvalidRequest("missing service attribute", "service")
        if service != xml_io.SERVICE:
            raise InvalidParameterValue(f"service must be {xml_io.SERVICE}", "service")
        version = root.get("version")
        if listener.versioned and version is None:
            raise InvalidRequest("missing version attribute", "version")
        if version is not None and version != xml_io.VERSION:
            raise InvalidParameterValue(f"version must be {xml_io.VERSION}", "version")

    def dispatch(self, raw: bytes) -> Answer:
        operation = "?"
        try:
            root = xml_io.parse_document(raw)
            listener = self.classify(root)
            operation = listener.operation
            self.validate(root, listener)
            status, body = listener.handle(self.service, root)
            logger.info("operator.dispatch: op=%s status=%s", operation, status)
            return status, body
        except SpsError as ex:
            logger.warning("operator.dispatch: op=%s code=%s text=%s", operation, ex.code, ex.text)
            return ex.http_status, xml_io.exception_report(ex)
        except CodecError as ex:
            err = from_codec_error(ex)
            logger.warning("operator.dispatch: op=%s code=%s path=%s", operation, err.code, err.locator)
            return err.http_status, xml_io.exception_report(err)
        except Exception as ex:
            logger.exception("operator.dispatch: op=%s failed err=%s", operation, ex)
            err = NoApplicableCode("internal error", operation)
            return err.http_status, xml_io.exception_report(err)
