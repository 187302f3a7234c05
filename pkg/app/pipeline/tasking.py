from __future__ import annotations

import logging
from typing import TYPE_CHECKING, List, Optional, TypedDict

from langgraph.graph import END, StateGraph

from swe.models import ParameterData

from ..assets import FeasibilityResult
from ..errors import CapacityExhausted, FeasibilityIdNotReusable, InvalidParameterValue, SpsError
from ..models import (
    EventKind,
    NotificationEvent,
    RequestKind,
    RequestStatus,
    StatusReport,
    Task,
    TaskingRequest,
    TaskKind,
)
from ..repo import create_task, request_report, status_report

if TYPE_CHECKING:
    from ..service import SpsService, TaskingOutcome

logger = logging.getLogger(__name__)


class TaskingState(TypedDict, total=False):
    kind: RequestKind
    procedure_id: str
    parameters: ParameterData
    feasibility_id: Optional[str]
    request: TaskingRequest
    verdict: FeasibilityResult
    task: Optional[Task]
    report: Optional[StatusReport]
    alternatives: List[ParameterData]
    events: List[NotificationEvent]
    error: Optional[SpsError]


def _node_register(service: "SpsService", state: TaskingState) -> TaskingState:
    fid = state.get("feasibility_id")
    if fid:
        if service.store.has(fid) and service.store.get(fid).kind == TaskKind.FEASIBILITY_STUDY:
            state["error"] = FeasibilityIdNotReusable(
                f"{fid} identifies a feasibility study; submit or reserve without it", "feasibilityID"
            )
        else:
            state["error"] = InvalidParameterValue(f"{fid} is not a feasibility study", "feasibilityID")
        return state
    req = TaskingRequest(
        request_id=service.store.next_request_id(),
        kind=state["kind"],
        procedure_id=state["procedure_id"],
        parameters=state["parameters"],
        received_at=service.now(),
    )
    state["request"] = service.store.add_request(req)
    state["events"] = []
    state["alternatives"] = []
    logger.info("tasking.register: req=%s kind=%s procedure=%s", req.request_id, req.kind.value, req.procedure_id)
    return state


def _node_assess(service: "SpsService", state: TaskingState) -> TaskingState:
    req = state["request"]
    state["verdict"] = service.assets.assess(req.procedure_id, req.parameters)
    logger.info(
        "tasking.assess: req=%s feasible=%s checks=%s",
        req.request_id,
        state["verdict"].feasible,
        list(state["verdict"].failed_checks),
    )
    return state


def _router(service: "SpsService", state: TaskingState) -> str:
    if state.get("error") is not None:
        return "stop"
    if state["kind"] == RequestKind.FEASIBILITY:
        return "study"
    if service.decision_delay(state["procedure_id"]) > 0:
        return "pending"
    return "decide"


def _node_study(service: "SpsService", state: TaskingState) -> TaskingState:
    req, verdict = state["request"], state["verdict"]
    now = service.now()
    task_id = service.store.next_task_id()
    req = service.store.decide(
        req.request_id, RequestStatus.ACCEPTED, now, task_id=task_id, asset_id=verdict.asset_id, reason=verdict.reason
    )
    task = service.store.insert(create_task(req, verdict.feasible, verdict.asset_id, now, task_id=task_id))
    report = status_report(task, now, request=req, message=verdict.reason)
    state.update(
        request=req,
        task=task,
        report=report.model_copy(update={"alternatives": list(verdict.alternatives)}),
        alternatives=list(verdict.alternatives),
        events=[
            NotificationEvent(
                topic=EventKind.TASKING_REQUEST_ACCEPTANCE.value, payload=request_report(req, now), emitted_at=now
            )
        ],
    )
    return state


def _node_pending(service: "SpsService", state: TaskingState) -> TaskingState:
    req = state["request"]
    state["events"] = service.defer(req)
    state["report"] = request_report(req, service.now())
    return state


def _node_decide(service: "SpsService", state: TaskingState) -> TaskingState:
    req, task, events = service.decide(state["request"], state["verdict"])
    state.update(request=req, task=task, events=events, alternatives=list(req.alternatives))
    state["report"] = events[-1].payload if task is not None else request_report(req, service.now())
    if state["verdict"].capacity_only:
        state["error"] = CapacityExhausted(req.reason, state["verdict"].asset_id)
    return state


def _node_annotate(service: "SpsService", state: TaskingState) -> TaskingState:
    service.annotate(state["request"], state.get("task"))
    return state


def _node_notify(service: "SpsService", state: TaskingState) -> TaskingState:
    service.publish(state.get("events") or [])
    return state


def build_tasking_graph(service: "SpsService"):
    g = StateGraph(TaskingState)
    g.add_node("register", lambda s: _node_register(service, s))
    g.add_node("assess", lambda s: _node_assess(service, s))
    g.add_node("study", lambda s: _node_study(service, s))
    g.add_node("pending", lambda s: _node_pending(service, s))
    g.add_node("decide", lambda s: _node_decide(service, s))
    g.add_node("annotate", lambda s: _node_annotate(service, s))
    g.add_node("notify", lambda s: _node_notify(service, s))

    g.set_entry_point("register")
    g.add_conditional_edges(
        "register",
        lambda s: "stop" if s.get("error") is not None else "assess",
        {"assess": "assess", "stop": END},
    )
    g.add_conditional_edges(
        "assess",
        lambda s: _router(service, s),
        {"study": "study", "pending": "pending", "decide": "decide", "stop": END},
    )
    g.add_edge("study", "annotate")
    g.add_edge("pending", "annotate")
    g.add_edge("decide", "annotate")
    g.add_edge("annotate", "notify")
    g.add_edge("notify", END)
    return g.compile()


def run_tasking_graph(
    service: "SpsService",
    kind: RequestKind,
    procedure_id: str,
    parameters: ParameterData,
    feasibility_id: Optional[str] = None,
) -> "TaskingOutcome":
    from ..service import TaskingOutcome

    state: TaskingState = {
        "kind": kind,
        "procedure_id": procedure_id,
        "parameters": parameters,
        "feasibility_id": feasibility_id,
        "error": None,
    }
    with service.lock:
        out = service.tasking_graph.invoke(state)
    if out.get("error") is not None:
        raise out["error"]
    req = out["request"]
    task = out.get("task")
    return TaskingOutcome(
        request=req,
        task=task,
        report=out.get("report"),
        alternatives=out.get("alternatives") or [],
        feasible=(task.state.value == "Feasible") if task is not None and task.kind == TaskKind.FEASIBILITY_STUDY else None,
    )
