from __future__ import annotations

import itertools
import logging
import threading
from datetime import datetime, timedelta
from typing import Callable, Dict, List, Optional, Tuple

from swe.models import ParameterData

from .assets import AssetLayer
from .errors import IllegalTransition, NotYetExpired, RejectedRequest, UnknownRequest, UnknownTask
from .models import (
    HOLDING_STATES,
    Command,
    CommandKind,
    EventKind,
    HistoryEntry,
    NotificationEvent,
    RequestKind,
    RequestStatus,
    ReservationReport,
    StatusReport,
    Task,
    TaskingRequest,
    TaskKind,
    TaskState,
)

logger = logging.getLogger(__name__)

TICK = timedelta(microseconds=1)

# (state, command) -> (next state, event published). Every other pair is illegal.
TRANSITIONS: Dict[Tuple[TaskState, CommandKind], Tuple[TaskState, EventKind]] = {
    (TaskState.RESERVED, CommandKind.CONFIRM): (TaskState.IN_EXECUTION, EventKind.TASK_CONFIRMATION),
    (TaskState.RESERVED, CommandKind.EXPIRE_RESERVATION): (TaskState.RESERVATION_EXPIRED, EventKind.RESERVATION_EXPIRATION),
    (TaskState.RESERVED, CommandKind.CANCEL): (TaskState.CANCELLED, EventKind.TASK_CANCELLATION),
    (TaskState.IN_EXECUTION, CommandKind.CANCEL): (TaskState.CANCELLED, EventKind.TASK_CANCELLATION),
    (TaskState.RESERVED, CommandKind.UPDATE): (TaskState.RESERVED, EventKind.TASK_UPDATE),
    (TaskState.IN_EXECUTION, CommandKind.UPDATE): (TaskState.IN_EXECUTION, EventKind.TASK_UPDATE),
    (TaskState.IN_EXECUTION, CommandKind.EXECUTION_COMPLETED): (TaskState.COMPLETED, EventKind.TASK_COMPLETION),
    (TaskState.IN_EXECUTION, CommandKind.EXECUTION_FAILED): (TaskState.FAILED, EventKind.TASK_FAILURE),
}

UpdateCheck = Callable[[Task, ParameterData], None]


def _stamp(history: List[HistoryEntry], at: datetime) -> datetime:
    if history and at <= history[-1].at:
        return history[-1].at + TICK
    return at


def _record(task: Task, at: datetime, event: str, detail: str = "") -> List[HistoryEntry]:
    return [*task.history, HistoryEntry(at=_stamp(task.history, at), event=event, detail=detail)]


def status_report(
    task: Task,
    now: datetime,
    *,
    data_available: bool = False,
    request: Optional[TaskingRequest] = None,
    message: str = "",
    reservation_expiration: Optional[datetime] = None,
) -> StatusReport:
    """Current StatusReport of a task; a ReservationReport when `reservation_expiration` is passed."""
    timestamp = max(now, task.history[-1].at) if task.history else now
    fields = dict(
        task_id=task.task_id,
        request_id=task.request_id,
        procedure_id=task.procedure_id,
        state=task.state,
        request_status=request.status if request else None,
        percent_completion=100 if task.state == TaskState.COMPLETED else min(task.progress, 99),
        message=message or task.state.value,
        timestamp=timestamp,
        data_available=data_available,
    )
    if reservation_expiration is not None:
        return ReservationReport(reservation_expiration=reservation_expiration, **fields)
    return StatusReport(**fields)


def request_report(req: TaskingRequest, now: datetime, *, message: str = "") -> StatusReport:
    return StatusReport(
        task_id=req.task_id,
        request_id=req.request_id,
        procedure_id=req.procedure_id,
        request_status=req.status,
        message=message or req.reason or req.status.value,
        timestamp=now,
        alternatives=list(req.alternatives),
    )


def create_task(
    req: TaskingRequest,
    feasible: bool,
    asset_id: Optional[str],
    now: datetime,
    *,
    task_id: str,
    reservation_lifetime_s: int = 300,
) -> Task:
    if req.status != RequestStatus.ACCEPTED:
        raise RejectedRequest(f"request {req.request_id} is {req.status.value}", req.request_id)
    expiration = None
    if req.kind == RequestKind.FEASIBILITY:
        kind, state = TaskKind.FEASIBILITY_STUDY, (TaskState.FEASIBLE if feasible else TaskState.INFEASIBLE)
    elif req.kind == RequestKind.SUBMIT:
        kind, state = TaskKind.SUBMISSION, TaskState.IN_EXECUTION
    else:
        kind, state = TaskKind.SUBMISSION, TaskState.RESERVED
        expiration = now + timedelta(seconds=reservation_lifetime_s)
    detail = f"expires={expiration.isoformat()}" if expiration else f"asset={asset_id}"
    return Task(
        task_id=task_id,
        kind=kind,
        state=state,
        procedure_id=req.procedure_id,
        parameters=req.parameters,
        request_id=req.request_id,
        asset_id=asset_id,
        reservation_expiration=expiration,
        created_at=now,
        updated_at=now,
        history=[HistoryEntry(at=now, event="Created", detail=f"{state.value} {detail}")],
    )


def transition(
    task: Task,
    command: Command,
    now: datetime,
    *,
    update_check: Optional[UpdateCheck] = None,
    data_available: bool = False,
) -> Tuple[Task, List[NotificationEvent]]:
    """Pure lifecycle step: returns the new task and the events to publish (unsequenced)."""
    if task.kind == TaskKind.FEASIBILITY_STUDY:
        raise IllegalTransition(f"{command.kind.value} on feasibility study {task.task_id}", task.task_id)
    step = TRANSITIONS.get((task.state, command.kind))
    if step is None:
        raise IllegalTransition(f"{command.kind.value} not allowed in state {task.state.value}", task.task_id)
    next_state, event = step

    if command.kind == CommandKind.EXPIRE_RESERVATION and now < task.reservation_expiration:  # type: ignore[operator]
        raise NotYetExpired(
            f"reservation of {task.task_id} expires at {task.reservation_expiration.isoformat()}",  # type: ignore[union-attr]
            task.task_id,
        )

    update: dict = {"state": next_state}
    detail = ""
    if command.kind == CommandKind.UPDATE:
        if command.parameters is None:
            raise IllegalTransition("Update without parameters", task.task_id)
        if update_check is not None:
            update_check(task, command.parameters)
        update["parameters"] = command.parameters
    if command.kind == CommandKind.EXECUTION_COMPLETED:
        update["progress"] = 100

    old_expiration = task.reservation_expiration
    if next_state != TaskState.RESERVED and old_expiration is not None:
        update["reservation_expiration"] = None
        detail = f"reservationExpiration={old_expiration.isoformat()}"

    history = _record(task, now, command.kind.value, detail)
    update["history"] = history
    update["updated_at"] = history[-1].at
    new_task = task.model_copy(update=update)

    payload = status_report(
        new_task,
        now,
        data_available=data_available,
        reservation_expiration=old_expiration if event == EventKind.RESERVATION_EXPIRATION else None,
    )
    events = [NotificationEvent(topic=event.value, payload=payload, emitted_at=history[-1].at)]
    return new_task, events


class TaskStore:
    """Single owner of requests and tasks; every mutation goes through one lock."""

    def __init__(self, assets: AssetLayer) -> None:
        self.assets = assets
        self._lock = threading.RLock()
        self._tasks: Dict[str, Task] = {}
        self._requests: Dict[str, TaskingRequest] = {}
        self._req_ids = itertools.count(1)
        self._task_ids = itertools.count(1)

    @property
    def lock(self) -> threading.RLock:
        return self._lock

    def next_request_id(self) -> str:
        with self._lock:
            return f"req_{next(self._req_ids)}"

    def next_task_id(self) -> str:
        with self._lock:
            return f"task_{next(self._task_ids)}"

    # ---- requests ----

    def add_request(self, req: TaskingRequest) -> TaskingRequest:
        with self._lock:
            self._requests[req.request_id] = req
            return req

    def request(self, request_id: str) -> TaskingRequest:
        with self._lock:
            try:
                return self._requests[request_id]
            except KeyError:
                raise UnknownRequest(f"unknown request {request_id}", request_id) from None

    def decide(self, request_id: str, status: RequestStatus, now: datetime, **changes) -> TaskingRequest:
        with self._lock:
            req = self.request(request_id)
            if req.status != RequestStatus.PENDING:
                raise IllegalTransition(f"request {request_id} already {req.status.value}", request_id)
            if status == RequestStatus.PENDING:
                raise IllegalTransition("requests cannot return to Pending", request_id)
            new_req = req.model_copy(update={"status": status, "decided_at": now, **changes})
            if new_req.alternatives and status != RequestStatus.REJECTED:
                raise IllegalTransition("alternatives are only carried by rejected requests", request_id)
            self._requests[request_id] = new_req
            logger.info("tasking.decide: req=%s status=%s", request_id, status.value)
            return self._requests[request_id]

    def requests(self) -> List[TaskingRequest]:
        with self._lock:
            return list(self._requests.values())

    # ---- tasks ----

    def insert(self, task: Task) -> Task:
        with self._lock:
            if task.asset_id is not None and task.state in HOLDING_STATES:
                self.assets.reserve_capacity(self.assets.profile(task.asset_id), task.task_id)
            self._tasks[task.task_id] = task
            self.assets.track(task.task_id)
            logger.info("tasks.insert: task=%s kind=%s state=%s", task.task_id, task.kind.value, task.state.value)
            return task

    def get(self, task_id: str) -> Task:
        with self._lock:
            try:
                return self._tasks[task_id]
            except KeyError:
                raise UnknownTask(f"unknown task {task_id}", task_id) from None

    def has(self, task_id: str) -> bool:
        with self._lock:
            return task_id in self._tasks

    def tasks(self) -> List[Task]:
        with self._lock:
            return list(self._tasks.values())

    def set_progress(self, task_id: str, progress: int) -> Task:
        with self._lock:
            task = self.get(task_id)
            task = task.model_copy(update={"progress": max(task.progress, progress)})
            self._tasks[task_id] = task
            return task

    def apply(
        self, task_id: str, command: Command, now: datetime, *, update_check: Optional[UpdateCheck] = None
    ) -> Tuple[Task, List[NotificationEvent]]:
        """Serialized transition; releases capacity when the task stops holding it."""
        with self._lock:
            task = self.get(task_id)
            data_available = bool(self.assets.result_references(task_id))
            new_task, events = transition(
                task, command, now, update_check=update_check, data_available=data_available
            )
            if task.state in HOLDING_STATES and new_task.state not in HOLDING_STATES and task.asset_id:
                self.assets.release_capacity(self.assets.profile(task.asset_id), task_id)
            self._tasks[task_id] = new_task
            logger.info(
                "tasks.transition: task=%s command=%s %s->%s",
                task_id,
                command.kind.value,
                task.state.value,
                new_task.state.value,
            )
            return new_task, events

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "tasks": {k: v.model_dump(mode="json") for k, v in self._tasks.items()},
                "requests": {k: v.model_dump(mode="json") for k, v in self._requests.items()},
                "capacity": self.assets.snapshot(),
            }


def expiration_sweep(store: TaskStore, now: datetime) -> List[Tuple[Task, NotificationEvent]]:
    """Expire every Reserved task whose instant has passed; a repeat sweep finds nothing."""
    out: List[Tuple[Task, NotificationEvent]] = []
    with store.lock:
        due = [
            t.task_id
            for t in store.tasks()
            if t.state == TaskState.RESERVED and t.reservation_expiration is not None and t.reservation_expiration <= now
        ]
        for task_id in sorted(due, key=_id_order):
            task, events = store.apply(task_id, Command(kind=CommandKind.EXPIRE_RESERVATION), now)
            out.extend((task, e) for e in events)
    if out:
        logger.info("tasks.sweep: expired=%s", [t.task_id for t, _ in out])
    return out


def _id_order(identifier: str) -> Tuple[str, int]:
    prefix, _, n = identifier.rpartition("_")
    return prefix, int(n) if n.isdigit() else 0
