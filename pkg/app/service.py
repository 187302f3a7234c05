from __future__ import annotations

import logging
import threading
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from swe.codec import validate_data
from swe.description import parse_tasking_description
from swe.models import ParameterData, ParameterDescription

from .assets import AssetLayer, AssetProfile, ExecutionStep, FeasibilityResult, check_feasibility, execute
from .clock import Clock, Ticker, TimerToken, VirtualClock, build_clock
from .config import OPERATIONS, Settings
from .errors import (
    CapacityExhausted,
    InvalidParameterValue,
    InvalidRequest,
    UnknownTask,
    UpdateNotFeasible,
    from_codec_error,
)
from .models import (
    Command,
    CommandKind,
    EventKind,
    NotificationEvent,
    RequestKind,
    RequestStatus,
    ResultReference,
    StatusReport,
    Task,
    TaskingRequest,
    TaskState,
)
from .notifications import NotificationHub
from .repo import TaskStore, create_task, expiration_sweep, request_report, status_report
from .schemas import load_asset_profiles
from .semantics import SemanticStore

logger = logging.getLogger(__name__)


class TaskingOutcome(BaseModel):
    """What a tasking operation hands back to its listener."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    request: TaskingRequest
    task: Optional[Task] = None
    report: Optional[StatusReport] = None
    alternatives: List[ParameterData] = []
    feasible: Optional[bool] = None


def load_descriptions(directory: Path) -> Dict[str, ParameterDescription]:
    out: Dict[str, ParameterDescription] = {}
    for path in sorted(Path(directory).glob("*.xml")):
        desc = parse_tasking_description(path.read_bytes())
        if desc.procedure_id in out:
            raise ValueError(f"procedure {desc.procedure_id} described twice ({path.name})")
        out[desc.procedure_id] = desc
    return out


def load_sensor_documents(directory: Path) -> Dict[str, bytes]:
    if not Path(directory).is_dir():
        return {}
    return {p.stem: p.read_bytes() for p in sorted(Path(directory).glob("*.xml"))}


class SpsService:
    """Single-process service state: requests, tasks, assets, notifications and semantics.

    Every mutation happens under the store lock; timers fire under it too.
    """

    def __init__(
        self,
        settings: Settings,
        *,
        clock: Optional[Clock] = None,
        profiles: Optional[Sequence[AssetProfile]] = None,
        descriptions: Optional[Dict[str, ParameterDescription]] = None,
        sensors: Optional[Dict[str, bytes]] = None,
    ) -> None:
        self.settings = settings
        self.clock = clock or build_clock(settings.clock, settings.clock_start)
        self.descriptions = descriptions if descriptions is not None else load_descriptions(settings.procedures_dir)
        self.sensors = sensors if sensors is not None else load_sensor_documents(settings.sensors_dir)
        profiles = list(profiles) if profiles is not None else load_asset_profiles(settings.assets_file)
        for p in profiles:
            if p.procedure_id not in self.descriptions:
                raise ValueError(f"asset {p.asset_id} serves undescribed procedure {p.procedure_id}")
        self.assets = AssetLayer(profiles, seed=settings.seed, max_alternatives=settings.max_alternatives)
        self.store = TaskStore(self.assets)
        self.hub = NotificationHub(settings.queue_limit)
        self.semantics = SemanticStore(inference=settings.inference)
        self._plans: Dict[str, List[ExecutionStep]] = {}
        self._ticker: Optional[Ticker] = None

        from .pipeline.tasking import build_tasking_graph

        self.tasking_graph = build_tasking_graph(self)
        logger.info(
            "service.init: procedures=%s assets=%s clock=%s",
            sorted(self.descriptions),
            [p.asset_id for p in profiles],
            type(self.clock).__name__,
        )

    @property
    def lock(self) -> threading.RLock:
        return self.store.lock

    def now(self) -> datetime:
        return self.clock.now()

    # ---- lookups ----

    def description(self, procedure_id: Optional[str]) -> ParameterDescription:
        try:
            return self.descriptions[procedure_id or ""]
        except KeyError:
            raise InvalidParameterValue(f"unknown procedure {procedure_id!r}", "procedure") from None

    def description_or_none(self, procedure_id: str) -> Optional[ParameterDescription]:
        return self.descriptions.get(procedure_id)

    def sensor_document(self, procedure_id: Optional[str]) -> bytes:
        self.description(procedure_id)
        try:
            return self.sensors[procedure_id or ""]
        except KeyError:
            raise InvalidParameterValue(f"no sensor description for {procedure_id}", "procedure") from None

    def offerings(self) -> List[Tuple[str, str]]:
        return [(p.procedure_id, p.asset_id) for p in self.assets.profiles]

    def enabled_operations(self) -> List[str]:
        return [op for op in OPERATIONS if op in self.settings.listeners]

    # ---- events and semantics ----

    def publish(self, events: Iterable[NotificationEvent]) -> None:
        for event in events:
            self.hub.publish(event)

    def annotate(self, req: Optional[TaskingRequest] = None, task: Optional[Task] = None) -> None:
        if req is not None:
            self.semantics.record_request(req)
        if task is not None:
            self.semantics.record_task(task, self.assets.result_references(task.task_id))

    # ---- tasking ----

    def tasking_request(
        self,
        kind: RequestKind,
        procedure_id: str,
        parameters: ParameterData,
        feasibility_id: Optional[str] = None,
    ) -> TaskingOutcome:
        from .pipeline.tasking import run_tasking_graph

        return run_tasking_graph(self, kind, procedure_id, parameters, feasibility_id)

    def decision_delay(self, procedure_id: str) -> int:
        profiles = self.assets.profiles_for(procedure_id)
        return profiles[0].decision_delay_s if profiles else 0

    def decide(
        self, req: TaskingRequest, verdict: FeasibilityResult
    ) -> Tuple[TaskingRequest, Optional[Task], List[NotificationEvent]]:
        """Accept or reject a Pending Submit/Reserve request; returns the events to publish."""
        now = self.now()
        if not verdict.feasible:
            req = self.store.decide(
                req.request_id,
                RequestStatus.REJECTED,
                now,
                alternatives=list(verdict.alternatives),
                asset_id=verdict.asset_id,
                reason=verdict.reason,
            )
            return req, None, [self._request_event(EventKind.TASKING_REQUEST_REJECTION, req, now)]

        task_id = self.store.next_task_id()
        task = create_task(
            req.model_copy(update={"status": RequestStatus.ACCEPTED}),
            True,
            verdict.asset_id,
            now,
            task_id=task_id,
            reservation_lifetime_s=self.settings.reservation_lifetime_s,
        )
        # capacity is taken before the request is recorded as Accepted
        try:
            self.store.insert(task)
        except CapacityExhausted as ex:
            req = self.store.decide(req.request_id, RequestStatus.REJECTED, now, asset_id=verdict.asset_id, reason=ex.text)
            self.annotate(req)
            self.publish([self._request_event(EventKind.TASKING_REQUEST_REJECTION, req, now)])
            raise
        req = self.store.decide(
            req.request_id, RequestStatus.ACCEPTED, now, task_id=task_id, asset_id=verdict.asset_id, reason="accepted"
        )
        events = [self._request_event(EventKind.TASKING_REQUEST_ACCEPTANCE, req, now)]
        if task.state == TaskState.RESERVED:
            report = status_report(task, now, request=req, reservation_expiration=task.reservation_expiration)
            events.append(NotificationEvent(topic=EventKind.TASK_RESERVATION.value, payload=report, emitted_at=now))
            self.clock.schedule(task.reservation_expiration, ("sweep",))  # type: ignore[arg-type]
        else:
            report = status_report(task, now, request=req)
            events.append(NotificationEvent(topic=EventKind.TASK_SUBMISSION.value, payload=report, emitted_at=now))
            self._start_execution(task, now)
        return req, task, events

    def defer(self, req: TaskingRequest) -> List[NotificationEvent]:
        """Leave a request Pending; the decision and the lifetime expiry become timers."""
        now = self.now()
        delay = self.decision_delay(req.procedure_id)
        self.clock.schedule(now + timedelta(seconds=delay), ("decide", req.request_id))
        self.clock.schedule(now + timedelta(seconds=self.settings.request_lifetime_s), ("request-expire", req.request_id))
        logger.info("tasking.defer: req=%s delay=%s", req.request_id, delay)
        return [self._request_event(EventKind.TASKING_REQUEST_PENDING, req, now)]

    def _request_event(self, kind: EventKind, req: TaskingRequest, now: datetime) -> NotificationEvent:
        return NotificationEvent(topic=kind.value, payload=request_report(req, now), emitted_at=now)

    # ---- task commands ----

    def task_command(
        self, kind: CommandKind, task_id: str, parameters: Optional[ParameterData] = None
    ) -> StatusReport:
        with self.lock:
            now = self.now()
            task, events = self.store.apply(
                task_id, Command(kind=kind, parameters=parameters), now, update_check=self._update_check
            )
            if kind == CommandKind.CONFIRM:
                self._start_execution(task, now)
            elif kind == CommandKind.CANCEL:
                self._stop_execution(task_id)
            self.annotate(task=task)
            self.publish(events)
            return self.status(task_id)

    def _update_check(self, task: Task, parameters: ParameterData) -> None:
        desc = self.description(task.procedure_id)
        failure = validate_data(desc, parameters)
        if failure is not None:
            raise from_codec_error(failure)
        if len(parameters.blocks) != len(task.parameters.blocks):
            raise UpdateNotFeasible("an update keeps the number of parameter blocks", "taskingParameters")
        for old, new in zip(task.parameters.blocks, parameters.blocks):
            for name in sorted(set(old) | set(new)):
                if name not in desc.updatable_field_names and old.get(name) != new.get(name):
                    raise UpdateNotFeasible(f"field {name} is not updatable", name)
        if task.asset_id is None:
            return
        profile = self.assets.profile(task.asset_id)
        verdict = check_feasibility(
            profile,
            parameters,
            procedure_id=task.procedure_id,
            available=self.assets.available(profile, exclude_task=task.task_id),
            max_alternatives=self.assets.max_alternatives,
        )
        if not verdict.feasible:
            raise UpdateNotFeasible(verdict.reason, task.task_id, alternatives=list(verdict.alternatives))

    # ---- reads ----

    def status(self, identifier: str) -> StatusReport:
        with self.lock:
            now = self.now()
            if self.store.has(identifier):
                task = self.store.get(identifier)
                req = self.store.request(task.request_id) if task.request_id else None
                return status_report(
                    task,
                    now,
                    request=req,
                    data_available=bool(self.assets.result_references(identifier)),
                    reservation_expiration=task.reservation_expiration,
                )
            return request_report(self.store.request(identifier), now)

    def get_task(self, task_id: str) -> Task:
        return self.store.get(task_id)

    def result_references(self, task_id: str) -> List[ResultReference]:
        with self.lock:
            self.store.get(task_id)
            return self.assets.result_references(task_id)

    def result(self, task_id: str, n: int) -> ResultReference:
        ref = self.assets.reference(task_id, n)
        if ref is None:
            raise UnknownTask(f"no result {n} for task {task_id}", task_id)
        return ref

    def snapshot(self) -> dict:
        with self.lock:
            return {
                **self.store.snapshot(),
                "triples": len(self.semantics),
                "timers": [(at.isoformat(), list(tok)) for at, tok in self.clock.scheduled()],
            }

    # ---- clock and timers ----

    def advance_clock(self, seconds: float) -> int:
        if not isinstance(self.clock, VirtualClock):
            raise InvalidRequest("only a virtual clock can be advanced", "clock")
        if seconds < 0:
            raise InvalidParameterValue("the clock never moves backwards", "seconds")
        with self.lock:
            target = self.now() + timedelta(seconds=seconds)
            fired = self._fire_due(target, steer=True)
            self.clock.set(target)
        logger.info("clock.advance: seconds=%s now=%s fired=%s", seconds, target.isoformat(), fired)
        return fired

    def tick(self) -> int:
        with self.lock:
            return self._fire_due(self.now(), steer=False)

    def next_timer(self) -> Optional[datetime]:
        timers = self.clock.scheduled()
        return timers[0][0] if timers else None

    def _fire_due(self, until: datetime, *, steer: bool) -> int:
        fired = 0
        while (due := self.clock.pop_due(until)) is not None:
            at, token = due
            if steer:
                self.clock.set(at)
            self._on_timer(token, at)
            fired += 1
        return fired

    def _on_timer(self, token: TimerToken, at: datetime) -> None:
        kind = token[0]
        if kind == "exec":
            self._execution_step(str(token[1]), int(token[2]), at)  # type: ignore[call-overload]
        elif kind == "sweep":
            for task, event in expiration_sweep(self.store, at):
                self.annotate(task=task)
                self.publish([event])
        elif kind == "decide":
            self._deferred_decision(str(token[1]))
        elif kind == "request-expire":
            self._request_expiry(str(token[1]), at)
        else:
            logger.warning("clock.timer: unknown token=%s", token)

    def _deferred_decision(self, request_id: str) -> None:
        req = self.store.request(request_id)
        if req.status != RequestStatus.PENDING:
            return
        verdict = self.assets.assess(req.procedure_id, req.parameters)
        req, task, events = self.decide(req, verdict)
        self.annotate(req, task)
        self.publish(events)

    def _request_expiry(self, request_id: str, at: datetime) -> None:
        req = self.store.request(request_id)
        if req.status != RequestStatus.PENDING:
            return
        req = self.store.decide(request_id, RequestStatus.EXPIRED, at, reason="no decision within the request lifetime")
        self.annotate(req)
        self.publish([self._request_event(EventKind.TASKING_REQUEST_EXPIRATION, req, at)])

    # ---- simulated execution ----

    def _start_execution(self, task: Task, at: datetime) -> None:
        if task.asset_id is None:
            return
        plan = list(execute(task.task_id, self.assets.profile(task.asset_id), at, self.settings.seed))
        self._plans[task.task_id] = plan
        for i, step in enumerate(plan[1:], start=1):
            self.clock.schedule(step.at, ("exec", task.task_id, i))
        logger.info("exec.start: task=%s finish=%s outcome=%s", task.task_id, plan[-1].at.isoformat(), plan[-1].outcome)

    def _stop_execution(self, task_id: str) -> None:
        self._plans.pop(task_id, None)
        self.clock.cancel(lambda tok: tok[0] == "exec" and tok[1] == task_id)

    def _execution_step(self, task_id: str, index: int, at: datetime) -> None:
        plan = self._plans.get(task_id)
        task = self.store.get(task_id)
        if plan is None or task.state != TaskState.IN_EXECUTION:
            return
        step = plan[index]
        events: List[NotificationEvent] = []
        if step.outcome is None:
            task = self.store.set_progress(task_id, step.progress)
            if step.publish_partial:
                self.assets.publish_result(task_id, at, partial=True)
                report = status_report(task, at, data_available=True, message="partial result published")
                events.append(NotificationEvent(topic=EventKind.DATA_PUBLICATION.value, payload=report, emitted_at=at))
        elif step.outcome == "completed":
            self.assets.publish_result(task_id, at, partial=False)
            task, done = self.store.apply(task_id, Command(kind=CommandKind.EXECUTION_COMPLETED), at)
            report = status_report(task, at, data_available=True, message="result published")
            events.append(NotificationEvent(topic=EventKind.DATA_PUBLICATION.value, payload=report, emitted_at=at))
            events.extend(done)
            self._plans.pop(task_id, None)
        else:
            task, failed = self.store.apply(task_id, Command(kind=CommandKind.EXECUTION_FAILED), at)
            events.extend(failed)
            self._plans.pop(task_id, None)
        self.annotate(task=task)
        self.publish(events)

    # ---- lifecycle ----

    def start(self) -> None:
        if not isinstance(self.clock, VirtualClock) and self._ticker is None:
            self._ticker = Ticker(self.tick)
            self._ticker.start()

    def stop(self) -> None:
        if self._ticker is not None:
            self._ticker.stop()
            self._ticker = None
