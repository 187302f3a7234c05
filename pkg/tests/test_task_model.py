from __future__ import annotations

import itertools
from datetime import timedelta
from decimal import Decimal

import pytest

from app.clock import VirtualClock
from app.errors import CapacityExhausted, IllegalTransition, InvalidParameterValue, NotYetExpired, UpdateNotFeasible
from app.models import (
    Command,
    CommandKind,
    RequestKind,
    RequestStatus,
    ReservationReport,
    Task,
    TaskKind,
    TaskState,
    TaskingRequest,
)
from app.repo import TRANSITIONS, expiration_sweep, transition
from app.service import SpsService
from swe.models import ChoiceValue, ParameterData
from tests.conftest import CLOCK_START, IMAGER

ASSET = "imager-sat-1"


def _task(state: TaskState, params: ParameterData) -> Task:
    return Task(
        task_id="task_1",
        kind=TaskKind.SUBMISSION,
        state=state,
        procedure_id=IMAGER,
        parameters=params,
        reservation_expiration=CLOCK_START + timedelta(seconds=60) if state == TaskState.RESERVED else None,
        created_at=CLOCK_START,
        updated_at=CLOCK_START,
    )


def _with_priority(params: ParameterData, priority: str) -> ParameterData:
    block = {**params.blocks[0], "priority": Decimal(priority)}
    return ParameterData(encoding=params.encoding, blocks=(block,))


@pytest.mark.parametrize("state, command", list(itertools.product(TaskState, CommandKind)))
def test_every_state_command_pair(listing1, state, command):
    task = _task(state, listing1)
    now = CLOCK_START + timedelta(seconds=60)
    cmd = Command(kind=command, parameters=_with_priority(listing1, "4") if command == CommandKind.UPDATE else None)
    expected = TRANSITIONS.get((state, command))
    if expected is None:
        with pytest.raises(IllegalTransition):
            transition(task, cmd, now)
        assert task.state == state
        return
    new_task, events = transition(task, cmd, now)
    assert new_task.state == expected[0]
    assert [e.topic for e in events] == [expected[1].value]
    assert (new_task.reservation_expiration is not None) == (new_task.state == TaskState.RESERVED)
    assert new_task.history[-1].event == command.value


def test_feasibility_studies_accept_no_command(listing1):
    study = _task(TaskState.FEASIBLE, listing1).model_copy(update={"kind": TaskKind.FEASIBILITY_STUDY})
    for command in CommandKind:
        with pytest.raises(IllegalTransition):
            transition(study, Command(kind=command, parameters=listing1), CLOCK_START)


def test_expiry_before_instant_is_refused(listing1):
    task = _task(TaskState.RESERVED, listing1)
    with pytest.raises(NotYetExpired):
        transition(task, Command(kind=CommandKind.EXPIRE_RESERVATION), CLOCK_START + timedelta(seconds=59))


def test_history_timestamps_strictly_increase(listing1):
    task = _task(TaskState.RESERVED, listing1)
    task = task.model_copy(update={"history": []})
    task, _ = transition(task, Command(kind=CommandKind.UPDATE, parameters=listing1), CLOCK_START)
    task, _ = transition(task, Command(kind=CommandKind.UPDATE, parameters=listing1), CLOCK_START)
    task, _ = transition(task, Command(kind=CommandKind.CONFIRM), CLOCK_START)
    stamps = [h.at for h in task.history]
    assert stamps == sorted(stamps) and len(set(stamps)) == len(stamps)


@pytest.fixture
def short_lived(settings):
    return SpsService(settings.model_copy(update={"reservation_lifetime_s": 60}))


def test_reservation_expires_exactly_at_lifetime(short_lived, listing1):
    sub = short_lived.hub.subscribe("TaskEvent")
    outcome = short_lived.tasking_request(RequestKind.RESERVE, IMAGER, listing1)
    task = outcome.task
    assert outcome.request.status == RequestStatus.ACCEPTED
    assert task.state == TaskState.RESERVED
    assert task.reservation_expiration == CLOCK_START + timedelta(seconds=60)
    assert short_lived.assets.blocked(ASSET) == 1
    assert isinstance(short_lived.status(task.task_id), ReservationReport)

    short_lived.advance_clock(59)
    assert short_lived.get_task(task.task_id).state == TaskState.RESERVED

    short_lived.advance_clock(1)
    expired = short_lived.get_task(task.task_id)
    assert expired.state == TaskState.RESERVATION_EXPIRED
    assert expired.reservation_expiration is None
    assert short_lived.assets.blocked(ASSET) == 0

    events, _ = sub.drain()
    assert [e.topic for e in events] == ["TaskReservation", "ReservationExpiration"]
    last = events[-1]
    assert isinstance(last.payload, ReservationReport)
    assert last.payload.reservation_expiration == CLOCK_START + timedelta(seconds=60)
    assert last.emitted_at >= last.payload.reservation_expiration

    with pytest.raises(IllegalTransition):
        short_lived.task_command(CommandKind.CONFIRM, task.task_id)
    assert expiration_sweep(short_lived.store, short_lived.now()) == []


def test_confirm_runs_reserved_task_to_completion(service, listing1):
    task = service.tasking_request(RequestKind.RESERVE, IMAGER, listing1).task
    report = service.task_command(CommandKind.CONFIRM, task.task_id)
    assert report.state == TaskState.IN_EXECUTION
    assert service.assets.blocked(ASSET) == 1
    service.advance_clock(60)
    done = service.status(task.task_id)
    assert done.state == TaskState.COMPLETED
    assert done.percent_completion == 100
    assert done.data_available
    assert service.assets.blocked(ASSET) == 0


def test_illegal_command_leaves_store_unchanged(service, listing1):
    task = service.tasking_request(RequestKind.SUBMIT, IMAGER, listing1).task
    service.advance_clock(60)
    before = service.snapshot()
    with pytest.raises(IllegalTransition):
        service.task_command(CommandKind.CANCEL, task.task_id)
    assert service.snapshot() == before


def test_update_changes_updatable_fields_only(service, listing1):
    task = service.tasking_request(RequestKind.SUBMIT, IMAGER, listing1).task
    report = service.task_command(CommandKind.UPDATE, task.task_id, _with_priority(listing1, "4.5"))
    assert report.state == TaskState.IN_EXECUTION
    assert service.get_task(task.task_id).parameters.blocks[0]["priority"] == Decimal("4.5")

    moved = {**listing1.blocks[0], "measurementStart": listing1.blocks[0]["measurementStart"] + timedelta(minutes=1)}
    with pytest.raises(UpdateNotFeasible) as info:
        service.task_command(
            CommandKind.UPDATE, task.task_id, ParameterData(encoding=listing1.encoding, blocks=(moved,))
        )
    assert info.value.locator == "measurementStart"


def test_update_outside_footprint_offers_no_change(service, listing1):
    task = service.tasking_request(RequestKind.SUBMIT, IMAGER, listing1).task
    far = {
        **listing1.blocks[0],
        "measurementTarget": ChoiceValue(
            branch="pointToLookAt", block={"location": (Decimal("10"), Decimal("10"), Decimal("0"))}
        ),
    }
    with pytest.raises(UpdateNotFeasible):
        service.task_command(CommandKind.UPDATE, task.task_id, ParameterData(encoding=listing1.encoding, blocks=(far,)))
    assert service.get_task(task.task_id).parameters == listing1


def test_capacity_is_held_while_reserved_or_executing(service, listing1):
    first = service.tasking_request(RequestKind.RESERVE, IMAGER, listing1).task
    second = service.tasking_request(RequestKind.SUBMIT, IMAGER, listing1).task
    assert service.assets.blocked(ASSET) == 2
    service.task_command(CommandKind.CANCEL, first.task_id)
    assert service.assets.blocked(ASSET) == 1
    service.advance_clock(60)
    assert service.get_task(second.task_id).state == TaskState.COMPLETED
    assert service.assets.blocked(ASSET) == 0


def test_virtual_clock_only_moves_forward():
    clock = VirtualClock(CLOCK_START)
    clock.set(CLOCK_START - timedelta(seconds=5))
    assert clock.now() == CLOCK_START
    clock.schedule(CLOCK_START + timedelta(seconds=2), ("late",))
    clock.schedule(CLOCK_START + timedelta(seconds=1), ("first",))
    clock.schedule(CLOCK_START + timedelta(seconds=1), ("second",))
    assert clock.pop_due(CLOCK_START) is None
    popped = [clock.pop_due(CLOCK_START + timedelta(seconds=2)) for _ in range(3)]
    assert [token for _, token in popped] == [("first",), ("second",), ("late",)]
    assert clock.scheduled() == []


def test_advance_clock_refuses_negative_seconds(service):
    with pytest.raises(InvalidParameterValue):
        service.advance_clock(-1)
    assert service.advance_clock(0) == 0
    assert service.now() == CLOCK_START


def test_capacity_lost_before_insert_rejects_the_request(service, listing1):
    req = service.store.add_request(
        TaskingRequest(
            request_id="req_9", kind=RequestKind.SUBMIT, procedure_id=IMAGER, parameters=listing1, received_at=service.now()
        )
    )
    verdict = service.assets.assess(IMAGER, listing1)
    assert verdict.feasible
    profile = service.assets.profile(verdict.asset_id)
    service.assets.reserve_capacity(profile, "held_1")
    service.assets.reserve_capacity(profile, "held_2")
    sub = service.hub.subscribe("TaskingRequestEvent")

    with pytest.raises(CapacityExhausted):
        service.decide(req, verdict)

    stored = service.store.request("req_9")
    assert stored.status == RequestStatus.REJECTED
    assert stored.task_id is None
    assert service.store.tasks() == []
    assert [e.topic for e in sub.drain()[0]] == ["TaskingRequestRejection"]
