from __future__ import annotations

from datetime import datetime
from enum import Enum
from typing import Optional, Union

from pydantic import BaseModel, Field, model_validator

from swe.models import ParameterData


class RequestKind(str, Enum):
    FEASIBILITY = "Feasibility"
    SUBMIT = "Submit"
    RESERVE = "Reserve"


class RequestStatus(str, Enum):
    PENDING = "Pending"
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    EXPIRED = "Expired"


class TaskKind(str, Enum):
    FEASIBILITY_STUDY = "FeasibilityStudy"
    SUBMISSION = "Submission"


class TaskState(str, Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    RESERVED = "Reserved"
    IN_EXECUTION = "InExecution"
    COMPLETED = "Completed"
    FAILED = "Failed"
    CANCELLED = "Cancelled"
    RESERVATION_EXPIRED = "ReservationExpired"


# states that hold one unit of the asset's capacity
HOLDING_STATES = frozenset({TaskState.RESERVED, TaskState.IN_EXECUTION})


class CommandKind(str, Enum):
    CONFIRM = "Confirm"
    UPDATE = "Update"
    CANCEL = "Cancel"
    EXECUTION_COMPLETED = "ExecutionCompleted"
    EXECUTION_FAILED = "ExecutionFailed"
    EXPIRE_RESERVATION = "ExpireReservation"


class EventKind(str, Enum):
    """Lifecycle events; each value is also the name of the leaf topic it is published on."""

    TASK_FAILURE = "TaskFailure"
    TASK_CANCELLATION = "TaskCancellation"
    TASK_COMPLETION = "TaskCompletion"
    TASK_CONFIRMATION = "TaskConfirmation"
    TASK_UPDATE = "TaskUpdate"
    DATA_PUBLICATION = "DataPublication"
    TASK_RESERVATION = "TaskReservation"
    TASK_SUBMISSION = "TaskSubmission"
    RESERVATION_EXPIRATION = "ReservationExpiration"
    TASKING_REQUEST_EXPIRATION = "TaskingRequestExpiration"
    TASKING_REQUEST_REJECTION = "TaskingRequestRejection"
    TASKING_REQUEST_ACCEPTANCE = "TaskingRequestAcceptance"
    TASKING_REQUEST_PENDING = "TaskingRequestPending"


class TaskingRequest(BaseModel):
    request_id: str
    kind: RequestKind
    procedure_id: str
    parameters: ParameterData
    received_at: datetime
    status: RequestStatus = RequestStatus.PENDING
    alternatives: list[ParameterData] = Field(default_factory=list)
    task_id: Optional[str] = None
    asset_id: Optional[str] = None
    reason: str = ""
    decided_at: Optional[datetime] = None

    @model_validator(mode="after")
    def _alternatives_only_when_rejected(self) -> "TaskingRequest":
        if self.alternatives and self.status != RequestStatus.REJECTED:
            raise ValueError("alternatives are only carried by rejected requests")
        return self


class HistoryEntry(BaseModel):
    at: datetime
    event: str
    detail: str = ""


class Task(BaseModel):
    task_id: str
    kind: TaskKind
    state: TaskState
    procedure_id: str
    parameters: ParameterData
    request_id: Optional[str] = None
    asset_id: Optional[str] = None
    reservation_expiration: Optional[datetime] = None
    progress: int = 0
    created_at: datetime
    updated_at: datetime
    history: list[HistoryEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _expiration_iff_reserved(self) -> "Task":
        if (self.reservation_expiration is not None) != (self.state == TaskState.RESERVED):
            raise ValueError("reservation_expiration is present exactly while Reserved")
        return self


class Command(BaseModel):
    kind: CommandKind
    parameters: Optional[ParameterData] = None


class StatusReport(BaseModel):
    task_id: Optional[str] = None
    request_id: Optional[str] = None
    procedure_id: str
    state: Optional[TaskState] = None
    request_status: Optional[RequestStatus] = None
    percent_completion: int = Field(0, ge=0, le=100)
    message: str = ""
    timestamp: datetime
    data_available: bool = False
    alternatives: list[ParameterData] = Field(default_factory=list)

    @model_validator(mode="after")
    def _complete_iff_100(self) -> "StatusReport":
        if (self.percent_completion == 100) != (self.state == TaskState.COMPLETED):
            raise ValueError("percent_completion is 100 exactly for Completed tasks")
        return self


class ReservationReport(StatusReport):
    reservation_expiration: datetime


Payload = Union[ReservationReport, StatusReport]


class NotificationEvent(BaseModel):
    topic: str
    payload: Payload
    emitted_at: datetime
    sequence: Optional[int] = None


class ResultReference(BaseModel):
    task_id: str
    uri: str
    produced_at: datetime
    description: str = ""
    partial: bool = False
