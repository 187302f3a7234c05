from __future__ import annotations

from typing import Any, List, Optional


class SpsError(Exception):
    """OWS-style service exception: one machine-readable code, a text, an optional locator."""

    code = "NoApplicableCode"
    http_status = 500

    def __init__(self, text: str, locator: Optional[str] = None) -> None:
        super().__init__(text)
        self.text = text
        self.locator = locator

    def __str__(self) -> str:
        return f"{self.code}: {self.text}" + (f" (locator={self.locator})" if self.locator else "")

    def as_dict(self) -> dict:
        return {"code": self.code, "text": self.text, "locator": self.locator}


class NoApplicableCode(SpsError):
    code = "NoApplicableCode"
    http_status = 500


class OperationNotSupported(SpsError):
    code = "OperationNotSupported"
    http_status = 501


class InvalidRequest(SpsError):
    code = "InvalidRequest"
    http_status = 400


class InvalidParameterValue(SpsError):
    code = "InvalidParameterValue"
    http_status = 400


class ValidationFailure(SpsError):
    code = "ValidationFailure"
    http_status = 400

    def __init__(self, text: str, locator: Optional[str] = None, violations: Optional[List[Any]] = None) -> None:
        super().__init__(text, locator)
        self.violations = list(violations or [])


class FeasibilityIdNotReusable(SpsError):
    code = "FeasibilityIdNotReusable"
    http_status = 400


class ProcedureMismatch(SpsError):
    code = "ProcedureMismatch"
    http_status = 400


class MalformedPattern(SpsError):
    code = "MalformedPattern"
    http_status = 400


class CyclicSchema(SpsError):
    code = "CyclicSchema"
    http_status = 400


class UnknownEventKind(SpsError):
    code = "UnknownEventKind"
    http_status = 400


class PayloadTypeMismatch(SpsError):
    code = "PayloadTypeMismatch"
    http_status = 400


class UnknownTask(SpsError):
    code = "UnknownTask"
    http_status = 404


class UnknownRequest(SpsError):
    code = "UnknownRequest"
    http_status = 404


class UnknownTopic(SpsError):
    code = "UnknownTopic"
    http_status = 404


class CapacityExhausted(SpsError):
    code = "CapacityExhausted"
    http_status = 409


class IllegalTransition(SpsError):
    code = "IllegalTransition"
    http_status = 409


class UpdateNotFeasible(SpsError):
    code = "UpdateNotFeasible"
    http_status = 409

    def __init__(self, text: str, locator: Optional[str] = None, alternatives: Optional[List[Any]] = None) -> None:
        super().__init__(text, locator)
        self.alternatives = list(alternatives or [])


class NotYetExpired(SpsError):
    code = "NotYetExpired"
    http_status = 409


class RejectedRequest(SpsError):
    code = "RejectedRequest"
    http_status = 409


class NotHeld(SpsError):
    code = "NotHeld"
    http_status = 409


def from_codec_error(ex: Exception) -> SpsError:
    """Map a swe codec failure onto the service taxonomy, keeping the codec path as locator."""
    from swe.models import ValidationFailure as CodecValidationFailure

    if isinstance(ex, CodecValidationFailure):
        return ValidationFailure(str(ex), getattr(ex, "path", None), violations=ex.report.violations)
    return ValidationFailure(str(ex), getattr(ex, "path", None))
