from __future__ import annotations

from datetime import datetime
from decimal import Decimal
from enum import Enum
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

SPS_NS = "http://www.opengis.net/sps/2.0"
SWE_NS = "http://www.opengis.net/swe/2.0"

PRESENT = "Y"
ABSENT = "N"


class FieldKind(str, Enum):
    TIME = "Time"
    QUANTITY = "Quantity"
    COUNT = "Count"
    BOOLEAN = "Boolean"
    TEXT = "Text"
    CHOICE = "Choice"
    VECTOR = "Vector"


SCALAR_KINDS = {FieldKind.TIME, FieldKind.QUANTITY, FieldKind.COUNT, FieldKind.BOOLEAN, FieldKind.TEXT}


class CodecError(Exception):
    """Base of every classified codec failure. `path` points at the offending field/token."""

    code = "CodecError"

    def __init__(self, message: str, path: Optional[str] = None) -> None:
        super().__init__(message)
        self.message = message
        self.path = path

    def __str__(self) -> str:
        return f"{self.code} at {self.path}: {self.message}" if self.path else f"{self.code}: {self.message}"


class UnknownSelector(CodecError):
    code = "UnknownSelector"


class TokenCountMismatch(CodecError):
    code = "TokenCountMismatch"


class LexicalError(CodecError):
    code = "LexicalError"


class ConstraintViolation(CodecError):
    code = "ConstraintViolation"


class SchemaError(CodecError):
    code = "SchemaError"


class ValidationFailure(CodecError):
    code = "ValidationFailure"

    def __init__(self, report: "ValidationReport", path: Optional[str] = None) -> None:
        first = report.violations[0] if report.violations else None
        super().__init__(
            "; ".join(f"{v.path}: {v.kind}" for v in report.violations) or "invalid block",
            path or (first.path if first else None),
        )
        self.report = report


class AllowedInterval(BaseModel):
    model_config = ConfigDict(frozen=True)

    min: Decimal
    max: Decimal

    @model_validator(mode="after")
    def _ordered(self) -> "AllowedInterval":
        if self.min > self.max:
            raise ValueError("interval min exceeds max")
        return self

    def contains(self, value: Any) -> bool:
        return self.min <= Decimal(str(value)) <= self.max


class AllowedTokens(BaseModel):
    model_config = ConfigDict(frozen=True)

    values: tuple[str, ...] = Field(min_length=1)

    def contains(self, value: Any) -> bool:
        return value in self.values


class Component(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    uom: str


class Branch(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    fields: tuple["FieldDescriptor", ...] = ()

    @model_validator(mode="after")
    def _unique(self) -> "Branch":
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate field names in branch {self.name}")
        return self


class FieldDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    kind: FieldKind
    optional: bool = False
    uom: Optional[str] = None
    allowed: Optional[Union[AllowedInterval, AllowedTokens]] = None
    default: Any = None
    branches: tuple[Branch, ...] = ()
    components: tuple[Component, ...] = ()

    @model_validator(mode="after")
    def _shape(self) -> "FieldDescriptor":
        if self.kind == FieldKind.CHOICE:
            if not self.branches:
                raise ValueError(f"choice {self.name} needs at least one branch")
            names = [b.name for b in self.branches]
            if len(names) != len(set(names)):
                raise ValueError(f"duplicate branch names in choice {self.name}")
            if isinstance(self.allowed, AllowedTokens) and not set(self.allowed.values) <= set(names):
                raise ValueError(f"allowed selectors of {self.name} name unknown branches")
        elif self.branches:
            raise ValueError(f"only Choice fields carry branches ({self.name})")
        if self.kind == FieldKind.VECTOR:
            if not self.components:
                raise ValueError(f"vector {self.name} needs at least one component")
        elif self.components:
            raise ValueError(f"only Vector fields carry components ({self.name})")
        if isinstance(self.allowed, AllowedInterval) and self.kind not in (FieldKind.QUANTITY, FieldKind.COUNT):
            raise ValueError(f"interval constraint on non-numeric field {self.name}")
        if isinstance(self.allowed, AllowedTokens) and self.kind not in (FieldKind.TEXT, FieldKind.CHOICE):
            raise ValueError(f"token constraint on field {self.name} of kind {self.kind.value}")
        if self.default is not None:
            if self.kind not in SCALAR_KINDS:
                raise ValueError(f"defaults are only allowed on scalar fields ({self.name})")
            if self.allowed is not None and not self.allowed.contains(self.default):
                raise ValueError(f"default of {self.name} violates its constraint")
        return self

    def branch(self, name: str) -> Optional[Branch]:
        return next((b for b in self.branches if b.name == name), None)


Branch.model_rebuild()
FieldDescriptor.model_rebuild()


class ParameterDescription(BaseModel):
    model_config = ConfigDict(frozen=True)

    procedure_id: str = Field(min_length=1)
    fields: tuple[FieldDescriptor, ...]
    updatable_field_names: frozenset[str] = frozenset()

    @model_validator(mode="after")
    def _names(self) -> "ParameterDescription":
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise ValueError("duplicate field names")
        unknown = set(self.updatable_field_names) - set(names)
        if unknown:
            raise ValueError(f"updatable names not among fields: {sorted(unknown)}")
        return self

    def field(self, name: str) -> Optional[FieldDescriptor]:
        return next((f for f in self.fields if f.name == name), None)

    def check_separators(self, enc: "TextEncodingSpec") -> None:
        """Field and branch names must not contain either separator."""
        for fd in _walk(self.fields):
            for sep in (enc.token_separator, enc.block_separator):
                if sep in fd.name or any(sep in b.name for b in fd.branches):
                    raise SchemaError(f"name contains separator {sep!r}", fd.name)


def _walk(fields):
    for fd in fields:
        yield fd
        for b in fd.branches:
            yield from _walk(b.fields)


class TextEncodingSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    token_separator: str = ","
    block_separator: str = "@@"

    @model_validator(mode="after")
    def _separators(self) -> "TextEncodingSpec":
        if not self.token_separator or not self.block_separator:
            raise ValueError("separators must be nonempty")
        if self.token_separator in self.block_separator or self.block_separator in self.token_separator:
            raise ValueError("separators overlap")
        return self


class ChoiceValue(BaseModel):
    """Selected branch of a Choice field plus the values of that branch's fields."""

    model_config = ConfigDict(frozen=True)

    branch: str
    block: dict[str, Any] = Field(default_factory=dict)


# A block maps field name -> datetime | Decimal | int | bool | str | ChoiceValue | tuple[Decimal, ...]
ParameterBlock = dict[str, Any]


class ParameterData(BaseModel):
    model_config = ConfigDict(frozen=True)

    encoding: TextEncodingSpec = Field(default_factory=TextEncodingSpec)
    blocks: tuple[dict[str, Any], ...] = Field(min_length=1)


ViolationKind = Literal["missing mandatory", "unknown field", "out of range", "not allowed", "wrong kind"]


class Violation(BaseModel):
    model_config = ConfigDict(frozen=True)

    path: str
    kind: ViolationKind
    message: str = ""


class ValidationReport(BaseModel):
    violations: list[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def is_time(value: Any) -> bool:
    return isinstance(value, datetime) and value.tzinfo is not None and value.microsecond == 0

