from __future__ import annotations

import re
from datetime import datetime
from decimal import Decimal, InvalidOperation
from typing import Any, Iterable, List, Optional

from .models import (
    ABSENT,
    PRESENT,
    AllowedInterval,
    AllowedTokens,
    ChoiceValue,
    ConstraintViolation,
    FieldDescriptor,
    FieldKind,
    LexicalError,
    ParameterBlock,
    ParameterData,
    ParameterDescription,
    TextEncodingSpec,
    TokenCountMismatch,
    UnknownSelector,
    ValidationFailure,
    ValidationReport,
    Violation,
    is_time,
)

# ASCII digits only: str(Decimal) would not reproduce other scripts' digits.
RE_DECIMAL = re.compile(r"[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?\Z")
RE_COUNT = re.compile(r"[+-]?[0-9]+\Z")
RE_TIME = re.compile(r"[0-9]{4}-[0-9]{2}-[0-9]{2}T[0-9]{2}:[0-9]{2}:[0-9]{2}[+-][0-9]{2}:[0-9]{2}\Z")


def parse_scalar(kind: FieldKind, token: str, path: str) -> Any:
    """Parse one lexical token of a scalar (or vector component) kind.

    Only the canonical form is accepted: the token must be exactly what
    format_scalar renders for the parsed value, so `+3.5`, `.5`, `007`, `1e5`
    and a `-00:00` offset are lexical errors.
    """
    value = _parse_lexical(kind, token, path)
    if kind != FieldKind.TEXT and format_scalar(kind, value) != token:
        raise LexicalError(f"non-canonical {kind.value} token {token!r}, expected {format_scalar(kind, value)!r}", path)
    return value


def _parse_lexical(kind: FieldKind, token: str, path: str) -> Any:
    if kind == FieldKind.TIME:
        if not RE_TIME.match(token):
            raise LexicalError(f"not a date-time with numeric offset: {token!r}", path)
        try:
            return datetime.fromisoformat(token)
        except ValueError as ex:
            raise LexicalError(f"invalid date-time {token!r}: {ex}", path) from ex
    if kind in (FieldKind.QUANTITY, FieldKind.VECTOR):
        if not RE_DECIMAL.match(token):
            raise LexicalError(f"not a decimal: {token!r}", path)
        try:
            return Decimal(token)
        except InvalidOperation as ex:  # pragma: no cover - regex already guards
            raise LexicalError(f"not a decimal: {token!r}", path) from ex
    if kind == FieldKind.COUNT:
        if not RE_COUNT.match(token):
            raise LexicalError(f"not an integer: {token!r}", path)
        return int(token)
    if kind == FieldKind.BOOLEAN:
        if token == PRESENT:
            return True
        if token == ABSENT:
            return False
        raise LexicalError(f"boolean must be Y or N, got {token!r}", path)
    if kind == FieldKind.TEXT:
        return token
    raise LexicalError(f"{kind.value} is not a scalar kind", path)


def format_scalar(kind: FieldKind, value: Any) -> str:
    if kind == FieldKind.TIME:
        return value.isoformat()
    if kind in (FieldKind.QUANTITY, FieldKind.VECTOR):
        return format_decimal(value)
    if kind == FieldKind.COUNT:
        return str(int(value))
    if kind == FieldKind.BOOLEAN:
        return PRESENT if value else ABSENT
    return str(value)


def format_decimal(value: Any) -> str:
    # str(Decimal) is the canonical form; floats use their shortest repr.
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _Tokens:
    def __init__(self, tokens: List[str], path: str) -> None:
        self.tokens = tokens
        self.pos = 0
        self.path = path

    def take(self, path: str) -> str:
        if self.pos >= len(self.tokens):
            raise TokenCountMismatch(f"missing token, block has only {len(self.tokens)}", path)
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def finish(self) -> None:
        if self.pos != len(self.tokens):
            raise TokenCountMismatch(
                f"{len(self.tokens) - self.pos} leftover token(s) after {self.pos} consumed", self.path
            )


def _check_allowed(fd: FieldDescriptor, value: Any, path: str) -> None:
    if fd.allowed is not None and not fd.allowed.contains(value):
        kind = "out of range" if isinstance(fd.allowed, AllowedInterval) else "not allowed"
        raise ConstraintViolation(f"{kind}: {value} outside {_describe_allowed(fd)}", path)


def _describe_allowed(fd: FieldDescriptor) -> str:
    if isinstance(fd.allowed, AllowedInterval):
        return f"[{fd.allowed.min}, {fd.allowed.max}]"
    if isinstance(fd.allowed, AllowedTokens):
        return "{" + ", ".join(fd.allowed.values) + "}"
    return "constraint"


def _decode_value(fd: FieldDescriptor, tokens: _Tokens, path: str) -> Any:
    if fd.kind == FieldKind.CHOICE:
        selector = tokens.take(path)
        branch = fd.branch(selector)
        if branch is None:
            raise UnknownSelector(f"{selector!r} matches no branch of {fd.name}", path)
        _check_allowed(fd, selector, path)
        return ChoiceValue(branch=selector, block=_decode_group(branch.fields, tokens, f"{path}/{selector}"))
    if fd.kind == FieldKind.VECTOR:
        return tuple(
            parse_scalar(FieldKind.VECTOR, tokens.take(f"{path}/{c.name}"), f"{path}/{c.name}")
            for c in fd.components
        )
    value = parse_scalar(fd.kind, tokens.take(path), path)
    _check_allowed(fd, value, path)
    return value


def _decode_group(fields: Iterable[FieldDescriptor], tokens: _Tokens, prefix: str) -> ParameterBlock:
    block: ParameterBlock = {}
    for fd in fields:
        path = f"{prefix}/{fd.name}" if prefix else fd.name
        if fd.optional:
            flag = tokens.take(path)
            if flag == ABSENT:
                continue
            if flag != PRESENT:
                raise LexicalError(f"presence flag must be Y or N, got {flag!r}", path)
        block[fd.name] = _decode_value(fd, tokens, path)
    return block


def decode_parameter_data(desc: ParameterDescription, enc: TextEncodingSpec, text: str) -> ParameterData:
    """Decode a TextEncoding value string into typed blocks, consuming every token exactly once."""
    if not isinstance(text, str) or not text:
        raise TokenCountMismatch("empty value string")
    desc.check_separators(enc)
    blocks: List[ParameterBlock] = []
    for i, raw in enumerate(text.split(enc.block_separator)):
        tokens = _Tokens(raw.split(enc.token_separator), f"block[{i}]")
        block = _decode_group(desc.fields, tokens, "")
        tokens.finish()
        blocks.append(block)
    return ParameterData(encoding=enc, blocks=tuple(blocks))


def _render(kind: FieldKind, value: Any, path: str) -> str:
    token = format_scalar(kind, value)
    # a value the decoder would not read back (float exponents, sub-second times)
    parse_scalar(kind, token, path)
    return token


def _encode_value(fd: FieldDescriptor, value: Any, out: List[str], path: str) -> None:
    if fd.kind == FieldKind.CHOICE:
        out.append(value.branch)
        _encode_group(fd.branch(value.branch).fields, value.block, out, f"{path}/{value.branch}")  # type: ignore[union-attr]
    elif fd.kind == FieldKind.VECTOR:
        out.extend(_render(FieldKind.VECTOR, v, f"{path}/{c.name}") for v, c in zip(value, fd.components))
    else:
        out.append(_render(fd.kind, value, path))


def _encode_group(fields: Iterable[FieldDescriptor], block: ParameterBlock, out: List[str], prefix: str) -> None:
    for fd in fields:
        path = f"{prefix}/{fd.name}" if prefix else fd.name
        value = block.get(fd.name)
        if fd.optional:
            if value is None:
                out.append(ABSENT)
                continue
            out.append(PRESENT)
        _encode_value(fd, value, out, path)


def encode_parameter_data(desc: ParameterDescription, data: ParameterData) -> str:
    """Exact inverse of decode_parameter_data."""
    enc = data.encoding
    desc.check_separators(enc)
    blocks: List[List[str]] = []
    for i, block in enumerate(data.blocks):
        report = validate_values(desc, block)
        if not report.ok:
            raise ValidationFailure(report, f"block[{i}]")
        tokens: List[str] = []
        _encode_group(desc.fields, block, tokens, "")
        for tok in tokens:
            if enc.token_separator in tok or enc.block_separator in tok:
                raise LexicalError(f"token {tok!r} contains a separator", f"block[{i}]")
        blocks.append(tokens)
    text = enc.block_separator.join(enc.token_separator.join(tokens) for tokens in blocks)
    # a token may still run into a neighbouring separator ("a@" + "@@" + "b")
    resplit = [raw.split(enc.token_separator) for raw in text.split(enc.block_separator)]
    if resplit != blocks:
        at = next((i for i, (a, b) in enumerate(zip(resplit, blocks)) if a != b), min(len(resplit), len(blocks)) - 1)
        raise LexicalError("tokens overlap a separator at a join; the value string would not split back", f"block[{at}]")
    return text


def _kind_ok(fd: FieldDescriptor, value: Any) -> bool:
    if fd.kind == FieldKind.TIME:
        return is_time(value)
    if fd.kind == FieldKind.QUANTITY:
        return _is_number(value)
    if fd.kind == FieldKind.COUNT:
        return isinstance(value, int) and not isinstance(value, bool)
    if fd.kind == FieldKind.BOOLEAN:
        return isinstance(value, bool)
    if fd.kind == FieldKind.TEXT:
        return isinstance(value, str)
    if fd.kind == FieldKind.CHOICE:
        return isinstance(value, ChoiceValue)
    if fd.kind == FieldKind.VECTOR:
        return (
            isinstance(value, (tuple, list))
            and len(value) == len(fd.components)
            and all(_is_number(v) for v in value)
        )
    return False


def _is_number(value: Any) -> bool:
    if isinstance(value, bool):
        return False
    if isinstance(value, Decimal):
        return value.is_finite()
    if isinstance(value, float):
        return value == value and value not in (float("inf"), float("-inf"))
    return isinstance(value, int)


def _validate_group(fields, block: Any, prefix: str, out: List[Violation]) -> None:
    if not isinstance(block, dict):
        out.append(Violation(path=prefix or "block", kind="wrong kind", message="block is not a mapping"))
        return
    known = {fd.name for fd in fields}
    for name in block:
        if name not in known:
            out.append(Violation(path=f"{prefix}/{name}" if prefix else str(name), kind="unknown field"))
    for fd in fields:
        path = f"{prefix}/{fd.name}" if prefix else fd.name
        value = block.get(fd.name)
        if value is None:
            if not fd.optional:
                out.append(Violation(path=path, kind="missing mandatory"))
            continue
        if not _kind_ok(fd, value):
            out.append(Violation(path=path, kind="wrong kind", message=f"expected {fd.kind.value}"))
            continue
        if fd.kind == FieldKind.CHOICE:
            branch = fd.branch(value.branch)
            if branch is None or (fd.allowed is not None and not fd.allowed.contains(value.branch)):
                out.append(Violation(path=path, kind="not allowed", message=f"branch {value.branch!r}"))
                continue
            _validate_group(branch.fields, value.block, f"{path}/{branch.name}", out)
        elif fd.allowed is not None and not fd.allowed.contains(value):
            kind = "out of range" if isinstance(fd.allowed, AllowedInterval) else "not allowed"
            out.append(Violation(path=path, kind=kind, message=f"{value} outside {_describe_allowed(fd)}"))


def validate_values(desc: ParameterDescription, block: ParameterBlock) -> ValidationReport:
    """Report every violation of `block` against `desc`; never raises. Defaults are not filled in."""
    violations: List[Violation] = []
    _validate_group(desc.fields, block, "", violations)
    return ValidationReport(violations=violations)


def validate_data(desc: ParameterDescription, data: ParameterData) -> Optional[ValidationFailure]:
    for i, block in enumerate(data.blocks):
        report = validate_values(desc, block)
        if not report.ok:
            return ValidationFailure(report, f"block[{i}]")
    return None
