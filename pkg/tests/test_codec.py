from __future__ import annotations

import random
import string
from datetime import datetime, timedelta, timezone
from decimal import Decimal

import pytest

from swe.codec import decode_parameter_data, encode_parameter_data, validate_data, validate_values
from swe.models import (
    AllowedInterval,
    AllowedTokens,
    Branch,
    ChoiceValue,
    CodecError,
    Component,
    ConstraintViolation,
    FieldDescriptor,
    FieldKind,
    LexicalError,
    ParameterData,
    ParameterDescription,
    SchemaError,
    TextEncodingSpec,
    TokenCountMismatch,
    UnknownSelector,
    ValidationFailure,
)
from tests.conftest import LISTING1

ENC = TextEncodingSpec()
CEST = timezone(timedelta(hours=2))


def test_listing1_decodes_to_one_typed_block(imager_desc):
    data = decode_parameter_data(imager_desc, ENC, LISTING1)
    assert len(LISTING1.split(",")) == 9
    assert len(data.blocks) == 1
    block = data.blocks[0]
    assert block["measurementStart"] == datetime(2010, 8, 20, 12, 37, tzinfo=CEST)
    assert block["measurementEnd"] == datetime(2010, 8, 20, 14, 30, tzinfo=CEST)
    assert block["measurementStart"].utcoffset() == timedelta(hours=2)
    assert block["measurementTarget"] == ChoiceValue(
        branch="pointToLookAt",
        block={"location": (Decimal("51.902112"), Decimal("8.192728"), Decimal("0"))},
    )
    assert block["priority"] == Decimal("3.5")


def test_listing1_reencodes_byte_for_byte(imager_desc):
    data = decode_parameter_data(imager_desc, ENC, LISTING1)
    assert encode_parameter_data(imager_desc, data) == LISTING1


def test_absent_optionals_and_multiple_blocks(imager_desc):
    text = "2010-08-20T12:37:00+02:00,2010-08-20T14:30:00+02:00,N,N@@" + LISTING1
    data = decode_parameter_data(imager_desc, ENC, text)
    assert len(data.blocks) == 2
    assert "measurementTarget" not in data.blocks[0]
    assert "priority" not in data.blocks[0]
    assert encode_parameter_data(imager_desc, data) == text


def test_custom_separators(imager_desc):
    enc = TextEncodingSpec(token_separator=";", block_separator="|")
    text = LISTING1.replace(",", ";")
    data = decode_parameter_data(imager_desc, enc, text)
    assert data.encoding == enc
    assert encode_parameter_data(imager_desc, data) == text


@pytest.mark.parametrize(
    "text, error, path",
    [
        ("", TokenCountMismatch, None),
        (LISTING1 + ",extra", TokenCountMismatch, "block[0]"),
        ("2010-08-20T12:37:00+02:00,2010-08-20T14:30:00+02:00,Y", TokenCountMismatch, "measurementTarget"),
        (LISTING1.replace("pointToLookAt", "lookSideways"), UnknownSelector, "measurementTarget"),
        (LISTING1.replace(",Y,3.5", ",X,3.5"), LexicalError, "priority"),
        (LISTING1.replace("+02:00", "Z", 1), LexicalError, "measurementStart"),
        (LISTING1.replace("3.5", "7.0"), ConstraintViolation, "priority"),
        (LISTING1.replace("51.902112", "north"), LexicalError, "measurementTarget/pointToLookAt/location/lat"),
    ],
)
def test_decode_errors_are_classified(imager_desc, text, error, path):
    with pytest.raises(error) as info:
        decode_parameter_data(imager_desc, ENC, text)
    if path is not None:
        assert info.value.path == path


def test_out_of_range_message_names_the_violation(imager_desc):
    with pytest.raises(ConstraintViolation) as info:
        decode_parameter_data(imager_desc, ENC, LISTING1.replace("3.5", "7.0"))
    assert "out of range" in info.value.message


def test_validate_values_reports_every_violation(imager_desc):
    block = {
        "measurementEnd": "yesterday",
        "priority": Decimal("9"),
        "colour": "red",
        "measurementTarget": ChoiceValue(branch="nowhere"),
    }
    report = validate_values(imager_desc, block)
    kinds = {(v.path, v.kind) for v in report.violations}
    assert kinds == {
        ("colour", "unknown field"),
        ("measurementStart", "missing mandatory"),
        ("measurementEnd", "wrong kind"),
        ("measurementTarget", "not allowed"),
        ("priority", "out of range"),
    }
    assert not report.ok


def test_validate_listing1_block_is_clean(imager_desc):
    data = decode_parameter_data(imager_desc, ENC, LISTING1)
    assert validate_values(imager_desc, data.blocks[0]).ok
    assert validate_data(imager_desc, data) is None


def test_encode_refuses_invalid_blocks(imager_desc):
    data = decode_parameter_data(imager_desc, ENC, LISTING1)
    bad = ParameterData(encoding=ENC, blocks=({**data.blocks[0], "priority": Decimal("-1")},))
    with pytest.raises(ValidationFailure) as info:
        encode_parameter_data(imager_desc, bad)
    assert info.value.path == "block[0]"
    assert info.value.report.violations[0].kind == "out of range"


def test_encode_refuses_tokens_containing_separators():
    desc = ParameterDescription(procedure_id="p", fields=(FieldDescriptor(name="note", kind=FieldKind.TEXT),))
    data = ParameterData(encoding=ENC, blocks=({"note": "a,b"},))
    with pytest.raises(LexicalError):
        encode_parameter_data(desc, data)


def test_encode_refuses_tokens_that_run_into_a_separator():
    desc = ParameterDescription(procedure_id="p", fields=(FieldDescriptor(name="x", kind=FieldKind.TEXT),))
    for blocks in (({"x": "a@"}, {"x": "b"}), ({"x": "@"}, {"x": "b"})):
        with pytest.raises(LexicalError) as info:
            encode_parameter_data(desc, ParameterData(encoding=ENC, blocks=blocks))
        assert info.value.path == "block[0]"

    data = ParameterData(encoding=ENC, blocks=({"x": "a"}, {"x": "@b"}))
    text = encode_parameter_data(desc, data)
    assert text == "a@@@b"
    assert decode_parameter_data(desc, ENC, text).blocks == data.blocks


SCALAR_DESC = ParameterDescription(
    procedure_id="p",
    fields=(
        FieldDescriptor(name="q", kind=FieldKind.QUANTITY),
        FieldDescriptor(name="n", kind=FieldKind.COUNT),
        FieldDescriptor(name="t", kind=FieldKind.TIME),
    ),
)
SCALAR_TOKENS = ["3.5", "5", "2024-01-01T00:00:00+00:00"]


def _scalar_text(index: int, token: str) -> str:
    tokens = list(SCALAR_TOKENS)
    tokens[index] = token
    return ",".join(tokens)


@pytest.mark.parametrize(
    "index, token",
    [
        (0, "0.0000001"),
        (0, "1e5"),
        (0, "+3.5"),
        (0, ".5"),
        (0, "007"),
        (0, "3."),
        (1, "+5"),
        (1, "007"),
        (1, "-0"),
        (2, "2024-01-01T00:00:00-00:00"),
    ],
)
def test_non_canonical_scalars_are_lexical_errors(index, token):
    with pytest.raises(LexicalError) as info:
        decode_parameter_data(SCALAR_DESC, ENC, _scalar_text(index, token))
    assert info.value.path == "qnt"[index]


@pytest.mark.parametrize(
    "index, token",
    [(0, "1E-7"), (0, "1E+5"), (0, "-0.5"), (0, "3.50"), (0, "-0"), (1, "-5"), (2, "2024-01-01T00:00:00-05:30")],
)
def test_canonical_scalars_round_trip(index, token):
    text = _scalar_text(index, token)
    assert encode_parameter_data(SCALAR_DESC, decode_parameter_data(SCALAR_DESC, ENC, text)) == text


def test_encode_refuses_values_the_decoder_cannot_read_back():
    base = {"q": Decimal("3.5"), "n": 5, "t": datetime(2024, 1, 1, tzinfo=timezone.utc)}
    for field, value in (("q", 1e-07), ("t", datetime(2024, 1, 1, 0, 0, 0, 500, tzinfo=timezone.utc))):
        with pytest.raises(LexicalError) as info:
            encode_parameter_data(SCALAR_DESC, ParameterData(encoding=ENC, blocks=({**base, field: value},)))
        assert info.value.path == field


def test_field_names_must_not_contain_separators():
    desc = ParameterDescription(procedure_id="p", fields=(FieldDescriptor(name="a,b", kind=FieldKind.TEXT),))
    with pytest.raises(SchemaError):
        decode_parameter_data(desc, ENC, "x")


# ---- randomized round trip ----

SCALARS = [FieldKind.TIME, FieldKind.QUANTITY, FieldKind.COUNT, FieldKind.BOOLEAN, FieldKind.TEXT]
OFFSETS = [timedelta(hours=h, minutes=m) for h, m in ((0, 0), (2, 0), (-5, 0), (5, 30), (-9, -30))]
WORDS = ("alpha", "beta", "gamma", "delta")
PLAIN = string.ascii_letters + string.digits + " _-"
SEPARATOR_CHARS = "@,;|"


def _random_field(rng: random.Random, name: str, depth: int) -> FieldDescriptor:
    kinds = SCALARS + [FieldKind.VECTOR] + ([FieldKind.CHOICE] if depth == 0 else [])
    kind = rng.choice(kinds)
    optional = rng.random() < 0.4
    if kind == FieldKind.CHOICE:
        branches = tuple(
            Branch(name=f"{name}b{j}", fields=tuple(_random_field(rng, f"{name}_{j}_{k}", depth + 1) for k in range(rng.randint(0, 2))))
            for j in range(rng.randint(1, 3))
        )
        return FieldDescriptor(name=name, kind=kind, optional=optional, branches=branches)
    if kind == FieldKind.VECTOR:
        comps = tuple(Component(name=c, uom="m") for c in ("x", "y", "z")[: rng.randint(1, 3)])
        return FieldDescriptor(name=name, kind=kind, optional=optional, components=comps)
    allowed = None
    if kind in (FieldKind.QUANTITY, FieldKind.COUNT) and rng.random() < 0.5:
        allowed = AllowedInterval(min=Decimal(-100), max=Decimal(100))
    if kind == FieldKind.TEXT and rng.random() < 0.5:
        allowed = AllowedTokens(values=WORDS)
    return FieldDescriptor(name=name, kind=kind, optional=optional, allowed=allowed)


def _random_decimal(rng: random.Random, wide: bool = False) -> Decimal:
    if wide and rng.random() < 0.5:
        # exponents, tiny and huge magnitudes, signed zeros
        digits = tuple(rng.randint(0, 9) for _ in range(rng.randint(1, 12)))
        return Decimal((rng.randint(0, 1), digits, rng.randint(-30, 30)))
    return Decimal(f"{rng.randint(-99, 99)}.{rng.randint(0, 999):03d}"[: rng.choice((2, 4, 7))].rstrip("."))


def _random_value(rng: random.Random, fd: FieldDescriptor):
    if fd.kind == FieldKind.TIME:
        base = datetime(2010, 8, 1, tzinfo=timezone.utc) + timedelta(seconds=rng.randint(0, 86400 * 60))
        return base.astimezone(timezone(rng.choice(OFFSETS)))
    if fd.kind == FieldKind.QUANTITY:
        return _random_decimal(rng, wide=fd.allowed is None)
    if fd.kind == FieldKind.COUNT:
        if fd.allowed is None and rng.random() < 0.3:
            return rng.randint(-(10**15), 10**15)
        return rng.randint(-100, 100)
    if fd.kind == FieldKind.BOOLEAN:
        return rng.random() < 0.5
    if fd.kind == FieldKind.TEXT:
        if fd.allowed is not None:
            return rng.choice(WORDS)
        return "".join(
            rng.choice(PLAIN) if rng.random() < 0.85 else rng.choice(SEPARATOR_CHARS) for _ in range(rng.randint(1, 8))
        )
    if fd.kind == FieldKind.VECTOR:
        return tuple(_random_decimal(rng, wide=True) for _ in fd.components)
    branch = rng.choice(fd.branches)
    return ChoiceValue(branch=branch.name, block=_random_block(rng, branch.fields))


def _random_block(rng: random.Random, fields) -> dict:
    return {fd.name: _random_value(rng, fd) for fd in fields if not fd.optional or rng.random() < 0.6}


def _texts(block: dict):
    for value in block.values():
        if isinstance(value, str):
            yield value
        elif isinstance(value, ChoiceValue):
            yield from _texts(value.block)


def test_random_round_trips_are_identity():
    rng = random.Random(20100820)
    accepted = refused = 0
    for case in range(1000):
        fields = tuple(_random_field(rng, f"f{i}", 0) for i in range(rng.randint(1, 6)))
        desc = ParameterDescription(procedure_id="proc", fields=fields)
        enc = rng.choice([ENC, TextEncodingSpec(token_separator=";", block_separator="|")])
        data = ParameterData(encoding=enc, blocks=tuple(_random_block(rng, fields) for _ in range(rng.randint(1, 3))))
        try:
            text = encode_parameter_data(desc, data)
        except LexicalError:
            refused += 1
            separators = enc.token_separator + enc.block_separator
            assert any(c in separators for b in data.blocks for t in _texts(b) for c in t), f"case {case}"
            continue
        accepted += 1
        again = decode_parameter_data(desc, enc, text)
        assert again.blocks == data.blocks, f"case {case}: {text}"
        assert encode_parameter_data(desc, again) == text
    assert refused > 0
    assert accepted > 300


def test_mutated_inputs_fail_only_with_codec_errors(imager_desc):
    rng = random.Random(7)
    alphabet = ",@YN:.+-0123456789TpointeE "
    for _ in range(2000):
        chars = list(LISTING1)
        for _ in range(rng.randint(1, 4)):
            op = rng.random()
            pos = rng.randrange(len(chars) + 1)
            if op < 0.4 and chars:
                del chars[min(pos, len(chars) - 1)]
            elif op < 0.8:
                chars.insert(pos, rng.choice(alphabet))
            elif chars:
                chars[min(pos, len(chars) - 1)] = rng.choice(alphabet)
        try:
            data = decode_parameter_data(imager_desc, ENC, "".join(chars))
        except CodecError:
            continue
        assert validate_data(imager_desc, data) is None
