"""XML vocabulary for tasking descriptions and <sps:ParameterData>.

Descriptions are read and written so that serialize(parse(d)) is canonical-equal to d:
attributes that carry their default value (optional="false", updatable="false") are never
written, and every lexical form goes through the codec's scalar formatter.
"""
from __future__ import annotations

from typing import Any, Optional, Tuple, Union

from lxml import etree
from pydantic import ValidationError

from .codec import format_decimal, format_scalar, parse_scalar
from .models import (
    SCALAR_KINDS,
    SPS_NS,
    SWE_NS,
    AllowedInterval,
    AllowedTokens,
    Branch,
    CodecError,
    Component,
    FieldDescriptor,
    FieldKind,
    ParameterDescription,
    SchemaError,
    TextEncodingSpec,
)

NSMAP = {"sps": SPS_NS, "swe": SWE_NS}

XmlInput = Union[bytes, str, etree._Element]


def _q(local: str, ns: str = SPS_NS) -> str:
    return f"{{{ns}}}{local}"


def xml_parser(remove_blank_text: bool = False) -> etree.XMLParser:
    return etree.XMLParser(resolve_entities=False, no_network=True, remove_blank_text=remove_blank_text)


def _root(xml: XmlInput) -> etree._Element:
    if isinstance(xml, etree._Element):
        return xml
    data = xml.encode("utf-8") if isinstance(xml, str) else xml
    try:
        return etree.fromstring(data, xml_parser(remove_blank_text=True))
    except etree.XMLSyntaxError as ex:
        raise SchemaError(f"not well-formed: {ex}", "/") from ex


def canonical(xml: XmlInput) -> bytes:
    """Exclusive-of-layout canonical form used to compare description documents."""
    root = _root(xml)
    if not isinstance(xml, etree._Element):
        return etree.tostring(root, method="c14n")
    again = etree.fromstring(etree.tostring(root), xml_parser(remove_blank_text=True))
    return etree.tostring(again, method="c14n")


# ---- description: parse ----

def _bool_attr(el: etree._Element, name: str, path: str) -> bool:
    raw = el.get(name)
    if raw is None or raw == "false":
        return False
    if raw == "true":
        return True
    raise SchemaError(f"attribute {name} must be true or false, got {raw!r}", path)


def _parse_field(el: etree._Element, parent: str, top_level: bool) -> Tuple[FieldDescriptor, bool]:
    if el.tag != _q("field"):
        raise SchemaError(f"unexpected element {el.tag}", parent or "/")
    name = el.get("name") or ""
    path = f"{parent}/field[{name}]" if parent else f"field[{name}]"
    if not name:
        raise SchemaError("field without name", path)
    try:
        kind = FieldKind(el.get("kind"))
    except ValueError as ex:
        raise SchemaError(f"unknown kind {el.get('kind')!r}", path) from ex
    updatable = _bool_attr(el, "updatable", path)
    if updatable and not top_level:
        raise SchemaError("only top-level fields can be updatable", path)

    allowed: Any = None
    branches = []
    components = []
    for child in el:
        if not isinstance(child.tag, str):
            continue
        if child.tag == _q("allowedInterval"):
            allowed = {"min": child.get("min"), "max": child.get("max")}
        elif child.tag == _q("allowedTokens"):
            allowed = {"values": tuple(v.text or "" for v in child.iterchildren(_q("value")))}
        elif child.tag == _q("branch"):
            bname = child.get("name") or ""
            bpath = f"{path}/branch[{bname}]"
            fields = tuple(_parse_field(f, bpath, False)[0] for f in child if isinstance(f.tag, str))
            try:
                branches.append(Branch(name=bname, fields=fields))
            except ValidationError as ex:
                raise SchemaError(_first_error(ex), bpath) from ex
        elif child.tag == _q("component"):
            components.append({"name": child.get("name") or "", "uom": child.get("uom") or ""})
        else:
            raise SchemaError(f"unexpected element {child.tag}", path)

    default = None
    raw_default = el.get("default")
    if raw_default is not None:
        if kind not in SCALAR_KINDS:
            raise SchemaError("defaults are only allowed on scalar fields", path)
        try:
            default = parse_scalar(kind, raw_default, path)
        except CodecError as ex:
            raise SchemaError(ex.message, path) from ex

    try:
        fd = FieldDescriptor(
            name=name,
            kind=kind,
            optional=_bool_attr(el, "optional", path),
            uom=el.get("uom"),
            allowed=allowed,
            default=default,
            branches=tuple(branches),
            components=tuple(Component(**c) for c in components),
        )
    except ValidationError as ex:
        raise SchemaError(_first_error(ex), path) from ex
    return fd, updatable


def _first_error(ex: ValidationError) -> str:
    errs = ex.errors()
    return str(errs[0].get("msg")) if errs else str(ex)


def parse_tasking_description(xml: XmlInput) -> ParameterDescription:
    root = _root(xml)
    if root.tag != _q("TaskingParameterDescription"):
        raise SchemaError(f"root must be sps:TaskingParameterDescription, got {root.tag}", "/")
    procedure = root.get("procedure") or ""
    fields = []
    updatable = set()
    for el in root:
        if not isinstance(el.tag, str):
            continue
        fd, upd = _parse_field(el, "", True)
        fields.append(fd)
        if upd:
            updatable.add(fd.name)
    try:
        return ParameterDescription(
            procedure_id=procedure, fields=tuple(fields), updatable_field_names=frozenset(updatable)
        )
    except ValidationError as ex:
        raise SchemaError(_first_error(ex), "/") from ex


# ---- description: serialize ----

def _field_element(parent: etree._Element, fd: FieldDescriptor, updatable: bool) -> None:
    el = etree.SubElement(parent, _q("field"), name=fd.name, kind=fd.kind.value)
    if fd.optional:
        el.set("optional", "true")
    if updatable:
        el.set("updatable", "true")
    if fd.uom is not None:
        el.set("uom", fd.uom)
    if fd.default is not None:
        el.set("default", format_scalar(fd.kind, fd.default))
    if isinstance(fd.allowed, AllowedInterval):
        etree.SubElement(el, _q("allowedInterval"), min=format_decimal(fd.allowed.min), max=format_decimal(fd.allowed.max))
    elif isinstance(fd.allowed, AllowedTokens):
        tokens = etree.SubElement(el, _q("allowedTokens"))
        for v in fd.allowed.values:
            etree.SubElement(tokens, _q("value")).text = v
    for b in fd.branches:
        bel = etree.SubElement(el, _q("branch"), name=b.name)
        for sub in b.fields:
            _field_element(bel, sub, False)
    for c in fd.components:
        etree.SubElement(el, _q("component"), name=c.name, uom=c.uom)


def tasking_description_element(desc: ParameterDescription) -> etree._Element:
    root = etree.Element(_q("TaskingParameterDescription"), nsmap={"sps": SPS_NS}, procedure=desc.procedure_id)
    for fd in desc.fields:
        _field_element(root, fd, fd.name in desc.updatable_field_names)
    return root


def serialize_tasking_description(desc: ParameterDescription) -> bytes:
    return etree.tostring(tasking_description_element(desc), pretty_print=True, xml_declaration=True, encoding="UTF-8")


# ---- ParameterData ----

def parameter_data_element(enc: TextEncodingSpec, values: str) -> etree._Element:
    root = etree.Element(_q("ParameterData"), nsmap=NSMAP)
    encoding = etree.SubElement(root, _q("encoding"))
    etree.SubElement(
        encoding,
        _q("TextEncoding", SWE_NS),
        tokenSeparator=enc.token_separator,
        blockSeparator=enc.block_separator,
    )
    etree.SubElement(root, _q("values")).text = values
    return root


def parameter_data_to_xml(enc: TextEncodingSpec, values: str) -> bytes:
    return etree.tostring(parameter_data_element(enc, values), pretty_print=True, encoding="UTF-8")


def parameter_data_from_xml(xml: XmlInput) -> Tuple[TextEncodingSpec, str]:
    """Return the encoding and the raw value string of a <sps:ParameterData> element.

    The text is returned as written; whitespace belongs to the first and last tokens.
    """
    root = _root(xml)
    if root.tag != _q("ParameterData"):
        raise SchemaError(f"expected sps:ParameterData, got {root.tag}", "/")
    text_enc: Optional[etree._Element] = root.find(f"{_q('encoding')}/{_q('TextEncoding', SWE_NS)}")
    if text_enc is None:
        raise SchemaError("missing sps:encoding/swe:TextEncoding", "ParameterData/encoding")
    try:
        enc = TextEncodingSpec(
            token_separator=text_enc.get("tokenSeparator", ","),
            block_separator=text_enc.get("blockSeparator", "@@"),
        )
    except ValidationError as ex:
        raise SchemaError(_first_error(ex), "ParameterData/encoding") from ex
    values = root.find(_q("values"))
    if values is None:
        raise SchemaError("missing sps:values", "ParameterData/values")
    return enc, values.text or ""
