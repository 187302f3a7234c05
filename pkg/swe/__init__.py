from .codec import decode_parameter_data, encode_parameter_data, validate_values
from .description import (
    parameter_data_from_xml,
    parameter_data_to_xml,
    parse_tasking_description,
    serialize_tasking_description,
)
from .models import (
    ChoiceValue,
    CodecError,
    FieldDescriptor,
    FieldKind,
    ParameterData,
    ParameterDescription,
    TextEncodingSpec,
    ValidationReport,
)

__all__ = [
    "ChoiceValue",
    "CodecError",
    "FieldDescriptor",
    "FieldKind",
    "ParameterData",
    "ParameterDescription",
    "TextEncodingSpec",
    "ValidationReport",
    "decode_parameter_data",
    "encode_parameter_data",
    "parameter_data_from_xml",
    "parameter_data_to_xml",
    "parse_tasking_description",
    "serialize_tasking_description",
    "validate_values",
]
