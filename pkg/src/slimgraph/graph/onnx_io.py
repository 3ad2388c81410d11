"""Reading and writing the supported ONNX subset.

The wire schema is hand-coded against the public ONNX field numbers
(ModelProto and friends), since only a small static slice is needed:
float32 NCHW tensors, the supported op set, single static graph.

Export is deterministic: fixed field order, initializers sorted by name,
node attributes sorted by name, weights stored as little-endian raw
bytes. Loading tolerates unknown fields (they are skipped) so files from
other producers remain readable as long as the subset semantics hold.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from ..errors import ModelFormatError
from .model import ModelGraph, Node, TensorSpec, build_graph
from .protowire import (
    WIRE_LEN,
    WIRE_VARINT,
    WireReader,
    WireWriter,
    decode_float32,
    decode_packed_floats,
    decode_packed_int64,
    decode_signed64,
)

IR_VERSION = 7
OPSET_VERSION = 13
PRODUCER = "slimgraph"
PRODUCER_VERSION = "0.1.0"

# TensorProto.DataType values
DT_FLOAT = 1
DT_INT64 = 7

# AttributeProto.AttributeType values
AT_FLOAT = 1
AT_INT = 2
AT_STRING = 3
AT_FLOATS = 6
AT_INTS = 7

_BATCH_PARAM = "N"


# -- decoding ------------------------------------------------------------


def _decode_tensor(payload) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    data_type = DT_FLOAT
    name = ""
    raw: bytes | None = None
    float_data: list[float] = []
    int64_data: list[int] = []
    for field, wire_type, value in WireReader(payload).fields():
        if field == 1:  # dims
            if wire_type == WIRE_VARINT:
                dims.append(decode_signed64(value))
            else:
                dims.extend(decode_packed_int64(value))
        elif field == 2 and wire_type == WIRE_VARINT:
            data_type = value
        elif field == 4:  # float_data
            if wire_type == WIRE_LEN:
                float_data.extend(decode_packed_floats(value))
            else:
                raise ModelFormatError("float_data must be packed")
        elif field == 7:  # int64_data
            if wire_type == WIRE_VARINT:
                int64_data.append(decode_signed64(value))
            else:
                int64_data.extend(decode_packed_int64(value))
        elif field == 8:
            name = str(bytes(value), "utf-8")
        elif field == 9:
            raw = bytes(value)
    if not name:
        raise ModelFormatError("initializer without a name")
    shape = tuple(dims)
    if data_type == DT_FLOAT:
        if raw is not None:
            arr = np.frombuffer(raw, dtype="<f4")
        else:
            arr = np.asarray(float_data, dtype=np.float32)
        arr = arr.astype(np.float32, copy=True)
    elif data_type == DT_INT64:
        if raw is not None:
            arr = np.frombuffer(raw, dtype="<i8").astype(np.int64, copy=True)
        else:
            arr = np.asarray(int64_data, dtype=np.int64)
    else:
        raise ModelFormatError(f"initializer {name!r}: unsupported data type {data_type}")
    expected = 1
    for d in shape:
        expected *= d
    if arr.size != expected:
        raise ModelFormatError(
            f"initializer {name!r}: payload holds {arr.size} values, dims say {expected}"
        )
    return name, arr.reshape(shape)


def _decode_attribute(payload) -> tuple[str, object]:
    name = ""
    atype = None
    f_val = None
    i_val = None
    s_val = None
    floats: list[float] = []
    ints: list[int] = []
    for field, wire_type, value in WireReader(payload).fields():
        if field == 1:
            name = str(bytes(value), "utf-8")
        elif field == 2:
            f_val = decode_float32(value)
        elif field == 3:
            i_val = decode_signed64(value)
        elif field == 4:
            s_val = str(bytes(value), "utf-8")
        elif field == 7:
            if wire_type == WIRE_LEN and len(value) == 4:
                floats.append(decode_float32(value))
            else:
                raise ModelFormatError(f"attribute {name!r}: malformed floats entry")
        elif field == 8:
            if wire_type == WIRE_VARINT:
                ints.append(decode_signed64(value))
            else:
                ints.extend(decode_packed_int64(value))
        elif field == 20 and wire_type == WIRE_VARINT:
            atype = value
    if not name:
        raise ModelFormatError("attribute without a name")
    if atype == AT_FLOAT or (atype is None and f_val is not None):
        return name, float(f_val if f_val is not None else 0.0)
    if atype == AT_INT or (atype is None and i_val is not None):
        return name, int(i_val if i_val is not None else 0)
    if atype == AT_STRING or (atype is None and s_val is not None):
        return name, s_val if s_val is not None else ""
    if atype == AT_INTS or (atype is None and ints):
        return name, list(ints)
    if atype == AT_FLOATS or (atype is None and floats):
        return name, list(floats)
    raise ModelFormatError(f"attribute {name!r}: unsupported attribute type {atype}")


def _decode_node(payload, index: int) -> Node:
    inputs: list[str] = []
    outputs: list[str] = []
    name = ""
    op_type = ""
    attrs: dict = {}
    for field, _wt, value in WireReader(payload).fields():
        if field == 1:
            inputs.append(str(bytes(value), "utf-8"))
        elif field == 2:
            outputs.append(str(bytes(value), "utf-8"))
        elif field == 3:
            name = str(bytes(value), "utf-8")
        elif field == 4:
            op_type = str(bytes(value), "utf-8")
        elif field == 5:
            key, attr_value = _decode_attribute(value)
            attrs[key] = attr_value
    if not op_type:
        raise ModelFormatError(f"node #{index} has no op_type")
    if not name:
        name = f"{op_type.lower()}_{index}"
    return Node(name, op_type, tuple(inputs), tuple(outputs), attrs)


def _decode_dims(payload) -> tuple[int, ...]:
    dims: list[int] = []
    for field, _wt, value in WireReader(payload).fields():
        if field != 1:
            continue
        dim_value = None
        dim_param = None
        for sub_field, sub_wt, sub_value in WireReader(value).fields():
            if sub_field == 1 and sub_wt == WIRE_VARINT:
                dim_value = decode_signed64(sub_value)
            elif sub_field == 2:
                dim_param = str(bytes(sub_value), "utf-8")
        if dim_param is not None and dim_value is None:
            dims.append(-1)
        elif dim_value is not None:
            dims.append(int(dim_value))
        else:
            raise ModelFormatError("tensor shape dimension with no value")
    return tuple(dims)


def _decode_value_info(payload) -> TensorSpec:
    name = ""
    shape: tuple[int, ...] = ()
    elem_type = DT_FLOAT
    for field, _wt, value in WireReader(payload).fields():
        if field == 1:
            name = str(bytes(value), "utf-8")
        elif field == 2:  # TypeProto
            for t_field, _t_wt, t_value in WireReader(value).fields():
                if t_field == 1:  # tensor_type
                    for tt_field, tt_wt, tt_value in WireReader(t_value).fields():
                        if tt_field == 1 and tt_wt == WIRE_VARINT:
                            elem_type = tt_value
                        elif tt_field == 2:
                            shape = _decode_dims(tt_value)
    if not name:
        raise ModelFormatError("value_info without a name")
    if elem_type != DT_FLOAT:
        raise ModelFormatError(f"boundary tensor {name!r} must be float32")
    return TensorSpec(name, shape)


def load_model(data: bytes) -> ModelGraph:
    """Decode model bytes and return a validated graph.

    Raises ModelFormatError on undecodable input and the validation
    errors from the graph module on structural problems.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise ModelFormatError("load_model expects raw bytes")
    graph_payload = None
    metadata: dict[str, str] = {}
    for field, wire_type, value in WireReader(data).fields():
        if field == 7 and wire_type == WIRE_LEN:
            graph_payload = value
        elif field == 14 and wire_type == WIRE_LEN:
            key = val = ""
            for m_field, _m_wt, m_value in WireReader(value).fields():
                if m_field == 1:
                    key = str(bytes(m_value), "utf-8")
                elif m_field == 2:
                    val = str(bytes(m_value), "utf-8")
            if key:
                metadata[key] = val
    if graph_payload is None:
        raise ModelFormatError("model has no graph")

    nodes: list[Node] = []
    weights: dict[str, np.ndarray] = {}
    inputs: list[TensorSpec] = []
    outputs: list[TensorSpec] = []
    graph_name = ""
    for field, _wt, value in WireReader(graph_payload).fields():
        if field == 1:
            nodes.append(_decode_node(value, len(nodes)))
        elif field == 2:
            graph_name = str(bytes(value), "utf-8")
        elif field == 5:
            name, arr = _decode_tensor(value)
            weights[name] = arr
        elif field == 11:
            inputs.append(_decode_value_info(value))
        elif field == 12:
            outputs.append(_decode_value_info(value))
    # ONNX allows initializers to be listed among graph inputs; drop those
    inputs = [s for s in inputs if s.name not in weights]
    if not inputs:
        raise ModelFormatError("model declares no data inputs")
    if not outputs:
        raise ModelFormatError("model declares no outputs")
    return build_graph(graph_name or "model", nodes, weights, inputs, outputs, metadata)


def load_model_file(path) -> ModelGraph:
    with open(path, "rb") as fh:
        return load_model(fh.read())


# -- encoding ------------------------------------------------------------


def _encode_attribute(name: str, value) -> WireWriter:
    w = WireWriter()
    w.write_string_field(1, name)
    if isinstance(value, bool):
        raise ModelFormatError(f"attribute {name!r}: bool attributes are unsupported")
    if isinstance(value, int):
        w.write_varint_field(3, value)
        w.write_varint_field(20, AT_INT)
    elif isinstance(value, float):
        w.write_float_field(2, value)
        w.write_varint_field(20, AT_FLOAT)
    elif isinstance(value, str):
        w.write_bytes_field(4, value.encode("utf-8"))
        w.write_varint_field(20, AT_STRING)
    elif isinstance(value, (list, tuple)) and all(isinstance(v, int) for v in value):
        for v in value:
            w.tag(8, WIRE_VARINT)
            w._buf += _signed(v)
        w.write_varint_field(20, AT_INTS)
    elif isinstance(value, (list, tuple)) and all(isinstance(v, (int, float)) for v in value):
        for v in value:
            w.write_float_field(7, float(v))
        w.write_varint_field(20, AT_FLOATS)
    else:
        raise ModelFormatError(f"attribute {name!r}: cannot encode {type(value).__name__}")
    return w


def _signed(v: int) -> bytes:
    from .protowire import encode_signed64

    return encode_signed64(v)


def _encode_node(node: Node) -> WireWriter:
    w = WireWriter()
    for tensor in node.inputs:
        w.write_string_field(1, tensor)
    for tensor in node.outputs:
        w.write_string_field(2, tensor)
    w.write_string_field(3, node.id)
    w.write_string_field(4, node.op)
    for key in sorted(node.attrs):
        w.write_message_field(5, _encode_attribute(key, node.attrs[key]))
    return w


def _encode_tensor(name: str, arr: np.ndarray) -> WireWriter:
    w = WireWriter()
    for d in arr.shape:
        w.tag(1, WIRE_VARINT)
        w._buf += _signed(int(d))
    if arr.dtype == np.float32:
        w.write_varint_field(2, DT_FLOAT)
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    elif arr.dtype == np.int64:
        w.write_varint_field(2, DT_INT64)
        raw = np.ascontiguousarray(arr, dtype="<i8").tobytes()
    else:
        raise ModelFormatError(f"initializer {name!r}: dtype {arr.dtype} is unsupported")
    w.write_string_field(8, name)
    w.write_bytes_field(9, raw)
    return w


def _encode_value_info(spec: TensorSpec) -> WireWriter:
    shape_w = WireWriter()
    for d in spec.shape:
        dim_w = WireWriter()
        if d == -1:
            dim_w.write_string_field(2, _BATCH_PARAM)
        else:
            dim_w.write_varint_field(1, int(d))
        shape_w.write_message_field(1, dim_w)
    tensor_type = WireWriter()
    tensor_type.write_varint_field(1, DT_FLOAT)
    tensor_type.write_message_field(2, shape_w)
    type_proto = WireWriter()
    type_proto.write_message_field(1, tensor_type)
    w = WireWriter()
    w.write_string_field(1, spec.name)
    w.write_message_field(2, type_proto)
    return w


def export_model(g: ModelGraph) -> bytes:
    """Serialize a graph; byte-identical for equal graphs."""
    graph_w = WireWriter()
    for node in g.nodes:
        graph_w.write_message_field(1, _encode_node(node))
    graph_w.write_string_field(2, g.name)
    for name in sorted(g.weights):
        graph_w.write_message_field(5, _encode_tensor(name, g.weights[name]))
    for spec in g.input_specs:
        graph_w.write_message_field(11, _encode_value_info(spec))
    for spec in g.output_specs:
        graph_w.write_message_field(12, _encode_value_info(spec))

    opset_w = WireWriter()
    opset_w.write_string_field(1, "")
    opset_w.write_varint_field(2, OPSET_VERSION)

    model_w = WireWriter()
    model_w.write_varint_field(1, IR_VERSION)
    model_w.write_string_field(2, PRODUCER)
    model_w.write_string_field(3, PRODUCER_VERSION)
    model_w.write_message_field(7, graph_w)
    model_w.write_message_field(8, opset_w)
    for key in sorted(g.metadata):
        entry = WireWriter()
        entry.write_string_field(1, key)
        entry.write_string_field(2, g.metadata[key])
        model_w.write_message_field(14, entry)
    return model_w.getvalue()


def export_model_file(g: ModelGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(export_model(g))


def model_hash(g: ModelGraph) -> str:
    """Stable content hash of the serialized model."""
    return hashlib.sha256(export_model(g)).hexdigest()
