"""Minimal protobuf wire-format primitives.

Just enough of the encoding (varints, length-delimited fields, packed
scalars) to read and write the model subset this package supports. The
schema itself lives in onnx_io; this module knows nothing about field
meanings.

Wire types used: 0 (varint), 1 (64-bit), 2 (length-delimited),
5 (32-bit). Group wire types (3, 4) are long-deprecated and rejected.
"""

from __future__ import annotations

import struct

from ..errors import ModelFormatError

WIRE_VARINT = 0
WIRE_I64 = 1
WIRE_LEN = 2
WIRE_I32 = 5

_U64_MASK = (1 << 64) - 1


def encode_varint(value: int) -> bytes:
    """Encode a non-negative integer (< 2**64) as a base-128 varint."""
    if value < 0:
        raise ValueError("varint value must be non-negative after masking")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def encode_signed64(value: int) -> bytes:
    # int64 fields carry negatives as 10-byte two's-complement varints
    return encode_varint(value & _U64_MASK)


def decode_signed64(raw: int) -> int:
    if raw >= 1 << 63:
        raw -= 1 << 64
    return raw


class WireWriter:
    """Appends tagged fields to a growing buffer."""

    def __init__(self):
        self._buf = bytearray()

    def tag(self, field: int, wire_type: int) -> None:
        self._buf += encode_varint((field << 3) | wire_type)

    def write_varint_field(self, field: int, value: int) -> None:
        self.tag(field, WIRE_VARINT)
        self._buf += encode_signed64(value)

    def write_bytes_field(self, field: int, data: bytes) -> None:
        self.tag(field, WIRE_LEN)
        self._buf += encode_varint(len(data))
        self._buf += data

    def write_string_field(self, field: int, text: str) -> None:
        self.write_bytes_field(field, text.encode("utf-8"))

    def write_message_field(self, field: int, sub: "WireWriter") -> None:
        self.write_bytes_field(field, sub.getvalue())

    def write_float_field(self, field: int, value: float) -> None:
        self.tag(field, WIRE_I32)
        self._buf += struct.pack("<f", value)

    def write_packed_floats(self, field: int, values) -> None:
        self.write_bytes_field(field, struct.pack(f"<{len(values)}f", *values))

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class WireReader:
    """Cursor over one serialized message; yields (field, wire_type, payload).

    Payload is an int for varint/fixed fields and a memoryview for
    length-delimited fields.
    """

    def __init__(self, data):
        self._view = memoryview(data)
        self._pos = 0

    def at_end(self) -> bool:
        return self._pos >= len(self._view)

    def _read_varint(self) -> int:
        result = 0
        shift = 0
        view = self._view
        pos = self._pos
        while True:
            if pos >= len(view):
                raise ModelFormatError("truncated varint")
            byte = view[pos]
            pos += 1
            result |= (byte & 0x7F) << shift
            if not byte & 0x80:
                break
            shift += 7
            if shift > 63:
                raise ModelFormatError("varint exceeds 64 bits")
        self._pos = pos
        return result

    def fields(self):
        """Iterate all fields in the buffer."""
        while not self.at_end():
            key = self._read_varint()
            field, wire_type = key >> 3, key & 0x7
            if field == 0:
                raise ModelFormatError("field number 0 is invalid")
            if wire_type == WIRE_VARINT:
                yield field, wire_type, self._read_varint()
            elif wire_type == WIRE_LEN:
                size = self._read_varint()
                if self._pos + size > len(self._view):
                    raise ModelFormatError("length-delimited field overruns buffer")
                payload = self._view[self._pos:self._pos + size]
                self._pos += size
                yield field, wire_type, payload
            elif wire_type == WIRE_I64:
                if self._pos + 8 > len(self._view):
                    raise ModelFormatError("truncated 64-bit field")
                payload = self._view[self._pos:self._pos + 8]
                self._pos += 8
                yield field, wire_type, payload
            elif wire_type == WIRE_I32:
                if self._pos + 4 > len(self._view):
                    raise ModelFormatError("truncated 32-bit field")
                payload = self._view[self._pos:self._pos + 4]
                self._pos += 4
                yield field, wire_type, payload
            else:
                raise ModelFormatError(f"unsupported wire type {wire_type}")


def decode_packed_int64(payload) -> list[int]:
    """Decode a packed repeated int64 payload (also accepts one varint each)."""
    reader = WireReader(payload)
    values = []
    while not reader.at_end():
        values.append(decode_signed64(reader._read_varint()))
    return values


def decode_packed_floats(payload) -> list[float]:
    raw = bytes(payload)
    if len(raw) % 4:
        raise ModelFormatError("packed float payload not a multiple of 4 bytes")
    return list(struct.unpack(f"<{len(raw) // 4}f", raw))


def decode_float32(payload) -> float:
    return struct.unpack("<f", bytes(payload))[0]
