"""Wire-level protobuf primitives, cross-checked against protoc."""

import shutil
import struct
import subprocess

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slimgraph.errors import ModelFormatError
from slimgraph.graph.protowire import (
    WIRE_I32,
    WIRE_LEN,
    WIRE_VARINT,
    WireReader,
    WireWriter,
    decode_float32,
    decode_packed_floats,
    decode_packed_int64,
    decode_signed64,
    encode_varint,
)


class TestVarint:
    @pytest.mark.parametrize(
        "value,expected",
        [
            (0, b"\x00"),
            (1, b"\x01"),
            (127, b"\x7f"),
            (128, b"\x80\x01"),
            (300, b"\xac\x02"),
            (2**32, b"\x80\x80\x80\x80\x10"),
            (2**64 - 1, b"\xff" * 9 + b"\x01"),
        ],
    )
    def test_known_encodings(self, value, expected):
        assert encode_varint(value) == expected

    @given(st.integers(min_value=0, max_value=2**64 - 1))
    def test_roundtrip(self, value):
        w = WireWriter()
        w.write_varint_field(3, value)
        fields = list(WireReader(w.getvalue()).fields())
        assert fields == [(3, WIRE_VARINT, value)]

    def test_truncated_varint_rejected(self):
        with pytest.raises(ModelFormatError):
            list(WireReader(b"\x08\x80").fields())

    def test_negative_int64_two_complement(self):
        w = WireWriter()
        w.write_varint_field(1, -1)
        encoded = w.getvalue()
        assert len(encoded) == 11  # tag + ten varint bytes
        fields = list(WireReader(encoded).fields())
        assert fields[0][2] == 2**64 - 1
        assert decode_signed64(fields[0][2]) == -1

    @given(st.integers(min_value=-(2**63), max_value=2**63 - 1))
    def test_signed_roundtrip(self, value):
        w = WireWriter()
        w.write_varint_field(1, value)
        raw = list(WireReader(w.getvalue()).fields())[0][2]
        assert decode_signed64(raw) == value


class TestFields:
    def test_mixed_fields_in_order(self):
        w = WireWriter()
        w.write_varint_field(1, 7)
        w.write_bytes_field(2, b"abc")
        w.write_string_field(3, "xyz")
        w.write_float_field(4, 1.5)
        out = list(WireReader(w.getvalue()).fields())
        assert out[0] == (1, WIRE_VARINT, 7)
        assert out[1][:2] == (2, WIRE_LEN) and bytes(out[1][2]) == b"abc"
        assert bytes(out[2][2]) == b"xyz"
        assert out[3][:2] == (4, WIRE_I32)
        assert decode_float32(out[3][2]) == 1.5

    def test_nested_message(self):
        inner = WireWriter()
        inner.write_varint_field(1, 42)
        outer = WireWriter()
        outer.write_message_field(5, inner)
        fields = list(WireReader(outer.getvalue()).fields())
        assert fields[0][:2] == (5, WIRE_LEN)
        nested = list(WireReader(bytes(fields[0][2])).fields())
        assert nested == [(1, WIRE_VARINT, 42)]

    def test_truncated_length_delimited(self):
        w = WireWriter()
        w.write_bytes_field(1, b"abcdef")
        data = w.getvalue()[:-2]
        with pytest.raises(ModelFormatError):
            list(WireReader(data).fields())

    def test_group_wire_types_rejected(self):
        # tag for field 1, wire type 3 (start group)
        with pytest.raises(ModelFormatError):
            list(WireReader(bytes([0x0B])).fields())

    def test_field_number_zero_rejected(self):
        with pytest.raises(ModelFormatError):
            list(WireReader(b"\x00\x01").fields())

    @given(st.lists(st.floats(width=32, allow_nan=False, allow_infinity=False), max_size=20))
    def test_packed_floats_roundtrip(self, values):
        w = WireWriter()
        w.write_packed_floats(6, values)
        fields = list(WireReader(w.getvalue()).fields())
        decoded = decode_packed_floats(fields[0][2])
        assert decoded == [struct.unpack("<f", struct.pack("<f", v))[0] for v in values]

    def test_packed_int64_payload(self):
        payload = encode_varint(1) + encode_varint(300) + encode_varint((-7) & (2**64 - 1))
        assert decode_packed_int64(payload) == [1, 300, -7]

    def test_packed_floats_reject_ragged_payload(self):
        with pytest.raises(ModelFormatError):
            decode_packed_floats(b"\x00\x00\x00")


@pytest.mark.skipif(shutil.which("protoc") is None, reason="protoc unavailable")
class TestProtocOracle:
    """protoc --encode/--decode as an independent wire-format oracle."""

    PROTO = """
syntax = "proto2";
message Probe {
  optional int64 a = 1;
  optional string b = 2;
  repeated int64 c = 3 [packed = true];
  repeated float d = 4 [packed = true];
  optional Probe nested = 5;
}
"""

    def _write_probe(self) -> WireWriter:
        w = WireWriter()
        w.write_varint_field(1, 1234)
        w.write_string_field(2, "hello")
        packed = b"".join(encode_varint(v) for v in (1, 2, 300))
        w.write_bytes_field(3, packed)
        w.write_packed_floats(4, [0.5, -2.0])
        nested = WireWriter()
        nested.write_varint_field(1, -7)
        w.write_message_field(5, nested)
        return w

    def test_matches_protoc_encoding(self, tmp_path):
        proto = tmp_path / "probe.proto"
        proto.write_text(self.PROTO)
        result = subprocess.run(
            ["protoc", f"--proto_path={tmp_path}", "--encode=Probe", str(proto)],
            input=b'a: 1234 b: "hello" c: 1 c: 2 c: 300 d: 0.5 d: -2 nested { a: -7 }',
            capture_output=True,
            check=True,
        )
        assert self._write_probe().getvalue() == result.stdout

    def test_protoc_decodes_our_bytes(self, tmp_path):
        proto = tmp_path / "probe.proto"
        proto.write_text(self.PROTO)
        result = subprocess.run(
            ["protoc", f"--proto_path={tmp_path}", "--decode=Probe", str(proto)],
            input=self._write_probe().getvalue(),
            capture_output=True,
            check=True,
        )
        text = result.stdout.decode()
        assert "a: 1234" in text
        assert 'b: "hello"' in text
        assert "c: 300" in text
        assert "a: -7" in text
