"""Serialized-model codec: round-trips, determinism, protoc cross-checks."""

import hashlib
import json
import shutil
import subprocess

import numpy as np
import pytest

from slimgraph import (
    UnsupportedOpError,
    build_toy_model,
    export_model,
    graphs_equal,
    load_model,
    load_model_file,
    model_hash,
)
from slimgraph.errors import ModelFormatError

from conftest import fixture_path

# Field-for-field subset of the upstream model schema, used only to let
# protoc act as an independent decoder/encoder for our bytes.
ONNX_SUBSET_PROTO = """
syntax = "proto2";
message Attribute {
  optional string name = 1;
  optional float f = 2;
  optional int64 i = 3;
  optional bytes s = 4;
  repeated float floats = 7;
  repeated int64 ints = 8;
  optional int32 type = 20;
}
message Tensor {
  repeated int64 dims = 1;
  optional int32 data_type = 2;
  repeated float float_data = 4 [packed = true];
  repeated int64 int64_data = 7;
  optional string name = 8;
  optional bytes raw_data = 9;
}
message Dim {
  optional int64 dim_value = 1;
  optional string dim_param = 2;
}
message Shape { repeated Dim dim = 1; }
message TensorType {
  optional int32 elem_type = 1;
  optional Shape shape = 2;
}
message Type { optional TensorType tensor_type = 1; }
message ValueInfo {
  optional string name = 1;
  optional Type type = 2;
}
message NodeP {
  repeated string input = 1;
  repeated string output = 2;
  optional string name = 3;
  optional string op_type = 4;
  repeated Attribute attribute = 5;
}
message GraphP {
  repeated NodeP node = 1;
  optional string name = 2;
  repeated Tensor initializer = 5;
  repeated ValueInfo input = 11;
  repeated ValueInfo output = 12;
}
message OperatorSetId {
  optional string domain = 1;
  optional int64 version = 2;
}
message StringEntry {
  optional string key = 1;
  optional string value = 2;
}
message ModelP {
  optional int64 ir_version = 1;
  optional string producer_name = 2;
  optional string producer_version = 3;
  optional GraphP graph = 7;
  repeated OperatorSetId opset_import = 8;
  repeated StringEntry metadata_props = 14;
}
"""

TINY_MODEL_TEXT = r"""
ir_version: 7
producer_name: "external"
graph {
  name: "tiny"
  node {
    input: "x"
    input: "w"
    output: "y"
    op_type: "Conv"
    attribute { name: "strides" ints: 1 ints: 1 type: 7 }
  }
  initializer {
    dims: 1 dims: 1 dims: 1 dims: 1
    data_type: 1
    name: "w"
    raw_data: "\000\000\200?"
  }
  input { name: "x" type { tensor_type { elem_type: 1 shape {
    dim { dim_param: "N" } dim { dim_value: 1 } dim { dim_value: 2 } dim { dim_value: 2 }
  } } } }
  output { name: "y" type { tensor_type { elem_type: 1 shape {
    dim { dim_param: "N" } dim { dim_value: 1 } dim { dim_value: 2 } dim { dim_value: 2 }
  } } } }
}
opset_import { domain: "" version: 13 }
"""


class TestRoundTrip:
    @pytest.mark.parametrize("arch", ["toy_mt_a", "toy_mt_b"])
    def test_identity(self, arch):
        g = build_toy_model(arch, seed=0)
        g2 = load_model(export_model(g))
        assert graphs_equal(g, g2)

    @pytest.mark.parametrize("arch", ["toy_mt_a", "toy_mt_b"])
    def test_export_bytes_stable(self, arch):
        g = build_toy_model(arch, seed=0)
        blob = export_model(g)
        assert blob == export_model(g)
        assert export_model(load_model(blob)) == blob

    def test_fixture_matches_generator(self):
        g = build_toy_model("toy_mt_a", seed=0)
        fixture = load_model_file(fixture_path("toy_mt_a.onnx"))
        assert graphs_equal(g, fixture)

    def test_fixture_checksums(self):
        with open(fixture_path("checksums.json")) as fh:
            goldens = json.load(fh)
        for arch, entry in goldens.items():
            with open(fixture_path(entry["file"]), "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            assert digest == entry["sha256"], arch
            assert model_hash(load_model_file(fixture_path(entry["file"]))) == entry["model_hash"]

    def test_model_hash_tracks_content(self):
        g = build_toy_model("toy_mt_a", seed=0)
        g_other = build_toy_model("toy_mt_a", seed=1)
        assert model_hash(g) != model_hash(g_other)
        assert model_hash(g) == model_hash(load_model(export_model(g)))


class TestLoader:
    def test_unknown_fields_skipped(self):
        from slimgraph.graph.protowire import encode_varint

        blob = export_model(build_toy_model("toy_mt_a", seed=0))
        # append an unknown top-level varint field (field 63)
        extended = blob + encode_varint((63 << 3) | 0) + bytes([0x2A])
        g = load_model(blob)
        g2 = load_model(extended)
        assert graphs_equal(g, g2)

    def test_garbage_rejected(self):
        with pytest.raises(ModelFormatError):
            load_model(b"\xff\xff\xff\xff")

    def test_empty_rejected(self):
        with pytest.raises(ModelFormatError):
            load_model(b"")

    def test_non_bytes_rejected(self):
        with pytest.raises(ModelFormatError):
            load_model("not bytes")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model_file(tmp_path / "absent.onnx")


@pytest.mark.skipif(shutil.which("protoc") is None, reason="protoc unavailable")
class TestProtocOracle:
    def _schema(self, tmp_path) -> str:
        proto = tmp_path / "onnx_subset.proto"
        proto.write_text(ONNX_SUBSET_PROTO)
        return str(tmp_path)

    def _decode(self, tmp_path, blob: bytes) -> str:
        result = subprocess.run(
            ["protoc", f"--proto_path={self._schema(tmp_path)}",
             "--decode=ModelP", str(tmp_path / "onnx_subset.proto")],
            input=blob,
            capture_output=True,
            check=True,
        )
        return result.stdout.decode()

    def test_protoc_reads_our_export(self, tmp_path):
        blob = export_model(build_toy_model("toy_mt_a", seed=0))
        text = self._decode(tmp_path, blob)
        assert "ir_version: 7" in text
        assert 'op_type: "Conv"' in text
        assert 'op_type: "BatchNormalization"' in text
        assert "version: 13" in text
        assert 'dim_param: "N"' in text
        assert 'name: "conv1_w"' in text

    def test_we_read_protoc_encoding(self, tmp_path):
        result = subprocess.run(
            ["protoc", f"--proto_path={self._schema(tmp_path)}",
             "--encode=ModelP", str(tmp_path / "onnx_subset.proto")],
            input=TINY_MODEL_TEXT.encode(),
            capture_output=True,
            check=True,
        )
        g = load_model(result.stdout)
        assert [n.op for n in g.nodes] == ["Conv"]
        # node names synthesized when the producer left them empty
        assert g.nodes[0].id == "conv_0"
        assert g.nodes[0].attrs["strides"] == [1, 1]
        assert g.weights["w"].shape == (1, 1, 1, 1)
        assert g.weights["w"][0, 0, 0, 0] == 1.0
        assert g.shape_of("y") == (-1, 1, 2, 2)

    def test_unpacked_repeated_scalars_accepted(self, tmp_path):
        # proto2 without [packed] emits dims/ints one varint field at a time
        text = self._decode(tmp_path, export_model(build_toy_model("toy_mt_b", seed=0)))
        assert "int64_data" in text or "dims: 3" in text

    def test_unsupported_op_rejected(self, tmp_path):
        bad_text = TINY_MODEL_TEXT.replace('op_type: "Conv"', 'op_type: "Sigmoid"')
        bad_text = bad_text.replace(
            'attribute { name: "strides" ints: 1 ints: 1 type: 7 }', ""
        ).replace('input: "w"\n', "")
        result = subprocess.run(
            ["protoc", f"--proto_path={self._schema(tmp_path)}",
             "--encode=ModelP", str(tmp_path / "onnx_subset.proto")],
            input=bad_text.encode(),
            capture_output=True,
            check=True,
        )
        with pytest.raises(UnsupportedOpError):
            load_model(result.stdout)

    def test_unsupported_dtype_rejected(self, tmp_path):
        bad_text = TINY_MODEL_TEXT.replace("data_type: 1", "data_type: 6")
        result = subprocess.run(
            ["protoc", f"--proto_path={self._schema(tmp_path)}",
             "--encode=ModelP", str(tmp_path / "onnx_subset.proto")],
            input=bad_text.encode(),
            capture_output=True,
            check=True,
        )
        with pytest.raises(ModelFormatError):
            load_model(result.stdout)
