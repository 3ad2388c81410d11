/**
 * Codec for the supported ONNX subset, hand-built against the public
 * field numbers. Decoding tolerates unknown fields so files from other
 * producers load as long as the subset semantics hold; encoding is
 * deterministic (fixed field order, initializers and attributes sorted
 * by name, weights as little-endian raw bytes) so equal graphs give
 * equal bytes.
 */

import {
  WIRE_LEN,
  WIRE_VARINT,
  WireError,
  WireReader,
  WireWriter,
  decodeFloat32,
  decodePackedInt64,
  decodeSigned64,
} from "./wire.js";
import {
  Attr,
  Graph,
  GraphError,
  NodeDef,
  TensorInit,
  TensorSpec,
  buildGraph,
} from "./model.js";

export const IR_VERSION = 7;
export const OPSET_VERSION = 13;
const PRODUCER = "slimgraph-frontend";
const PRODUCER_VERSION = "0.1.0";

const DT_FLOAT = 1;
const DT_INT64 = 7;

const AT_FLOAT = 1;
const AT_INT = 2;
const AT_STRING = 3;
const AT_FLOATS = 6;
const AT_INTS = 7;

const BATCH_PARAM = "N";

const utf8 = new TextDecoder();

// -- decoding ------------------------------------------------------------

function asBytes(value: bigint | Uint8Array, what: string): Uint8Array {
  if (!(value instanceof Uint8Array)) throw new WireError(`${what}: expected bytes`);
  return value;
}

function decodeTensor(payload: Uint8Array): [string, TensorInit] {
  const dims: number[] = [];
  let dataType = DT_FLOAT;
  let name = "";
  let raw: Uint8Array | null = null;
  const floatData: number[] = [];
  const int64Data: bigint[] = [];
  for (const { field, wireType, value } of new WireReader(payload).fields()) {
    if (field === 1) {
      if (wireType === WIRE_VARINT) {
        dims.push(Number(decodeSigned64(value as bigint)));
      } else {
        dims.push(...decodePackedInt64(value as Uint8Array).map(Number));
      }
    } else if (field === 2 && wireType === WIRE_VARINT) {
      dataType = Number(value);
    } else if (field === 4) {
      const bytes = asBytes(value, "float_data");
      if (bytes.length % 4 !== 0) throw new WireError("packed float payload misaligned");
      const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.length);
      for (let i = 0; i < bytes.length; i += 4) floatData.push(view.getFloat32(i, true));
    } else if (field === 7) {
      if (wireType === WIRE_VARINT) {
        int64Data.push(decodeSigned64(value as bigint));
      } else {
        int64Data.push(...decodePackedInt64(value as Uint8Array));
      }
    } else if (field === 8) {
      name = utf8.decode(asBytes(value, "tensor name"));
    } else if (field === 9) {
      raw = asBytes(value, "raw_data");
    }
  }
  if (!name) throw new WireError("initializer without a name");
  let expected = 1;
  for (const d of dims) expected *= d;

  let init: TensorInit;
  if (dataType === DT_FLOAT) {
    let data: Float32Array;
    if (raw !== null) {
      const view = new DataView(raw.buffer, raw.byteOffset, raw.length);
      data = new Float32Array(raw.length / 4);
      for (let i = 0; i < data.length; i++) data[i] = view.getFloat32(i * 4, true);
    } else {
      data = Float32Array.from(floatData);
    }
    init = { dims, dtype: "float32", data };
  } else if (dataType === DT_INT64) {
    let data: BigInt64Array;
    if (raw !== null) {
      const view = new DataView(raw.buffer, raw.byteOffset, raw.length);
      data = new BigInt64Array(raw.length / 8);
      for (let i = 0; i < data.length; i++) data[i] = view.getBigInt64(i * 8, true);
    } else {
      data = BigInt64Array.from(int64Data);
    }
    init = { dims, dtype: "int64", data };
  } else {
    throw new WireError(`initializer ${name}: unsupported data type ${dataType}`);
  }
  if (init.data.length !== expected) {
    throw new WireError(`initializer ${name}: payload size disagrees with dims`);
  }
  return [name, init];
}

function decodeAttribute(payload: Uint8Array): [string, Attr] {
  let name = "";
  let atype: number | null = null;
  let fVal: number | null = null;
  let iVal: number | null = null;
  let sVal: string | null = null;
  const floats: number[] = [];
  const ints: number[] = [];
  for (const { field, wireType, value } of new WireReader(payload).fields()) {
    if (field === 1) {
      name = utf8.decode(asBytes(value, "attribute name"));
    } else if (field === 2) {
      fVal = decodeFloat32(asBytes(value, "attribute f"));
    } else if (field === 3) {
      iVal = Number(decodeSigned64(value as bigint));
    } else if (field === 4) {
      sVal = utf8.decode(asBytes(value, "attribute s"));
    } else if (field === 7) {
      const bytes = asBytes(value, "attribute floats");
      if (wireType !== WIRE_LEN || bytes.length !== 4) {
        throw new WireError(`attribute ${name}: malformed floats entry`);
      }
      floats.push(decodeFloat32(bytes));
    } else if (field === 8) {
      if (wireType === WIRE_VARINT) {
        ints.push(Number(decodeSigned64(value as bigint)));
      } else {
        ints.push(...decodePackedInt64(value as Uint8Array).map(Number));
      }
    } else if (field === 20 && wireType === WIRE_VARINT) {
      atype = Number(value);
    }
  }
  if (!name) throw new WireError("attribute without a name");
  if (atype === AT_FLOAT || (atype === null && fVal !== null)) {
    return [name, { kind: "float", value: fVal ?? 0.0 }];
  }
  if (atype === AT_INT || (atype === null && iVal !== null)) {
    return [name, { kind: "int", value: iVal ?? 0 }];
  }
  if (atype === AT_STRING || (atype === null && sVal !== null)) {
    return [name, { kind: "string", value: sVal ?? "" }];
  }
  if (atype === AT_INTS || (atype === null && ints.length > 0)) {
    return [name, { kind: "ints", value: ints }];
  }
  if (atype === AT_FLOATS || (atype === null && floats.length > 0)) {
    return [name, { kind: "floats", value: floats }];
  }
  throw new WireError(`attribute ${name}: unsupported attribute type ${atype}`);
}

function decodeNode(payload: Uint8Array, index: number): NodeDef {
  const inputs: string[] = [];
  const outputs: string[] = [];
  let name = "";
  let opType = "";
  const attrs: Record<string, Attr> = {};
  for (const { field, value } of new WireReader(payload).fields()) {
    if (field === 1) inputs.push(utf8.decode(asBytes(value, "node input")));
    else if (field === 2) outputs.push(utf8.decode(asBytes(value, "node output")));
    else if (field === 3) name = utf8.decode(asBytes(value, "node name"));
    else if (field === 4) opType = utf8.decode(asBytes(value, "node op_type"));
    else if (field === 5) {
      const [key, attr] = decodeAttribute(asBytes(value, "node attribute"));
      attrs[key] = attr;
    }
  }
  if (!opType) throw new WireError(`node #${index} has no op_type`);
  if (!name) name = `${opType.toLowerCase()}_${index}`;
  return { id: name, op: opType, inputs, outputs, attrs };
}

function decodeDims(payload: Uint8Array): number[] {
  const dims: number[] = [];
  for (const { field, value } of new WireReader(payload).fields()) {
    if (field !== 1) continue;
    let dimValue: number | null = null;
    let dimParam: string | null = null;
    for (const sub of new WireReader(value as Uint8Array).fields()) {
      if (sub.field === 1 && sub.wireType === WIRE_VARINT) {
        dimValue = Number(decodeSigned64(sub.value as bigint));
      } else if (sub.field === 2) {
        dimParam = utf8.decode(asBytes(sub.value, "dim_param"));
      }
    }
    if (dimParam !== null && dimValue === null) dims.push(-1);
    else if (dimValue !== null) dims.push(dimValue);
    else throw new WireError("tensor shape dimension with no value");
  }
  return dims;
}

function decodeValueInfo(payload: Uint8Array): TensorSpec {
  let name = "";
  let shape: number[] = [];
  let elemType = DT_FLOAT;
  for (const { field, value } of new WireReader(payload).fields()) {
    if (field === 1) {
      name = utf8.decode(asBytes(value, "value_info name"));
    } else if (field === 2) {
      for (const t of new WireReader(value as Uint8Array).fields()) {
        if (t.field !== 1) continue;
        for (const tt of new WireReader(t.value as Uint8Array).fields()) {
          if (tt.field === 1 && tt.wireType === WIRE_VARINT) elemType = Number(tt.value);
          else if (tt.field === 2) shape = decodeDims(tt.value as Uint8Array);
        }
      }
    }
  }
  if (!name) throw new WireError("value_info without a name");
  if (elemType !== DT_FLOAT) {
    throw new WireError(`boundary tensor ${name} must be float32`);
  }
  return { name, shape };
}

/** Decode model bytes and return a validated graph. */
export function decodeModel(data: Uint8Array): Graph {
  let graphPayload: Uint8Array | null = null;
  for (const { field, wireType, value } of new WireReader(data).fields()) {
    if (field === 7 && wireType === WIRE_LEN) graphPayload = value as Uint8Array;
  }
  if (graphPayload === null) throw new WireError("model has no graph");

  const nodes: NodeDef[] = [];
  const weights = new Map<string, TensorInit>();
  let inputs: TensorSpec[] = [];
  const outputs: TensorSpec[] = [];
  let graphName = "";
  for (const { field, value } of new WireReader(graphPayload).fields()) {
    if (field === 1) {
      nodes.push(decodeNode(value as Uint8Array, nodes.length));
    } else if (field === 2) {
      graphName = utf8.decode(asBytes(value, "graph name"));
    } else if (field === 5) {
      const [name, init] = decodeTensor(value as Uint8Array);
      weights.set(name, init);
    } else if (field === 11) {
      inputs.push(decodeValueInfo(value as Uint8Array));
    } else if (field === 12) {
      outputs.push(decodeValueInfo(value as Uint8Array));
    }
  }
  // initializers may be listed among graph inputs; drop those entries
  inputs = inputs.filter((s) => !weights.has(s.name));
  if (inputs.length === 0) throw new GraphError("model declares no data inputs");
  if (outputs.length === 0) throw new GraphError("model declares no outputs");
  return buildGraph(graphName || "model", nodes, weights, inputs, outputs);
}

// -- encoding ------------------------------------------------------------

function encodeAttribute(name: string, attr: Attr): WireWriter {
  const w = new WireWriter();
  w.stringField(1, name);
  if (attr.kind === "int") {
    w.varintField(3, attr.value);
    w.varintField(20, AT_INT);
  } else if (attr.kind === "float") {
    w.floatField(2, attr.value);
    w.varintField(20, AT_FLOAT);
  } else if (attr.kind === "string") {
    w.stringField(4, attr.value);
    w.varintField(20, AT_STRING);
  } else if (attr.kind === "ints") {
    for (const v of attr.value) w.varintField(8, v);
    w.varintField(20, AT_INTS);
  } else {
    for (const v of attr.value) w.floatField(7, v);
    w.varintField(20, AT_FLOATS);
  }
  return w;
}

function encodeNode(node: NodeDef): WireWriter {
  const w = new WireWriter();
  for (const tensor of node.inputs) w.stringField(1, tensor);
  for (const tensor of node.outputs) w.stringField(2, tensor);
  w.stringField(3, node.id);
  w.stringField(4, node.op);
  for (const key of Object.keys(node.attrs).sort()) {
    w.messageField(5, encodeAttribute(key, node.attrs[key]));
  }
  return w;
}

function encodeTensor(name: string, init: TensorInit): WireWriter {
  const w = new WireWriter();
  for (const d of init.dims) w.varintField(1, d);
  let raw: Uint8Array;
  if (init.dtype === "float32") {
    w.varintField(2, DT_FLOAT);
    raw = new Uint8Array(init.data.length * 4);
    const view = new DataView(raw.buffer);
    for (let i = 0; i < init.data.length; i++) view.setFloat32(i * 4, init.data[i], true);
  } else {
    w.varintField(2, DT_INT64);
    raw = new Uint8Array(init.data.length * 8);
    const view = new DataView(raw.buffer);
    for (let i = 0; i < init.data.length; i++) view.setBigInt64(i * 8, init.data[i], true);
  }
  w.stringField(8, name);
  w.bytesField(9, raw);
  return w;
}

function encodeValueInfo(spec: TensorSpec): WireWriter {
  const shapeW = new WireWriter();
  for (const d of spec.shape) {
    const dimW = new WireWriter();
    if (d === -1) dimW.stringField(2, BATCH_PARAM);
    else dimW.varintField(1, d);
    shapeW.messageField(1, dimW);
  }
  const tensorType = new WireWriter();
  tensorType.varintField(1, DT_FLOAT);
  tensorType.messageField(2, shapeW);
  const typeProto = new WireWriter();
  typeProto.messageField(1, tensorType);
  const w = new WireWriter();
  w.stringField(1, spec.name);
  w.messageField(2, typeProto);
  return w;
}

/** Serialize a graph; byte-identical for equal graphs. */
export function encodeModel(g: Graph): Uint8Array {
  const graphW = new WireWriter();
  for (const node of g.nodes) graphW.messageField(1, encodeNode(node));
  graphW.stringField(2, g.name);
  for (const name of [...g.weights.keys()].sort()) {
    graphW.messageField(5, encodeTensor(name, g.weights.get(name)!));
  }
  for (const spec of g.inputs) graphW.messageField(11, encodeValueInfo(spec));
  for (const spec of g.outputs) graphW.messageField(12, encodeValueInfo(spec));

  const opsetW = new WireWriter();
  opsetW.stringField(1, "");
  opsetW.varintField(2, OPSET_VERSION);

  const modelW = new WireWriter();
  modelW.varintField(1, IR_VERSION);
  modelW.stringField(2, PRODUCER);
  modelW.stringField(3, PRODUCER_VERSION);
  modelW.messageField(7, graphW);
  modelW.messageField(8, opsetW);
  return modelW.finish();
}
