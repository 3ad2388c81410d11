/**
 * In-memory compute graph over named NCHW float32 tensors.
 *
 * Mirrors the reference engine's contract: after buildGraph the node
 * list is topologically ordered, operator attributes carry their
 * defaults, and every tensor has a static shape with the batch
 * dimension as -1. Attribute values stay tagged with their serialized
 * type so a decode/encode round trip is an identity.
 *
 * Supported operator set:
 *   Conv, Gemm, MatMul, BatchNormalization, Relu, MaxPool, AveragePool,
 *   GlobalAveragePool, Add, Concat, Flatten, Reshape
 */

export class GraphError extends Error {}

export type Attr =
  | { kind: "int"; value: number }
  | { kind: "float"; value: number }
  | { kind: "string"; value: string }
  | { kind: "ints"; value: number[] }
  | { kind: "floats"; value: number[] };

export interface NodeDef {
  id: string;
  op: string;
  inputs: string[];
  outputs: string[];
  attrs: Record<string, Attr>;
}

export type TensorInit =
  | { dims: number[]; dtype: "float32"; data: Float32Array }
  | { dims: number[]; dtype: "int64"; data: BigInt64Array };

/** Declared graph boundary tensor; batch dimension is -1. */
export interface TensorSpec {
  name: string;
  shape: number[];
}

export interface Graph {
  name: string;
  nodes: NodeDef[];
  weights: Map<string, TensorInit>;
  inputs: TensorSpec[];
  outputs: TensorSpec[];
  shapes: Map<string, number[]>;
}

const SUPPORTED_OPS = new Set([
  "Conv",
  "Gemm",
  "MatMul",
  "BatchNormalization",
  "Relu",
  "MaxPool",
  "AveragePool",
  "GlobalAveragePool",
  "Add",
  "Concat",
  "Flatten",
  "Reshape",
]);

export function attrInt(node: NodeDef, name: string): number {
  const attr = node.attrs[name];
  if (!attr || (attr.kind !== "int" && attr.kind !== "float")) {
    throw new GraphError(`node ${node.id}: missing integer attribute ${name}`);
  }
  return Math.trunc(attr.value as number);
}

export function attrFloat(node: NodeDef, name: string): number {
  const attr = node.attrs[name];
  if (!attr || (attr.kind !== "float" && attr.kind !== "int")) {
    throw new GraphError(`node ${node.id}: missing float attribute ${name}`);
  }
  return attr.value as number;
}

export function attrInts(node: NodeDef, name: string): number[] {
  const attr = node.attrs[name];
  if (!attr || attr.kind !== "ints") {
    throw new GraphError(`node ${node.id}: missing integer-list attribute ${name}`);
  }
  return attr.value;
}

export function isWeight(g: Graph, tensor: string): boolean {
  return g.weights.has(tensor);
}

export function weightOf(g: Graph, tensor: string): TensorInit {
  const w = g.weights.get(tensor);
  if (!w) throw new GraphError(`no initializer named ${tensor}`);
  return w;
}

export function shapeOf(g: Graph, tensor: string): number[] {
  const shape = g.shapes.get(tensor);
  if (!shape) throw new GraphError(`no inferred shape for tensor ${tensor}`);
  return shape;
}

/** Assemble and validate a graph; throws GraphError on structural defects. */
export function buildGraph(
  name: string,
  nodes: NodeDef[],
  weights: Map<string, TensorInit>,
  inputs: TensorSpec[],
  outputs: TensorSpec[],
): Graph {
  const g: Graph = { name, nodes: [...nodes], weights, inputs, outputs, shapes: new Map() };
  validateStructure(g);
  g.nodes = sortTopologically(g);
  normalizeAttrs(g);
  inferShapes(g);
  return g;
}

function validateStructure(g: Graph): void {
  const seen = new Set<string>();
  for (const node of g.nodes) {
    if (!node.id) throw new GraphError("node with empty id");
    if (seen.has(node.id)) throw new GraphError(`duplicate node id ${node.id}`);
    seen.add(node.id);
    if (!SUPPORTED_OPS.has(node.op)) {
      throw new GraphError(`node ${node.id}: unsupported op ${node.op}`);
    }
    if (node.outputs.length === 0) throw new GraphError(`node ${node.id} has no outputs`);
  }
  const produced = new Map<string, string>();
  for (const node of g.nodes) {
    for (const out of node.outputs) {
      if (produced.has(out)) {
        throw new GraphError(`tensor ${out} produced twice`);
      }
      if (g.weights.has(out)) {
        throw new GraphError(`tensor ${out} shadows an initializer`);
      }
      produced.set(out, node.id);
    }
  }
  const available = new Set<string>([
    ...g.inputs.map((s) => s.name),
    ...g.weights.keys(),
    ...produced.keys(),
  ]);
  for (const node of g.nodes) {
    for (const tensor of node.inputs) {
      if (tensor && !available.has(tensor)) {
        throw new GraphError(`node ${node.id} reads undefined tensor ${tensor}`);
      }
    }
  }
  for (const spec of g.outputs) {
    if (!produced.has(spec.name)) {
      throw new GraphError(`graph output ${spec.name} is not produced`);
    }
  }
}

function sortTopologically(g: Graph): NodeDef[] {
  // stable Kahn: among ready nodes keep original list order, which makes
  // node positions (and therefore group numbering) match the reference
  // loader on any file whose node list is already topological
  const producer = new Map<string, string>();
  for (const node of g.nodes) for (const out of node.outputs) producer.set(out, node.id);
  const index = new Map(g.nodes.map((n) => [n.id, n]));
  const position = new Map(g.nodes.map((n, i) => [n.id, i]));
  const indegree = new Map<string, number>();
  const dependents = new Map<string, string[]>();
  for (const node of g.nodes) {
    const deps = new Set<string>();
    for (const tensor of node.inputs) {
      const from = producer.get(tensor);
      if (from !== undefined) deps.add(from);
    }
    indegree.set(node.id, deps.size);
    for (const dep of deps) {
      const list = dependents.get(dep) ?? [];
      list.push(node.id);
      dependents.set(dep, list);
    }
  }
  const order: NodeDef[] = [];
  let ready = g.nodes.filter((n) => indegree.get(n.id) === 0).map((n) => n.id);
  while (ready.length > 0) {
    ready.sort((a, b) => position.get(a)! - position.get(b)!);
    const current = ready.shift()!;
    order.push(index.get(current)!);
    for (const dep of dependents.get(current) ?? []) {
      const left = indegree.get(dep)! - 1;
      indegree.set(dep, left);
      if (left === 0) ready.push(dep);
    }
  }
  if (order.length !== g.nodes.length) throw new GraphError("graph contains a cycle");
  return order;
}

function setDefault(attrs: Record<string, Attr>, name: string, attr: Attr): void {
  if (!(name in attrs)) attrs[name] = attr;
}

function normalizeAttrs(g: Graph): void {
  for (const node of g.nodes) {
    const attrs = node.attrs;
    if (node.op === "Conv") {
      const w = weightOf(g, node.inputs[1]);
      setDefault(attrs, "kernel_shape", { kind: "ints", value: [w.dims[2], w.dims[3]] });
      setDefault(attrs, "strides", { kind: "ints", value: [1, 1] });
      setDefault(attrs, "pads", { kind: "ints", value: [0, 0, 0, 0] });
      setDefault(attrs, "dilations", { kind: "ints", value: [1, 1] });
      setDefault(attrs, "group", { kind: "int", value: 1 });
    } else if (node.op === "MaxPool" || node.op === "AveragePool") {
      if (!("kernel_shape" in attrs)) {
        throw new GraphError(`node ${node.id}: pool without kernel_shape`);
      }
      setDefault(attrs, "strides", { kind: "ints", value: [1, 1] });
      setDefault(attrs, "pads", { kind: "ints", value: [0, 0, 0, 0] });
    } else if (node.op === "Gemm") {
      setDefault(attrs, "alpha", { kind: "float", value: 1.0 });
      setDefault(attrs, "beta", { kind: "float", value: 1.0 });
      setDefault(attrs, "transA", { kind: "int", value: 0 });
      setDefault(attrs, "transB", { kind: "int", value: 0 });
      if (attrInt(node, "transA") !== 0) {
        throw new GraphError(`node ${node.id}: transA=1 is unsupported`);
      }
    } else if (node.op === "BatchNormalization") {
      setDefault(attrs, "epsilon", { kind: "float", value: Math.fround(1e-5) });
    } else if (node.op === "Flatten") {
      setDefault(attrs, "axis", { kind: "int", value: 1 });
      if (attrInt(node, "axis") !== 1) {
        throw new GraphError(`node ${node.id}: Flatten axis must be 1`);
      }
    } else if (node.op === "Concat") {
      if (!("axis" in attrs)) throw new GraphError(`node ${node.id}: Concat without axis`);
    }
  }
}

function convLikeOut(
  node: NodeDef,
  h: number,
  w: number,
  kernel: number[],
  strides: number[],
  pads: number[],
  dilations: number[],
): [number, number] {
  const effH = (kernel[0] - 1) * dilations[0] + 1;
  const effW = (kernel[1] - 1) * dilations[1] + 1;
  const outH = Math.floor((h + pads[0] + pads[2] - effH) / strides[0]) + 1;
  const outW = Math.floor((w + pads[1] + pads[3] - effW) / strides[1]) + 1;
  if (outH <= 0 || outW <= 0) {
    throw new GraphError(`node ${node.id}: window does not fit input ${h}x${w}`);
  }
  return [outH, outW];
}

function inferShapes(g: Graph): void {
  const shapes = g.shapes;
  shapes.clear();
  for (const spec of g.inputs) shapes.set(spec.name, [...spec.shape]);
  for (const [name, init] of g.weights) shapes.set(name, [...init.dims]);

  for (const node of g.nodes) {
    const input = (pos: number) => {
      const shape = shapes.get(node.inputs[pos]);
      if (!shape) throw new GraphError(`node ${node.id}: missing input shape`);
      return shape;
    };
    if (node.op === "Conv") {
      const [n, c, h, w] = input(0);
      const kernel = weightOf(g, node.inputs[1]);
      const group = attrInt(node, "group");
      const [cout, cpg] = kernel.dims;
      if (c !== cpg * group) {
        throw new GraphError(`node ${node.id}: input channels ${c} != ${cpg}*${group}`);
      }
      const [oh, ow] = convLikeOut(
        node, h, w,
        attrInts(node, "kernel_shape"), attrInts(node, "strides"),
        attrInts(node, "pads"), attrInts(node, "dilations"),
      );
      shapes.set(node.outputs[0], [n, cout, oh, ow]);
    } else if (node.op === "MaxPool" || node.op === "AveragePool") {
      const [n, c, h, w] = input(0);
      const [oh, ow] = convLikeOut(
        node, h, w,
        attrInts(node, "kernel_shape"), attrInts(node, "strides"),
        attrInts(node, "pads"), [1, 1],
      );
      shapes.set(node.outputs[0], [n, c, oh, ow]);
    } else if (node.op === "GlobalAveragePool") {
      const [n, c] = input(0);
      shapes.set(node.outputs[0], [n, c, 1, 1]);
    } else if (node.op === "Relu" || node.op === "BatchNormalization") {
      shapes.set(node.outputs[0], input(0));
    } else if (node.op === "Add") {
      const a = input(0);
      const b = input(1);
      if (sameShape(a, b)) {
        shapes.set(node.outputs[0], a);
      } else if (a.length === 2 && b.length === 1 && b[0] === a[1]) {
        shapes.set(node.outputs[0], a); // row-vector bias broadcast
      } else {
        throw new GraphError(`node ${node.id}: Add shapes are not compatible`);
      }
    } else if (node.op === "Concat") {
      const first = input(0);
      let axis = attrInt(node, "axis");
      if (axis < 0) axis += first.length;
      if (axis !== 1) throw new GraphError(`node ${node.id}: Concat axis must be 1`);
      let total = 0;
      for (let i = 0; i < node.inputs.length; i++) total += input(i)[1];
      const out = [...first];
      out[1] = total;
      shapes.set(node.outputs[0], out);
    } else if (node.op === "Flatten") {
      const x = input(0);
      let tail = 1;
      for (const d of x.slice(1)) tail *= d;
      shapes.set(node.outputs[0], [x[0], tail]);
    } else if (node.op === "Reshape") {
      const x = input(0);
      const target = weightOf(g, node.inputs[1]);
      if (target.dtype !== "int64") {
        throw new GraphError(`node ${node.id}: Reshape target must be int64`);
      }
      const dims = Array.from(target.data, (v) => Number(v));
      if (dims.length === 0 || (dims[0] !== 0 && dims[0] !== -1 && dims[0] !== x[0])) {
        throw new GraphError(`node ${node.id}: Reshape must keep the batch dimension`);
      }
      let tail = 1;
      for (const d of x.slice(1)) tail *= d;
      let rest = dims.slice(1);
      let known = 1;
      for (const d of rest) if (d > 0) known *= d;
      if (rest.includes(-1)) {
        if (tail % known !== 0) {
          throw new GraphError(`node ${node.id}: cannot infer -1 in Reshape target`);
        }
        rest = rest.map((d) => (d > 0 ? d : tail / known));
      } else if (known !== tail) {
        throw new GraphError(`node ${node.id}: Reshape target product ${known} != ${tail}`);
      }
      shapes.set(node.outputs[0], [x[0], ...rest]);
    } else if (node.op === "Gemm") {
      const a = input(0);
      const w = weightOf(g, node.inputs[1]);
      const transB = attrInt(node, "transB") !== 0;
      const m = transB ? w.dims[0] : w.dims[1];
      const k = transB ? w.dims[1] : w.dims[0];
      if (a[1] !== k) throw new GraphError(`node ${node.id}: Gemm inner dims differ`);
      shapes.set(node.outputs[0], [a[0], m]);
    } else if (node.op === "MatMul") {
      const a = input(0);
      const b = input(1);
      if (a[1] !== b[0]) throw new GraphError(`node ${node.id}: MatMul shapes differ`);
      shapes.set(node.outputs[0], [a[0], b[1]]);
    }
  }

  for (const spec of g.outputs) {
    const got = shapes.get(spec.name);
    if (!got || !sameShape(got, spec.shape)) {
      throw new GraphError(
        `graph output ${spec.name}: declared [${spec.shape}] but inferred [${got}]`,
      );
    }
  }
}

function sameShape(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((d, i) => d === b[i]);
}
