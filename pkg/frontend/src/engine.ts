/**
 * Forward evaluation of the supported op set on the tfjs CPU backend.
 *
 * The file format and the masking contract are NCHW, tfjs kernels are
 * NHWC, so tensors are transposed at the boundaries: graph inputs on
 * entry, conv kernels once at bind time (OIHW to HWIO), and any tensor
 * that crosses into 2D land (Flatten, Reshape) goes back through NCHW
 * first so element order matches the reference engine. Masking zeroes
 * whole channels at producer outputs and at per-channel parameter
 * nodes, matching structural removal to rounding error.
 */

import * as tf from "@tensorflow/tfjs";
import {
  Graph,
  GraphError,
  NodeDef,
  attrFloat,
  attrInt,
  attrInts,
  isWeight,
  shapeOf,
  weightOf,
} from "./model.js";

export interface TensorValue {
  dims: number[];
  data: Float32Array;
}

function f32(init: { data: Float32Array | BigInt64Array }): Float32Array {
  if (!(init.data instanceof Float32Array)) {
    throw new GraphError("expected a float32 initializer");
  }
  return init.data;
}

/** Zero-pad an NHWC tensor on its spatial axes. */
function padSpatial(x: tf.Tensor4D, pads: number[], value: number): tf.Tensor4D {
  const [pt, pl, pb, pr] = pads;
  if (pt === 0 && pl === 0 && pb === 0 && pr === 0) return x;
  return tf.pad(x, [[0, 0], [pt, pb], [pl, pr], [0, 0]], value);
}

export class GraphRunner {
  private kernels = new Map<string, tf.Tensor>();
  private vectors = new Map<string, tf.Tensor1D>();
  private matrices = new Map<string, tf.Tensor2D>();

  constructor(readonly graph: Graph) {
    for (const node of graph.nodes) {
      if (node.op === "Conv") {
        const w = weightOf(graph, node.inputs[1]);
        const oihw = tf.tensor4d(f32(w), w.dims as [number, number, number, number]);
        this.kernels.set(node.id, tf.transpose(oihw, [2, 3, 1, 0])); // HWIO
        oihw.dispose();
        if (node.inputs.length > 2 && node.inputs[2]) {
          this.vectors.set(node.inputs[2], this.vector(node.inputs[2]));
        }
      } else if (node.op === "BatchNormalization") {
        for (let pos = 1; pos < 5; pos++) {
          this.vectors.set(node.inputs[pos], this.vector(node.inputs[pos]));
        }
      } else if (node.op === "Gemm" || node.op === "MatMul") {
        if (isWeight(graph, node.inputs[1])) {
          const w = weightOf(graph, node.inputs[1]);
          this.matrices.set(node.inputs[1], tf.tensor2d(f32(w), w.dims as [number, number]));
        }
        if (node.op === "Gemm" && node.inputs.length > 2 && node.inputs[2]) {
          this.vectors.set(node.inputs[2], this.vector(node.inputs[2]));
        }
      } else if (node.op === "Add" && isWeight(graph, node.inputs[1])) {
        this.vectors.set(node.inputs[1], this.vector(node.inputs[1]));
      }
    }
  }

  private vector(name: string): tf.Tensor1D {
    const existing = this.vectors.get(name);
    if (existing) return existing;
    const init = weightOf(this.graph, name);
    return tf.tensor1d(f32(init));
  }

  dispose(): void {
    for (const t of this.kernels.values()) t.dispose();
    for (const t of this.vectors.values()) t.dispose();
    for (const t of this.matrices.values()) t.dispose();
    this.kernels.clear();
    this.vectors.clear();
    this.matrices.clear();
  }

  /**
   * Run the graph on a batch. Feeds and results are NCHW-ordered flat
   * float32 buffers; `zeroAt` maps node ids to output channels to zero.
   */
  run(
    feeds: Record<string, TensorValue>,
    zeroAt: Map<string, number[]> = new Map(),
  ): Record<string, TensorValue> {
    const g = this.graph;
    const results: Record<string, TensorValue> = {};
    tf.tidy(() => {
      const values = new Map<string, tf.Tensor>();
      for (const spec of g.inputs) {
        const fed = feeds[spec.name];
        if (!fed) throw new GraphError(`missing graph input ${spec.name}`);
        const declared = spec.shape;
        if (
          fed.dims.length !== declared.length ||
          declared.some((d, i) => d !== -1 && d !== fed.dims[i])
        ) {
          throw new GraphError(
            `input ${spec.name}: got shape [${fed.dims}], expected [${declared}]`,
          );
        }
        let t = tf.tensor(fed.data, fed.dims);
        if (fed.dims.length === 4) t = tf.transpose(t, [0, 2, 3, 1]);
        values.set(spec.name, t);
      }

      for (const node of g.nodes) {
        let out = this.evalNode(node, values);
        const channels = zeroAt.get(node.id);
        if (channels && channels.length > 0) {
          const width = out.shape[out.shape.length - 1]!;
          const keep = new Float32Array(width).fill(1);
          for (const c of channels) keep[c] = 0;
          // channels sit on the last axis for NHWC maps and 2D features alike
          out = tf.mul(out, tf.tensor1d(keep));
        }
        values.set(node.outputs[0], out);
      }

      for (const spec of g.outputs) {
        let t = values.get(spec.name)!;
        if (t.shape.length === 4) t = tf.transpose(t, [0, 3, 1, 2]);
        results[spec.name] = {
          dims: [...t.shape],
          data: new Float32Array(t.dataSync()),
        };
      }
    });
    return results;
  }

  private evalNode(node: NodeDef, values: Map<string, tf.Tensor>): tf.Tensor {
    const g = this.graph;
    const act = (pos: number): tf.Tensor => {
      const t = values.get(node.inputs[pos]);
      if (!t) throw new GraphError(`node ${node.id}: missing input tensor`);
      return t;
    };
    switch (node.op) {
      case "Conv": {
        const x = act(0) as tf.Tensor4D;
        const kernel = this.kernels.get(node.id)! as tf.Tensor4D;
        const strides = attrInts(node, "strides") as [number, number];
        const dilations = attrInts(node, "dilations") as [number, number];
        const groupCount = attrInt(node, "group");
        const padded = padSpatial(x, attrInts(node, "pads"), 0);
        let out: tf.Tensor4D;
        if (groupCount === 1) {
          out = tf.conv2d(padded, kernel, strides, "valid", "NHWC", dilations);
        } else {
          const xParts = tf.split(padded, groupCount, 3) as tf.Tensor4D[];
          const kParts = tf.split(kernel, groupCount, 3) as tf.Tensor4D[];
          out = tf.concat(
            xParts.map((part, i) =>
              tf.conv2d(part, kParts[i], strides, "valid", "NHWC", dilations),
            ),
            3,
          );
        }
        if (node.inputs.length > 2 && node.inputs[2]) {
          out = tf.add(out, this.vectors.get(node.inputs[2])!);
        }
        return out;
      }
      case "Relu":
        return tf.relu(act(0));
      case "BatchNormalization": {
        const [scale, bias, mean, variance] = node.inputs
          .slice(1, 5)
          .map((name) => this.vectors.get(name)!);
        return tf.batchNorm(
          act(0) as tf.Tensor4D, mean, variance, bias, scale,
          Math.fround(attrFloat(node, "epsilon")),
        );
      }
      case "MaxPool": {
        const padded = padSpatial(
          act(0) as tf.Tensor4D, attrInts(node, "pads"), Number.NEGATIVE_INFINITY,
        );
        return tf.maxPool(
          padded,
          attrInts(node, "kernel_shape") as [number, number],
          attrInts(node, "strides") as [number, number],
          "valid",
        );
      }
      case "AveragePool": {
        // zero padding enters the window mean, matching the reference
        const padded = padSpatial(act(0) as tf.Tensor4D, attrInts(node, "pads"), 0);
        return tf.avgPool(
          padded,
          attrInts(node, "kernel_shape") as [number, number],
          attrInts(node, "strides") as [number, number],
          "valid",
        );
      }
      case "GlobalAveragePool":
        return tf.mean(act(0) as tf.Tensor4D, [1, 2], true);
      case "Add": {
        if (isWeight(g, node.inputs[1])) {
          return tf.add(act(0), this.vectors.get(node.inputs[1])!);
        }
        return tf.add(act(0), act(1));
      }
      case "Concat": {
        const parts = node.inputs.map((_, i) => act(i));
        const axis = parts[0].shape.length === 4 ? 3 : 1;
        return tf.concat(parts, axis);
      }
      case "Flatten": {
        const x = act(0);
        if (x.shape.length === 4) {
          const nchw = tf.transpose(x as tf.Tensor4D, [0, 3, 1, 2]);
          return tf.reshape(nchw, [x.shape[0], -1]);
        }
        return tf.reshape(x, [x.shape[0], -1]);
      }
      case "Reshape": {
        const x = act(0);
        const target = weightOf(g, node.inputs[1]);
        const dims = Array.from(target.data as BigInt64Array, (v) => Number(v));
        if (dims[0] === 0 || dims[0] === -1) dims[0] = x.shape[0]!;
        const nchw =
          x.shape.length === 4 ? tf.transpose(x as tf.Tensor4D, [0, 3, 1, 2]) : x;
        const reshaped = tf.reshape(nchw, dims);
        if (dims.length === 4) return tf.transpose(reshaped as tf.Tensor4D, [0, 2, 3, 1]);
        return reshaped;
      }
      case "Gemm": {
        const a = act(0) as tf.Tensor2D;
        const w = this.matrices.get(node.inputs[1])!;
        const transB = attrInt(node, "transB") !== 0;
        let out = tf.matMul(a, w, false, transB);
        const alpha = Math.fround(attrFloat(node, "alpha"));
        if (alpha !== 1) out = tf.mul(out, alpha);
        if (node.inputs.length > 2 && node.inputs[2]) {
          const beta = Math.fround(attrFloat(node, "beta"));
          let bias: tf.Tensor = this.vectors.get(node.inputs[2])!;
          if (beta !== 1) bias = tf.mul(bias, beta);
          out = tf.add(out, bias);
        }
        return out;
      }
      case "MatMul": {
        const b = isWeight(g, node.inputs[1])
          ? this.matrices.get(node.inputs[1])!
          : (act(1) as tf.Tensor2D);
        return tf.matMul(act(0) as tf.Tensor2D, b);
      }
      default:
        throw new GraphError(`no kernel for op ${node.op}`);
    }
  }
}

/** Expected NCHW result dims for a declared output on a given batch size. */
export function outputDims(g: Graph, name: string, batch: number): number[] {
  return shapeOf(g, name).map((d) => (d === -1 ? batch : d));
}
