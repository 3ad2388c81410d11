import { readFileSync } from "node:fs";
import { existsSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";
import { GraphRunner, TensorValue } from "../src/engine.js";
import { buildChannelGroups, maskPoints } from "../src/groups.js";
import { Attr, GraphError, NodeDef, TensorInit, buildGraph } from "../src/model.js";
import { decodeModel } from "../src/onnx.js";

const ints = (value: number[]): Attr => ({ kind: "ints", value });
const int = (value: number): Attr => ({ kind: "int", value });
const flt = (value: number): Attr => ({ kind: "float", value });

const f32 = (dims: number[], values: number[]): TensorInit => ({
  dims,
  dtype: "float32",
  data: Float32Array.from(values),
});

function tensor(dims: number[], values: number[]): TensorValue {
  return { dims, data: Float32Array.from(values) };
}

function singleNode(
  op: string,
  attrs: Record<string, Attr>,
  weights: [string, TensorInit][],
  inShape: number[],
  outShape: number[],
  extraInputs: string[] = [],
) {
  const node: NodeDef = {
    id: "n0",
    op,
    inputs: ["x", ...extraInputs],
    outputs: ["y"],
    attrs,
  };
  return buildGraph(
    "t",
    [node],
    new Map(weights),
    [{ name: "x", shape: inShape }],
    [{ name: "y", shape: outShape }],
  );
}

describe("single operator semantics", () => {
  it("computes a 1x1 convolution with bias", () => {
    const g = singleNode(
      "Conv",
      { kernel_shape: ints([1, 1]) },
      [["w", f32([1, 1, 1, 1], [2])], ["b", f32([1], [0.5])]],
      [-1, 1, 2, 2],
      [-1, 1, 2, 2],
      ["w", "b"],
    );
    const runner = new GraphRunner(g);
    const out = runner.run({ x: tensor([1, 1, 2, 2], [1, 2, 3, 4]) });
    expect(Array.from(out.y.data)).toEqual([2.5, 4.5, 6.5, 8.5]);
    runner.dispose();
  });

  it("pads max pooling with negative infinity", () => {
    const g = singleNode(
      "MaxPool",
      { kernel_shape: ints([2, 2]), strides: ints([2, 2]), pads: ints([1, 1, 1, 1]) },
      [],
      [-1, 1, 2, 2],
      [-1, 1, 2, 2],
    );
    const runner = new GraphRunner(g);
    const out = runner.run({ x: tensor([1, 1, 2, 2], [1, 2, 3, 4]) });
    // every padded window still reports its one real element
    expect(Array.from(out.y.data)).toEqual([1, 2, 3, 4]);
    runner.dispose();
  });

  it("lets zero padding enter the average pooling mean", () => {
    const g = singleNode(
      "AveragePool",
      { kernel_shape: ints([2, 2]), strides: ints([2, 2]), pads: ints([1, 1, 1, 1]) },
      [],
      [-1, 1, 2, 2],
      [-1, 1, 2, 2],
    );
    const runner = new GraphRunner(g);
    const out = runner.run({ x: tensor([1, 1, 2, 2], [1, 2, 3, 4]) });
    expect(Array.from(out.y.data)).toEqual([0.25, 0.5, 0.75, 1.0]);
    runner.dispose();
  });

  it("normalizes with stored statistics", () => {
    const g = singleNode(
      "BatchNormalization",
      { epsilon: flt(1e-5) },
      [
        ["s", f32([1], [2])],
        ["o", f32([1], [1])],
        ["m", f32([1], [3])],
        ["v", f32([1], [4])],
      ],
      [-1, 1, 1, 2],
      [-1, 1, 1, 2],
      ["s", "o", "m", "v"],
    );
    const runner = new GraphRunner(g);
    const out = runner.run({ x: tensor([1, 1, 1, 2], [3, 5]) });
    // (x - 3) * 2 / sqrt(4 + 1e-5) + 1
    expect(out.y.data[0]).toBeCloseTo(1.0, 5);
    expect(out.y.data[1]).toBeCloseTo(2.99999, 4);
    runner.dispose();
  });

  it("applies gemm scaling factors", () => {
    const g = singleNode(
      "Gemm",
      { alpha: flt(0.5), beta: flt(2.0), transB: int(1) },
      [["w", f32([1, 2], [1, 1])], ["b", f32([1], [3])]],
      [-1, 2],
      [-1, 1],
      ["w", "b"],
    );
    const runner = new GraphRunner(g);
    const out = runner.run({ x: tensor([1, 2], [4, 6]) });
    // 0.5 * (4 + 6) + 2 * 3
    expect(out.y.data[0]).toBeCloseTo(11.0, 5);
    runner.dispose();
  });

  it("flattens in channel-major element order", () => {
    const g = singleNode(
      "Flatten",
      { axis: int(1) },
      [],
      [-1, 2, 1, 2],
      [-1, 4],
    );
    const runner = new GraphRunner(g);
    const out = runner.run({ x: tensor([1, 2, 1, 2], [1, 2, 3, 4]) });
    // all of channel 0 before channel 1, as laid out in the feed
    expect(Array.from(out.y.data)).toEqual([1, 2, 3, 4]);
    runner.dispose();
  });

  it("rejects a feed with the wrong shape", () => {
    const g = singleNode("Relu", {}, [], [-1, 2], [-1, 2]);
    const runner = new GraphRunner(g);
    expect(() => runner.run({ x: tensor([1, 3], [1, 2, 3]) })).toThrow(GraphError);
    runner.dispose();
  });
});

describe("channel masking on the exported model", () => {
  const path = fileURLToPath(new URL("../../fixtures/secondary/model.onnx", import.meta.url));
  const maybe = existsSync(path) ? it : it.skip;

  maybe("matches zeroing the producer weights outright", () => {
    const bytes = readFileSync(path);
    const g = decodeModel(bytes);
    const groups = buildChannelGroups(g);
    // conv5 has no norm layer, so its group masks only the conv output
    const grp = groups.find((c) =>
      c.slots.some((s) => s.nodeId === "conv5" && s.role === "producer_out" && s.channel === 2),
    )!;
    const points = maskPoints(groups, [grp.id]);
    expect(points.get("conv5")).toEqual([2]);

    const x: TensorValue = {
      dims: [2, 3, 16, 16],
      data: Float32Array.from({ length: 2 * 3 * 16 * 16 }, (_, i) => Math.sin(i * 0.37)),
    };
    const masked = new GraphRunner(g);
    const out1 = masked.run({ input: x }, points);
    masked.dispose();

    const edited = decodeModel(bytes);
    const w = edited.weights.get("conv5_w")!;
    const [, cin, kh, kw] = w.dims;
    (w.data as Float32Array).fill(0, 2 * cin * kh * kw, 3 * cin * kh * kw);
    (edited.weights.get("conv5_b")!.data as Float32Array)[2] = 0;
    const zeroed = new GraphRunner(edited);
    const out2 = zeroed.run({ input: x });
    zeroed.dispose();

    for (const name of ["cls_out", "reg_out"]) {
      const a = out1[name].data;
      const b = out2[name].data;
      expect(a.length).toBe(b.length);
      for (let i = 0; i < a.length; i++) {
        expect(Math.abs(a[i] - b[i])).toBeLessThan(1e-6);
      }
    }
  });
});
