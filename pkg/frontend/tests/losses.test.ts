import { describe, expect, it } from "vitest";
import { GraphRunner, TensorValue } from "../src/engine.js";
import { Dataset, LossError, evaluateLosses, perSampleLoss } from "../src/losses.js";

const val = (dims: number[], values: number[]): TensorValue => ({
  dims,
  data: Float32Array.from(values),
});

describe("per-sample kernels", () => {
  it("computes shifted-softmax cross entropy", () => {
    const out = perSampleLoss(
      "cross_entropy",
      val([1, 3], [1, 2, 3]),
      { kind: "labels", values: Int32Array.from([2]) },
    );
    // log(e^-2 + e^-1 + 1)
    expect(out[0]).toBeCloseTo(0.40760596, 6);
  });

  it("is invariant to a constant logit shift", () => {
    const labels = { kind: "labels" as const, values: Int32Array.from([1]) };
    const a = perSampleLoss("cross_entropy", val([1, 3], [1, 2, 0]), labels);
    const b = perSampleLoss("cross_entropy", val([1, 3], [1001, 1002, 1000]), labels);
    expect(a[0]).toBeCloseTo(b[0], 10);
  });

  it("computes mean squared error per sample", () => {
    const out = perSampleLoss(
      "mse",
      val([2, 2], [1, 2, 3, 4]),
      { kind: "dense", dims: [2, 2], values: Float32Array.from([0, 0, 0, 0]) },
    );
    expect(out[0]).toBeCloseTo(2.5, 8);
    expect(out[1]).toBeCloseTo(12.5, 8);
  });

  it("rejects mismatched target kinds", () => {
    expect(() =>
      perSampleLoss("cross_entropy", val([1, 2], [0, 0]), {
        kind: "dense",
        dims: [1, 2],
        values: Float32Array.from([0, 0]),
      }),
    ).toThrow(LossError);
  });
});

describe("dataset reduction", () => {
  // a stub runner lets the reduction be pinned down without a real graph
  const fixedRunner = (outputs: Record<string, TensorValue>) =>
    ({ run: () => outputs } as unknown as GraphRunner);

  const dataset = (batches: Dataset["batches"]): Dataset => ({
    batches,
    tasks: [{ name: "reg", loss: "mse", head: "y" }],
    tag: "t",
  });

  const batch = (targets: number[]) => ({
    inputs: {},
    targets: { reg: { kind: "dense" as const, dims: [1, 1], values: Float32Array.from(targets) } },
  });

  it("averages the per-batch means", () => {
    const runner = fixedRunner({ y: val([1, 1], [1]) });
    // batch losses 1 and 9
    const result = evaluateLosses(runner, dataset([batch([0]), batch([4])]));
    expect(result.reg).toBeCloseTo(5.0, 8);
  });

  it("raises on non-finite losses", () => {
    const runner = fixedRunner({ y: val([1, 1], [Infinity]) });
    expect(() => evaluateLosses(runner, dataset([batch([0])]))).toThrow(LossError);
  });

  it("raises when a head output is missing", () => {
    const runner = fixedRunner({ other: val([1, 1], [1]) });
    expect(() => evaluateLosses(runner, dataset([batch([0])]))).toThrow(LossError);
  });
});
