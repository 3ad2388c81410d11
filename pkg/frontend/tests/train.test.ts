import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";
import { GraphRunner } from "../src/engine.js";
import { decodeModel, encodeModel } from "../src/onnx.js";
import { Rng } from "../src/rng.js";
import {
  SyntheticTask,
  ToyNet,
  assembleGraph,
  collectSiteStats,
  trainToyNet,
} from "../src/train.js";

describe("seeded reproducibility", () => {
  it("draws identical parameters for identical seeds", () => {
    const a = new ToyNet(3);
    const b = new ToyNet(3);
    const ka = a.convs.get("conv1")!.kernel.dataSync();
    const kb = b.convs.get("conv1")!.kernel.dataSync();
    expect(Array.from(ka)).toEqual(Array.from(kb));
    a.dispose();
    b.dispose();
  });

  it("emits identical batches for identical seeds", () => {
    const a = new SyntheticTask(new Rng(9)).batch(4);
    const b = new SyntheticTask(new Rng(9)).batch(4);
    expect(Array.from(a.x)).toEqual(Array.from(b.x));
    expect(Array.from(a.labels)).toEqual(Array.from(b.labels));
    expect(Array.from(a.regTargets)).toEqual(Array.from(b.regTargets));
    const c = new SyntheticTask(new Rng(10)).batch(4);
    expect(Array.from(c.x)).not.toEqual(Array.from(a.x));
  });

  it("trains to the same parameters for identical seeds", () => {
    const run = () => {
      const net = new ToyNet(5);
      const report = trainToyNet(net, new SyntheticTask(new Rng(6)), 3, 8);
      const kernel = Array.from(net.convs.get("conv2a")!.kernel.dataSync());
      net.dispose();
      return { report, kernel };
    };
    const a = run();
    const b = run();
    expect(a.kernel).toEqual(b.kernel);
    expect(a.report.lastLoss).toBe(b.report.lastLoss);
    expect(Number.isFinite(a.report.firstLoss)).toBe(true);
  });
});

describe("export fidelity", () => {
  it("preserves the trained function through the affine fold", () => {
    const net = new ToyNet(11);
    const task = new SyntheticTask(new Rng(12));
    trainToyNet(net, task, 5, 8);
    const stats = collectSiteStats(net, task, 2, 8);
    const graph = assembleGraph(net, stats);
    // run the serialized form, not the in-memory one
    const decoded = decodeModel(encodeModel(graph));
    const runner = new GraphRunner(decoded);

    const flat = new Rng(13).normals(2 * 3 * 16 * 16);
    const engineOut = runner.run({ input: { dims: [2, 3, 16, 16], data: flat } });
    const [clsRef, regRef] = tf.tidy(() => {
      const nchw = tf.tensor4d(flat, [2, 3, 16, 16]);
      const nhwc = tf.transpose(nchw, [0, 2, 3, 1]) as tf.Tensor4D;
      const { cls, reg } = net.forward(nhwc);
      return [cls.dataSync(), reg.dataSync()];
    });

    const check = (got: Float32Array, want: Float32Array | Int32Array | Uint8Array) => {
      expect(got.length).toBe(want.length);
      for (let i = 0; i < got.length; i++) {
        expect(Math.abs(got[i] - want[i])).toBeLessThan(5e-4);
      }
    };
    check(engineOut.cls_out.data, clsRef as Float32Array);
    check(engineOut.reg_out.data, regRef as Float32Array);
    runner.dispose();
    net.dispose();
  });

  it("stores honest statistics in the normalization layers", () => {
    const net = new ToyNet(21);
    const task = new SyntheticTask(new Rng(22));
    const stats = collectSiteStats(net, task, 2, 8);
    const graph = assembleGraph(net, stats);
    const variance = graph.weights.get("bn1_var")!.data as Float32Array;
    const mean = graph.weights.get("bn1_mean")!.data as Float32Array;
    // population variance of a live activation map is strictly positive
    for (let c = 0; c < variance.length; c++) {
      expect(variance[c]).toBeGreaterThan(0);
      expect(Number.isFinite(mean[c])).toBe(true);
    }
    net.dispose();
  });
});
