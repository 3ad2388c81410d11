/**
 * The golden fixture bundle: a trained model file plus everything a
 * peer engine needs to check agreement against this stack, all in one
 * JSON document. Tensor payloads are nested arrays in NCHW order at
 * full float32 precision (exact under a double round trip), labels are
 * plain integers.
 */

import { readFileSync } from "node:fs";
import { TensorValue } from "./engine.js";
import { Dataset, TargetData, TaskSpecJs } from "./losses.js";

export interface GoldenFile {
  model: string;
  tasks: { name: string; loss: "cross_entropy" | "mse"; head: string }[];
  dataset: {
    inputs: Record<string, unknown>;
    targets: Record<string, unknown>;
    tag: string;
  };
  forward: {
    inputs: Record<string, unknown>;
    outputs: Record<string, unknown>;
  };
  mask_losses: { mask: number[]; losses: Record<string, number> }[];
  worker?: string[];
}

/** Flat row-major buffer to nested arrays of the given dims. */
export function toNested(dims: number[], flat: ArrayLike<number>): unknown {
  const build = (offset: number, level: number): unknown => {
    if (level === dims.length - 1) {
      const width = dims[level];
      return Array.from({ length: width }, (_, i) => flat[offset + i]);
    }
    let stride = 1;
    for (let d = level + 1; d < dims.length; d++) stride *= dims[d];
    return Array.from({ length: dims[level] }, (_, i) => build(offset + i * stride, level + 1));
  };
  if (dims.length === 0) return flat[0];
  return build(0, 0);
}

/** Nested arrays back to a flat float32 buffer plus dims. */
export function fromNested(nested: unknown): TensorValue {
  const dims: number[] = [];
  let probe: unknown = nested;
  while (Array.isArray(probe)) {
    dims.push(probe.length);
    probe = probe[0];
  }
  let total = 1;
  for (const d of dims) total *= d;
  const data = new Float32Array(total);
  let at = 0;
  const walk = (value: unknown): void => {
    if (Array.isArray(value)) {
      for (const v of value) walk(v);
    } else {
      data[at++] = Math.fround(value as number);
    }
  };
  walk(nested);
  return { dims, data };
}

export function loadGolden(path: string): GoldenFile {
  return JSON.parse(readFileSync(path, "utf-8")) as GoldenFile;
}

/** The embedded probe set as a single-batch dataset. */
export function datasetFromGolden(golden: GoldenFile): Dataset {
  const tasks: TaskSpecJs[] = golden.tasks.map((t) => ({
    name: t.name,
    loss: t.loss,
    head: t.head,
  }));
  const inputs: Record<string, TensorValue> = {};
  for (const [name, nested] of Object.entries(golden.dataset.inputs)) {
    inputs[name] = fromNested(nested);
  }
  const targets: Record<string, TargetData> = {};
  for (const task of tasks) {
    const nested = golden.dataset.targets[task.name];
    if (task.loss === "cross_entropy") {
      targets[task.name] = {
        kind: "labels",
        values: Int32Array.from(nested as number[]),
      };
    } else {
      const dense = fromNested(nested);
      targets[task.name] = { kind: "dense", dims: dense.dims, values: dense.data };
    }
  }
  return { batches: [{ inputs, targets }], tasks, tag: golden.dataset.tag };
}
