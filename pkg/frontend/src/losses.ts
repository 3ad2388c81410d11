/**
 * Per-task losses over a batched probe set.
 *
 * Loss accumulation runs in JS doubles over float32 activations, same
 * reduction as the reference: per-sample loss, mean per batch per task,
 * then mean over batches. Cross entropy is computed max-shifted so the
 * log stays finite for any finite logits.
 */

import { GraphRunner, TensorValue } from "./engine.js";

export interface TaskSpecJs {
  name: string;
  loss: "cross_entropy" | "mse";
  head: string;
}

export type TargetData =
  | { kind: "labels"; values: Int32Array }
  | { kind: "dense"; dims: number[]; values: Float32Array };

export interface EvalBatch {
  inputs: Record<string, TensorValue>;
  targets: Record<string, TargetData>;
}

export interface Dataset {
  batches: EvalBatch[];
  tasks: TaskSpecJs[];
  tag: string;
}

export class LossError extends Error {}

export function perSampleLoss(
  kind: TaskSpecJs["loss"],
  outputs: TensorValue,
  target: TargetData,
): Float64Array {
  const [n, width] = [outputs.dims[0], outputs.data.length / outputs.dims[0]];
  const out = new Float64Array(n);
  if (kind === "cross_entropy") {
    if (target.kind !== "labels") throw new LossError("cross_entropy expects labels");
    for (let i = 0; i < n; i++) {
      const row = outputs.data.subarray(i * width, (i + 1) * width);
      let max = -Infinity;
      for (const v of row) if (v > max) max = v;
      let sum = 0;
      for (const v of row) sum += Math.exp(v - max);
      out[i] = Math.log(sum) - (row[target.values[i]] - max);
    }
    return out;
  }
  if (target.kind !== "dense") throw new LossError("mse expects dense targets");
  if (target.values.length !== outputs.data.length) {
    throw new LossError("target size does not match head output");
  }
  for (let i = 0; i < n; i++) {
    let sum = 0;
    for (let j = i * width; j < (i + 1) * width; j++) {
      const diff = outputs.data[j] - target.values[j];
      sum += diff * diff;
    }
    out[i] = sum / width;
  }
  return out;
}

/** Mean per-task losses over the dataset's batches. */
export function evaluateLosses(
  runner: GraphRunner,
  dataset: Dataset,
  zeroAt: Map<string, number[]> = new Map(),
): Record<string, number> {
  const sums = new Float64Array(dataset.tasks.length);
  for (const batch of dataset.batches) {
    const outputs = runner.run(batch.inputs, zeroAt);
    dataset.tasks.forEach((task, t) => {
      const head = outputs[task.head];
      if (!head) throw new LossError(`task ${task.name} targets unknown output ${task.head}`);
      const losses = perSampleLoss(task.loss, head, batch.targets[task.name]);
      let total = 0;
      for (const v of losses) total += v;
      sums[t] += total / losses.length;
    });
  }
  const result: Record<string, number> = {};
  dataset.tasks.forEach((task, t) => {
    const mean = sums[t] / Math.max(dataset.batches.length, 1);
    if (!Number.isFinite(mean)) throw new LossError(`non-finite loss for task ${task.name}`);
    result[task.name] = mean;
  });
  return result;
}
