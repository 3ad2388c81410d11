/**
 * Fixture exporter: trains the toy multitask net, freezes it to a
 * model file, and dumps golden evaluation tuples (clean forward
 * outputs, an embedded probe set, and loss values for a bank of
 * channel masks) that a peer engine can replay for agreement checks.
 *
 *   node dist/make_fixtures.js --out ../fixtures/secondary [--steps N] [--seed S]
 *
 * Everything downstream of the seeds is deterministic, so regenerating
 * with the same arguments reproduces the same files.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { GraphRunner, TensorValue } from "./engine.js";
import { GoldenFile, toNested } from "./golden.js";
import { buildChannelGroups, maskPoints, nonPinnedIds } from "./groups.js";
import { Dataset, evaluateLosses } from "./losses.js";
import { decodeModel, encodeModel } from "./onnx.js";
import { Rng } from "./rng.js";
import {
  INPUT_SIZE,
  NUM_CLASSES,
  REG_DIM,
  SyntheticTask,
  ToyNet,
  assembleGraph,
  collectSiteStats,
  trainToyNet,
} from "./train.js";

const MASK_COUNT = 100;
const DATASET_SAMPLES = 16;
const FORWARD_SAMPLES = 4;
const REG_NOISE = 0.3;

interface Args {
  out: string;
  steps: number;
  seed: number;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { out: "", steps: 160, seed: 7 };
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`missing value for ${key}`);
    if (key === "--out") args.out = value;
    else if (key === "--steps") args.steps = Number(value);
    else if (key === "--seed") args.seed = Number(value);
    else throw new Error(`unknown argument ${key}`);
  }
  if (!args.out) throw new Error("--out is required");
  return args;
}

function gaussianBatch(rng: Rng, samples: number): TensorValue {
  return {
    dims: [samples, 3, INPUT_SIZE, INPUT_SIZE],
    data: rng.normals(samples * 3 * INPUT_SIZE * INPUT_SIZE),
  };
}

function argmaxRows(value: TensorValue): Int32Array {
  const [n, width] = value.dims;
  const out = new Int32Array(n);
  for (let i = 0; i < n; i++) {
    let best = 0;
    for (let j = 1; j < width; j++) {
      if (value.data[i * width + j] > value.data[i * width + best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  const log = (line: string) => process.stderr.write(line + "\n");

  log(`training toy net: steps=${args.steps} seed=${args.seed}`);
  const net = new ToyNet(args.seed);
  const task = new SyntheticTask(new Rng(args.seed + 1));
  const report = trainToyNet(net, task, args.steps);
  log(
    `loss ${report.firstLoss.toFixed(4)} -> ${report.lastLoss.toFixed(4)}, ` +
    `holdout accuracy ${(report.holdoutAccuracy * 100).toFixed(1)}%`,
  );

  const stats = collectSiteStats(net, task, 8);
  const graph = assembleGraph(net, stats);
  const bytes = encodeModel(graph);
  mkdirSync(args.out, { recursive: true });
  const modelPath = join(args.out, "model.onnx");
  writeFileSync(modelPath, bytes);
  net.dispose();
  log(`wrote ${modelPath} (${bytes.length} bytes)`);

  // golden values come from a decode of the written file, so they refer
  // to exactly what a peer engine will read
  const decoded = decodeModel(readFileSync(modelPath));
  const runner = new GraphRunner(decoded);

  const groups = buildChannelGroups(decoded);
  const open = nonPinnedIds(groups);
  const pinned = groups.length - open.length;
  if (pinned !== NUM_CLASSES + REG_DIM) {
    throw new Error(`expected only the head channels pinned, got ${pinned}`);
  }
  log(`channel groups: ${groups.length} total, ${pinned} pinned`);

  const forwardInputs = gaussianBatch(new Rng(args.seed + 2), FORWARD_SAMPLES);
  const forwardOutputs = runner.run({ input: forwardInputs });

  const probeInputs = gaussianBatch(new Rng(args.seed + 3), DATASET_SAMPLES);
  const clean = runner.run({ input: probeInputs });
  const labels = argmaxRows(clean.cls_out);
  const noise = new Rng(args.seed + 4);
  const regTargets = new Float32Array(clean.reg_out.data.length);
  for (let i = 0; i < regTargets.length; i++) {
    regTargets[i] = Math.fround(clean.reg_out.data[i] + REG_NOISE * noise.gauss());
  }
  const tag = `golden:${decoded.name}:${args.seed}`;
  const dataset: Dataset = {
    batches: [{
      inputs: { input: probeInputs },
      targets: {
        cls: { kind: "labels", values: labels },
        reg: { kind: "dense", dims: [...clean.reg_out.dims], values: regTargets },
      },
    }],
    tasks: [
      { name: "cls", loss: "cross_entropy", head: "cls_out" },
      { name: "reg", loss: "mse", head: "reg_out" },
    ],
    tag,
  };

  const maskRng = new Rng(args.seed + 5);
  const maskLosses: GoldenFile["mask_losses"] = [];
  for (let i = 0; i < MASK_COUNT; i++) {
    let mask: number[] = [];
    if (i > 0) {
      const size = 1 + maskRng.int(Math.min(12, open.length));
      mask = maskRng.subset(open.length, size).map((at) => open[at]);
    }
    const losses = evaluateLosses(runner, dataset, maskPoints(groups, mask));
    maskLosses.push({ mask, losses });
  }
  const baseline = maskLosses[0].losses;
  log(`baseline losses: cls ${baseline.cls.toFixed(6)}, reg ${baseline.reg.toFixed(6)}`);

  const golden: GoldenFile = {
    model: "model.onnx",
    tasks: dataset.tasks.map((t) => ({ name: t.name, loss: t.loss, head: t.head })),
    dataset: {
      inputs: { input: toNested(probeInputs.dims, probeInputs.data) },
      targets: {
        cls: Array.from(labels),
        reg: toNested(clean.reg_out.dims, regTargets),
      },
      tag,
    },
    forward: {
      inputs: { input: toNested(forwardInputs.dims, forwardInputs.data) },
      outputs: Object.fromEntries(
        Object.entries(forwardOutputs).map(([name, value]) => [
          name,
          toNested(value.dims, value.data),
        ]),
      ),
    },
    mask_losses: maskLosses,
    worker: [
      "node",
      "{root}/frontend/dist/protocol_worker.js",
      "--golden",
      "{root}/fixtures/secondary/golden.json",
    ],
  };
  const goldenPath = join(args.out, "golden.json");
  writeFileSync(goldenPath, JSON.stringify(golden));
  runner.dispose();
  log(`wrote ${goldenPath} (${MASK_COUNT} mask evaluations)`);
}

main();
