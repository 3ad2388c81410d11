/**
 * The toy multitask convnet, built directly on tfjs variables.
 *
 * Two heads share a small residual trunk: a 5-way classifier over
 * global features and a 3-value regressor over a side branch, the same
 * layout the reference fixtures use. Channel scaling runs as a plain
 * per-channel affine during training; at export time activation
 * statistics are folded into BatchNormalization initializers (scale
 * absorbs sqrt(var + eps), bias absorbs the mean) so the stored
 * parameters are honest statistics and the function is unchanged.
 *
 * Training data is synthetic: five gaussian class prototypes plus
 * noise, and a regression target that is a scaled per-channel mean of
 * the input. That is enough signal for pruning damage to be visible in
 * both losses.
 */

import * as tf from "@tensorflow/tfjs";
import { Rng } from "./rng.js";
import { Attr, Graph, NodeDef, TensorInit, buildGraph } from "./model.js";

export const INPUT_SIZE = 16;
export const NUM_CLASSES = 5;
export const REG_DIM = 3;

// trunk widths; conv2b must match conv1 for the skip join
const WIDTHS = {
  conv1: 12,
  conv2a: 16,
  conv2b: 12,
  conv3a: 10,
  conv3b: 6,
  conv4: 20,
  conv5: 8,
};

const AFFINE_SITES = ["bn1", "bn2a", "bn2b", "bn3a", "bn3b", "bn4"] as const;
type AffineSite = (typeof AFFINE_SITES)[number];

interface ConvParams {
  kernel: tf.Variable<tf.Rank.R4>; // HWIO
  bias: tf.Variable<tf.Rank.R1>;
}

interface AffineParams {
  gamma: tf.Variable<tf.Rank.R1>;
  beta: tf.Variable<tf.Rank.R1>;
}

interface SiteStats {
  mean: Float64Array;
  variance: Float64Array;
}

export class ToyNet {
  convs = new Map<string, ConvParams>();
  affines = new Map<AffineSite, AffineParams>();
  fcCls: { weight: tf.Variable<tf.Rank.R2>; bias: tf.Variable<tf.Rank.R1> };
  fcReg: { weight: tf.Variable<tf.Rank.R2>; bias: tf.Variable<tf.Rank.R1> };

  constructor(seed: number) {
    const rng = new Rng(seed);
    const conv = (name: string, kh: number, kw: number, cin: number, cout: number) => {
      const scale = Math.sqrt(2.0 / (kh * kw * cin));
      this.convs.set(name, {
        kernel: tf.variable(
          tf.tensor4d(rng.normals(kh * kw * cin * cout, scale), [kh, kw, cin, cout]),
        ),
        bias: tf.variable(tf.zeros([cout])),
      });
    };
    conv("conv1", 3, 3, 3, WIDTHS.conv1);
    conv("conv2a", 3, 3, WIDTHS.conv1, WIDTHS.conv2a);
    conv("conv2b", 3, 3, WIDTHS.conv2a, WIDTHS.conv2b);
    conv("conv3a", 3, 3, WIDTHS.conv2b, WIDTHS.conv3a);
    conv("conv3b", 1, 1, WIDTHS.conv2b, WIDTHS.conv3b);
    conv("conv4", 3, 3, WIDTHS.conv3a + WIDTHS.conv3b, WIDTHS.conv4);
    conv("conv5", 1, 1, WIDTHS.conv4, WIDTHS.conv5);
    const widthOf: Record<AffineSite, number> = {
      bn1: WIDTHS.conv1,
      bn2a: WIDTHS.conv2a,
      bn2b: WIDTHS.conv2b,
      bn3a: WIDTHS.conv3a,
      bn3b: WIDTHS.conv3b,
      bn4: WIDTHS.conv4,
    };
    for (const site of AFFINE_SITES) {
      this.affines.set(site, {
        gamma: tf.variable(tf.ones([widthOf[site]])),
        beta: tf.variable(tf.zeros([widthOf[site]])),
      });
    }
    const fc = (cin: number, cout: number) => ({
      weight: tf.variable(
        tf.tensor2d(rng.normals(cin * cout, Math.sqrt(1.0 / cin)), [cin, cout]),
      ),
      bias: tf.variable(tf.zeros([cout]) as tf.Tensor1D),
    });
    this.fcCls = fc(WIDTHS.conv4, NUM_CLASSES);
    this.fcReg = fc(WIDTHS.conv5, REG_DIM);
  }

  variables(): tf.Variable[] {
    const out: tf.Variable[] = [];
    for (const { kernel, bias } of this.convs.values()) out.push(kernel, bias);
    for (const { gamma, beta } of this.affines.values()) out.push(gamma, beta);
    out.push(this.fcCls.weight, this.fcCls.bias, this.fcReg.weight, this.fcReg.bias);
    return out;
  }

  dispose(): void {
    for (const v of this.variables()) v.dispose();
  }

  private convOp(name: string, x: tf.Tensor4D, stride: number, pad: number): tf.Tensor4D {
    // explicit symmetric padding; tf "same" pads asymmetrically under
    // stride 2, which would diverge from the serialized pads attribute
    const { kernel, bias } = this.convs.get(name)!;
    const padded =
      pad > 0 ? tf.pad(x, [[0, 0], [pad, pad], [pad, pad], [0, 0]]) : x;
    return tf.add(
      tf.conv2d(padded, kernel as tf.Tensor4D, [stride, stride], "valid"),
      bias,
    ) as tf.Tensor4D;
  }

  private affineOp(site: AffineSite, x: tf.Tensor4D): tf.Tensor4D {
    const { gamma, beta } = this.affines.get(site)!;
    return tf.add(tf.mul(x, gamma), beta) as tf.Tensor4D;
  }

  /**
   * NHWC forward. When `collect` is given it receives each pre-affine
   * tensor, which is what the export-time statistics are taken over.
   */
  forward(
    x: tf.Tensor4D,
    collect?: (site: AffineSite, t: tf.Tensor4D) => void,
  ): { cls: tf.Tensor2D; reg: tf.Tensor2D } {
    const affine = (site: AffineSite, t: tf.Tensor4D): tf.Tensor4D => {
      if (collect) collect(site, t);
      return this.affineOp(site, t);
    };
    const stem = tf.relu<tf.Tensor4D>(affine("bn1", this.convOp("conv1", x, 1, 1)));
    const pooled = tf.maxPool(stem, [2, 2], [2, 2], "valid");
    const mid = tf.relu<tf.Tensor4D>(affine("bn2a", this.convOp("conv2a", pooled, 1, 1)));
    const branch = affine("bn2b", this.convOp("conv2b", mid, 1, 1));
    const joined = tf.relu<tf.Tensor4D>(tf.add(pooled, branch) as tf.Tensor4D);
    const wide = tf.relu<tf.Tensor4D>(affine("bn3a", this.convOp("conv3a", joined, 1, 1)));
    const narrow = tf.relu<tf.Tensor4D>(affine("bn3b", this.convOp("conv3b", joined, 1, 0)));
    const merged = tf.concat([wide, narrow], 3) as tf.Tensor4D;
    const deep = tf.relu<tf.Tensor4D>(affine("bn4", this.convOp("conv4", merged, 2, 1)));

    const clsFeat = tf.mean(deep, [1, 2]) as tf.Tensor2D;
    const cls = tf.add(
      tf.matMul(clsFeat, this.fcCls.weight as tf.Tensor2D), this.fcCls.bias,
    ) as tf.Tensor2D;

    const side = tf.relu<tf.Tensor4D>(this.convOp("conv5", deep, 1, 0));
    const regFeat = tf.mean(side, [1, 2]) as tf.Tensor2D;
    const reg = tf.add(
      tf.matMul(regFeat, this.fcReg.weight as tf.Tensor2D), this.fcReg.bias,
    ) as tf.Tensor2D;
    return { cls, reg };
  }
}

/** Five gaussian prototypes plus noise; regression target is a scaled per-channel mean. */
export class SyntheticTask {
  private prototypes: Float32Array[];

  constructor(private rng: Rng) {
    this.prototypes = Array.from({ length: NUM_CLASSES }, () =>
      rng.normals(INPUT_SIZE * INPUT_SIZE * 3),
    );
  }

  /** One NHWC batch with labels and regression targets. */
  batch(n: number): { x: Float32Array; labels: Int32Array; regTargets: Float32Array } {
    const pixels = INPUT_SIZE * INPUT_SIZE * 3;
    const x = new Float32Array(n * pixels);
    const labels = new Int32Array(n);
    const regTargets = new Float32Array(n * REG_DIM);
    for (let i = 0; i < n; i++) {
      const label = this.rng.int(NUM_CLASSES);
      labels[i] = label;
      const proto = this.prototypes[label];
      const base = i * pixels;
      for (let j = 0; j < pixels; j++) {
        x[base + j] = Math.fround(0.8 * proto[j] + this.rng.gauss());
      }
      const chanSum = new Float64Array(3);
      for (let j = 0; j < pixels; j++) chanSum[j % 3] += x[base + j];
      for (let c = 0; c < REG_DIM; c++) {
        const mean = chanSum[c] / (INPUT_SIZE * INPUT_SIZE);
        regTargets[i * REG_DIM + c] = Math.fround(2.0 * mean + 0.1 * this.rng.gauss());
      }
    }
    return { x, labels, regTargets };
  }
}

export interface TrainReport {
  steps: number;
  firstLoss: number;
  lastLoss: number;
  holdoutAccuracy: number;
}

export function trainToyNet(
  net: ToyNet,
  task: SyntheticTask,
  steps: number,
  batchSize = 32,
  learningRate = 0.01,
): TrainReport {
  const optimizer = tf.train.adam(learningRate);
  const varList = net.variables();
  let firstLoss = NaN;
  let lastLoss = NaN;
  for (let step = 0; step < steps; step++) {
    const { x, labels, regTargets } = task.batch(batchSize);
    const cost = optimizer.minimize(
      () => {
        const input = tf.tensor4d(x, [batchSize, INPUT_SIZE, INPUT_SIZE, 3]);
        const { cls, reg } = net.forward(input);
        const oneHot = tf.oneHot(tf.tensor1d(labels, "int32"), NUM_CLASSES);
        const ce = tf.losses.softmaxCrossEntropy(oneHot, cls);
        const mse = tf.losses.meanSquaredError(
          tf.tensor2d(regTargets, [batchSize, REG_DIM]), reg,
        );
        return tf.add(ce, mse) as tf.Scalar;
      },
      true,
      varList,
    )!;
    const value = cost.dataSync()[0];
    cost.dispose();
    if (step === 0) firstLoss = value;
    lastLoss = value;
  }
  optimizer.dispose();

  const holdout = task.batch(64);
  const holdoutAccuracy = tf.tidy(() => {
    const input = tf.tensor4d(holdout.x, [64, INPUT_SIZE, INPUT_SIZE, 3]);
    const { cls } = net.forward(input);
    const predictions = tf.argMax(cls, 1).dataSync();
    let hits = 0;
    for (let i = 0; i < 64; i++) if (predictions[i] === holdout.labels[i]) hits++;
    return hits / 64;
  });
  return { steps, firstLoss, lastLoss, holdoutAccuracy };
}

/** Population mean and variance per channel of each pre-affine tensor. */
export function collectSiteStats(
  net: ToyNet,
  task: SyntheticTask,
  batches: number,
  batchSize = 32,
): Map<AffineSite, SiteStats> {
  const sums = new Map<AffineSite, { n: number; sum: Float64Array; sumSq: Float64Array }>();
  for (let b = 0; b < batches; b++) {
    const { x } = task.batch(batchSize);
    tf.tidy(() => {
      const input = tf.tensor4d(x, [batchSize, INPUT_SIZE, INPUT_SIZE, 3]);
      net.forward(input, (site, t) => {
        const channels = t.shape[3];
        const acc = sums.get(site) ?? {
          n: 0,
          sum: new Float64Array(channels),
          sumSq: new Float64Array(channels),
        };
        const data = t.dataSync();
        for (let i = 0; i < data.length; i++) {
          const c = i % channels;
          acc.sum[c] += data[i];
          acc.sumSq[c] += data[i] * data[i];
        }
        acc.n += data.length / channels;
        sums.set(site, acc);
      });
    });
  }
  const stats = new Map<AffineSite, SiteStats>();
  for (const [site, acc] of sums) {
    const mean = new Float64Array(acc.sum.length);
    const variance = new Float64Array(acc.sum.length);
    for (let c = 0; c < mean.length; c++) {
      mean[c] = acc.sum[c] / acc.n;
      variance[c] = Math.max(acc.sumSq[c] / acc.n - mean[c] * mean[c], 0);
    }
    stats.set(site, { mean, variance });
  }
  return stats;
}

// -- graph assembly ------------------------------------------------------

const EPSILON = Math.fround(1e-5);

function ints(value: number[]): Attr {
  return { kind: "ints", value };
}

function convNode(
  id: string,
  input: string,
  pads: number[],
  strides: number[],
  kernel: number[],
): NodeDef {
  return {
    id,
    op: "Conv",
    inputs: [input, `${id}_w`, `${id}_b`],
    outputs: [`${id}_out`],
    attrs: {
      dilations: ints([1, 1]),
      group: { kind: "int", value: 1 },
      kernel_shape: ints(kernel),
      pads: ints(pads),
      strides: ints(strides),
    },
  };
}

function bnNode(id: string, input: string): NodeDef {
  return {
    id,
    op: "BatchNormalization",
    inputs: [input, `${id}_scale`, `${id}_bias`, `${id}_mean`, `${id}_var`],
    outputs: [`${id}_out`],
    attrs: { epsilon: { kind: "float", value: EPSILON } },
  };
}

function unary(id: string, op: string, input: string, attrs: Record<string, Attr> = {}): NodeDef {
  return { id, op, inputs: [input], outputs: [`${id}_out`], attrs };
}

function gemmNode(id: string, input: string): NodeDef {
  return {
    id,
    op: "Gemm",
    inputs: [input, `${id}_w`, `${id}_b`],
    outputs: [`${id}_out`],
    attrs: {
      alpha: { kind: "float", value: 1.0 },
      beta: { kind: "float", value: 1.0 },
      transA: { kind: "int", value: 0 },
      transB: { kind: "int", value: 1 },
    },
  };
}

/**
 * Freeze the trained net into a serializable graph: conv kernels go
 * HWIO to OIHW, linear heads become Gemm with transB=1, and each
 * affine site becomes BatchNormalization with the collected statistics
 * folded in so the function is preserved.
 */
export function assembleGraph(
  net: ToyNet,
  stats: Map<AffineSite, SiteStats>,
  name = "toy_mt_js",
): Graph {
  const weights = new Map<string, TensorInit>();
  const putF32 = (tensor: string, dims: number[], data: Float32Array) => {
    weights.set(tensor, { dims, dtype: "float32", data });
  };

  for (const [convName, params] of net.convs) {
    const oihw = tf.tidy(() => tf.transpose(params.kernel as tf.Tensor4D, [3, 2, 0, 1]));
    const [kh, kw, cin, cout] = params.kernel.shape;
    putF32(`${convName}_w`, [cout, cin, kh, kw], new Float32Array(oihw.dataSync()));
    oihw.dispose();
    putF32(`${convName}_b`, [cout], new Float32Array(params.bias.dataSync()));
  }
  for (const site of AFFINE_SITES) {
    const { gamma, beta } = net.affines.get(site)!;
    const { mean, variance } = stats.get(site)!;
    const g = gamma.dataSync();
    const b = beta.dataSync();
    const width = mean.length;
    const scale = new Float32Array(width);
    const bias = new Float32Array(width);
    const mu = new Float32Array(width);
    const varOut = new Float32Array(width);
    for (let c = 0; c < width; c++) {
      scale[c] = Math.fround(g[c] * Math.sqrt(variance[c] + EPSILON));
      bias[c] = Math.fround(b[c] + g[c] * mean[c]);
      mu[c] = Math.fround(mean[c]);
      varOut[c] = Math.fround(variance[c]);
    }
    putF32(`${site}_scale`, [width], scale);
    putF32(`${site}_bias`, [width], bias);
    putF32(`${site}_mean`, [width], mu);
    putF32(`${site}_var`, [width], varOut);
  }
  for (const [fcName, params] of [
    ["fc_cls", net.fcCls],
    ["fc_reg", net.fcReg],
  ] as const) {
    const [cin, cout] = params.weight.shape;
    const transposed = tf.tidy(() => tf.transpose(params.weight as tf.Tensor2D));
    putF32(`${fcName}_w`, [cout, cin], new Float32Array(transposed.dataSync()));
    transposed.dispose();
    putF32(`${fcName}_b`, [cout], new Float32Array(params.bias.dataSync()));
  }

  const nodes: NodeDef[] = [
    convNode("conv1", "input", [1, 1, 1, 1], [1, 1], [3, 3]),
    bnNode("bn1", "conv1_out"),
    unary("relu1", "Relu", "bn1_out"),
    unary("pool1", "MaxPool", "relu1_out", {
      kernel_shape: ints([2, 2]),
      pads: ints([0, 0, 0, 0]),
      strides: ints([2, 2]),
    }),
    convNode("conv2a", "pool1_out", [1, 1, 1, 1], [1, 1], [3, 3]),
    bnNode("bn2a", "conv2a_out"),
    unary("relu2a", "Relu", "bn2a_out"),
    convNode("conv2b", "relu2a_out", [1, 1, 1, 1], [1, 1], [3, 3]),
    bnNode("bn2b", "conv2b_out"),
    { id: "add1", op: "Add", inputs: ["pool1_out", "bn2b_out"], outputs: ["add1_out"], attrs: {} },
    unary("relu2b", "Relu", "add1_out"),
    convNode("conv3a", "relu2b_out", [1, 1, 1, 1], [1, 1], [3, 3]),
    bnNode("bn3a", "conv3a_out"),
    unary("relu3a", "Relu", "bn3a_out"),
    convNode("conv3b", "relu2b_out", [0, 0, 0, 0], [1, 1], [1, 1]),
    bnNode("bn3b", "conv3b_out"),
    unary("relu3b", "Relu", "bn3b_out"),
    {
      id: "cat1",
      op: "Concat",
      inputs: ["relu3a_out", "relu3b_out"],
      outputs: ["cat1_out"],
      attrs: { axis: { kind: "int", value: 1 } },
    },
    convNode("conv4", "cat1_out", [1, 1, 1, 1], [2, 2], [3, 3]),
    bnNode("bn4", "conv4_out"),
    unary("relu4", "Relu", "bn4_out"),
    unary("gap_cls", "GlobalAveragePool", "relu4_out"),
    unary("flat_cls", "Flatten", "gap_cls_out", { axis: { kind: "int", value: 1 } }),
    { ...gemmNode("fc_cls", "flat_cls_out"), outputs: ["cls_out"] },
    convNode("conv5", "relu4_out", [0, 0, 0, 0], [1, 1], [1, 1]),
    unary("relu5", "Relu", "conv5_out"),
    unary("gap_reg", "GlobalAveragePool", "relu5_out"),
    unary("flat_reg", "Flatten", "gap_reg_out", { axis: { kind: "int", value: 1 } }),
    { ...gemmNode("fc_reg", "flat_reg_out"), outputs: ["reg_out"] },
  ];

  return buildGraph(
    name,
    nodes,
    weights,
    [{ name: "input", shape: [-1, 3, INPUT_SIZE, INPUT_SIZE] }],
    [
      { name: "cls_out", shape: [-1, NUM_CLASSES] },
      { name: "reg_out", shape: [-1, REG_DIM] },
    ],
  );
}
