/**
 * Channel dependency analysis, numbering-compatible with the engine.
 *
 * A channel group is one output channel of a producer (Conv, Gemm,
 * MatMul with stored weights) together with every structurally coupled
 * location: per-channel parameter vectors attach as norm slots, skip
 * Adds union the two producers' channels, consumers record the input
 * position they read. Group ids are deterministic: components are
 * numbered by their first producer in topological order, then by
 * channel index. Pinning (graph outputs, grouped conv, untracked Add
 * operands, exclusions) flags a group but never shifts the numbering,
 * so ids agree across engines regardless of exclusion lists.
 */

import { Graph, GraphError, NodeDef, attrInt, isWeight, shapeOf } from "./model.js";

export const ROLE_PRODUCER = "producer_out";
export const ROLE_NORM = "norm_channel";
export const ROLE_CONSUMER = "consumer_in";

const PASSTHROUGH = new Set(["Relu", "MaxPool", "AveragePool", "GlobalAveragePool"]);

export interface Slot {
  nodeId: string;
  role: string;
  channel: number;
}

export interface ChannelGroup {
  id: number;
  slots: Slot[];
  pinned: boolean;
}

export function producerIds(group: ChannelGroup): string[] {
  return group.slots.filter((s) => s.role === ROLE_PRODUCER).map((s) => s.nodeId);
}

// union-find keys join node id and channel with a NUL separator,
// which cannot occur inside a tensor-derived node id
type Key = string;

function makeKey(nodeId: string, channel: number): Key {
  return `${nodeId}\u0000${channel}`;
}

function keyNode(key: Key): string {
  return key.slice(0, key.indexOf("\u0000"));
}

function keyChannel(key: Key): number {
  return Number(key.slice(key.indexOf("\u0000") + 1));
}

class UnionFind {
  parent = new Map<Key, Key>();

  add(key: Key): void {
    if (!this.parent.has(key)) this.parent.set(key, key);
  }

  find(key: Key): Key {
    let root = key;
    while (this.parent.get(root) !== root) root = this.parent.get(root)!;
    while (this.parent.get(key) !== root) {
      const next = this.parent.get(key)!;
      this.parent.set(key, root);
      key = next;
    }
    return root;
  }

  union(a: Key, b: Key): void {
    const ra = this.find(a);
    const rb = this.find(b);
    if (ra !== rb) this.parent.set(rb, ra);
  }
}

function isProducer(g: Graph, node: NodeDef): boolean {
  if (node.op === "Conv" || node.op === "Gemm") return true;
  if (node.op === "MatMul") return isWeight(g, node.inputs[1]);
  return false;
}

function featureCount(g: Graph, tensor: string): number {
  const shape = shapeOf(g, tensor);
  return shape.length < 2 ? 0 : shape[1];
}

/**
 * Derive the channel groups of a validated graph. `exclusions` lists
 * node ids whose own output channels must stay; their groups come back
 * pinned while their input slices still participate elsewhere.
 */
export function buildChannelGroups(g: Graph, exclusions: string[] = []): ChannelGroup[] {
  const nodeIds = new Set(g.nodes.map((n) => n.id));
  for (const nodeId of exclusions) {
    if (!nodeIds.has(nodeId)) {
      throw new GraphError(`exclusion list names unknown node ${nodeId}`);
    }
  }
  const excluded = new Set(exclusions);

  const uf = new UnionFind();
  const slots = new Map<Key, Slot[]>();
  const pinnedKeys = new Set<Key>();
  // tensor name -> per-feature key list (null entries are untracked)
  const chan = new Map<string, (Key | null)[]>();

  const track = (tensor: string): (Key | null)[] =>
    chan.get(tensor) ?? new Array<Key | null>(featureCount(g, tensor)).fill(null);

  const pinAll = (keys: (Key | null)[]): void => {
    for (const key of keys) if (key !== null) pinnedKeys.add(key);
  };

  const consume = (node: NodeDef, inKeys: (Key | null)[]): void => {
    inKeys.forEach((key, c) => {
      if (key !== null) slots.get(key)!.push({ nodeId: node.id, role: ROLE_CONSUMER, channel: c });
    });
  };

  const makeProducerKeys = (node: NodeDef): Key[] => {
    const count = shapeOf(g, node.outputs[0])[1];
    const keys: Key[] = [];
    for (let c = 0; c < count; c++) {
      const key = makeKey(node.id, c);
      uf.add(key);
      slots.set(key, [{ nodeId: node.id, role: ROLE_PRODUCER, channel: c }]);
      keys.push(key);
    }
    return keys;
  };

  for (const spec of g.inputs) {
    chan.set(spec.name, new Array<Key | null>(featureCount(g, spec.name)).fill(null));
  }

  for (const node of g.nodes) {
    const op = node.op;
    if (op === "Conv") {
      const inKeys = track(node.inputs[0]);
      let outKeys: (Key | null)[];
      if (attrInt(node, "group") !== 1) {
        pinAll(inKeys);
        outKeys = makeProducerKeys(node);
        pinAll(outKeys);
      } else {
        consume(node, inKeys);
        outKeys = makeProducerKeys(node);
      }
      chan.set(node.outputs[0], outKeys);
    } else if (op === "Gemm" || op === "MatMul") {
      const inKeys = track(node.inputs[0]);
      let outKeys: (Key | null)[];
      if (isProducer(g, node)) {
        consume(node, inKeys);
        outKeys = makeProducerKeys(node);
      } else {
        pinAll(inKeys);
        pinAll(track(node.inputs[1]));
        outKeys = new Array<Key | null>(featureCount(g, node.outputs[0])).fill(null);
      }
      chan.set(node.outputs[0], outKeys);
    } else if (op === "BatchNormalization") {
      const keys = track(node.inputs[0]);
      keys.forEach((key, c) => {
        if (key !== null) slots.get(key)!.push({ nodeId: node.id, role: ROLE_NORM, channel: c });
      });
      chan.set(node.outputs[0], keys);
    } else if (PASSTHROUGH.has(op)) {
      chan.set(node.outputs[0], track(node.inputs[0]));
    } else if (op === "Add") {
      if (isWeight(g, node.inputs[1])) {
        const keys = track(node.inputs[0]);
        keys.forEach((key, c) => {
          if (key !== null) slots.get(key)!.push({ nodeId: node.id, role: ROLE_NORM, channel: c });
        });
        chan.set(node.outputs[0], keys);
      } else {
        const aKeys = track(node.inputs[0]);
        const bKeys = track(node.inputs[1]);
        const outKeys: (Key | null)[] = [];
        for (let c = 0; c < aKeys.length; c++) {
          const ka = aKeys[c];
          const kb = bKeys[c];
          if (ka === null && kb === null) {
            outKeys.push(null);
          } else if (ka === null || kb === null) {
            const survivor = ka !== null ? ka : kb!;
            pinnedKeys.add(survivor);
            outKeys.push(survivor);
          } else {
            uf.union(ka, kb);
            outKeys.push(ka);
          }
        }
        chan.set(node.outputs[0], outKeys);
      }
    } else if (op === "Concat") {
      const merged: (Key | null)[] = [];
      for (const tensor of node.inputs) merged.push(...track(tensor));
      chan.set(node.outputs[0], merged);
    } else if (op === "Flatten" || op === "Reshape") {
      const inShape = shapeOf(g, node.inputs[0]);
      const outShape = shapeOf(g, node.outputs[0]);
      const keys = track(node.inputs[0]);
      if (inShape.length === 4 && outShape.length === 2) {
        const repeat = inShape[2] * inShape[3];
        const spread: (Key | null)[] = [];
        for (const key of keys) for (let i = 0; i < repeat; i++) spread.push(key);
        chan.set(node.outputs[0], spread);
      } else if (inShape.length === outShape.length && inShape.every((d, i) => d === outShape[i])) {
        chan.set(node.outputs[0], keys);
      } else {
        pinAll(keys);
        chan.set(node.outputs[0], new Array<Key | null>(featureCount(g, node.outputs[0])).fill(null));
      }
    } else {
      throw new GraphError(`node ${node.id}: no grouping rule for ${op}`);
    }
  }

  for (const spec of g.outputs) pinAll(chan.get(spec.name) ?? []);
  // excluding a node pins the channels it produces or normalizes; an
  // excluded consumer still gets its input slices adjusted
  for (const [key, slotList] of slots) {
    if (excluded.has(keyNode(key))) {
      pinnedKeys.add(key);
      continue;
    }
    for (const slot of slotList) {
      if (slot.role === ROLE_NORM && excluded.has(slot.nodeId)) {
        pinnedKeys.add(key);
        break;
      }
    }
  }

  return collect(g, uf, slots, pinnedKeys);
}

function collect(
  g: Graph,
  uf: UnionFind,
  slots: Map<Key, Slot[]>,
  pinnedKeys: Set<Key>,
): ChannelGroup[] {
  const topoPos = new Map(g.nodes.map((n, i) => [n.id, i]));
  const members = new Map<Key, Key[]>();
  for (const key of slots.keys()) {
    const root = uf.find(key);
    const list = members.get(root) ?? [];
    list.push(key);
    members.set(root, list);
  }

  const components: { anchor: [number, number]; slots: Slot[]; pinned: boolean }[] = [];
  for (const keys of members.values()) {
    let anchor: [number, number] = [Number.MAX_SAFE_INTEGER, 0];
    for (const key of keys) {
      const candidate: [number, number] = [topoPos.get(keyNode(key))!, keyChannel(key)];
      if (candidate[0] < anchor[0] || (candidate[0] === anchor[0] && candidate[1] < anchor[1])) {
        anchor = candidate;
      }
    }
    const merged: Slot[] = [];
    for (const key of keys) merged.push(...slots.get(key)!);
    merged.sort((a, b) => {
      const pa = topoPos.get(a.nodeId)!;
      const pb = topoPos.get(b.nodeId)!;
      if (pa !== pb) return pa - pb;
      if (a.role !== b.role) return a.role < b.role ? -1 : 1;
      return a.channel - b.channel;
    });
    const pinned = keys.some((k) => pinnedKeys.has(k));
    components.push({ anchor, slots: merged, pinned });
  }
  components.sort((a, b) =>
    a.anchor[0] !== b.anchor[0] ? a.anchor[0] - b.anchor[0] : a.anchor[1] - b.anchor[1],
  );
  return components.map((c, i) => ({ id: i, slots: c.slots, pinned: c.pinned }));
}

/**
 * Channels to zero per node output, covering the dropped groups.
 * Zeroing applies at producer outputs and at every per-channel
 * parameter node (the post-normalization boundary), which makes the
 * masked forward agree with structural removal.
 */
export function maskPoints(groups: ChannelGroup[], dropped: Iterable<number>): Map<string, number[]> {
  const byGroup = new Map(groups.map((g) => [g.id, g]));
  const points = new Map<string, Set<number>>();
  for (const gid of dropped) {
    const group = byGroup.get(gid);
    if (!group) throw new GraphError(`unknown channel group ${gid}`);
    for (const slot of group.slots) {
      if (slot.role === ROLE_PRODUCER || slot.role === ROLE_NORM) {
        const set = points.get(slot.nodeId) ?? new Set<number>();
        set.add(slot.channel);
        points.set(slot.nodeId, set);
      }
    }
  }
  const out = new Map<string, number[]>();
  for (const [nodeId, channels] of points) {
    out.set(nodeId, [...channels].sort((a, b) => a - b));
  }
  return out;
}

export function nonPinnedIds(groups: ChannelGroup[]): number[] {
  return groups.filter((g) => !g.pinned).map((g) => g.id);
}
