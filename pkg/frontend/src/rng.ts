/**
 * Seeded PRNG for synthetic data and weight init. Everything that
 * generates numbers in this package runs from explicit seeds so the
 * exported fixtures are reproducible; mulberry32 plus Box-Muller is
 * plenty for that, this is not a statistics library.
 */

export class Rng {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  /** Uniform float in [0, 1). */
  next(): number {
    let t = (this.state = (this.state + 0x6d2b79f5) >>> 0);
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  /** Uniform integer in [0, bound). */
  int(bound: number): number {
    return Math.floor(this.next() * bound);
  }

  /** Standard normal via Box-Muller, one value per call. */
  gauss(): number {
    let u = 0;
    while (u === 0) u = this.next(); // keep the log finite
    return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * this.next());
  }

  normals(count: number, scale = 1.0): Float32Array {
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) out[i] = Math.fround(this.gauss() * scale);
    return out;
  }

  /** Sample k distinct integers from 0..n-1, ascending. */
  subset(n: number, k: number): number[] {
    const pool = Array.from({ length: n }, (_, i) => i);
    for (let i = 0; i < k; i++) {
      const j = i + this.int(n - i);
      const tmp = pool[i];
      pool[i] = pool[j];
      pool[j] = tmp;
    }
    return pool.slice(0, k).sort((a, b) => a - b);
  }
}
