/**
 * Minimal protobuf wire-format primitives: varints, tagged fields,
 * packed scalars. The model schema lives in onnx.ts; this layer knows
 * nothing about field meanings.
 *
 * int64 fields carry negatives as 10-byte two's-complement varints, so
 * all varint arithmetic runs on BigInt and callers narrow to number
 * only where the value is known small (field keys, dims, counts).
 */

export const WIRE_VARINT = 0;
export const WIRE_I64 = 1;
export const WIRE_LEN = 2;
export const WIRE_I32 = 5;

const U64_MASK = (1n << 64n) - 1n;

export class WireError extends Error {}

export function encodeVarint(value: bigint): Uint8Array {
  if (value < 0n) throw new WireError("varint value must be non-negative after masking");
  const out: number[] = [];
  for (;;) {
    const byte = Number(value & 0x7fn);
    value >>= 7n;
    if (value > 0n) {
      out.push(byte | 0x80);
    } else {
      out.push(byte);
      return Uint8Array.from(out);
    }
  }
}

export function encodeSigned64(value: number | bigint): Uint8Array {
  return encodeVarint(BigInt(value) & U64_MASK);
}

export function decodeSigned64(raw: bigint): bigint {
  return raw >= 1n << 63n ? raw - (1n << 64n) : raw;
}

export class WireWriter {
  private parts: Uint8Array[] = [];
  private size = 0;

  private push(bytes: Uint8Array): void {
    this.parts.push(bytes);
    this.size += bytes.length;
  }

  tag(field: number, wireType: number): void {
    this.push(encodeVarint(BigInt((field << 3) | wireType)));
  }

  varintField(field: number, value: number | bigint): void {
    this.tag(field, WIRE_VARINT);
    this.push(encodeSigned64(value));
  }

  bytesField(field: number, data: Uint8Array): void {
    this.tag(field, WIRE_LEN);
    this.push(encodeVarint(BigInt(data.length)));
    this.push(data);
  }

  stringField(field: number, text: string): void {
    this.bytesField(field, new TextEncoder().encode(text));
  }

  messageField(field: number, sub: WireWriter): void {
    this.bytesField(field, sub.finish());
  }

  floatField(field: number, value: number): void {
    this.tag(field, WIRE_I32);
    const buf = new Uint8Array(4);
    new DataView(buf.buffer).setFloat32(0, value, true);
    this.push(buf);
  }

  finish(): Uint8Array {
    const out = new Uint8Array(this.size);
    let at = 0;
    for (const part of this.parts) {
      out.set(part, at);
      at += part.length;
    }
    return out;
  }
}

export interface WireField {
  field: number;
  wireType: number;
  /** Raw varint for wire type 0, payload bytes otherwise. */
  value: bigint | Uint8Array;
}

export class WireReader {
  private pos = 0;

  constructor(private data: Uint8Array) {}

  atEnd(): boolean {
    return this.pos >= this.data.length;
  }

  readVarint(): bigint {
    let result = 0n;
    let shift = 0n;
    for (;;) {
      if (this.pos >= this.data.length) throw new WireError("truncated varint");
      const byte = this.data[this.pos++];
      result |= BigInt(byte & 0x7f) << shift;
      if ((byte & 0x80) === 0) return result;
      shift += 7n;
      if (shift > 63n) throw new WireError("varint exceeds 64 bits");
    }
  }

  *fields(): Generator<WireField> {
    while (!this.atEnd()) {
      const key = this.readVarint();
      const field = Number(key >> 3n);
      const wireType = Number(key & 7n);
      if (field === 0) throw new WireError("field number 0 is invalid");
      if (wireType === WIRE_VARINT) {
        yield { field, wireType, value: this.readVarint() };
      } else if (wireType === WIRE_LEN) {
        const size = Number(this.readVarint());
        if (this.pos + size > this.data.length) {
          throw new WireError("length-delimited field overruns buffer");
        }
        const value = this.data.subarray(this.pos, this.pos + size);
        this.pos += size;
        yield { field, wireType, value };
      } else if (wireType === WIRE_I64) {
        if (this.pos + 8 > this.data.length) throw new WireError("truncated 64-bit field");
        const value = this.data.subarray(this.pos, this.pos + 8);
        this.pos += 8;
        yield { field, wireType, value };
      } else if (wireType === WIRE_I32) {
        if (this.pos + 4 > this.data.length) throw new WireError("truncated 32-bit field");
        const value = this.data.subarray(this.pos, this.pos + 4);
        this.pos += 4;
        yield { field, wireType, value };
      } else {
        throw new WireError(`unsupported wire type ${wireType}`);
      }
    }
  }
}

/** Decode a packed repeated int64 payload (callers also accept one varint per entry). */
export function decodePackedInt64(payload: Uint8Array): bigint[] {
  const reader = new WireReader(payload);
  const values: bigint[] = [];
  while (!reader.atEnd()) values.push(decodeSigned64(reader.readVarint()));
  return values;
}

export function decodeFloat32(payload: Uint8Array): number {
  if (payload.length !== 4) throw new WireError("float32 payload must be 4 bytes");
  return new DataView(payload.buffer, payload.byteOffset, 4).getFloat32(0, true);
}
