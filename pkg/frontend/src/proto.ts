/**
 * Minimal protobuf wire-format reader and writer.
 *
 * Only what the ONNX subset needs: varint (wire type 0), 64-bit (1),
 * length-delimited (2) and 32-bit (5) fields, with packed repeated
 * primitives handled by the callers. No schema compilation, no reflection.
 */

export class ProtoError extends Error {}

export interface Field {
    num: number;
    wire: number;
    // varint value for wire 0; payload bytes for wire 2; raw bits for 1/5
    varint: bigint;
    bytes: Uint8Array;
}

export class Reader {
    private pos = 0;
    constructor(private readonly buf: Uint8Array) {}

    get done(): boolean {
        return this.pos >= this.buf.length;
    }

    varint(): bigint {
        let result = 0n;
        let shift = 0n;
        for (;;) {
            if (this.pos >= this.buf.length) {
                throw new ProtoError("truncated varint");
            }
            const b = this.buf[this.pos++];
            result |= BigInt(b & 0x7f) << shift;
            if ((b & 0x80) === 0) return result;
            shift += 7n;
            if (shift > 63n) throw new ProtoError("varint too long");
        }
    }

    private take(n: number): Uint8Array {
        if (this.pos + n > this.buf.length) {
            throw new ProtoError("truncated field");
        }
        const out = this.buf.subarray(this.pos, this.pos + n);
        this.pos += n;
        return out;
    }

    field(): Field {
        const tag = this.varint();
        const num = Number(tag >> 3n);
        const wire = Number(tag & 7n);
        switch (wire) {
            case 0:
                return { num, wire, varint: this.varint(), bytes: new Uint8Array() };
            case 1:
                return { num, wire, varint: 0n, bytes: this.take(8) };
            case 2: {
                const len = Number(this.varint());
                return { num, wire, varint: 0n, bytes: this.take(len) };
            }
            case 5:
                return { num, wire, varint: 0n, bytes: this.take(4) };
            default:
                throw new ProtoError(`unsupported wire type ${wire}`);
        }
    }
}

/** Iterate a message's fields, dispatching by field number. */
export function eachField(buf: Uint8Array, fn: (f: Field) => void): void {
    const r = new Reader(buf);
    while (!r.done) fn(r.field());
}

export function utf8(bytes: Uint8Array): string {
    return new TextDecoder().decode(bytes);
}

/** Signed two's-complement interpretation of an int64 varint. */
export function asInt64(v: bigint): bigint {
    return v >= 1n << 63n ? v - (1n << 64n) : v;
}

export function packedVarints(bytes: Uint8Array): bigint[] {
    const r = new Reader(bytes);
    const out: bigint[] = [];
    while (!r.done) out.push(r.varint());
    return out;
}

export function float32At(bytes: Uint8Array, offset: number): number {
    return new DataView(bytes.buffer, bytes.byteOffset + offset, 4)
        .getFloat32(0, true);
}

export function packedFloats(bytes: Uint8Array): number[] {
    if (bytes.length % 4) throw new ProtoError("packed float length");
    const out: number[] = [];
    for (let i = 0; i < bytes.length; i += 4) out.push(float32At(bytes, i));
    return out;
}

// --------------------------------------------------------------------------
// Writer (used to build test fixtures; kept tiny and allocation-friendly)
// --------------------------------------------------------------------------

export class Writer {
    private chunks: number[] = [];

    private raw(...bytes: number[]): void {
        this.chunks.push(...bytes);
    }

    varint(value: bigint | number): this {
        let v = BigInt(value);
        if (v < 0n) v += 1n << 64n;
        for (;;) {
            const b = Number(v & 0x7fn);
            v >>= 7n;
            if (v === 0n) {
                this.raw(b);
                return this;
            }
            this.raw(b | 0x80);
        }
    }

    tag(num: number, wire: number): this {
        return this.varint((num << 3) | wire);
    }

    varintField(num: number, value: bigint | number): this {
        return this.tag(num, 0).varint(value);
    }

    bytesField(num: number, payload: Uint8Array): this {
        this.tag(num, 2).varint(payload.length);
        for (const b of payload) this.raw(b);
        return this;
    }

    stringField(num: number, s: string): this {
        return this.bytesField(num, new TextEncoder().encode(s));
    }

    messageField(num: number, build: (w: Writer) => void): this {
        const w = new Writer();
        build(w);
        return this.bytesField(num, w.finish());
    }

    floatsPacked(num: number, values: number[]): this {
        const payload = new Uint8Array(values.length * 4);
        const view = new DataView(payload.buffer);
        values.forEach((v, i) => view.setFloat32(i * 4, v, true));
        return this.bytesField(num, payload);
    }

    finish(): Uint8Array {
        return Uint8Array.from(this.chunks);
    }
}
