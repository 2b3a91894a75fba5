/**
 * ModelIR document types, canonical serialization, and a validator for the
 * JSON-Schema subset the shipped modelir schema uses.
 *
 * Canonical form: sorted keys, one-space indent, integer-only numbers; a
 * given document always serializes to the same bytes.
 */

export interface PrecisionJSON {
    bits: number;
    signed: boolean;
}

export interface LayerJSON {
    name: string;
    kind: "conv2d" | "gemm" | "gemv" | "maxpool" | "relu";
    input_shape: number[];
    output_shape: number[];
    kernel?: number[];
    stride?: number;
    padding?: number;
    prec_a: PrecisionJSON;
    prec_w?: PrecisionJSON;
    prec_out: PrecisionJSON;
    weights?: number[] | number;
    scale?: number[] | number;
    bias?: number[] | number;
    quant_msb: number;
    relu?: boolean;
    pool?: { window: number; stride: number };
}

export interface ModelJSON {
    version: 1;
    name: string;
    clock_hz?: number;
    layers: LayerJSON[];
}

type JsonValue = null | boolean | number | string | JsonValue[] |
    { [k: string]: JsonValue };

export function canonicalJson(value: unknown, indent = ""): string {
    const pad = indent + " ";
    if (value === null || typeof value === "boolean") return JSON.stringify(value);
    if (typeof value === "number") {
        if (!Number.isFinite(value)) throw new Error("non-finite number");
        return String(value);  // ECMAScript double formatting: deterministic
    }
    if (typeof value === "string") return JSON.stringify(value);
    if (Array.isArray(value)) {
        if (value.length === 0) return "[]";
        const items = value.map((v) => pad + canonicalJson(v, pad));
        return "[\n" + items.join(",\n") + "\n" + indent + "]";
    }
    const obj = value as Record<string, unknown>;
    const keys = Object.keys(obj).filter((k) => obj[k] !== undefined).sort();
    if (keys.length === 0) return "{}";
    const items = keys.map(
        (k) => `${pad}${JSON.stringify(k)}: ${canonicalJson(obj[k], pad)}`);
    return "{\n" + items.join(",\n") + "\n" + indent + "}";
}

export function serializeModel(doc: ModelJSON): string {
    return canonicalJson(doc) + "\n";
}

// --------------------------------------------------------------------------
// JSON-Schema subset validation (draft-07 features the shipped schema uses)
// --------------------------------------------------------------------------

export class SchemaError extends Error {}

interface Schema {
    [k: string]: unknown;
}

function resolveRef(root: Schema, ref: string): Schema {
    if (!ref.startsWith("#/")) throw new SchemaError(`unsupported $ref ${ref}`);
    let node: unknown = root;
    for (const part of ref.slice(2).split("/")) {
        node = (node as Record<string, unknown>)[part];
        if (node === undefined) throw new SchemaError(`dangling $ref ${ref}`);
    }
    return node as Schema;
}

export function validateSchema(doc: unknown, schema: Schema,
                               root?: Schema, path = "$"): void {
    const r = root ?? schema;
    if (typeof schema.$ref === "string") {
        validateSchema(doc, resolveRef(r, schema.$ref), r, path);
        return;
    }
    if ("const" in schema) {
        if (doc !== schema.const) {
            throw new SchemaError(`${path}: expected const ${schema.const}`);
        }
        return;
    }
    if (Array.isArray(schema.enum) && !schema.enum.includes(doc)) {
        throw new SchemaError(`${path}: ${doc} not in enum`);
    }
    if (Array.isArray(schema.oneOf)) {
        let matches = 0;
        for (const sub of schema.oneOf as Schema[]) {
            try {
                validateSchema(doc, sub, r, path);
                matches++;
            } catch {
                /* try the next branch */
            }
        }
        if (matches !== 1) {
            throw new SchemaError(`${path}: matched ${matches} oneOf branches`);
        }
        return;
    }
    const type = schema.type as string | undefined;
    if (type === "object") {
        if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
            throw new SchemaError(`${path}: expected object`);
        }
        const obj = doc as Record<string, unknown>;
        for (const req of (schema.required as string[] | undefined) ?? []) {
            if (!(req in obj)) {
                throw new SchemaError(`${path}: missing required ${req}`);
            }
        }
        const props = (schema.properties as Record<string, Schema>) ?? {};
        for (const [k, v] of Object.entries(obj)) {
            if (k in props) validateSchema(v, props[k], r, `${path}.${k}`);
            else if (schema.additionalProperties === false) {
                throw new SchemaError(`${path}: unexpected property ${k}`);
            }
        }
        return;
    }
    if (type === "array") {
        if (!Array.isArray(doc)) throw new SchemaError(`${path}: expected array`);
        const min = schema.minItems as number | undefined;
        const max = schema.maxItems as number | undefined;
        if (min !== undefined && doc.length < min) {
            throw new SchemaError(`${path}: fewer than ${min} items`);
        }
        if (max !== undefined && doc.length > max) {
            throw new SchemaError(`${path}: more than ${max} items`);
        }
        if (schema.items) {
            doc.forEach((v, i) =>
                validateSchema(v, schema.items as Schema, r, `${path}[${i}]`));
        }
        return;
    }
    if (type === "integer" || type === "number") {
        if (typeof doc !== "number" ||
            (type === "integer" && !Number.isInteger(doc))) {
            throw new SchemaError(`${path}: expected ${type}`);
        }
        const lo = schema.minimum as number | undefined;
        const hi = schema.maximum as number | undefined;
        const xlo = schema.exclusiveMinimum as number | undefined;
        if (lo !== undefined && doc < lo) {
            throw new SchemaError(`${path}: ${doc} < ${lo}`);
        }
        if (hi !== undefined && doc > hi) {
            throw new SchemaError(`${path}: ${doc} > ${hi}`);
        }
        if (xlo !== undefined && doc <= xlo) {
            throw new SchemaError(`${path}: ${doc} <= ${xlo}`);
        }
        return;
    }
    if (type === "string") {
        if (typeof doc !== "string") {
            throw new SchemaError(`${path}: expected string`);
        }
        const minLen = schema.minLength as number | undefined;
        if (minLen !== undefined && doc.length < minLen) {
            throw new SchemaError(`${path}: string shorter than ${minLen}`);
        }
        return;
    }
    if (type === "boolean") {
        if (typeof doc !== "boolean") {
            throw new SchemaError(`${path}: expected boolean`);
        }
        return;
    }
    if (type !== undefined) {
        throw new SchemaError(`${path}: unhandled schema type ${type}`);
    }
}
