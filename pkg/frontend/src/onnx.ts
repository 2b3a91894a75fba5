/** Decoding of the ONNX protobuf subset: Conv/Gemm/MatMul/MaxPool/Relu/Add
 * graphs with float initializers and static 4-D or 2-D tensor shapes. */

import {
    Field,
    ProtoError,
    asInt64,
    eachField,
    float32At,
    packedFloats,
    packedVarints,
    utf8,
} from "./proto.js";

export interface OnnxTensor {
    name: string;
    dims: number[];
    dataType: number; // onnx TensorProto.DataType; 1 = FLOAT
    floats: number[];
}

export interface OnnxAttribute {
    name: string;
    i?: bigint;
    f?: number;
    s?: string;
    ints?: bigint[];
}

export interface OnnxNode {
    name: string;
    opType: string;
    inputs: string[];
    outputs: string[];
    attrs: Map<string, OnnxAttribute>;
}

export interface OnnxValueInfo {
    name: string;
    dims: number[];
}

export interface OnnxGraph {
    name: string;
    nodes: OnnxNode[];
    initializers: Map<string, OnnxTensor>;
    inputs: OnnxValueInfo[];
    outputs: OnnxValueInfo[];
}

export interface OnnxModel {
    irVersion: bigint;
    opsetVersion: bigint;
    graph: OnnxGraph;
}

const FLOAT = 1;

function parseTensor(buf: Uint8Array): OnnxTensor {
    const t: OnnxTensor = { name: "", dims: [], dataType: 0, floats: [] };
    let raw: Uint8Array | null = null;
    eachField(buf, (f: Field) => {
        switch (f.num) {
            case 1:
                if (f.wire === 0) t.dims.push(Number(asInt64(f.varint)));
                else for (const v of packedVarints(f.bytes)) {
                    t.dims.push(Number(asInt64(v)));
                }
                break;
            case 2:
                t.dataType = Number(f.varint);
                break;
            case 4:
                if (f.wire === 2) t.floats = t.floats.concat(packedFloats(f.bytes));
                else t.floats.push(float32At(f.bytes, 0));
                break;
            case 8:
                t.name = utf8(f.bytes);
                break;
            case 9:
                raw = f.bytes;
                break;
            default:
                break;
        }
    });
    if (raw !== null && t.dataType === FLOAT) {
        t.floats = packedFloats(raw);
    }
    return t;
}

function parseAttribute(buf: Uint8Array): OnnxAttribute {
    const a: OnnxAttribute = { name: "" };
    eachField(buf, (f) => {
        switch (f.num) {
            case 1:
                a.name = utf8(f.bytes);
                break;
            case 2:
                a.f = float32At(f.bytes, 0);
                break;
            case 3:
                a.i = asInt64(f.varint);
                break;
            case 4:
                a.s = utf8(f.bytes);
                break;
            case 8:
                if (f.wire === 0) (a.ints ??= []).push(asInt64(f.varint));
                else (a.ints ??= []).push(...packedVarints(f.bytes).map(asInt64));
                break;
            default:
                break;
        }
    });
    return a;
}

function parseNode(buf: Uint8Array): OnnxNode {
    const n: OnnxNode = {
        name: "", opType: "", inputs: [], outputs: [], attrs: new Map(),
    };
    eachField(buf, (f) => {
        switch (f.num) {
            case 1:
                n.inputs.push(utf8(f.bytes));
                break;
            case 2:
                n.outputs.push(utf8(f.bytes));
                break;
            case 3:
                n.name = utf8(f.bytes);
                break;
            case 4:
                n.opType = utf8(f.bytes);
                break;
            case 5: {
                const a = parseAttribute(f.bytes);
                n.attrs.set(a.name, a);
                break;
            }
            default:
                break;
        }
    });
    return n;
}

function parseValueInfo(buf: Uint8Array): OnnxValueInfo {
    const vi: OnnxValueInfo = { name: "", dims: [] };
    eachField(buf, (f) => {
        if (f.num === 1) vi.name = utf8(f.bytes);
        else if (f.num === 2) {
            eachField(f.bytes, (tf) => {
                if (tf.num !== 1) return; // tensor_type
                eachField(tf.bytes, (tt) => {
                    if (tt.num !== 2) return; // shape
                    eachField(tt.bytes, (sh) => {
                        if (sh.num !== 1) return; // dim
                        let value = 0;
                        eachField(sh.bytes, (d) => {
                            if (d.num === 1) value = Number(asInt64(d.varint));
                        });
                        vi.dims.push(value);
                    });
                });
            });
        }
    });
    return vi;
}

function parseGraph(buf: Uint8Array): OnnxGraph {
    const g: OnnxGraph = {
        name: "", nodes: [], initializers: new Map(), inputs: [], outputs: [],
    };
    eachField(buf, (f) => {
        switch (f.num) {
            case 1:
                g.nodes.push(parseNode(f.bytes));
                break;
            case 2:
                g.name = utf8(f.bytes);
                break;
            case 5: {
                const t = parseTensor(f.bytes);
                g.initializers.set(t.name, t);
                break;
            }
            case 11:
                g.inputs.push(parseValueInfo(f.bytes));
                break;
            case 12:
                g.outputs.push(parseValueInfo(f.bytes));
                break;
            default:
                break;
        }
    });
    return g;
}

export function parseModel(buf: Uint8Array): OnnxModel {
    let graph: OnnxGraph | null = null;
    let irVersion = 0n;
    let opsetVersion = 0n;
    eachField(buf, (f) => {
        if (f.num === 1) irVersion = f.varint;
        else if (f.num === 7) graph = parseGraph(f.bytes);
        else if (f.num === 8) {
            eachField(f.bytes, (o) => {
                if (o.num === 2) opsetVersion = o.varint;
            });
        }
    });
    if (!graph) throw new ProtoError("model has no graph");
    return { irVersion, opsetVersion, graph };
}

export function attrInt(node: OnnxNode, name: string, dflt: number): number {
    const a = node.attrs.get(name);
    return a?.i !== undefined ? Number(a.i) : dflt;
}

export function attrInts(node: OnnxNode, name: string): number[] | null {
    const a = node.attrs.get(name);
    return a?.ints ? a.ints.map(Number) : null;
}
