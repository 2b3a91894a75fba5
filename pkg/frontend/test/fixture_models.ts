/** Deterministic in-memory builders for the ONNX test fixtures. */

import { Writer } from "../src/proto.js";
import { ConvertConfig } from "../src/convert.js";

const FLOAT = 1;

function tensorValueInfo(w: Writer, field: number, name: string,
                         dims: number[]): void {
    w.messageField(field, (vi) => {
        vi.stringField(1, name);
        vi.messageField(2, (tp) => {
            tp.messageField(1, (tt) => {
                tt.varintField(1, FLOAT);
                tt.messageField(2, (sh) => {
                    for (const d of dims) {
                        sh.messageField(1, (dim) => dim.varintField(1, d));
                    }
                });
            });
        });
    });
}

function initializer(w: Writer, name: string, dims: number[],
                     floats: number[]): void {
    w.messageField(5, (t) => {
        for (const d of dims) t.varintField(1, d);
        t.varintField(2, FLOAT);
        t.stringField(8, name);
        t.floatsPacked(4, floats);
    });
}

interface NodeSpec {
    opType: string;
    name: string;
    inputs: string[];
    outputs: string[];
    attrs?: { name: string; i?: number; ints?: number[] }[];
}

function node(w: Writer, spec: NodeSpec): void {
    w.messageField(1, (n) => {
        for (const i of spec.inputs) n.stringField(1, i);
        for (const o of spec.outputs) n.stringField(2, o);
        n.stringField(3, spec.name);
        n.stringField(4, spec.opType);
        for (const a of spec.attrs ?? []) {
            n.messageField(5, (at) => {
                at.stringField(1, a.name);
                if (a.i !== undefined) {
                    at.varintField(3, a.i);
                    at.varintField(20, 2); // AttributeProto.INT
                }
                if (a.ints !== undefined) {
                    for (const v of a.ints) at.varintField(8, v);
                    at.varintField(20, 7); // AttributeProto.INTS
                }
            });
        }
    });
}

function model(buildGraph: (g: Writer) => void, graphName: string): Uint8Array {
    const w = new Writer();
    w.varintField(1, 8); // ir_version
    w.messageField(8, (o) => {
        o.stringField(1, "");
        o.varintField(2, 17); // opset
    });
    w.messageField(7, (g) => {
        g.stringField(2, graphName);
        buildGraph(g);
    });
    return w.finish();
}

/** Small deterministic float pattern on a quarter-integer grid. */
export function patternFloats(n: number, seed: number): number[] {
    const out: number[] = [];
    let x = seed >>> 0;
    for (let i = 0; i < n; i++) {
        x = (x * 1103515245 + 12345) >>> 0;
        out.push((((x >>> 16) % 13) - 6) * 0.25);
    }
    return out;
}

function convAttrs(stride: number, pad: number, k: number) {
    return [
        { name: "kernel_shape", ints: [k, k] },
        { name: "strides", ints: [stride, stride] },
        { name: "pads", ints: [pad, pad, pad, pad] },
        { name: "dilations", ints: [1, 1] },
        { name: "group", i: 1 },
    ];
}

/** conv(16->16, 3x3, pad 1) + relu, twice: two fused LayerIR entries. */
export function buildToyConvRelu(): Uint8Array {
    return model((g) => {
        node(g, {
            opType: "Conv", name: "conv1",
            inputs: ["input", "conv1.w", "conv1.b"], outputs: ["c1"],
            attrs: convAttrs(1, 1, 3),
        });
        node(g, { opType: "Relu", name: "relu1", inputs: ["c1"], outputs: ["r1"] });
        node(g, {
            opType: "Conv", name: "conv2",
            inputs: ["r1", "conv2.w", "conv2.b"], outputs: ["c2"],
            attrs: convAttrs(1, 1, 3),
        });
        node(g, { opType: "Relu", name: "relu2", inputs: ["c2"], outputs: ["out"] });
        initializer(g, "conv1.w", [16, 16, 3, 3], patternFloats(16 * 16 * 9, 11));
        initializer(g, "conv1.b", [16], patternFloats(16, 12));
        initializer(g, "conv2.w", [16, 16, 3, 3], patternFloats(16 * 16 * 9, 13));
        initializer(g, "conv2.b", [16], patternFloats(16, 14));
        tensorValueInfo(g, 11, "input", [1, 16, 8, 8]);
        tensorValueInfo(g, 12, "out", [1, 16, 8, 8]);
    }, "toy_conv_relu");
}

/** conv -> relu -> maxpool -> flatten -> gemm: pooling, folding, matrices. */
export function buildToyCnn(): Uint8Array {
    return model((g) => {
        node(g, {
            opType: "Conv", name: "conv1",
            inputs: ["input", "conv1.w", "conv1.b"], outputs: ["c1"],
            attrs: convAttrs(1, 1, 3),
        });
        node(g, { opType: "Relu", name: "relu1", inputs: ["c1"], outputs: ["r1"] });
        node(g, {
            opType: "MaxPool", name: "pool1", inputs: ["r1"], outputs: ["p1"],
            attrs: [
                { name: "kernel_shape", ints: [2, 2] },
                { name: "strides", ints: [2, 2] },
            ],
        });
        node(g, { opType: "Flatten", name: "flat", inputs: ["p1"],
                  outputs: ["f1"], attrs: [{ name: "axis", i: 1 }] });
        node(g, {
            opType: "Gemm", name: "fc",
            inputs: ["f1", "fc.w", "fc.b"], outputs: ["out"],
            attrs: [{ name: "transB", i: 1 }],
        });
        initializer(g, "conv1.w", [32, 16, 3, 3], patternFloats(32 * 16 * 9, 21));
        initializer(g, "conv1.b", [32], patternFloats(32, 22));
        // After pooling: 32 channels x 4 x 4 = 512 inputs to the gemm.
        initializer(g, "fc.w", [10, 512], patternFloats(10 * 512, 23));
        initializer(g, "fc.b", [10], patternFloats(10, 24));
        tensorValueInfo(g, 11, "input", [1, 16, 8, 8]);
        tensorValueInfo(g, 12, "out", [1, 10]);
    }, "toy_cnn");
}

/** conv + residual Add: rejected as NonLinearTopology. */
export function buildResidual(): Uint8Array {
    return model((g) => {
        node(g, {
            opType: "Conv", name: "conv1",
            inputs: ["input", "conv1.w"], outputs: ["c1"],
            attrs: convAttrs(1, 1, 3),
        });
        node(g, { opType: "Add", name: "add1",
                  inputs: ["c1", "input"], outputs: ["s1"] });
        node(g, { opType: "Relu", name: "relu1", inputs: ["s1"], outputs: ["out"] });
        initializer(g, "conv1.w", [16, 16, 3, 3], patternFloats(16 * 16 * 9, 31));
        tensorValueInfo(g, 11, "input", [1, 16, 8, 8]);
        tensorValueInfo(g, 12, "out", [1, 16, 8, 8]);
    }, "toy_residual");
}

export const toyConvReluConfig: ConvertConfig = {
    model_name: "toy_conv_relu",
    default: {
        a_bits: 2, w_bits: 4, w_signed: true, out_bits: 2,
        w_scale: 0.25, bias_scale: 0.25, scale: 2, quant_msb: 7,
    },
    layers: {
        conv2: { quant_msb: 8 },
    },
};

export const toyCnnConfig: ConvertConfig = {
    model_name: "toy_cnn",
    host_layers: ["fc"],
    default: {
        a_bits: 2, w_bits: 4, w_signed: true, out_bits: 2,
        w_scale: 0.25, bias_scale: 0.25, scale: 2, quant_msb: 7,
    },
    layers: {
        pool1: { a_bits: 2, out_bits: 2 },
    },
};

/** The stride-downsampling 8-conv CIFAR geometry plus host-run edges. */
export function buildResnet9Shaped(): Uint8Array {
    const geometry: [number, number, number][] = [
        [64, 64, 1], [64, 64, 1], [64, 128, 2], [128, 128, 1],
        [128, 256, 2], [256, 256, 1], [256, 512, 2], [512, 512, 1],
    ];
    return model((g) => {
        node(g, {
            opType: "Conv", name: "conv0",
            inputs: ["input", "conv0.w"], outputs: ["t0"],
            attrs: convAttrs(1, 1, 3),
        });
        let prev = "t0";
        geometry.forEach(([ci, co, s], i) => {
            const name = `conv${i + 1}`;
            node(g, {
                opType: "Conv", name,
                inputs: [prev, `${name}.w`], outputs: [`t${i + 1}`],
                attrs: convAttrs(s, 1, 3),
            });
            prev = `t${i + 1}`;
        });
        node(g, { opType: "Flatten", name: "flat", inputs: [prev],
                  outputs: ["tf"], attrs: [{ name: "axis", i: 1 }] });
        node(g, {
            opType: "Gemm", name: "fc", inputs: ["tf", "fc.w"],
            outputs: ["out"], attrs: [{ name: "transB", i: 1 }],
        });
        initializer(g, "conv0.w", [64, 3, 3, 3],
                    new Array(64 * 3 * 9).fill(0));
        geometry.forEach(([ci, co], i) => {
            initializer(g, `conv${i + 1}.w`, [co, ci, 3, 3],
                        new Array(co * ci * 9).fill(0));
        });
        initializer(g, "fc.w", [10, 8192], new Array(10 * 8192).fill(0));
        tensorValueInfo(g, 11, "input", [1, 3, 32, 32]);
        tensorValueInfo(g, 12, "out", [1, 10]);
    }, "resnet9_shaped");
}

export const resnet9ShapedConfig: ConvertConfig = {
    model_name: "resnet9_shaped",
    host_layers: ["conv0", "fc"],
    default: {
        a_bits: 2, w_bits: 2, w_signed: true, out_bits: 2,
        w_scale: 1, scale: 1, quant_msb: 9,
    },
};
