/**
 * ONNX graph -> ModelIR conversion.
 *
 * Supported: a linear chain of Conv / Gemm / MatMul / MaxPool(2x2,s2) /
 * Relu nodes over static shapes, NCHW activations, float initializers.
 * Quantization comes entirely from the supplied config (weight scales,
 * scaler values, quantizer windows); nothing is inferred from data.
 * Flatten nodes are folded into shape bookkeeping and reported as skipped.
 */

import { OnnxModel, OnnxNode, OnnxTensor, attrInt, attrInts } from "./onnx.js";
import { LayerJSON, ModelJSON, PrecisionJSON } from "./ir.js";

export class ConversionError extends Error {}
export class UnsupportedNode extends ConversionError {
    constructor(node: string, opType: string, detail = "") {
        super(`node ${node}: unsupported ${opType}` +
            (detail ? ` (${detail})` : ""));
    }
}
export class NonLinearTopology extends ConversionError {}
export class BadQuantConfig extends ConversionError {}

export interface LayerQuantConfig {
    a_bits: number;
    a_signed?: boolean;
    w_bits?: number;
    w_signed?: boolean;
    out_bits: number;
    out_signed?: boolean;
    w_scale?: number;      // float divisor for weight rounding
    bias_scale?: number;   // float divisor for bias rounding
    scale?: number;        // 16-bit scaler operand (broadcast)
    quant_msb?: number;
}

export interface ConvertConfig {
    model_name?: string;
    clock_hz?: number;
    host_layers?: string[];
    default?: Partial<LayerQuantConfig>;
    layers?: Record<string, Partial<LayerQuantConfig>>;
}

export interface ConversionReport {
    model: string;
    mapped: string[];
    skipped: { node: string; reason: string }[];
    host: string[];
}

/** Round half to even, the fixed rounding rule for operand quantization. */
export function roundHalfEven(x: number): number {
    const floor = Math.floor(x);
    const diff = x - floor;
    if (diff > 0.5) return floor + 1;
    if (diff < 0.5) return floor;
    return floor % 2 === 0 ? floor : floor + 1;
}

function precRange(p: PrecisionJSON): [number, number] {
    return p.signed
        ? [-(2 ** (p.bits - 1)), 2 ** (p.bits - 1) - 1]
        : [0, 2 ** p.bits - 1];
}

function quantizeArray(values: number[], divisor: number, prec: PrecisionJSON,
                       what: string): number[] {
    const [lo, hi] = precRange(prec);
    return values.map((v) => {
        const q = roundHalfEven(v / divisor);
        if (q < lo || q > hi) {
            throw new BadQuantConfig(
                `${what}: ${v} quantizes to ${q}, outside ` +
                `${prec.signed ? "s" : "u"}${prec.bits} range`);
        }
        return q;
    });
}

function layerConfig(cfg: ConvertConfig, name: string): LayerQuantConfig {
    const merged = { ...(cfg.default ?? {}), ...(cfg.layers?.[name] ?? {}) };
    if (merged.a_bits === undefined || merged.out_bits === undefined) {
        throw new BadQuantConfig(
            `layer ${name}: a_bits and out_bits must be configured`);
    }
    return merged as LayerQuantConfig;
}

function nchwToNhwc(dims: number[]): number[] {
    if (dims.length === 4) return [dims[0], dims[2], dims[3], dims[1]];
    if (dims.length === 2) return [dims[0], 1, 1, dims[1]];
    throw new ConversionError(`unsupported tensor rank ${dims.length}`);
}

interface ChainEntry {
    node: OnnxNode;
    dataInput: string;
}

function orderChain(model: OnnxModel): { chain: ChainEntry[]; entry: string } {
    const g = model.graph;
    const inits = g.initializers;
    const consumers = new Map<string, OnnxNode[]>();
    for (const node of g.nodes) {
        for (const input of node.inputs) {
            if (inits.has(input) || input === "") continue;
            const list = consumers.get(input) ?? [];
            list.push(node);
            consumers.set(input, list);
        }
    }
    const graphInputs = g.inputs.filter((vi) => !inits.has(vi.name));
    if (graphInputs.length !== 1) {
        throw new NonLinearTopology(
            `expected one graph input, found ${graphInputs.length}`);
    }
    const chain: ChainEntry[] = [];
    let tensor = graphInputs[0].name;
    const visited = new Set<string>();
    while (true) {
        const next = consumers.get(tensor) ?? [];
        if (next.length === 0) break;
        if (next.length > 1) {
            throw new NonLinearTopology(
                `tensor ${tensor} feeds ${next.length} nodes`);
        }
        const node = next[0];
        if (visited.has(node.name)) {
            throw new NonLinearTopology(`cycle through node ${node.name}`);
        }
        const dataInputs = node.inputs.filter(
            (i) => i !== "" && !inits.has(i));
        if (dataInputs.length !== 1) {
            throw new NonLinearTopology(
                `node ${node.name} (${node.opType}) consumes ` +
                `${dataInputs.length} activation tensors`);
        }
        visited.add(node.name);
        chain.push({ node, dataInput: tensor });
        if (node.outputs.length !== 1) {
            throw new NonLinearTopology(
                `node ${node.name} produces ${node.outputs.length} tensors`);
        }
        tensor = node.outputs[0];
    }
    if (visited.size !== g.nodes.length) {
        const dangling = g.nodes.filter((n) => !visited.has(n.name))
            .map((n) => n.name);
        throw new NonLinearTopology(
            `nodes outside the input chain: ${dangling.join(", ")}`);
    }
    return { chain, entry: graphInputs[0].name };
}

function weightsOf(model: OnnxModel, node: OnnxNode, index: number): OnnxTensor {
    const name = node.inputs[index];
    const t = model.graph.initializers.get(name ?? "");
    if (!t) {
        throw new UnsupportedNode(node.name, node.opType,
            `input ${index} is not an initializer`);
    }
    return t;
}

function precOf(bits: number | undefined, signed: boolean | undefined,
                dfltSigned: boolean): PrecisionJSON {
    if (bits === undefined) throw new BadQuantConfig("missing bit width");
    return { bits, signed: signed ?? dfltSigned };
}

export function convert(model: OnnxModel, cfg: ConvertConfig):
        { doc: ModelJSON; report: ConversionReport } {
    const { chain } = orderChain(model);
    const host = new Set(cfg.host_layers ?? []);
    const report: ConversionReport = {
        model: cfg.model_name ?? model.graph.name ?? "model",
        mapped: [], skipped: [], host: [],
    };
    const layers: LayerJSON[] = [];
    let shape = nchwToNhwc(model.graph.inputs
        .filter((vi) => !model.graph.initializers.has(vi.name))[0].dims);

    for (let i = 0; i < chain.length; i++) {
        const { node } = chain[i];
        const op = node.opType;
        if (host.has(node.name)) {
            report.host.push(node.name);
            shape = hostShape(model, node, shape);
            continue;
        }
        if (op === "Relu") {
            const prev = layers[layers.length - 1];
            if (prev && prev.output_shape.join() === shape.join() &&
                    !prev.relu && prev.kind !== "maxpool") {
                prev.relu = true;
                report.mapped[report.mapped.length - 1] += `+${node.name}`;
                continue;
            }
            const lc = layerConfig(cfg, node.name);
            const pa = precOf(lc.a_bits, lc.a_signed, false);
            layers.push({
                name: node.name, kind: "relu",
                input_shape: shape, output_shape: shape,
                prec_a: pa,
                prec_out: precOf(lc.out_bits, lc.out_signed, false),
                quant_msb: lc.out_bits - 1, relu: true,
            });
            report.mapped.push(node.name);
            continue;
        }
        if (op === "Flatten") {
            const n = shape[0];
            shape = [n, 1, 1, shape[1] * shape[2] * shape[3]];
            report.skipped.push({
                node: node.name, reason: "shape-only operation folded away",
            });
            continue;
        }
        if (op === "MaxPool") {
            const kernel = attrInts(node, "kernel_shape") ?? [];
            const strides = attrInts(node, "strides") ?? [];
            if (kernel.join() !== "2,2" || strides.join() !== "2,2") {
                throw new UnsupportedNode(node.name, op,
                    "only 2x2 stride-2 pooling");
            }
            const lc = layerConfig(cfg, node.name);
            const out = [shape[0], shape[1] / 2, shape[2] / 2, shape[3]];
            layers.push({
                name: node.name, kind: "maxpool",
                input_shape: shape, output_shape: out,
                prec_a: precOf(lc.a_bits, lc.a_signed, false),
                prec_out: precOf(lc.out_bits, lc.out_signed, false),
                quant_msb: lc.out_bits - 1,
            });
            shape = out;
            report.mapped.push(node.name);
            continue;
        }
        if (op === "Conv") {
            layers.push(convertConv(model, node, shape, cfg));
            shape = layers[layers.length - 1].output_shape;
            report.mapped.push(node.name);
            continue;
        }
        if (op === "Gemm" || op === "MatMul") {
            layers.push(convertGemm(model, node, shape, cfg));
            shape = layers[layers.length - 1].output_shape;
            report.mapped.push(node.name);
            continue;
        }
        throw new UnsupportedNode(node.name, op);
    }

    if (layers.length === 0) {
        throw new ConversionError("no mappable layers after host exclusions");
    }
    for (let i = 1; i < layers.length; i++) {
        const a = layers[i - 1].prec_out;
        const b = layers[i].prec_a;
        if (a.bits !== b.bits || a.signed !== b.signed) {
            throw new BadQuantConfig(
                `${layers[i].name}: input precision does not match ` +
                `${layers[i - 1].name} output`);
        }
    }
    const doc: ModelJSON = {
        version: 1,
        name: report.model,
        clock_hz: cfg.clock_hz ?? 250000000,
        layers,
    };
    return { doc, report };
}

function hostShape(model: OnnxModel, node: OnnxNode,
                   shape: number[]): number[] {
    if (node.opType === "Conv") {
        const w = weightsOf(model, node, 1);
        const s = attrInt(node, "strides", 1);
        const strides = attrInts(node, "strides") ?? [s, s];
        const pads = attrInts(node, "pads") ?? [0, 0, 0, 0];
        const k = w.dims[2];
        const oh = Math.floor((shape[1] + pads[0] + pads[2] - k) / strides[0]) + 1;
        const ow = Math.floor((shape[2] + pads[1] + pads[3] - k) / strides[1]) + 1;
        return [shape[0], oh, ow, w.dims[0]];
    }
    if (node.opType === "Gemm" || node.opType === "MatMul") {
        const w = weightsOf(model, node, 1);
        const rows = node.opType === "MatMul" || attrInt(node, "transB", 0) === 0
            ? w.dims[1] : w.dims[0];
        return [shape[0], 1, 1, rows];
    }
    if (node.opType === "Flatten") {
        return [shape[0], 1, 1, shape[1] * shape[2] * shape[3]];
    }
    return shape;
}

function convertConv(model: OnnxModel, node: OnnxNode, shape: number[],
                     cfg: ConvertConfig): LayerJSON {
    const w = weightsOf(model, node, 1);
    const [cO, cI, kH, kW] = w.dims;
    if (kH !== kW) {
        throw new UnsupportedNode(node.name, "Conv", "non-square kernel");
    }
    if (cI !== shape[3]) {
        throw new ConversionError(
            `${node.name}: kernel C_i ${cI} != input channels ${shape[3]}`);
    }
    const strides = attrInts(node, "strides") ?? [1, 1];
    const pads = attrInts(node, "pads") ?? [0, 0, 0, 0];
    const dil = attrInts(node, "dilations") ?? [1, 1];
    const group = attrInt(node, "group", 1);
    if (strides[0] !== strides[1] || new Set(pads).size > 1 ||
            dil.some((d) => d !== 1) || group !== 1) {
        throw new UnsupportedNode(node.name, "Conv",
            "needs uniform stride/padding, dilation 1, group 1");
    }
    const lc = layerConfig(cfg, node.name);
    const pw = precOf(lc.w_bits, lc.w_signed, true);
    const wScale = lc.w_scale ?? 1;
    const weights = quantizeArray(w.floats, wScale, pw, `${node.name}.weights`);
    const biasT = node.inputs.length > 2
        ? model.graph.initializers.get(node.inputs[2]) : undefined;
    const biasPrec: PrecisionJSON = { bits: 32, signed: true };
    const bias = biasT
        ? quantizeArray(biasT.floats, lc.bias_scale ?? 1, biasPrec,
                        `${node.name}.bias`)
        : new Array<number>(cO).fill(0);
    const s = strides[0];
    const p = pads[0];
    const oh = Math.floor((shape[1] + 2 * p - kH) / s) + 1;
    const ow = Math.floor((shape[2] + 2 * p - kW) / s) + 1;
    if (lc.quant_msb === undefined) {
        throw new BadQuantConfig(`${node.name}: quant_msb must be configured`);
    }
    return {
        name: node.name, kind: "conv2d",
        input_shape: shape, output_shape: [shape[0], oh, ow, cO],
        kernel: [cO, cI, kH, kW], stride: s, padding: p,
        prec_a: precOf(lc.a_bits, lc.a_signed, false),
        prec_w: pw,
        prec_out: precOf(lc.out_bits, lc.out_signed, false),
        weights, scale: lc.scale ?? 1, bias,
        quant_msb: lc.quant_msb, relu: false,
    };
}

function convertGemm(model: OnnxModel, node: OnnxNode, shape: number[],
                     cfg: ConvertConfig): LayerJSON {
    if (node.opType === "Gemm") {
        const alpha = node.attrs.get("alpha")?.f ?? 1;
        const beta = node.attrs.get("beta")?.f ?? 1;
        const transA = attrInt(node, "transA", 0);
        if (alpha !== 1 || beta !== 1 || transA !== 0) {
            throw new UnsupportedNode(node.name, "Gemm",
                "needs alpha=beta=1, transA=0");
        }
    }
    const w = weightsOf(model, node, 1);
    const transB = node.opType === "Gemm" ? attrInt(node, "transB", 0) : 0;
    const [rows, cols] = transB ? w.dims : [w.dims[1], w.dims[0]];
    if (shape[1] !== 1 || shape[2] !== 1 || shape[3] !== cols) {
        throw new ConversionError(
            `${node.name}: expects a flat ${cols}-vector input, ` +
            `got ${JSON.stringify(shape)}`);
    }
    const lc = layerConfig(cfg, node.name);
    const pw = precOf(lc.w_bits, lc.w_signed, true);
    const flat: number[] = new Array(rows * cols);
    for (let r = 0; r < rows; r++) {
        for (let c = 0; c < cols; c++) {
            flat[r * cols + c] = transB
                ? w.floats[r * cols + c] : w.floats[c * rows + r];
        }
    }
    const weights = quantizeArray(flat, lc.w_scale ?? 1, pw,
                                  `${node.name}.weights`);
    const biasT = node.opType === "Gemm" && node.inputs.length > 2
        ? model.graph.initializers.get(node.inputs[2]) : undefined;
    const bias = biasT
        ? quantizeArray(biasT.floats, lc.bias_scale ?? 1,
                        { bits: 32, signed: true }, `${node.name}.bias`)
        : new Array<number>(rows).fill(0);
    if (lc.quant_msb === undefined) {
        throw new BadQuantConfig(`${node.name}: quant_msb must be configured`);
    }
    return {
        name: node.name, kind: "gemv",
        input_shape: shape, output_shape: [shape[0], 1, 1, rows],
        kernel: [rows, cols],
        prec_a: precOf(lc.a_bits, lc.a_signed, false),
        prec_w: pw,
        prec_out: precOf(lc.out_bits, lc.out_signed, false),
        weights, scale: lc.scale ?? 1, bias,
        quant_msb: lc.quant_msb, relu: false,
    };
}
