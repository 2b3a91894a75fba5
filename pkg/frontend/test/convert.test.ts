import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
    NonLinearTopology,
    convert,
    roundHalfEven,
} from "../src/convert.js";
import { serializeModel, validateSchema } from "../src/ir.js";
import { parseModel } from "../src/onnx.js";
import {
    buildResidual,
    buildResnet9Shaped,
    resnet9ShapedConfig,
    toyCnnConfig,
    toyConvReluConfig,
} from "./fixture_models.js";

const DIR = join(__dirname, "fixtures");
const SCHEMA = JSON.parse(readFileSync(
    join(__dirname, "..", "..", "src", "mvusim", "schema",
         "modelir.schema.json"), "utf-8"));

function loadFixture(stem: string) {
    return parseModel(new Uint8Array(readFileSync(join(DIR, `${stem}.onnx`))));
}

describe("rounding", () => {
    it("rounds half to even", () => {
        expect([0.5, 1.5, 2.5, -0.5, -1.5, 3.49, -2.51].map(roundHalfEven))
            .toEqual([0, 2, 2, 0, -2, 3, -3]);
    });
});

describe("toy_conv_relu", () => {
    it("maps two conv layers with fused relu", () => {
        const { doc, report } = convert(loadFixture("toy_conv_relu"),
                                        toyConvReluConfig);
        expect(doc.layers).toHaveLength(2);
        expect(doc.layers.map((l) => l.kind)).toEqual(["conv2d", "conv2d"]);
        expect(doc.layers.every((l) => l.relu)).toBe(true);
        expect(doc.layers[0].input_shape).toEqual([1, 8, 8, 16]);
        expect(report.mapped).toEqual(["conv1+relu1", "conv2+relu2"]);
        expect(report.host).toEqual([]);
    });

    it("matches its golden byte for byte and validates", () => {
        const { doc } = convert(loadFixture("toy_conv_relu"),
                                toyConvReluConfig);
        const text = serializeModel(doc);
        const golden = readFileSync(
            join(DIR, "toy_conv_relu.golden.json"), "utf-8");
        expect(text).toBe(golden);
        validateSchema(JSON.parse(text), SCHEMA);
    });

    it("rounds weights with the configured scale", () => {
        const { doc } = convert(loadFixture("toy_conv_relu"),
                                toyConvReluConfig);
        const weights = doc.layers[0].weights as number[];
        expect(weights).toHaveLength(16 * 16 * 9);
        // pattern floats are k*0.25 with |k| <= 6; w_scale 0.25 recovers k
        expect(Math.max(...weights)).toBeLessThanOrEqual(6);
        expect(Math.min(...weights)).toBeGreaterThanOrEqual(-6);
        expect(weights.some((w) => w !== 0)).toBe(true);
    });
});

describe("toy_cnn", () => {
    it("maps conv and pool, folds flatten, hosts the gemm", () => {
        const { doc, report } = convert(loadFixture("toy_cnn"), toyCnnConfig);
        expect(doc.layers.map((l) => l.kind)).toEqual(["conv2d", "maxpool"]);
        expect(doc.layers[1].input_shape).toEqual([1, 8, 8, 32]);
        expect(doc.layers[1].output_shape).toEqual([1, 4, 4, 32]);
        expect(report.skipped).toEqual([
            { node: "flat", reason: "shape-only operation folded away" },
        ]);
        expect(report.host).toEqual(["fc"]);
    });

    it("matches its golden and validates", () => {
        const { doc } = convert(loadFixture("toy_cnn"), toyCnnConfig);
        const text = serializeModel(doc);
        expect(text).toBe(
            readFileSync(join(DIR, "toy_cnn.golden.json"), "utf-8"));
        validateSchema(JSON.parse(text), SCHEMA);
    });
});

describe("residual topology", () => {
    it("is rejected as NonLinearTopology", () => {
        expect(() => convert(parseModel(buildResidual()), toyConvReluConfig))
            .toThrow(NonLinearTopology);
        expect(() => convert(loadFixture("toy_residual"), toyConvReluConfig))
            .toThrow(NonLinearTopology);
    });
});

describe("resnet9-shaped plain CNN", () => {
    it("maps 8 quantized convs and hosts the first/last layers", () => {
        const { doc, report } = convert(parseModel(buildResnet9Shaped()),
                                        resnet9ShapedConfig);
        expect(report.host).toEqual(["conv0", "fc"]);
        expect(doc.layers).toHaveLength(8);
        const dims = doc.layers.map(
            (l) => [l.input_shape[3], l.output_shape[3], l.stride]);
        expect(dims).toEqual([
            [64, 64, 1], [64, 64, 1], [64, 128, 2], [128, 128, 1],
            [128, 256, 2], [256, 256, 1], [256, 512, 2], [512, 512, 1],
        ]);
        expect(doc.layers[0].input_shape).toEqual([1, 32, 32, 64]);
        expect(doc.layers[7].output_shape).toEqual([1, 4, 4, 512]);
        validateSchema(JSON.parse(serializeModel(doc)), SCHEMA);
    });
});
