/** The checked-in binary fixtures must equal the deterministic builders.
 * Set REGEN_FIXTURES=1 to (re)write them along with configs and goldens. */

import { mkdirSync, existsSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { canonicalJson, serializeModel } from "../src/ir.js";
import { parseModel } from "../src/onnx.js";
import { convert } from "../src/convert.js";
import {
    buildResidual,
    buildToyConvRelu,
    buildToyCnn,
    toyCnnConfig,
    toyConvReluConfig,
} from "./fixture_models.js";

const DIR = join(__dirname, "fixtures");

const FIXTURES: [string, () => Uint8Array][] = [
    ["toy_conv_relu.onnx", buildToyConvRelu],
    ["toy_cnn.onnx", buildToyCnn],
    ["toy_residual.onnx", buildResidual],
];

describe("fixtures", () => {
    it("regenerates when requested", () => {
        if (!process.env.REGEN_FIXTURES) return;
        mkdirSync(DIR, { recursive: true });
        for (const [name, build] of FIXTURES) {
            writeFileSync(join(DIR, name), build());
        }
        writeFileSync(join(DIR, "toy_conv_relu.config.json"),
                      canonicalJson(toyConvReluConfig) + "\n");
        writeFileSync(join(DIR, "toy_cnn.config.json"),
                      canonicalJson(toyCnnConfig) + "\n");
        for (const [stem, cfg] of [
            ["toy_conv_relu", toyConvReluConfig],
            ["toy_cnn", toyCnnConfig],
        ] as const) {
            const model = parseModel(
                new Uint8Array(readFileSync(join(DIR, `${stem}.onnx`))));
            const { doc, report } = convert(model, cfg);
            writeFileSync(join(DIR, `${stem}.golden.json`),
                          serializeModel(doc));
            writeFileSync(join(DIR, `${stem}.report.json`),
                          canonicalJson(report) + "\n");
        }
    });

    it("checked-in binaries match the builders byte for byte", () => {
        for (const [name, build] of FIXTURES) {
            const path = join(DIR, name);
            expect(existsSync(path), `${name} missing; run REGEN_FIXTURES=1`)
                .toBe(true);
            expect(Buffer.from(build()).equals(readFileSync(path)),
                   name).toBe(true);
        }
    });
});
