#!/usr/bin/env node
/**
 * onnx2ir <model.onnx> --precisions <config.json> --out <model.json>
 *                      [--report <report.json>]
 *
 * Exit codes mirror the simulator CLI: nonzero with one line
 * `ERROR <code>: <message>` on stderr.
 */

import { readFileSync, writeFileSync } from "node:fs";
import process from "node:process";

import { parseModel } from "./onnx.js";
import { ConvertConfig, convert } from "./convert.js";
import { canonicalJson, serializeModel } from "./ir.js";

function parseArgs(argv: string[]) {
    const args = { model: "", precisions: "", out: "", report: "" };
    const positional: string[] = [];
    for (let i = 0; i < argv.length; i++) {
        const a = argv[i];
        if (a === "--precisions") args.precisions = argv[++i] ?? "";
        else if (a === "--out") args.out = argv[++i] ?? "";
        else if (a === "--report") args.report = argv[++i] ?? "";
        else positional.push(a);
    }
    args.model = positional[0] ?? "";
    if (!args.model || !args.precisions || !args.out) {
        throw new Error(
            "usage: onnx2ir <model.onnx> --precisions <config.json> " +
            "--out <model.json> [--report <report.json>]");
    }
    return args;
}

export function main(argv: string[]): number {
    try {
        const args = parseArgs(argv);
        const cfg = JSON.parse(
            readFileSync(args.precisions, "utf-8")) as ConvertConfig;
        const model = parseModel(new Uint8Array(readFileSync(args.model)));
        const { doc, report } = convert(model, cfg);
        writeFileSync(args.out, serializeModel(doc));
        if (args.report) {
            writeFileSync(args.report, canonicalJson(report) + "\n");
        }
        console.log(
            `converted ${args.model}: ${report.mapped.length} layer(s) ` +
            `mapped, ${report.host.length} host-executed, ` +
            `${report.skipped.length} skipped -> ${args.out}`);
        return 0;
    } catch (err) {
        const name = err instanceof Error ? err.constructor.name : "Error";
        const msg = err instanceof Error ? err.message : String(err);
        process.stderr.write(`ERROR ${name}: ${msg}\n`);
        return 1;
    }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
    process.exit(main(process.argv.slice(2)));
}
