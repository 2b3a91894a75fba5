import { describe, expect, it } from "vitest";

import {
    Reader,
    Writer,
    asInt64,
    packedFloats,
    packedVarints,
    utf8,
} from "../src/proto.js";
import { attrInt, attrInts, parseModel } from "../src/onnx.js";
import { buildToyConvRelu } from "./fixture_models.js";

describe("wire format", () => {
    it("round-trips varints", () => {
        for (const v of [0n, 1n, 127n, 128n, 300n, 2n ** 32n, 2n ** 63n,
                         (2n ** 64n) - 1n]) {
            const w = new Writer().varint(v);
            expect(new Reader(w.finish()).varint()).toBe(v);
        }
    });

    it("encodes negative int64 as two's complement", () => {
        const w = new Writer().varint(-3);
        expect(asInt64(new Reader(w.finish()).varint())).toBe(-3n);
    });

    it("round-trips length-delimited fields", () => {
        const w = new Writer().stringField(4, "MaxPool").varintField(2, 17);
        const r = new Reader(w.finish());
        const f1 = r.field();
        expect([f1.num, utf8(f1.bytes)]).toEqual([4, "MaxPool"]);
        const f2 = r.field();
        expect([f2.num, f2.varint]).toEqual([2, 17n]);
        expect(r.done).toBe(true);
    });

    it("round-trips packed floats", () => {
        const vals = [0.25, -1.5, 3.0, 0];
        const w = new Writer().floatsPacked(4, vals);
        const f = new Reader(w.finish()).field();
        expect(packedFloats(f.bytes)).toEqual(vals);
    });

    it("parses packed varint lists", () => {
        const inner = new Writer().varint(5).varint(300);
        const w = new Writer().bytesField(8, inner.finish());
        expect(packedVarints(new Reader(w.finish()).field().bytes))
            .toEqual([5n, 300n]);
    });
});

describe("onnx decoding", () => {
    it("parses the toy model structure", () => {
        const model = parseModel(buildToyConvRelu());
        expect(model.graph.name).toBe("toy_conv_relu");
        expect(model.graph.nodes.map((n) => n.opType))
            .toEqual(["Conv", "Relu", "Conv", "Relu"]);
        const conv = model.graph.nodes[0];
        expect(attrInts(conv, "strides")).toEqual([1, 1]);
        expect(attrInts(conv, "pads")).toEqual([1, 1, 1, 1]);
        expect(attrInt(conv, "group", 1)).toBe(1);
        const w = model.graph.initializers.get("conv1.w")!;
        expect(w.dims).toEqual([16, 16, 3, 3]);
        expect(w.floats).toHaveLength(16 * 16 * 9);
        expect(model.graph.inputs[0].dims).toEqual([1, 16, 8, 8]);
    });
});
