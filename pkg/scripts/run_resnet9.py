#!/usr/bin/env python3
"""End-to-end demo: estimate, compile, simulate and cross-check ResNet9.

Reproduces the calibrated per-layer cycle counts (34560, 34560, 17280,
32256, 16128, 27648, 13824, 18432; total 194688) from both the closed-form
estimator and the full machine simulation, and checks the simulated output
bit-exactly against the reference semantics.
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mvusim import modelzoo
from mvusim.codegen import compile_model
from mvusim.ir import model_from_dict
from mvusim.oracle import OracleTensor, oracle_infer
from mvusim.perf import estimate_model
from mvusim.runner import simulate


def main() -> int:
    doc = modelzoo.resnet9()
    model = model_from_dict(doc)
    report = estimate_model(model)
    print(report.to_table())

    t0 = time.time()
    cp = compile_model(doc, "pipelined")
    print(f"\ncompiled in {time.time() - t0:.1f}s "
          f"({sum(len(p.jobs) for ll in cp.lowered for p in ll.phases)} jobs)")

    inp = modelzoo.random_input(doc, seed=2024)
    t0 = time.time()
    res = simulate(cp, inp)
    print(f"simulated in {time.time() - t0:.1f}s "
          f"({res.machine_cycles} machine cycles)")
    for (name, cycles), (_, est) in zip(res.layer_cycles, report.per_layer):
        marker = "ok" if cycles == est else "MISMATCH"
        print(f"  {name}: {cycles} ({marker})")

    ref = oracle_infer(model, OracleTensor.from_flat(
        model.input_shape, inp, model.layers[0].prec_a))
    if res.output_values == ref.flat():
        print("output matches the reference bit-exactly")
        return 0
    print("OUTPUT MISMATCH")
    return 1


if __name__ == "__main__":
    sys.exit(main())
