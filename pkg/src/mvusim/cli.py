"""Command-line entry points.

Subcommands: ``compile``, ``simulate``, ``estimate``, ``verify``, ``asm``.
Inputs and outputs use the documented formats (FORMATS.md).  Failures exit
nonzero after printing one machine-parseable line ``ERROR <code>: <message>``
to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys


def _fail(exc: Exception) -> int:
    sys.stderr.write(f"ERROR {type(exc).__name__}: {exc}\n")
    return 1


def cmd_compile(args) -> int:
    from .codegen import compile_model, write_dir
    with open(args.model) as f:
        doc = json.load(f)
    cp = compile_model(doc, args.mode)
    write_dir(cp, args.out)
    n_jobs = sum(len(ph.jobs) for ll in cp.lowered for ph in ll.phases)
    print(f"compiled {cp.model.name} [{args.mode}]: "
          f"{len(cp.lowered)} layers, {len(cp.laps)} lap(s), {n_jobs} jobs, "
          f"{cp.total_cycles} MVP cycles -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    from .codegen import load_dir, load_dir_images
    from .perf import CycleReport, _lap_stage_cycles
    from .ramimage import load_tensor, save_tensor
    from .runner import simulate

    cp = load_dir(args.dir)
    images = load_dir_images(args.dir, cp)
    shape, values, prec = load_tensor(args.input)
    if tuple(shape) != tuple(cp.model.input_shape):
        raise ValueError(f"input shape {shape} != model input "
                         f"{cp.model.input_shape}")
    if prec != cp.model.layers[0].prec_a:
        raise ValueError(f"input precision {prec} != model input precision "
                         f"{cp.model.layers[0].prec_a}")
    res = simulate(cp, values, images=images, trace_path=args.trace)
    out_path = args.out or os.path.join(args.dir, "output.bin")
    save_tensor(out_path, res.output_shape, res.output_values,
                cp.model.layers[-1].prec_out)
    cycles = [c for _, c in res.layer_cycles]
    clock = int(cp.model.clock_hz)
    report = CycleReport(
        per_layer=res.layer_cycles, total_cycles=res.total_cycles,
        clock_hz=cp.model.clock_hz,
        fps_pipelined=clock // _lap_stage_cycles(cycles),
        fps_single=clock // res.total_cycles if res.total_cycles else 0)
    report_path = os.path.join(args.dir, "cycle_report.json")
    with open(report_path, "w") as f:
        f.write(report.to_json())
        f.write("\n")
    print(report.to_table())
    print(report.fps_lines())
    print(f"machine cycles: {res.machine_cycles}")
    print(f"output tensor -> {out_path}")
    return 0


def cmd_estimate(args) -> int:
    from .ir import load_model
    from .perf import estimate_model

    model = load_model(args.model)
    clock = args.clock_mhz * 1e6 if args.clock_mhz else None
    report = estimate_model(model, clock)
    if args.json:
        print(report.to_json())
    else:
        print(report.to_table())
        print(report.fps_lines())
    return 0


def cmd_verify(args) -> int:
    from .codegen import compile_model
    from .ir import model_from_dict
    from .modelzoo import random_input
    from .oracle import OracleTensor, oracle_infer
    from .runner import simulate
    from .util import SplitMix64

    with open(args.model) as f:
        doc = json.load(f)
    model = model_from_dict(doc)
    cp = compile_model(doc, args.mode)
    failures = 0
    for trial in range(args.trials):
        trial_seed = SplitMix64(args.seed ^ trial).next_u64()
        inp = random_input(doc, trial_seed)
        res = simulate(cp, inp)
        ref = oracle_infer(model, OracleTensor.from_flat(
            model.input_shape, inp, model.layers[0].prec_a))
        ok = res.output_values == ref.flat()
        print(f"trial {trial}: {'ok' if ok else 'MISMATCH'}")
        if not ok:
            failures += 1
    if failures:
        sys.stderr.write(
            f"ERROR VerificationFailed: {failures}/{args.trials} trials "
            f"mismatched the reference\n")
        return 1
    print(f"verified {model.name}: {args.trials} trial(s) bit-exact")
    return 0


def cmd_asm(args) -> int:
    from .asm import assemble

    with open(args.source) as f:
        img = assemble(f.read())
    with open(args.out, "wb") as f:
        f.write(struct.pack(f"<{len(img.words)}I", *img.words))
    print(f"assembled {args.source} -> {args.out} ({len(img.words)} words)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mvusim",
        description="Bit-serial matrix-vector accelerator simulator & compiler")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="lower a model to a program directory")
    c.add_argument("model")
    c.add_argument("--mode", choices=["pipelined", "distributed"],
                   default="pipelined")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("simulate", help="run a compiled directory")
    s.add_argument("dir")
    s.add_argument("--input", required=True,
                   help="raw int32 tensor (with .json sidecar)")
    s.add_argument("--trace", default=None, help="per-cycle trace log path")
    s.add_argument("--out", default=None, help="output tensor path")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="closed-form cycle/fps estimate")
    e.add_argument("model")
    e.add_argument("--clock-mhz", type=float, default=None)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("verify", help="randomized oracle equivalence")
    v.add_argument("model")
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--trials", type=int, default=1)
    v.add_argument("--mode", choices=["pipelined", "distributed"],
                   default="pipelined")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("asm", help="assemble a controller program")
    a.add_argument("source")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_asm)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
