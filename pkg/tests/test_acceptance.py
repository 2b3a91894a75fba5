"""Acceptance suite: one test per release criterion, exact tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to get one printed
pass/fail line per criterion alongside the pytest verdicts.
"""

import random
import time

import pytest

from mvusim import modelzoo
from mvusim.bitserial import Precision, bitserial_dot, transpose, untranspose
from mvusim.codegen import compile_model, export_weights, import_weights, tile_and_pad
from mvusim.ir import model_from_dict
from mvusim.mvu import MvuMemories, run_mvp_job
from mvusim.oracle import OracleTensor, oracle_infer
from mvusim.perf import estimate_model, fps_scaling_check
from mvusim.runner import simulate

from rv32_ref import RefCpu
from test_barrel import load_hart0, random_program
from test_mvu import gemv_job

RESNET9_CYCLES = [34560, 34560, 17280, 32256, 16128, 27648, 13824, 18432]
RESNET9_TOTAL = 194688

PRECISION_MATRIX = [(1, 1), (1, 2), (2, 2), (4, 4), (8, 8)]  # (w, a)


def _report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, name


@pytest.fixture(scope="module")
def resnet9_sim():
    doc = modelzoo.resnet9()
    model = model_from_dict(doc)
    cp = compile_model(doc, "pipelined")
    inp = modelzoo.random_input(doc, seed=2024)
    t0 = time.time()
    res = simulate(cp, inp)
    elapsed = time.time() - t0
    ref = oracle_infer(model, OracleTensor.from_flat(
        model.input_shape, inp, model.layers[0].prec_a))
    return model, res, ref, elapsed


class TestResNet9Cycles:
    def test_estimate_matches_paper_exactly(self):
        t0 = time.time()
        report = estimate_model(model_from_dict(modelzoo.resnet9()))
        elapsed = time.time() - t0
        ok = [c for _, c in report.per_layer] == RESNET9_CYCLES and \
            report.total_cycles == RESNET9_TOTAL and elapsed < 60
        _report("resnet9 estimate: per-layer cycles and total 194688", ok,
                f"{elapsed:.1f}s")

    def test_simulation_matches_paper_exactly(self, resnet9_sim):
        _, res, _, elapsed = resnet9_sim
        ok = [c for _, c in res.layer_cycles] == RESNET9_CYCLES and \
            res.total_cycles == RESNET9_TOTAL and elapsed < 600
        _report("resnet9 simulate: per-layer cycles and total 194688", ok,
                f"{elapsed:.1f}s, {res.machine_cycles} machine cycles")

    def test_simulation_matches_oracle(self, resnet9_sim):
        _, res, ref, _ = resnet9_sim
        _report("resnet9 simulate: bit-exact against the reference",
                res.output_values == ref.flat())


class TestTileCostLaw:
    def test_single_tile_cost_is_ba_times_bw(self):
        mem = MvuMemories.create()
        bad = []
        for ba in range(1, 9):
            for bw in range(1, 9):
                job = gemv_job(Precision(ba), Precision(bw), 1, 1)
                _, cycles = run_mvp_job(mem, job)
                if cycles != ba * bw:
                    bad.append((ba, bw, cycles))
        _report("tile cost law: 64x64 GEMV tile costs b_a*b_w for 1..8 squared",
                not bad, f"violations: {bad}" if bad else "64 combinations")


class TestBitSerialExactness:
    def test_randomized_and_exhaustive(self):
        rng = random.Random(0xBEEF)
        mismatches = 0
        trials = 0
        combos = [(ba, bw, sa, sw)
                  for ba in (1, 2, 3, 4, 8, 16)
                  for bw in (1, 2, 3, 4, 8, 16)
                  for sa in (False, True)
                  for sw in (False, True)]
        per_combo = 10000 // len(combos) + 1
        for ba, bw, sa, sw in combos:
            pa, pw = Precision(ba, sa), Precision(bw, sw)
            for _ in range(per_combo):
                xs = [rng.randint(pa.lo, pa.hi) for _ in range(64)]
                ws = [rng.randint(pw.lo, pw.hi) for _ in range(64)]
                got = bitserial_dot(transpose(xs, pa), transpose(ws, pw))
                if got != sum(a * b for a, b in zip(xs, ws)):
                    mismatches += 1
                trials += 1
        # Exhaustive single-lane sweep at 3/3 signed.
        p3 = Precision(3, signed=True)
        for xv in range(-4, 4):
            for wv in range(-4, 4):
                got = bitserial_dot(transpose([xv] + [0] * 63, p3),
                                    transpose([wv] + [0] * 63, p3))
                if got != xv * wv:
                    mismatches += 1
                trials += 1
        _report("bit-serial exactness: >=10k randomized + exhaustive 3/3",
                trials >= 10064 and mismatches == 0,
                f"{trials} cases, {mismatches} mismatches")


class TestEndToEndMatrix:
    def test_oracle_equivalence_matrix(self, resnet9_sim):
        t0 = time.time()
        results = []
        for wb, ab in PRECISION_MATRIX:
            docs = [(d, "pipelined") for d in modelzoo.matrix_models(ab, wb)]
            docs.append((modelzoo.distributed_conv(ab, wb), "distributed"))
            docs.append((modelzoo.distributed_gemv(ab, wb), "distributed"))
            for doc, mode in docs:
                model = model_from_dict(doc)
                inp = modelzoo.random_input(doc, seed=7)
                res = simulate(compile_model(doc, mode), inp)
                ref = oracle_infer(model, OracleTensor.from_flat(
                    model.input_shape, inp, model.layers[0].prec_a))
                results.append((doc["name"], mode,
                                res.output_values == ref.flat()))
        # The fixture already ran ResNet9 bit-exactly; count it in.
        _, res, ref, _ = resnet9_sim
        results.append(("resnet9", "pipelined",
                        res.output_values == ref.flat()))
        lap = modelzoo.lap_chain(10, 2, 2)
        inp = modelzoo.random_input(lap, seed=5)
        res10 = simulate(compile_model(lap, "pipelined"), inp)
        ref10 = oracle_infer(model_from_dict(lap), OracleTensor.from_flat(
            model_from_dict(lap).input_shape, inp, Precision(2)))
        results.append(("gemvlap10", "pipelined",
                        res10.output_values == ref10.flat()))
        elapsed = time.time() - t0
        failed = [(n, m) for n, m, ok in results if not ok]
        _report("end-to-end oracle equivalence matrix",
                len(results) >= 12 and not failed and elapsed < 900,
                f"{len(results)} model runs, {elapsed:.0f}s"
                + (f", failed: {failed}" if failed else ""))


class TestFpsScaling:
    def test_cnv_ratio(self):
        fps = {}
        for wb, ab in [(1, 1), (1, 2), (2, 2)]:
            report = estimate_model(model_from_dict(modelzoo.cnv_like(ab, wb)))
            fps[(wb, ab)] = report.fps_pipelined
        base = fps[(1, 1)]
        ok = (fps[(1, 1)], fps[(1, 2)], fps[(2, 2)]) == (61035, 30517, 15258) \
            and fps_scaling_check(base, 2, 1) == fps[(1, 2)] \
            and fps_scaling_check(base, 2, 2) == fps[(2, 2)]
        _report("fps scaling: 61035 : 30517 : 15258 with exact floor division",
                ok, str(fps))


class TestBarrelSuite:
    def test_conformance_against_reference(self):
        from mvusim.barrel import BarrelCpu, DRAM_BASE
        bad = []
        for seed in range(40):
            rng = random.Random(seed)
            n = 300
            words = random_program(rng, n)
            ref = RefCpu(words)
            ref.run(max_steps=n)
            cpu = BarrelCpu()
            load_hart0(cpu, words)
            steps = 0
            while cpu.pc[0] < n * 4 and steps < n:
                cpu.step_hart(0)
                steps += 1
            if cpu.regs[0] != ref.regs:
                bad.append(seed)
                continue
            if any(cpu.dram[a - DRAM_BASE] != v for a, v in ref.mem.items()):
                bad.append(seed)
        _report("barrel conformance vs independent reference interpreter",
                not bad, f"40 random programs" + (f"; bad {bad}" if bad else ""))

    def test_fairness_over_one_million_cycles(self):
        from mvusim.asm import assemble
        from mvusim.barrel import BarrelCpu
        rng = random.Random(77)
        src_lines = []
        for h in range(8):
            body = rng.choice([
                f"loop{h}: addi x1, x1, 1\n  andi x2, x1, {rng.randrange(1, 16)}\n"
                f"  bnez x2, loop{h}\n  j loop{h}",
                f"loop{h}: addi x3, x3, {rng.randrange(1, 5)}\n"
                f"  slt x4, x3, x5\n  beqz x4, loop{h}\n  j loop{h}",
            ])
            src_lines.append(f".hart {h}\n{body}")
        cpu = BarrelCpu()
        cpu.load_iram(assemble("\n".join(src_lines)).words)
        n = 1_000_000
        t0 = time.time()
        for cyc in range(n):
            cpu.step_hart(cyc % 8)
        elapsed = time.time() - t0
        ok = cpu.retired == [n // 8] * 8
        _report("barrel fairness: one retirement per hart per 8 cycles over 1e6",
                ok, f"{elapsed:.1f}s")


class TestFormatRoundTrips:
    def test_transpose_untranspose_1000(self):
        rng = random.Random(4242)
        bad = 0
        for _ in range(1000):
            prec = Precision(rng.randint(1, 16), rng.random() < 0.5)
            n_blocks = rng.randint(1, 3)
            vec = [rng.randint(prec.lo, prec.hi) for _ in range(64 * n_blocks)]
            if untranspose(transpose(vec, prec)) != vec:
                bad += 1
        _report("format round trip: untranspose(transpose()) on 1000 tensors",
                bad == 0, f"{bad} failures")

    def test_weight_export_round_trip_1000(self):
        rng = random.Random(777)
        bad = 0
        for _ in range(1000):
            if rng.random() < 0.5:
                c_o = rng.choice([64, 96])
                c_i = rng.choice([3, 64])
                k = rng.choice([1, 3])
                bw = rng.randint(1, 8)
                pw = Precision(bw, signed=bw >= 2)
                weights = [rng.randint(pw.lo, pw.hi)
                           for _ in range(c_o * c_i * k * k)]
                doc = modelzoo.conv_layer("c", [1, k, k, c_i], c_o, k, 1, 0,
                                          2, bw, 2, seed=1)
            else:
                rows = rng.choice([64, 100])
                cols = rng.choice([64, 70])
                bw = rng.randint(1, 8)
                pw = Precision(bw, signed=bw >= 2)
                weights = [rng.randint(pw.lo, pw.hi)
                           for _ in range(rows * cols)]
                doc = modelzoo.gemv_layer("g", [1, 1, 1, cols], rows, 2, bw,
                                          2, seed=1)
            doc["weights"] = weights
            lay = model_from_dict(modelzoo.model_doc("m", [doc])).layers[0]
            plan = tile_and_pad(lay)
            if import_weights(lay, plan, export_weights(lay, plan)) != weights:
                bad += 1
        _report("format round trip: weight export/import on 1000 tensors",
                bad == 0, f"{bad} failures")
