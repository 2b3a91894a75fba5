import pytest

from mvusim import modelzoo
from mvusim.bitserial import Precision
from mvusim.codegen import compile_model
from mvusim.ir import model_from_dict
from mvusim.machine import Machine, deliver_interrupt
from mvusim.mvu import AguConfig, JobDescriptor, SimError
from mvusim.oracle import OracleTensor, oracle_infer
from mvusim.runner import Runner, simulate


def tiny_job(dest_mask=1, countdown=1):
    return JobDescriptor(
        prec_a=Precision(1), prec_w=Precision(1),
        agu_act=AguConfig((1,), (0,), 0),
        agu_wgt=AguConfig((1,), (0,), 0),
        agu_scaler=AguConfig((1,), (0,), 0),
        agu_bias=AguConfig((1,), (0,), 0),
        agu_out=AguConfig((1,), (0,), 0),
        countdown=countdown, quant_msb=31, quant_bits=1,
        dest_mask=dest_mask, dest_base=1000)


class TestMachine:
    def test_job_completion_raises_pending(self):
        m = Machine()
        m.start_job(3, tiny_job(dest_mask=1 << 3))
        for _ in range(8):
            m.step()
        assert m.irq_pending(3)
        m.irq_clear(3)
        assert not m.irq_pending(3)

    def test_prepare_next_while_busy(self):
        m = Machine()
        m.start_job(0, tiny_job(countdown=1))
        m.start_job(0, tiny_job(countdown=1))  # double-buffered
        with pytest.raises(SimError):
            m.start_job(0, tiny_job())
        done = []
        m.on_job_done.append(lambda d: done.append(d.finished_at))
        m.run(16)
        assert len(done) == 2

    def test_broadcast_writeback(self):
        m = Machine()
        m.start_job(2, tiny_job(dest_mask=0b1011))
        m.run(16)
        for dest in (0, 1, 3):
            assert m.mvus[dest].mem.act[1000] == m.mvus[2].mem.act[0] & 1 or \
                m.mvus[dest].mem.act[1000] == m.mvus[0].mem.act[1000]
        # all three destinations got the same word
        words = {m.mvus[d].mem.act[1000] for d in (0, 1, 3)}
        assert len(words) == 1

    def test_deliver_interrupt_hook(self):
        m = Machine()
        deliver_interrupt(m, 5)
        assert m.irq_pending(5)
        assert not m.irq_pending(4)


class TestRunnerEquivalence:
    @pytest.mark.parametrize("maker,mode", [
        (modelzoo.conv_small, "pipelined"),
        (modelzoo.conv_pool, "pipelined"),
        (modelzoo.distributed_conv, "distributed"),
    ])
    def test_matches_oracle(self, maker, mode):
        doc = maker(2, 2)
        model = model_from_dict(doc)
        inp = modelzoo.random_input(doc, seed=11)
        res = simulate(compile_model(doc, mode), inp)
        ref = oracle_infer(model, OracleTensor.from_flat(
            model.input_shape, inp, model.layers[0].prec_a))
        assert res.output_values == ref.flat()

    def test_mode_equivalence(self):
        doc = modelzoo.conv_small(2, 2)
        inp = modelzoo.random_input(doc, seed=13)
        a = simulate(compile_model(doc, "pipelined"), inp)
        b = simulate(compile_model(doc, "distributed"), inp)
        assert a.output_values == b.output_values

    def test_determinism(self):
        doc = modelzoo.conv_chain2(2, 2)
        inp = modelzoo.random_input(doc, seed=17)
        cp = compile_model(doc)
        a = simulate(cp, inp)
        b = simulate(cp, inp)
        assert a.output_values == b.output_values
        assert a.machine_cycles == b.machine_cycles
        assert a.layer_cycles == b.layer_cycles

    def test_estimator_simulator_agreement(self):
        from mvusim.perf import estimate_model
        for maker in (modelzoo.conv_small, modelzoo.conv_pool,
                      modelzoo.conv_gemv, modelzoo.conv_rgb):
            doc = maker(2, 2)
            model = model_from_dict(doc)
            res = simulate(compile_model(doc), modelzoo.random_input(doc, 1))
            est = estimate_model(model)
            assert [c for _, c in est.per_layer] == \
                [c for _, c in res.layer_cycles]

    def test_trace_log(self, tmp_path):
        doc = modelzoo.gemv64(2, 2)
        cp = compile_model(doc)
        trace = tmp_path / "trace.log"
        runner = Runner(cp, trace_path=str(trace))
        runner.place_input(modelzoo.random_input(doc, 3))
        runner.run()
        lines = trace.read_text().splitlines()
        assert len(lines) > 100
        cycle, hart, pc, *rest = lines[0].split()
        assert cycle == "0" and hart == "0" and rest


class TestGoldenTrace:
    def test_trace_text_is_frozen(self):
        from mvusim.asm import assemble, disassemble_word
        src = """.hart 0
            addi x1, x0, 3
        loop:
            addi x2, x2, 1
            bne x2, x1, loop
        end: j end
        """
        m = Machine()
        m.cpu.load_iram(assemble(src).words)
        lines = []
        m.trace_hook = lambda cyc, r: lines.append(
            f"{cyc} {r.hart} {r.pc:08x} {disassemble_word(r.word, r.pc)}")
        m.run(10)
        assert lines == [
            "0 0 00000000 addi x1, x0, 3",
            "1 1 00000400 jal x0, 0",
            "2 2 00000800 jal x0, 0",
            "3 3 00000c00 jal x0, 0",
            "4 4 00001000 jal x0, 0",
            "5 5 00001400 jal x0, 0",
            "6 6 00001800 jal x0, 0",
            "7 7 00001c00 jal x0, 0",
            "8 0 00000004 addi x2, x2, 1",
            "9 1 00000400 jal x0, 0",
        ]
