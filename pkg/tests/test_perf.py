import pytest

from mvusim import modelzoo
from mvusim.ir import ModelIR, model_from_dict
from mvusim.perf import (
    estimate_conv_cycles,
    estimate_layer_cycles,
    estimate_model,
    fps_scaling_check,
)

RESNET9_CYCLES = [34560, 34560, 17280, 32256, 16128, 27648, 13824, 18432]


def conv_ir(c_in, c_out, h, w, stride, a=2, wb=2, k=3, pad=1):
    doc = modelzoo.conv_layer("c", [1, h, w, c_in], c_out, k, stride, pad,
                              a, wb, a, seed=1)
    return model_from_dict(modelzoo.model_doc("m", [doc])).layers[0]


class TestConvFormula:
    def test_conv1(self):
        assert estimate_conv_cycles(conv_ir(64, 64, 32, 32, 1)) == 34560

    def test_conv3(self):
        assert estimate_conv_cycles(conv_ir(64, 128, 32, 32, 2)) == 17280

    def test_conv8(self):
        assert estimate_conv_cycles(conv_ir(512, 512, 4, 4, 1)) == 18432

    @pytest.mark.parametrize("ba,bw", [(1, 1), (1, 2), (4, 4), (8, 8)])
    def test_precision_scaling(self, ba, bw):
        base = estimate_conv_cycles(conv_ir(64, 64, 16, 16, 1, a=1, wb=1))
        scaled = estimate_conv_cycles(conv_ir(64, 64, 16, 16, 1, a=ba, wb=bw))
        assert scaled == base * ba * bw


class TestModelEstimate:
    def test_resnet9_table(self):
        report = estimate_model(model_from_dict(modelzoo.resnet9()))
        assert [c for _, c in report.per_layer] == RESNET9_CYCLES
        assert report.total_cycles == 194688
        assert report.to_table().splitlines()[-1] == f"{'Total:':<6}  {194688:>10}"

    def test_resnet9_at_1_1(self):
        doc = modelzoo.resnet9(a_bits=1, w_bits=1)
        report = estimate_model(model_from_dict(doc))
        assert report.total_cycles == 48672  # 194688 / (2*2)

    def test_empty_model(self):
        report = estimate_model(ModelIR(name="empty", layers=[]))
        assert report.total_cycles == 0

    def test_gemv_cycles(self):
        model = model_from_dict(modelzoo.gemv_wide(2, 2))
        assert estimate_layer_cycles(model.layers[0]) == 2 * 2 * 2 * 4


class TestFpsScaling:
    def test_paper_ratio_values(self):
        f = {}
        for (wb, ab) in [(1, 1), (1, 2), (2, 2)]:
            report = estimate_model(model_from_dict(modelzoo.cnv_like(ab, wb)))
            f[(wb, ab)] = report.fps_pipelined
        assert f[(1, 1)] == 61035
        assert f[(1, 2)] == 30517
        assert f[(2, 2)] == 15258

    def test_scaling_check(self):
        assert fps_scaling_check(61035, 2, 1) == 30517
        assert fps_scaling_check(61035, 2, 2) == 15258
        assert fps_scaling_check(12345, 1, 1) == 12345
