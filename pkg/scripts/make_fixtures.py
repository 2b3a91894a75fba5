#!/usr/bin/env python3
"""Regenerate the checked-in model fixtures under models/.

Deterministic: every fixture derives from fixed seeds, so reruns are
byte-identical.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mvusim import modelzoo
from mvusim.ir import dump_model


def main() -> None:
    outdir = os.path.join(os.path.dirname(__file__), "..", "models")
    os.makedirs(outdir, exist_ok=True)
    fixtures = {
        "resnet9.json": modelzoo.resnet9(),
        "gemv64.json": modelzoo.gemv64(2, 2),
        "conv_pool.json": modelzoo.conv_pool(2, 2),
        "conv_gemv.json": modelzoo.conv_gemv(2, 2),
        "distributed_conv.json": modelzoo.distributed_conv(2, 2),
        "distributed_gemv.json": modelzoo.distributed_gemv(2, 2),
        "gemv_lap10.json": modelzoo.lap_chain(10, 2, 2),
        "cnv_like_w1a1.json": modelzoo.cnv_like(1, 1),
        "cnv_like_w1a2.json": modelzoo.cnv_like(2, 1),
        "cnv_like_w2a2.json": modelzoo.cnv_like(2, 2),
    }
    for name, doc in fixtures.items():
        path = os.path.join(outdir, name)
        dump_model(doc, path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
