"""Binary RAM image and tensor file formats (see FORMATS.md).

Everything is little-endian.  Activation images are sequences of 64-bit
words; weight images store each 4096-bit row as 64 consecutive 64-bit
words; scaler images are unsigned 16-bit, bias images signed 32-bit.
Tensors travel as raw int32 arrays plus a JSON sidecar with shape and
precision.
"""

from __future__ import annotations

import json
import struct

from .bitserial import Precision


def save_words64(path: str, words: list[int]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(f"<{len(words)}Q", *words))


def load_words64(path: str) -> list[int]:
    with open(path, "rb") as f:
        data = f.read()
    return list(struct.unpack(f"<{len(data) // 8}Q", data))


def save_u16(path: str, values: list[int]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(f"<{len(values)}H", *values))


def load_u16(path: str) -> list[int]:
    with open(path, "rb") as f:
        data = f.read()
    return list(struct.unpack(f"<{len(data) // 2}H", data))


def save_i32(path: str, values: list[int]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(f"<{len(values)}i", *values))


def load_i32(path: str) -> list[int]:
    with open(path, "rb") as f:
        data = f.read()
    return list(struct.unpack(f"<{len(data) // 4}i", data))


def save_tensor(path: str, shape: tuple[int, ...], values: list[int],
                prec: Precision) -> None:
    save_i32(path, values)
    with open(path + ".json", "w") as f:
        json.dump({"shape": list(shape), "bits": prec.bits,
                   "signed": prec.signed}, f, sort_keys=True)
        f.write("\n")


def load_tensor(path: str) -> tuple[tuple[int, ...], list[int], Precision]:
    with open(path + ".json") as f:
        meta = json.load(f)
    values = load_i32(path)
    shape = tuple(meta["shape"])
    n = 1
    for d in shape:
        n *= d
    if len(values) != n:
        raise ValueError(f"{path}: {len(values)} values for shape {shape}")
    return shape, values, Precision(meta["bits"], meta["signed"])
