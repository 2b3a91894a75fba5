"""Bit-accurate simulator and compiler for a bit-serial matrix-vector accelerator."""

__version__ = "0.1.0"
