"""Energy-aware parameter optimization for quantized parallel mini-batch SGD."""

from .cost_model import AlgoParams, LearnConstants, NodeProfile, SystemProfile, conv_error, energy_cost, time_cost
from .engine import run_genqsgd
from .optimizer import Mode, OptSpec, optimize, run_algorithm2
from .quantizer import INFINITE, QuantSpec, decode, encode, quantize

__all__ = [
    "AlgoParams", "LearnConstants", "NodeProfile", "SystemProfile", "conv_error", "energy_cost", "time_cost",
    "run_genqsgd", "Mode", "OptSpec", "optimize", "run_algorithm2",
    "INFINITE", "QuantSpec", "decode", "encode", "quantize",
]
