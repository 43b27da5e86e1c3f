"""MMSE precoding with phase-quantized constant-envelope transmit signals."""

from .core import (
    ConfigurationError,
    DimensionError,
    GrayMapper,
    PskAlphabet,
    draw_channel,
    make_alphabet,
    snr_to_sigma_w2,
    transmit_alphabet,
)
from .polytope import Polyhedron, build_polyhedron
from .qpsolve import QpProblem, QpSolution, SolverFailure, solve

__version__ = "0.1.0"
