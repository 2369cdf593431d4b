"""Boundary stabilization of the KdV equation on [0, L] with a power-series
backstepping kernel: kernel construction, Volterra transform, finite-difference
simulation and eigenvalues of the linear boundary operator."""

__version__ = "0.1.0"

from .errors import Blowup, KdvbsError, NoConvergence
from .kernel import PseudoKernel, alpha, beta, build_kernel, decay_report
from .series import Poly1, Poly2, apply_P, apply_component
from .simulator import SchemeConfig, SimTrace, fit_decay_rate, simulate
from .spectral import EigRecord, char_det, find_eigenvalues, spectral_abscissa
from .transform import (DiscreteK, GridFunction, discretize_K, forward,
                        inverse_direct, inverse_succession, invnorm_estimate)

__all__ = [
    "Blowup",
    "DiscreteK",
    "EigRecord",
    "GridFunction",
    "KdvbsError",
    "NoConvergence",
    "Poly1",
    "Poly2",
    "PseudoKernel",
    "SchemeConfig",
    "SimTrace",
    "alpha",
    "apply_P",
    "apply_component",
    "beta",
    "build_kernel",
    "char_det",
    "decay_report",
    "discretize_K",
    "find_eigenvalues",
    "fit_decay_rate",
    "forward",
    "inverse_direct",
    "inverse_succession",
    "invnorm_estimate",
    "simulate",
    "spectral_abscissa",
]
