"""Numerical laboratory for margin conditions in k-point vector quantization."""
from .distributions import (ConeBallDistribution, FiniteSupport, QuasiGaussianMixture,
                            UniformBall, build_quasi_gaussian, cone_cell_moment)
from .geometry import bisector_distance, contrast, critical_membership, nearest_index
from .margin import (gaussian_condition, kappa0, margin_check, margin_quantities,
                     polynomial_margin_radius, separation)
from .minimax import build_family, closed_risk, hellinger, p_sigma, q_sigma, reduce_quantizer
from .quantizer import (CodebookSet, RiskEstimate, empirical_risk, erm_exhaustive, erm_multistart,
                        lloyd, loss, optimal_codebooks, true_risk)

__version__ = "0.1.0"
