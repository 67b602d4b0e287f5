"""Sequential-in-time training of nonlinear parametrizations.

Optimize-then-discretize (:mod:`seqtrain.otd`) and discretize-then-optimize
(:mod:`seqtrain.dto`) steppers, a posteriori bounds, gradient-flow
equivalences (:mod:`seqtrain.gradflow`) and tangent-space collapse
diagnostics (:mod:`seqtrain.diagnostics`).
"""
from .errors import ConfigurationError, DivergenceError, NumericalError, SeqTrainError
from .models import (BoundaryMask, GaussianMixtureModel, MaskedModel, Model,
                     ShallowNetworkModel)
from .quadrature import (GramMatrix, QuadratureRule, assemble_gram, gauss_legendre, inner,
                         make_rule, monte_carlo, norm, solve_least_squares, solve_min_norm,
                         trapezoid)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DivergenceError", "NumericalError", "SeqTrainError",
    "BoundaryMask", "GaussianMixtureModel", "MaskedModel", "Model", "ShallowNetworkModel",
    "GramMatrix", "QuadratureRule", "assemble_gram", "gauss_legendre", "inner", "make_rule",
    "monte_carlo", "norm", "solve_least_squares", "solve_min_norm", "trapezoid",
]
