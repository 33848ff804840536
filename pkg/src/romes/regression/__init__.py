"""Stochastic regressors returning normal predictive distributions."""
from ._base import NormalPrediction, TrainingSet
from .gp import (GPConfig, GPModel, GPTrainingError, SquaredExponential, gp_condition,
                 gp_predict, gp_train, log_likelihood)
from .rvm import (EquivalentKernel, LegendreBasis, RBFBasis, RVMConfig, RVMModel,
                  RVMTrainingError, equivalent_kernel, legendre, rvm_predict, rvm_train)
from .scaling import FeatureScaling, ScalingError, fit_scaling, scale_features

__all__ = [
    "NormalPrediction", "TrainingSet", "GPConfig", "GPModel", "GPTrainingError",
    "SquaredExponential", "gp_condition", "gp_predict", "gp_train", "log_likelihood",
    "EquivalentKernel", "LegendreBasis", "RBFBasis", "RVMConfig", "RVMModel",
    "RVMTrainingError", "equivalent_kernel", "legendre", "rvm_predict", "rvm_train",
    "FeatureScaling", "ScalingError", "fit_scaling", "scale_features",
]
