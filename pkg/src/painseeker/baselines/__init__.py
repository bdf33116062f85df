"""Classical LBP-histogram + linear SVM baseline."""

from .lbp import LBPConfig, FeatureCache, lbp_code, lbp_codes, lbp_feature, lbp_histograms, to_grayscale, uniform_mapping
from .svm import LinearSVM, Standardizer, svm_objective, svm_predict, train_svm

__all__ = [
    "LBPConfig",
    "FeatureCache",
    "lbp_code",
    "lbp_codes",
    "lbp_feature",
    "lbp_histograms",
    "to_grayscale",
    "uniform_mapping",
    "LinearSVM",
    "Standardizer",
    "svm_objective",
    "svm_predict",
    "train_svm",
]
