"""Local controller design: segmented regression curves and kernel SVMs."""
from .controllers import (LAW_FEATURES, FitConfig, LocalController, bundle_from_json, bundle_to_json,
                          design_controllers, load_bundle, predict, save_bundle)
from .dataset import FEATURES, SetpointDataset, build_datasets, local_features
from .segmented import PiecewiseCurve, SegmentedFit, evaluate_curve, extend_tail, fit_segmented_curve
from .svm import (KernelSpec, MultiClassSvc, Scaler, SvmModel, fit_binary_svc, fit_multiclass_svc, fit_svr,
                  fit_svr_model, fit_weighted_svc, kernel_eval, kernel_grid, kernel_matrix, solve_dual)

__all__ = [
    "LAW_FEATURES", "FitConfig", "LocalController", "bundle_from_json", "bundle_to_json", "design_controllers",
    "load_bundle", "predict", "save_bundle", "FEATURES", "SetpointDataset", "build_datasets", "local_features",
    "PiecewiseCurve", "SegmentedFit", "evaluate_curve", "extend_tail", "fit_segmented_curve", "KernelSpec", "MultiClassSvc",
    "Scaler", "SvmModel", "fit_binary_svc", "fit_multiclass_svc", "fit_svr", "fit_svr_model", "fit_weighted_svc",
    "kernel_eval", "kernel_grid", "kernel_matrix", "solve_dual",
]
