"""Bearing remaining-useful-life pipeline (C++ core).

Signal processing, FPT detection, WPD images, the shifted-window transformer
regressor, losses and metrics, and the ``mcsformer`` command-line tool.
"""

from ._core import (
    Error,
    assign_labels,
    commands,
    custom_loss,
    db5_filters,
    detect_fpt,
    dwt,
    dwt_roundtrip,
    evaluate,
    gen_synthetic,
    kurtosis,
    load_dataset,
    load_pronostia,
    load_record,
    mse_loss,
    parameter_count,
    predict,
    predict_checkpoint,
    record_fpt,
    run_cli,
    savgol_filter,
    savgol_kernel,
    score_term,
    wavelet_denoise,
    wpd,
    wpd_image,
)

__all__ = [
    "Error",
    "assign_labels",
    "commands",
    "custom_loss",
    "db5_filters",
    "detect_fpt",
    "dwt",
    "dwt_roundtrip",
    "evaluate",
    "gen_synthetic",
    "kurtosis",
    "load_dataset",
    "load_pronostia",
    "load_record",
    "mse_loss",
    "parameter_count",
    "predict",
    "predict_checkpoint",
    "record_fpt",
    "run_cli",
    "savgol_filter",
    "savgol_kernel",
    "score_term",
    "wavelet_denoise",
    "wpd",
    "wpd_image",
]
