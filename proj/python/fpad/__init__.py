"""Python access to the fpad core: metrics, blur scoring, patch geometry,
network accounting and checkpoint scoring."""

from ._fpad import (
    DenseNetConfig,
    FpadError,
    Model,
    channel_plan,
    compute_report,
    count_conv_layers,
    count_trainable_params,
    default_patch_counts,
    extract_center_patches,
    format_percent,
    laplacian_variance,
    middle_window,
    read_checkpoint_info,
    read_png,
    removed_fraction,
    select_blur_threshold,
    tiny_config,
    validate_config,
    write_png,
)

__all__ = [
    "DenseNetConfig",
    "FpadError",
    "Model",
    "channel_plan",
    "compute_report",
    "count_conv_layers",
    "count_trainable_params",
    "default_patch_counts",
    "extract_center_patches",
    "format_percent",
    "laplacian_variance",
    "middle_window",
    "read_checkpoint_info",
    "read_png",
    "removed_fraction",
    "select_blur_threshold",
    "tiny_config",
    "validate_config",
    "write_png",
]
