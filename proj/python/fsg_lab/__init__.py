"""Binary network training lab with learned fast/slow gradient generators."""

from ._core import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    GradientHistoryBuffer,
    __version__,
    binarize,
    canonical_config,
    compose_gradient,
    momentum_expand,
    preprocess,
    quantize,
    rate_fit,
    run_checks,
    ssm_conv,
    ssm_discretize,
    ssm_scan,
    train,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "GradientHistoryBuffer",
    "__version__",
    "binarize",
    "canonical_config",
    "compose_gradient",
    "momentum_expand",
    "preprocess",
    "quantize",
    "rate_fit",
    "run_checks",
    "ssm_conv",
    "ssm_discretize",
    "ssm_scan",
    "train",
]
