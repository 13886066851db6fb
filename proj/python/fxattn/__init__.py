"""Python bindings for the fxattn fixed-point transformer emulator."""

from ._fxattn import (
    FxFormat,
    FxValue,
    Model,
    Overflow,
    ParseError,
    Rounding,
    ShapeError,
    StreamError,
    dataset_to_csv,
    dequantize,
    estimate_latency,
    estimate_resources,
    evaluate_auc,
    fx_add,
    fx_mul,
    fx_sub,
    generate_synthetic,
    quantize,
    roc_auc,
    softmax_exact,
    softmax_lut,
    total_multipliers,
)

CLASSES = ("b", "c", "light")

__all__ = [
    "CLASSES",
    "FxFormat",
    "FxValue",
    "Model",
    "Overflow",
    "ParseError",
    "Rounding",
    "ShapeError",
    "StreamError",
    "dataset_to_csv",
    "dequantize",
    "estimate_latency",
    "estimate_resources",
    "evaluate_auc",
    "fx_add",
    "fx_mul",
    "fx_sub",
    "generate_synthetic",
    "quantize",
    "roc_auc",
    "softmax_exact",
    "softmax_lut",
    "total_multipliers",
]
