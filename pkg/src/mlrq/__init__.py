"""Multi-layer residual vector quantization toolkit."""
from mlrq._backend import backend_name
from mlrq.core import (
    Codebook,
    DimensionError,
    LayerStack,
    QuantizationResult,
    decode_multistage,
    encode_multistage,
    mse,
    nearest_codeword,
)

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "DimensionError",
    "LayerStack",
    "QuantizationResult",
    "backend_name",
    "decode_multistage",
    "encode_multistage",
    "mse",
    "nearest_codeword",
]
