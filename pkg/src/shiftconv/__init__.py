"""shiftconv: multiplierless CNN inference toolkit.

Weights are quantized onto multi-stage power-of-two codebooks, layers
execute with shifts, sign flips and additions over precomputed product
terms, and every result can be checked bit-exactly against a direct
floating-point convolution oracle.
"""

from .analyzer import (
    DivergenceReport,
    Histogram,
    LayerCost,
    ModelCost,
    layer_cost,
    load_layer_specs,
    model_cost,
    output_divergence,
    parse_layer_specs,
    weight_histogram,
)
from .codebook import (
    CodebookConfig,
    QuantizedWeightTensor,
    build_codebook,
    codeword_value,
    dequantize_tensor,
    empirical_distortion,
    quantize_array,
    quantize_scalar,
    quantize_stage,
    quantize_tensor,
)
from .engine import (
    OpCounters,
    PathComparison,
    PrecomputeBuffer,
    compare_network_paths,
    conv_layer_reference,
    conv_layer_shift,
    precompute_terms,
    run_network,
)
from .errors import ShiftConvError
from .tensorio import (
    FixedPointTensor,
    LayerSpec,
    Model,
    ModelLayer,
    from_fixed_point,
    load_model,
    load_tensor,
    save_model,
    save_tensor,
    to_fixed_point,
)

__version__ = "0.1.0"
