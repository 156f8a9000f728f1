from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    AdaLNBlock,
    Dropout,
    Gru,
    GruCell,
    LayerNorm,
    Linear,
    Mlp,
    Module,
    MultiHeadAttention,
    PositionalEmbedding,
    TransformerEncoderBlock,
    modulate,
    sinusoidal_time_embedding,
)
from .optim import AdamW
from .tensor import (
    Tensor,
    add,
    bce,
    clip,
    concat,
    elu,
    gelu,
    grad_check,
    layer_norm,
    matmul,
    mse,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    silu,
    softmax,
    stack,
    tanh,
    texp,
    tlog,
    tmean,
    transpose,
    tslice,
    tsum,
)

__all__ = [
    "AdaLNBlock", "AdamW", "Dropout", "Gru", "GruCell", "LayerNorm", "Linear",
    "Mlp", "Module", "MultiHeadAttention", "PositionalEmbedding", "Tensor",
    "TransformerEncoderBlock", "add", "bce", "clip", "concat", "elu", "gelu",
    "grad_check", "layer_norm", "load_checkpoint", "matmul", "modulate", "mse",
    "mul", "no_grad", "power", "relu", "reshape", "save_checkpoint", "sigmoid",
    "silu", "sinusoidal_time_embedding", "softmax", "stack", "tanh", "texp",
    "tlog", "tmean", "transpose", "tslice", "tsum",
]
