"""Minimal numpy tensor engine with reverse-mode automatic differentiation."""

from .checkpoint import decode_state, encode_state, load_state, save_state
from .gradcheck import GradcheckResult, check_gradients, relative_error
from .nn import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, Parameter
from .ops import (
    adaptive_avg_pool_seq,
    add,
    amax,
    batchnorm2d,
    concat,
    conv2d,
    cross_entropy,
    directional_pool,
    div,
    exp,
    expand,
    getitem,
    global_pool,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    softmax,
    split,
    sub,
    sum_,
    tanh,
    transpose,
)
from .tensor import (
    Tensor,
    as_tensor,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)

__all__ = [name for name in dir() if not name.startswith("_")]
