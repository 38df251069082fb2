"""Minimal numpy autodiff engine: tensors, recurrent layers, losses, optimizers."""
from .functional import (
    BatchNormState,
    batch_norm,
    cross_entropy_loss,
    dropout,
    log_softmax,
    log_softmax_array,
    softmax_array,
)
from .optim import SGD, Adam, Optimizer, OptimizerState, ParamSet, clip_grad_norm, lr_at_epoch, make_optimizer
from .rnn import init_params, param_shapes, rnn_direction, rnn_layer_forward
from .tensor import (
    NumericalError,
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    get_default_dtype,
    no_grad,
    set_default_dtype,
    take_columns,
)


def compute_gradients(loss: Tensor, params: ParamSet) -> dict:
    """Clear ``params`` gradients, back-propagate ``loss`` and return the filled buffers."""
    params.zero_grad()
    loss.backward()
    return params.grads()


__all__ = [
    "Adam", "BatchNormState", "NumericalError", "Optimizer", "OptimizerState", "ParamSet", "SGD",
    "Tensor", "as_tensor", "batch_norm", "clip_grad_norm", "compute_gradients", "concat",
    "cross_entropy_loss", "default_dtype", "dropout", "get_default_dtype", "init_params",
    "log_softmax", "log_softmax_array", "lr_at_epoch", "make_optimizer", "no_grad", "param_shapes",
    "rnn_direction", "rnn_layer_forward", "set_default_dtype", "softmax_array", "take_columns",
]
