from acis.core.compute.kernels import (
    avg_pool2d,
    batchnorm,
    bce_loss,
    conv2d,
    global_max_pool2d,
    kl_diag_gaussian,
    linear,
    lstm_cell,
    maxpool2d,
    mse_loss,
    reparameterize,
    transposed_conv2d,
)
from acis.core.compute.module import (
    BatchNorm,
    Conv2d,
    ConvTranspose2d,
    Linear,
    LSTMCell,
    Module,
)
from acis.core.compute.ops import activation
from acis.core.compute.optim import Adam, AdamState, adam_step
from acis.core.compute.tensor import Parameter, Tensor, as_tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm",
    "Conv2d",
    "ConvTranspose2d",
    "LSTMCell",
    "Linear",
    "Module",
    "Parameter",
    "Tensor",
    "activation",
    "adam_step",
    "as_tensor",
    "avg_pool2d",
    "batchnorm",
    "bce_loss",
    "conv2d",
    "global_max_pool2d",
    "kl_diag_gaussian",
    "linear",
    "lstm_cell",
    "maxpool2d",
    "mse_loss",
    "no_grad",
    "reparameterize",
    "transposed_conv2d",
]
