from typing import Dict, Iterator, List, Literal, Optional, Tuple

import numpy as np

from acis.core.compute import kernels
from acis.core.compute.tensor import Parameter, Tensor
from acis.core.exceptions import ShapeMismatch


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """
    Owns named parameters and child modules.
    Names are dotted paths built from attribute names, e.g. "encoder.conv0.weight".
    """

    def __init__(self):
        self._params: Dict[str, Parameter] = {}
        self._children: Dict[str, "Module"] = {}
        self.mode: Literal["train", "eval"] = "train"

    def add_parameter(self, name: str, data: np.ndarray, trainable: bool = True) -> Parameter:
        param = Parameter(data, name=name, trainable=trainable)
        self._params[name] = param
        return param

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._params.items():
            yield f"{prefix}{name}", param
        for child_name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{child_name}.")

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def trainable_parameters(self) -> List[Parameter]:
        return [param for param in self.parameters() if param.trainable]

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def set_trainable(self, trainable: bool):
        for param in self.parameters():
            param.trainable = trainable

    def train(self):
        self.mode = "train"
        for child in self._children.values():
            child.train()

    def eval(self):
        self.mode = "eval"
        for child in self._children.values():
            child.eval()

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters(prefix=prefix)}

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str = "", strict: bool = True):
        for name, param in self.named_parameters(prefix=prefix):
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter '{name}' in state")
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeMismatch(f"parameter '{name}' expects {param.shape}, got {value.shape}")
            param.data[...] = value


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        super(Conv2d, self).__init__()
        self.stride = stride
        fan_in = in_channels * kernels.KERNEL * kernels.KERNEL
        self.weight = self.add_parameter(
            "weight", uniform_init(rng, (out_channels, in_channels, kernels.KERNEL, kernels.KERNEL), fan_in)
        )
        self.bias = self.add_parameter("bias", np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return kernels.conv2d(x, self.weight, self.stride, self.bias)


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        super(ConvTranspose2d, self).__init__()
        self.stride = stride
        fan_in = in_channels * kernels.KERNEL * kernels.KERNEL
        self.weight = self.add_parameter(
            "weight", uniform_init(rng, (in_channels, out_channels, kernels.KERNEL, kernels.KERNEL), fan_in)
        )
        self.bias = self.add_parameter("bias", np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return kernels.transposed_conv2d(x, self.weight, self.stride, self.bias)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        super(Linear, self).__init__()
        # rng=None gives an all-zero layer
        if rng is None:
            weight = np.zeros((out_features, in_features))
        else:
            weight = uniform_init(rng, (out_features, in_features), in_features)
        self.weight = self.add_parameter("weight", weight)
        self.bias = self.add_parameter("bias", np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return kernels.linear(x, self.weight, self.bias)


class LSTMCell(Module):
    FORGET_BIAS = 1.0

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super(LSTMCell, self).__init__()
        self.hidden_size = hidden_size
        self.weight = self.add_parameter(
            "weight", uniform_init(rng, (4 * hidden_size, input_size + hidden_size), input_size + hidden_size)
        )
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size : 2 * hidden_size] = self.FORGET_BIAS
        self.bias = self.add_parameter("bias", bias)

    def initial_state(self, batch: int = 1) -> Tuple[Tensor, Tensor]:
        return Tensor(np.zeros((batch, self.hidden_size))), Tensor(np.zeros((batch, self.hidden_size)))

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        return kernels.lstm_cell(x, h, c, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int):
        super(BatchNorm, self).__init__()
        self.gamma = self.add_parameter("gamma", np.ones(channels))
        self.beta = self.add_parameter("beta", np.zeros(channels))
        self.running_mean = self.add_parameter("running_mean", np.zeros(channels), trainable=False)
        self.running_var = self.add_parameter("running_var", np.ones(channels), trainable=False)

    def __call__(self, x: Tensor) -> Tensor:
        return kernels.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var, mode=self.mode)
