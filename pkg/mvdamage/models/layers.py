from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from mvdamage.tensor import Parameter, Tensor, default_dtype, ops


def fan_in_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(default_dtype())


class Module:
    """Owns named parameters and child modules. Parameter names are dotted
    paths from the root, e.g. ``backbone.ground-1.blocks.0.depthwise``."""

    def __init__(self):
        self._parameters: "OrderedDict[str, Parameter]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_parameter(self, name: str, value: np.ndarray) -> Parameter:
        assert "." not in name
        param = Parameter(value, name=name)
        self._parameters[name] = param
        return param

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> Iterator[Parameter]:
        for _, param in self.named_parameters():
            yield param

    def parameter(self, name: str) -> Parameter:
        for full_name, param in self.named_parameters():
            if full_name == name:
                return param
        raise KeyError(name)

    def assign_names(self):
        for name, param in self.named_parameters():
            param.name = name

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def astype(self, dtype) -> "Module":
        for param in self.parameters():
            param.astype(dtype)
        return self

    def state(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state(self, state: Dict[str, np.ndarray]):
        for name, param in self.named_parameters():
            value = state[name]
            assert value.shape == param.shape, (name, value.shape, param.shape)
            param.data = value.astype(param.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
    ):
        super().__init__()
        self.stride = stride
        self.padding = (kernel_size - 1) // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = self.add_parameter(
            "weight", fan_in_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        )
        self.bias = self.add_parameter("bias", np.zeros(out_channels, dtype=default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class SeparableBlock(Module):
    """3×3 depthwise + 1×1 pointwise convolution followed by ReLU"""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.depthwise = self.add_parameter(
            "depthwise", fan_in_uniform(rng, (in_channels, 1, 3, 3), 9)
        )
        self.depthwise_bias = self.add_parameter(
            "depthwise_bias", np.zeros(in_channels, dtype=default_dtype())
        )
        self.pointwise = self.add_parameter(
            "pointwise", fan_in_uniform(rng, (out_channels, in_channels, 1, 1), in_channels)
        )
        self.pointwise_bias = self.add_parameter(
            "pointwise_bias", np.zeros(out_channels, dtype=default_dtype())
        )

    def forward(self, x: Tensor) -> Tensor:
        out = ops.depthwise_separable_conv(
            x,
            self.depthwise,
            self.pointwise,
            self.depthwise_bias,
            self.pointwise_bias,
            stride=self.stride,
            padding=1,
        )
        return ops.relu(out)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.add_parameter(
            "weight", fan_in_uniform(rng, (in_features, out_features), in_features)
        )
        self.bias = self.add_parameter("bias", np.zeros(out_features, dtype=default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)
