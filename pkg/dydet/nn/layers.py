"""Dense float64 layers with hand-written forward and backward passes.

Every layer is a value: `forward` and `backward` are pure functions of the
parameters and the input, so a single layer may serve many threads at once.
Feature maps are channel-first `[C, H, W]` arrays; vectors are `[N]`.

`backward(x, grad_out)` takes the same input that was given to `forward` and
returns `(grad_input, grad_params)` where `grad_params` has one entry per
parameter, keyed like `layer.params`.
"""
from __future__ import annotations

from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

DTYPE = np.float64

Grads = Dict[str, np.ndarray]


class ShapeError(ValueError):
    """Input or gradient does not have the shape a layer expects."""


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


class Layer:
    kind = "layer"

    def __init__(self, name: str = ""):
        self.name = name or self.kind
        self.params: Dict[str, np.ndarray] = {}

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, Grads]:
        raise NotImplementedError

    def macs(self, input_shape: Tuple[int, ...]) -> int:
        return 0

    def _check_input(self, x: np.ndarray, ok: bool, expected: str) -> None:
        if not ok:
            raise ShapeError(f"{self.name} ({self.kind}): expected input {expected}, got {tuple(x.shape)}")

    def _check_grad(self, x: np.ndarray, grad_out: np.ndarray) -> None:
        for k, v in self.params.items():
            if v is None:
                raise ValueError(f"{self.name} ({self.kind}): parameter {k!r} is uninitialized")
        want = self.output_shape(x.shape)
        if tuple(grad_out.shape) != want:
            raise ShapeError(f"{self.name} ({self.kind}): expected grad_out shape {want}, got {tuple(grad_out.shape)}")

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class Conv3x3(Layer):
    """3x3 convolution, zero padding 1, stride 1 or 2."""

    kind = "conv3x3"

    def __init__(self, c_in: int, c_out: int, stride: int = 1, name: str = "",
                 rng: Optional[np.random.Generator] = None):
        super().__init__(name)
        if stride not in (1, 2):
            raise ValueError(f"{self.name}: stride must be 1 or 2, got {stride}")
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.params = {
            "weight": np.zeros((c_out, c_in, 3, 3), dtype=DTYPE),
            "bias": np.zeros(c_out, dtype=DTYPE),
        }
        if rng is not None:
            bound = np.sqrt(6.0 / (c_in * 9))
            self.params["weight"][...] = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3))

    def output_shape(self, shape):
        _, h, w = shape
        return (self.c_out, (h - 1) // self.stride + 1, (w - 1) // self.stride + 1)

    def _cols(self, x: np.ndarray) -> np.ndarray:
        s = self.stride
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::s, ::s]
        _, ho, wo = self.output_shape(x.shape)
        # (c, ki, kj) ordering matches weight.reshape(c_out, -1)
        return win.transpose(0, 3, 4, 1, 2).reshape(self.c_in * 9, ho * wo)

    def forward(self, x):
        self._check_input(x, x.ndim == 3 and x.shape[0] == self.c_in, f"[{self.c_in}, H, W]")
        _, ho, wo = self.output_shape(x.shape)
        w = self.params["weight"].reshape(self.c_out, -1)
        out = w @ self._cols(x) + self.params["bias"][:, None]
        return out.reshape(self.c_out, ho, wo)

    def backward(self, x, grad_out):
        self._check_input(x, x.ndim == 3 and x.shape[0] == self.c_in, f"[{self.c_in}, H, W]")
        self._check_grad(x, grad_out)
        s = self.stride
        c, h, w = x.shape
        _, ho, wo = grad_out.shape
        g = grad_out.reshape(self.c_out, -1)
        cols = self._cols(x)
        wmat = self.params["weight"].reshape(self.c_out, -1)
        grads = {
            "weight": (g @ cols.T).reshape(self.params["weight"].shape),
            "bias": g.sum(axis=1),
        }
        dcols = (wmat.T @ g).reshape(c, 3, 3, ho, wo)
        dxp = np.zeros((c, h + 2, w + 2), dtype=DTYPE)
        for ki in range(3):
            for kj in range(3):
                dxp[:, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s] += dcols[:, ki, kj]
        return dxp[:, 1:-1, 1:-1], grads

    def macs(self, input_shape):
        _, ho, wo = self.output_shape(input_shape)
        return self.c_out * self.c_in * 9 * ho * wo


class Linear(Layer):
    """Affine map over the leading (channel) axis.

    A `[n_in]` vector maps to `[n_out]`; a `[n_in, H, W]` map is transformed
    pixel by pixel, i.e. a 1x1 convolution.
    """

    kind = "linear"

    def __init__(self, n_in: int, n_out: int, bias: bool = True, name: str = "",
                 rng: Optional[np.random.Generator] = None):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out
        self.params = {"weight": np.zeros((n_out, n_in), dtype=DTYPE)}
        if bias:
            self.params["bias"] = np.zeros(n_out, dtype=DTYPE)
        if rng is not None:
            bound = 1.0 / np.sqrt(n_in)
            self.params["weight"][...] = rng.uniform(-bound, bound, size=(n_out, n_in))

    def output_shape(self, shape):
        return (self.n_out,) + tuple(shape[1:])

    def forward(self, x):
        self._check_input(x, x.ndim >= 1 and x.shape[0] == self.n_in, f"[{self.n_in}, ...]")
        out = self.params["weight"] @ x.reshape(self.n_in, -1)
        if "bias" in self.params:
            out = out + self.params["bias"][:, None]
        return out.reshape(self.output_shape(x.shape))

    def backward(self, x, grad_out):
        self._check_input(x, x.ndim >= 1 and x.shape[0] == self.n_in, f"[{self.n_in}, ...]")
        self._check_grad(x, grad_out)
        g = grad_out.reshape(self.n_out, -1)
        flat = x.reshape(self.n_in, -1)
        grads = {"weight": g @ flat.T}
        if "bias" in self.params:
            grads["bias"] = g.sum(axis=1)
        return (self.params["weight"].T @ g).reshape(x.shape), grads

    def macs(self, input_shape):
        pixels = int(np.prod(input_shape[1:], dtype=np.int64)) if len(input_shape) > 1 else 1
        return self.n_in * self.n_out * pixels


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, grad_out):
        self._check_grad(x, grad_out)
        return grad_out * (x > 0), {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        return expit(x)

    def backward(self, x, grad_out):
        self._check_grad(x, grad_out)
        s = expit(x)
        return grad_out * s * (1.0 - s), {}


class GlobalAvgPool(Layer):
    """[C, H, W] -> [C], one mean per channel."""

    kind = "global-avg-pool"

    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x):
        self._check_input(x, x.ndim == 3, "[C, H, W]")
        return x.mean(axis=(1, 2))

    def backward(self, x, grad_out):
        self._check_input(x, x.ndim == 3, "[C, H, W]")
        self._check_grad(x, grad_out)
        _, h, w = x.shape
        return np.broadcast_to(grad_out[:, None, None] / (h * w), x.shape).copy(), {}


class Upsample(Layer):
    """Nearest-neighbour upsampling by an integer factor."""

    kind = "upsample"

    def __init__(self, factor: int, name: str = ""):
        super().__init__(name)
        if factor < 1:
            raise ValueError(f"{self.name}: factor must be >= 1, got {factor}")
        self.factor = factor

    def output_shape(self, shape):
        c, h, w = shape
        return (c, h * self.factor, w * self.factor)

    def forward(self, x):
        self._check_input(x, x.ndim == 3, "[C, H, W]")
        f = self.factor
        return x if f == 1 else x.repeat(f, axis=1).repeat(f, axis=2)

    def backward(self, x, grad_out):
        self._check_grad(x, grad_out)
        c, h, w = x.shape
        f = self.factor
        return grad_out.reshape(c, h, f, w, f).sum(axis=(2, 4)), {}


class ElementwiseAdd(Layer):
    """Sum of two equally shaped tensors; input is the pair `(a, b)`."""

    kind = "elementwise-add"

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x: Sequence[np.ndarray]):
        a, b = x
        if a.shape != b.shape:
            raise ShapeError(f"{self.name} ({self.kind}): expected matching shapes, got {a.shape} and {b.shape}")
        return a + b

    def backward(self, x, grad_out):
        a, b = x
        if grad_out.shape != a.shape:
            raise ShapeError(f"{self.name} ({self.kind}): expected grad_out shape {a.shape}, got {grad_out.shape}")
        return (grad_out, grad_out), {}


def forward(layer: Layer, x) -> np.ndarray:
    return layer.forward(x)


def backward(layer: Layer, x, grad_out) -> Tuple[np.ndarray, Grads]:
    return layer.backward(x, grad_out)
