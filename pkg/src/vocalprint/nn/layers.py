"""Layer catalogue and a sequential network container.

Layers are described by a :class:`LayerSpec` (kind + hyperparameters) and
instantiated with :func:`build_layer`, so an architecture is plain data that
can be listed, compared and checked against a weight archive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ShapeError, StateError
from . import functional as F
from .tensor import Tensor, as_tensor, parameter

LAYER_KINDS = (
    "conv1d",
    "conv2d",
    "dense",
    "batchnorm",
    "mfm",
    "relu",
    "sigmoid",
    "softmax",
    "se_block",
    "dilated_tdnn_block",
    "attentive_stats_pool",
    "mean_pool",
    "max_pool2d",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    kind = ""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def astype(self, dtype):
        for name, p in self.params.items():
            self.params[name] = parameter(p.data.astype(dtype))
        for name, b in self.buffers.items():
            self.buffers[name] = b.astype(dtype)
        for attr in ("gamma", "beta"):
            if isinstance(getattr(self, attr, None), Tensor):
                setattr(self, attr, Tensor(getattr(self, attr).data.astype(dtype)))
        return self


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, rng, in_channels, out_channels, kernel=1, dilation=1, stride=1, padding="valid",
                 bias=True, dtype=np.float32):
        super().__init__()
        if padding not in ("valid", "same"):
            raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
        if padding == "same" and stride != 1:
            raise ValueError("'same' padding requires stride 1")
        self.in_channels, self.kernel, self.dilation, self.stride = in_channels, kernel, dilation, stride
        self.pad = dilation * (kernel - 1) // 2 if padding == "same" else 0
        if padding == "same" and (dilation * (kernel - 1)) % 2:
            raise ValueError("'same' padding needs an odd effective kernel")
        fan_in = in_channels * kernel
        self.params["weight"] = parameter(_he_uniform(rng, (out_channels, in_channels, kernel), fan_in, dtype))
        if bias:
            self.params["bias"] = parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv1d: expected input [N, {self.in_channels}, T], got {x.shape}")
        return F.conv1d(x, self.params["weight"], self.params.get("bias"), self.stride, self.dilation, self.pad)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, rng, in_channels, out_channels, kernel=3, stride=1, padding="valid", bias=True,
                 dtype=np.float32):
        super().__init__()
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        self.stride = (stride, stride) if np.isscalar(stride) else tuple(stride)
        if padding == "same":
            if self.stride != (1, 1) or kh % 2 == 0 or kw % 2 == 0:
                raise ValueError("'same' padding needs stride 1 and odd kernels")
            self.pad = (kh // 2, kw // 2)
        elif padding == "valid":
            self.pad = (0, 0)
        else:
            raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
        self.in_channels = in_channels
        fan_in = in_channels * kh * kw
        self.params["weight"] = parameter(_he_uniform(rng, (out_channels, in_channels, kh, kw), fan_in, dtype))
        if bias:
            self.params["bias"] = parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv2d: expected input [N, {self.in_channels}, H, W], got {x.shape}")
        return F.conv2d(x, self.params["weight"], self.params.get("bias"), self.stride, self.pad)


class Dense(Layer):
    kind = "dense"

    def __init__(self, rng, in_features, out_features, bias=True, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.params["weight"] = parameter(_he_uniform(rng, (out_features, in_features), in_features, dtype))
        if bias:
            self.params["bias"] = parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense: expected input [N, {self.in_features}], got {x.shape}")
        return F.dense(x, self.params["weight"], self.params.get("bias"))


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, rng, channels, momentum=0.1, eps=1e-5, affine=True, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        if affine:
            self.params["gamma"] = parameter(np.ones(channels, dtype=dtype))
            self.params["beta"] = parameter(np.zeros(channels, dtype=dtype))
        else:
            # constants, so a non-affine input normaliser adds nothing to the graph
            self.gamma = Tensor(np.ones(channels, dtype=dtype))
            self.beta = Tensor(np.zeros(channels, dtype=dtype))
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x):
        affine = "gamma" in self.params
        return F.batch_norm(
            x,
            self.params["gamma"] if affine else self.gamma,
            self.params["beta"] if affine else self.beta,
            self.buffers["running_mean"], self.buffers["running_var"],
            self.training, self.momentum, self.eps,
        )

    def record_stats(self, x: np.ndarray):
        """Set the running statistics to those of ``x``."""
        axes = (0,) + tuple(range(2, x.ndim))
        self.buffers["running_mean"][...] = x.mean(axis=axes)
        self.buffers["running_var"][...] = x.var(axis=axes)


class MFM(Layer):
    kind = "mfm"

    def forward(self, x):
        return F.max_feature_map(x)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return x.relu()


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        return x.sigmoid()


class Softmax(Layer):
    kind = "softmax"

    def __init__(self, axis=-1):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        return F.softmax(x, self.axis)


class SEBlock(Layer):
    kind = "se_block"

    def __init__(self, rng, channels, bottleneck=8, dtype=np.float32):
        super().__init__()
        self.params["w1"] = parameter(_he_uniform(rng, (bottleneck, channels), channels, dtype))
        self.params["b1"] = parameter(np.zeros(bottleneck, dtype=dtype))
        self.params["w2"] = parameter(_he_uniform(rng, (channels, bottleneck), bottleneck, dtype))
        self.params["b2"] = parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x):
        p = self.params
        return F.squeeze_excite(x, p["w1"], p["b1"], p["w2"], p["b2"])


class DilatedTDNNBlock(Layer):
    """Dilated conv -> ReLU -> BatchNorm (-> SE), with a residual connection."""

    kind = "dilated_tdnn_block"

    def __init__(self, rng, channels, kernel=3, dilation=1, se=True, se_bottleneck=8, dtype=np.float32):
        super().__init__()
        self.conv = Conv1d(rng, channels, channels, kernel, dilation, padding="same", dtype=dtype)
        self.bn = BatchNorm(rng, channels, dtype=dtype)
        self.se = SEBlock(rng, channels, se_bottleneck, dtype=dtype) if se else None
        self._sync()

    def _children(self):
        kids = [("conv", self.conv), ("bn", self.bn)]
        if self.se is not None:
            kids.append(("se", self.se))
        return kids

    def _sync(self):
        self.params = {f"{c}.{k}": v for c, layer in self._children() for k, v in layer.params.items()}
        self.buffers = {f"{c}.{k}": v for c, layer in self._children() for k, v in layer.buffers.items()}

    def astype(self, dtype):
        for _, layer in self._children():
            layer.astype(dtype)
        self._sync()
        return self

    def forward(self, x):
        self.bn.training = self.training
        h = self.bn(self.conv(x).relu())
        if self.se is not None:
            h = self.se(h)
        return x + h


class AttentiveStatsPool(Layer):
    kind = "attentive_stats_pool"

    def __init__(self, rng, channels, attention=16, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.params["w1"] = parameter(_he_uniform(rng, (attention, channels, 1), channels, dtype))
        self.params["b1"] = parameter(np.zeros(attention, dtype=dtype))
        self.params["w2"] = parameter(_he_uniform(rng, (channels, attention, 1), attention, dtype))

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(f"attentive_stats_pool: expected [N, {self.channels}, T], got {x.shape}")
        p = self.params
        return F.attentive_stats_pool(x, p["w1"], p["b1"], p["w2"])


class MeanPool(Layer):
    """Mean over ``axes`` (default: every axis after the channel axis).

    Whatever is left after the batch axis is flattened, so pooling only the
    time axis of [N, C, T, F] yields [N, C*F] for a dense head.
    """

    kind = "mean_pool"

    def __init__(self, axes=None):
        super().__init__()
        self.axes = None if axes is None else tuple(int(a) for a in axes)
        if self.axes is not None and (not self.axes or min(self.axes) < 2):
            raise ValueError("mean_pool axes must be non-empty and after the channel axis")

    def forward(self, x):
        if x.ndim < 3:
            raise ShapeError(f"mean_pool: expected [N, C, ...], got {x.shape}")
        axes = tuple(range(2, x.ndim)) if self.axes is None else self.axes
        if max(axes) >= x.ndim:
            raise ShapeError(f"mean_pool: axes {axes} out of range for {x.shape}")
        out = x.mean(axis=axes)
        return out if out.ndim == 2 else out.reshape(out.shape[0], -1)


class MaxPool2d(Layer):
    kind = "max_pool2d"

    def __init__(self, kernel=2):
        super().__init__()
        self.kernel = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)

    def forward(self, x):
        return F.max_pool2d(x, self.kernel)


_BUILDERS = {
    "conv1d": Conv1d,
    "conv2d": Conv2d,
    "dense": Dense,
    "batchnorm": BatchNorm,
    "se_block": SEBlock,
    "dilated_tdnn_block": DilatedTDNNBlock,
    "attentive_stats_pool": AttentiveStatsPool,
}
_STATELESS = {
    "mfm": MFM,
    "relu": ReLU,
    "sigmoid": Sigmoid,
    "softmax": Softmax,
    "mean_pool": MeanPool,
    "max_pool2d": MaxPool2d,
}


def build_layer(spec: LayerSpec, rng: np.random.Generator, dtype=np.float32) -> Layer:
    if spec.kind in _STATELESS:
        return _STATELESS[spec.kind](**spec.params)
    return _BUILDERS[spec.kind](rng, **spec.params, dtype=dtype)


class Network:
    """An ordered chain of named layers."""

    def __init__(self, specs: list[tuple[str, LayerSpec]], seed: int = 0, dtype=np.float32, name: str = ""):
        rng = np.random.default_rng(seed)
        self.name = name
        self.specs = list(specs)
        self.layers: dict[str, Layer] = {n: build_layer(s, rng, dtype) for n, s in self.specs}
        self._output: Tensor | None = None

    def __repr__(self):
        inner = ", ".join(f"{n}:{s.kind}" for n, s in self.specs)
        return f"Network({self.name or 'unnamed'}: {inner})"

    # -- modes

    def train(self):
        for layer in self.layers.values():
            layer.training = True
        return self

    def eval(self):
        for layer in self.layers.values():
            layer.training = False
        return self

    def astype(self, dtype):
        for layer in self.layers.values():
            layer.astype(dtype)
        return self

    # -- parameters

    def parameters(self) -> dict[str, Tensor]:
        return {f"{n}.{k}": p for n, layer in self.layers.items() for k, p in layer.params.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": b for n, layer in self.layers.items() for k, b in layer.buffers.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters then buffers, each in layer order."""
        out = {}
        for n, layer in self.layers.items():
            for k, p in layer.params.items():
                out[f"{n}.{k}"] = p.data
            for k, b in layer.buffers.items():
                out[f"{n}.{k}"] = b
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        """Copy values in place; names and shapes must already match (see archive.check_compatible)."""
        for key, p in self.parameters().items():
            p.data[...] = state[key]
        for key, b in self.buffers().items():
            b[...] = state[key]

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    # -- execution

    def forward(self, x, until: str | None = None) -> Tensor:
        if until is not None and until not in self.layers:
            raise KeyError(f"no layer named {until!r}")
        out = as_tensor(x)
        for n, layer in self.layers.items():
            out = layer(out)
            if n == until:
                break
        self._output = out
        return out

    __call__ = forward

    def backward(self, loss_grad) -> dict[str, np.ndarray]:
        """Back-propagate ``loss_grad`` (gradient w.r.t. the last forward output)."""
        if self._output is None:
            raise StateError("backward() called before forward()")
        out, self._output = self._output, None
        out.backward(loss_grad)
        return {k: p.grad for k, p in self.parameters().items()}
