"""Small dense-array layers with hand-written backward passes.

Only what the probe networks need: 2-D convolution (stride 1, "same" zero
padding), batch normalization, 2x2 max pooling, ReLU, flatten and dense
layers stacked sequentially, plus He initialization, softmax cross-entropy
and RMSProp.

Activations are NHWC. Training runs in float32; building a model with
``dtype=np.float64`` gives a mode suitable for finite-difference checks.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError

LAYER_KINDS = ("conv2d", "batchnorm", "maxpool2x2", "relu", "dense", "flatten")


def he_init(shape, fan_in, gain=1.0, seed=None, dtype=np.float32):
    """Draw i.i.d. normal weights with std ``gain * sqrt(2 / fan_in)``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    if gain <= 0:
        raise ValueError(f"gain must be > 0, got {gain}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    std = gain * np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer; parameters live in the built model."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple = (3, 3)
    bias: bool = True
    in_features: int = 0
    out_features: int = 0
    eps: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @classmethod
    def conv2d(cls, in_channels, out_channels, kernel=3, bias=True):
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        return cls("conv2d", in_channels=in_channels, out_channels=out_channels,
                   kernel=tuple(kernel), bias=bias)

    @classmethod
    def batchnorm(cls, channels, eps=1e-5, momentum=0.9):
        return cls("batchnorm", out_channels=channels, eps=eps, momentum=momentum)

    @classmethod
    def dense(cls, in_features, out_features, bias=True):
        return cls("dense", in_features=in_features, out_features=out_features, bias=bias)

    @classmethod
    def maxpool2x2(cls):
        return cls("maxpool2x2")

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def flatten(cls):
        return cls("flatten")

    @property
    def channels(self):
        return self.out_channels

    def param_count(self):
        if self.kind == "conv2d":
            kh, kw = self.kernel
            return kh * kw * self.in_channels * self.out_channels + (self.out_channels if self.bias else 0)
        if self.kind == "dense":
            return self.in_features * self.out_features + (self.out_features if self.bias else 0)
        if self.kind == "batchnorm":
            return 2 * self.out_channels
        return 0


@dataclass
class Parameter:
    """A trainable array together with its gradient buffer."""

    data: np.ndarray
    grad: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape


class Layer:
    def __init__(self, spec):
        self.spec = spec
        self.params = []
        self._cache = None

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.spec.kind}: backward called without a preceding train-mode forward")
        cache, self._cache = self._cache, None
        return cache


class Conv2d(Layer):
    def __init__(self, spec, rng, dtype):
        super().__init__(spec)
        kh, kw = spec.kernel
        fan_in = kh * kw * spec.in_channels
        self.weight = Parameter(he_init((kh, kw, spec.in_channels, spec.out_channels), fan_in,
                                        seed=rng, dtype=dtype), name="weight")
        self.params.append(self.weight)
        self.bias = None
        if spec.bias:
            self.bias = Parameter(np.zeros(spec.out_channels, dtype=dtype), name="bias")
            self.params.append(self.bias)

    def _wmat(self):
        kh, kw, cin, cout = self.weight.data.shape
        # column order of the im2col matrix is (cin, kh, kw)
        return self.weight.data.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[3] != self.spec.in_channels:
            raise ShapeError(f"conv2d expects (N, H, W, {self.spec.in_channels}), got {x.shape}")
        n, h, w, c = x.shape
        kh, kw = self.spec.kernel
        ph, pw = kh // 2, kw // 2
        xp = np.pad(x, ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0)))
        cols = sliding_window_view(xp, (kh, kw), axis=(1, 2)).reshape(n * h * w, c * kh * kw)
        out = cols @ self._wmat()
        if self.bias is not None:
            out += self.bias.data
        if train:
            self._cache = (cols, x.shape)
        return out.reshape(n, h, w, self.spec.out_channels)

    def backward(self, dout):
        cols, (n, h, w, c) = self._take_cache()
        kh, kw = self.spec.kernel
        ph, pw = kh // 2, kw // 2
        cout = self.spec.out_channels
        d2 = dout.reshape(-1, cout)
        self.weight.grad[...] = (cols.T @ d2).reshape(c, kh, kw, cout).transpose(1, 2, 0, 3)
        if self.bias is not None:
            self.bias.grad[...] = d2.sum(axis=0)
        dcols = (d2 @ self._wmat().T).reshape(n, h, w, c, kh, kw)
        dxp = np.zeros((n, h + kh - 1, w + kw - 1, c), dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + h, j:j + w, :] += dcols[..., i, j]
        return dxp[:, ph:ph + h, pw:pw + w, :]


class BatchNorm(Layer):
    """Normalizes over every axis but the last (channels or features).

    Running statistics are a bias-corrected exponential moving average of
    the batch mean and (biased) batch variance: with ``t`` updates,
    ``running = ema_t / (1 - momentum**t)``. Momentum 0 therefore reproduces
    the last train-mode batch exactly, and early evaluations are not pulled
    towards the initial values.
    """

    def __init__(self, spec, dtype):
        super().__init__(spec)
        c = spec.out_channels
        self.gamma = Parameter(np.ones(c, dtype=dtype), name="gamma")
        self.beta = Parameter(np.zeros(c, dtype=dtype), name="beta")
        self.params += [self.gamma, self.beta]
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self._ema_mean = np.zeros(c, dtype=np.float64)
        self._ema_var = np.zeros(c, dtype=np.float64)
        self.updates = 0

    def forward(self, x, train):
        if x.shape[-1] != self.spec.out_channels:
            raise ShapeError(f"batchnorm expects {self.spec.out_channels} channels, got {x.shape}")
        axes = tuple(range(x.ndim - 1))
        eps = self.spec.eps
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.spec.momentum
            self.updates += 1
            self._ema_mean[...] = m * self._ema_mean + (1 - m) * mean
            self._ema_var[...] = m * self._ema_var + (1 - m) * var
            correction = 1.0 - m ** self.updates
            self.running_mean[...] = self._ema_mean / correction
            self.running_var[...] = self._ema_var / correction
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        if train:
            self._cache = (xhat, inv_std)
        return xhat * self.gamma.data + self.beta.data

    def backward(self, dout):
        xhat, inv_std = self._take_cache()
        axes = tuple(range(dout.ndim - 1))
        m = dout.size // dout.shape[-1]
        self.gamma.grad[...] = (dout * xhat).sum(axis=axes)
        self.beta.grad[...] = dout.sum(axis=axes)
        dxhat = dout * self.gamma.data
        return (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))


class MaxPool2x2(Layer):
    """2x2 window, stride 2; odd trailing rows/columns are dropped.

    Gradient goes to the first maximum of each window in row-major order.
    """

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] < 2 or x.shape[2] < 2:
            raise ShapeError(f"maxpool2x2 needs (N, H>=2, W>=2, C), got {x.shape}")
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        v = x[:, :2 * h2, :2 * w2, :].reshape(n, h2, 2, w2, 2, c)
        corners = (v[:, :, 0, :, 0], v[:, :, 0, :, 1], v[:, :, 1, :, 0], v[:, :, 1, :, 1])
        out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))
        if train:
            masks = []
            taken = np.zeros(out.shape, dtype=bool)
            for corner in corners[:3]:
                hit = (corner == out) & ~taken
                masks.append(hit)
                taken |= hit
            masks.append(~taken)
            self._cache = (masks, x.shape)
        return out

    def backward(self, dout):
        masks, (n, h, w, c) = self._take_cache()
        h2, w2 = h // 2, w // 2
        dwin = np.zeros((n, 2 * h2, 2 * w2, c), dtype=dout.dtype)
        v = dwin.reshape(n, h2, 2, w2, 2, c)
        for (i, j), mask in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            v[:, :, i, :, j] = dout * mask
        if (2 * h2, 2 * w2) == (h, w):
            return dwin
        dx = np.zeros((n, h, w, c), dtype=dout.dtype)
        dx[:, :2 * h2, :2 * w2, :] = dwin
        return dx


class ReLU(Layer):
    def forward(self, x, train):
        mask = x > 0
        if train:
            self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._take_cache()


class Flatten(Layer):
    def forward(self, x, train):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._take_cache())


class Dense(Layer):
    def __init__(self, spec, rng, dtype):
        super().__init__(spec)
        self.weight = Parameter(he_init((spec.in_features, spec.out_features), spec.in_features,
                                        seed=rng, dtype=dtype), name="weight")
        self.params.append(self.weight)
        self.bias = None
        if spec.bias:
            self.bias = Parameter(np.zeros(spec.out_features, dtype=dtype), name="bias")
            self.params.append(self.bias)

    def forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.spec.in_features:
            raise ShapeError(f"dense expects (N, {self.spec.in_features}), got {x.shape}")
        out = x @ self.weight.data
        if self.bias is not None:
            out += self.bias.data
        if train:
            self._cache = x
        return out

    def backward(self, dout):
        x = self._take_cache()
        self.weight.grad[...] = x.T @ dout
        if self.bias is not None:
            self.bias.grad[...] = dout.sum(axis=0)
        return dout @ self.weight.data.T


def build_layer(spec, rng, dtype):
    if spec.kind == "conv2d":
        return Conv2d(spec, rng, dtype)
    if spec.kind == "dense":
        return Dense(spec, rng, dtype)
    if spec.kind == "batchnorm":
        return BatchNorm(spec, dtype)
    return {"maxpool2x2": MaxPool2x2, "relu": ReLU, "flatten": Flatten}[spec.kind](spec)


class Sequential:
    """A stack of layers built from ``LayerSpec``s with seeded He initialization."""

    def __init__(self, specs, seed=0, dtype=np.float32):
        self.specs = list(specs)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = [build_layer(s, rng, self.dtype) for s in self.specs]

    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def param_count(self):
        return sum(p.data.size for p in self.parameters())

    def forward(self, x, train=False):
        """Run the stack; ``train=True`` uses batch statistics and keeps caches for backward."""
        out = np.asarray(x, dtype=self.dtype)
        for i, layer in enumerate(self.layers):
            try:
                out = layer.forward(out, train)
            except ShapeError as exc:
                raise ShapeError(str(exc), layer_index=i) from None
        return out

    __call__ = forward

    def backward(self, grad):
        """Backpropagate ``grad`` (w.r.t. the logits); fills ``Parameter.grad`` and returns d(input)."""
        out = np.asarray(grad, dtype=self.dtype)
        for layer in reversed(self.layers):
            out = layer.backward(out)
        return out

    def gradients(self):
        return [p.grad for p in self.parameters()]

    def state_arrays(self):
        """All parameter and running-statistic arrays, in a fixed order."""
        arrays = []
        for layer in self.layers:
            arrays += [p.data for p in layer.params]
            if isinstance(layer, BatchNorm):
                arrays += [layer.running_mean, layer.running_var]
        return arrays


def loss_softmax_ce(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), grad


@dataclass
class RmsPropState:
    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-8
    v: list = field(default_factory=list)


def rmsprop_step(params, grads, state):
    """One in-place RMSProp update of ``params`` (arrays); returns ``params``.

    ``v <- rho * v + (1 - rho) * g**2``; ``theta <- theta - lr * g / (sqrt(v) + eps)``.
    """
    if not state.v:
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.v):
        raise ShapeError("params, grads and optimizer state disagree in length")
    for p, g, v in zip(params, grads, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        v *= state.rho
        v += (1.0 - state.rho) * g * g
        p -= state.lr * g / (np.sqrt(v) + state.eps)
    return params


class RMSProp:
    def __init__(self, parameters, lr=1e-4, rho=0.9, eps=1e-8):
        self.parameters = list(parameters)
        self.state = RmsPropState(lr=lr, rho=rho, eps=eps)

    def step(self):
        rmsprop_step([p.data for p in self.parameters], [p.grad for p in self.parameters], self.state)
