"""Probe networks: small CNNs whose early test accuracy scores a dataset.

Static kinds share the block ``conv3x3 -> batchnorm -> maxpool2x2 -> relu``
and differ in kernel counts and depth. Dynamic kinds scale with the number
of classes ``C``:

* ``mlp``: three hidden dense layers whose widths interpolate linearly
  between the input dimension ``d`` and ``C``.
* ``depth_scaled``: the regular kernel counts times ``max(1, C / 10)``.
* ``length_scaled``: each regular stage repeats its convolution
  ``max(1, ceil(log2(C) / 2))`` times before pooling.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import resize_dataset
from .errors import ShapeError
from .ndnum import RMSProp, LayerSpec, Sequential, loss_softmax_ce
from .records import MODEL_OPS_PER_SECOND, ScoreRecord

STATIC_KINDS = ("regular", "narrow", "wide", "shallow", "deep", "shallow_norm", "deep_norm")
DYNAMIC_KINDS = ("mlp", "depth_scaled", "length_scaled")
PROBE_KINDS = STATIC_KINDS + DYNAMIC_KINDS

REGULAR_KERNELS = (8, 16, 32)
STATIC_KERNELS = {
    "regular": REGULAR_KERNELS,
    "narrow": (2, 4, 8),
    "wide": (32, 64, 128),
    "shallow": (8,),
    "deep": (8, 16, 32, 64, 128),
}


def mlp_widths(d, num_classes, hidden=3):
    return [int(round(d * (1 - j / (hidden + 1)) + num_classes * (j / (hidden + 1)))) for j in range(1, hidden + 1)]


def depth_scale(num_classes):
    return max(1.0, num_classes / 10)


def length_repeats(num_classes):
    return max(1, math.ceil(math.log2(num_classes) / 2))


@dataclass(frozen=True)
class ProbeNetSpec:
    kind: str
    input_shape: tuple
    num_classes: int
    layers: tuple

    @property
    def param_count(self):
        return sum(layer.param_count() for layer in self.layers)

    @property
    def output_layer(self):
        return self.layers[-1]

    @property
    def flops(self):
        return layer_flops(self.layers, self.input_shape)

    def build(self, seed=0, dtype=np.float32):
        return Sequential(self.layers, seed=seed, dtype=dtype)


def layer_flops(layers, input_shape):
    """Floating-point operations of one inference pass, from layer shapes alone."""
    h, w, c = input_shape
    total = 0
    for layer in layers:
        if layer.kind == "conv2d":
            kh, kw = layer.kernel
            total += 2 * h * w * kh * kw * layer.in_channels * layer.out_channels
            total += h * w * layer.out_channels if layer.bias else 0
            c = layer.out_channels
        elif layer.kind == "batchnorm":
            total += 2 * h * w * c
        elif layer.kind == "maxpool2x2":
            h, w = h // 2, w // 2
            total += 3 * h * w * c
        elif layer.kind == "relu":
            total += h * w * c
        elif layer.kind == "flatten":
            h, w, c = 1, 1, h * w * c
        elif layer.kind == "dense":
            total += 2 * layer.in_features * layer.out_features + (layer.out_features if layer.bias else 0)
            h, w, c = 1, 1, layer.out_features
    return total


def resnet20_flops(input_shape=(32, 32, 3), num_classes=10):
    """Multiply-add based FLOP estimate of a CIFAR-style ResNet-20 (1x1 projection shortcuts)."""
    h, w, c = input_shape
    total = 2 * h * w * 9 * c * 16
    cin = 16
    for stage, width in enumerate((16, 32, 64)):
        if stage:
            h, w = h // 2, w // 2
            total += 2 * h * w * cin * width
        for block in range(3):
            total += 2 * h * w * 9 * (cin if block == 0 else width) * width
            total += 2 * h * w * 9 * width * width
            total += 4 * h * w * width  # two batchnorms
            total += 3 * h * w * width  # two relus and the residual add
        cin = width
    return total + h * w * 64 + 2 * 64 * num_classes


def _conv_stages(kernels, in_channels, repeats=1):
    layers = []
    cin = in_channels
    for k in kernels:
        for r in range(repeats):
            layers += [LayerSpec.conv2d(cin, k), LayerSpec.batchnorm(k)]
            if r < repeats - 1:
                layers.append(LayerSpec.relu())
            cin = k
        layers += [LayerSpec.maxpool2x2(), LayerSpec.relu()]
    return layers


def _check_pool_depth(input_shape, stages):
    h, w, _ = input_shape
    need = 2 ** stages
    if h < need or w < need:
        raise ShapeError(f"input {h}x{w} is too small for {stages} 2x2 pooling stages (needs >= {need}x{need})")


def probe_kernels(kind, input_shape, num_classes):
    """Kernel counts per conv stage for every convolutional probe kind."""
    h, w, _ = input_shape
    if kind in STATIC_KERNELS:
        return STATIC_KERNELS[kind]
    if kind in ("shallow_norm", "deep_norm"):
        base = STATIC_KERNELS["shallow" if kind == "shallow_norm" else "deep"]
        _check_pool_depth(input_shape, len(base))
        regular_flat = (h // 8) * (w // 8) * REGULAR_KERNELS[-1]
        spatial = (h >> len(base)) * (w >> len(base))
        return base[:-1] + (max(1, int(round(regular_flat / spatial))),)
    if kind == "depth_scaled":
        scale = depth_scale(num_classes)
        return tuple(int(round(k * scale)) for k in REGULAR_KERNELS)
    if kind == "length_scaled":
        return REGULAR_KERNELS
    raise ValueError(f"{kind!r} is not a convolutional probe kind")


def build_probe(kind, input_shape, num_classes):
    """Layer stack of the probe ``kind`` for ``(h, w, c)`` inputs and ``num_classes`` outputs."""
    if kind not in PROBE_KINDS:
        raise ValueError(f"unknown probe kind {kind!r}; expected one of {PROBE_KINDS}")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    input_shape = tuple(int(v) for v in input_shape)
    h, w, c = input_shape
    if kind == "mlp":
        d = h * w * c
        widths = mlp_widths(d, num_classes)
        layers = [LayerSpec.flatten()]
        prev = d
        for width in widths:
            layers += [LayerSpec.dense(prev, width), LayerSpec.relu()]
            prev = width
        layers.append(LayerSpec.dense(prev, num_classes))
        return ProbeNetSpec(kind, input_shape, num_classes, tuple(layers))
    kernels = probe_kernels(kind, input_shape, num_classes)
    _check_pool_depth(input_shape, len(kernels))
    repeats = length_repeats(num_classes) if kind == "length_scaled" else 1
    layers = _conv_stages(kernels, c, repeats)
    flat = (h >> len(kernels)) * (w >> len(kernels)) * kernels[-1]
    layers += [LayerSpec.flatten(), LayerSpec.dense(flat, num_classes)]
    return ProbeNetSpec(kind, input_shape, num_classes, tuple(layers))


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-8
    augment: bool = True
    seed: int = 0
    eval_every_epoch: bool = True
    pad: int = 4
    min_augment_side: int = 12
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AccuracyCurve:
    top1: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    failed: bool = False
    message: str = ""

    @property
    def final_top1(self):
        return self.top1[-1] if self.top1 else float("nan")

    @property
    def total_seconds(self):
        return float(sum(self.seconds))

    def rows(self):
        return [(i + 1, t, l, s) for i, (t, l, s) in enumerate(zip(self.top1, self.loss, self.seconds))]


def augment_batch(images, rng, pad=4):
    """Zero-pad by ``pad``, crop back to the input size at a random offset, flip horizontally with p=0.5."""
    n, h, w, _ = images.shape
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    oy = rng.integers(0, 2 * pad + 1, size=n)
    ox = rng.integers(0, 2 * pad + 1, size=n)
    flip = rng.random(n) < 0.5
    rows = oy[:, None] + np.arange(h)
    cols = np.where(flip[:, None], np.arange(w)[::-1], np.arange(w)) + ox[:, None]
    return padded[np.arange(n)[:, None, None], rows[:, :, None], cols[:, None, :]]


def _as_input(images, dtype):
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return images.astype(dtype) / dtype(255)
    return images.astype(dtype)


def channel_stats(images, dtype=np.float32):
    """Per-channel mean and std of ``images`` (in [0, 1] units), used to standardize probe inputs."""
    x = _as_input(images, np.float64)
    mean = x.mean(axis=(0, 1, 2))
    std = x.std(axis=(0, 1, 2))
    return mean.astype(dtype), np.where(std > 0, std, 1.0).astype(dtype)


def evaluate_top1(model, images, labels, batch_size=256, stats=None):
    correct = 0
    for start in range(0, len(images), batch_size):
        batch = _as_input(images[start:start + batch_size], model.dtype.type)
        if stats is not None:
            batch = (batch - stats[0]) / stats[1]
        logits = model.forward(batch, train=False)
        correct += int((logits.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / len(images)


def train_probe(spec, dataset, config=TrainConfig(), model=None, on_epoch=None):
    """Minibatch RMSProp on softmax cross-entropy; test Top-1 after every epoch.

    Deterministic given ``config.seed``. A non-finite loss stops training
    and returns the curve so far with ``failed=True``.
    """
    if tuple(dataset.image_shape) != tuple(spec.input_shape):
        raise ShapeError(f"dataset images {dataset.image_shape} do not match probe input {spec.input_shape}")
    if dataset.num_classes != spec.num_classes:
        raise ShapeError(f"dataset has {dataset.num_classes} classes, probe outputs {spec.num_classes}")
    init_seed, order_seed, aug_seed = np.random.SeedSequence(config.seed).spawn(3)
    if model is None:
        model = spec.build(seed=np.random.default_rng(init_seed))
    dtype = model.dtype.type
    opt = RMSProp(model.parameters(), lr=config.lr, rho=config.rho, eps=config.eps)
    order_rng = np.random.default_rng(order_seed)
    aug_rng = np.random.default_rng(aug_seed)
    h, w, _ = spec.input_shape
    augment = config.augment and min(h, w) >= config.min_augment_side
    x_train = _as_input(dataset.x_train, dtype)
    stats = channel_stats(dataset.x_train, dtype) if config.standardize else None
    if stats is not None:
        x_train = (x_train - stats[0]) / stats[1]
    y_train = dataset.y_train
    curve = AccuracyCurve()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = order_rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = x_train[idx]
            if augment:
                batch = augment_batch(batch, aug_rng, config.pad)
            logits = model.forward(batch, train=True)
            loss, grad = loss_softmax_ce(logits, y_train[idx])
            if not np.isfinite(loss):
                curve.failed = True
                curve.message = f"non-finite loss at epoch {epoch + 1}, step {start // config.batch_size}"
                return curve
            model.backward(grad)
            opt.step()
            losses.append(loss)
        if config.eval_every_epoch or epoch == config.epochs - 1:
            top1 = evaluate_top1(model, dataset.x_test, dataset.y_test, stats=stats)
        else:
            top1 = float("nan")
        curve.top1.append(top1)
        curve.loss.append(float(np.mean(losses)))
        curve.seconds.append(time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch + 1, curve)
    return curve


@dataclass
class ProbeScore:
    kind: str
    epochs: int
    curve: AccuracyCurve
    spec: ProbeNetSpec
    work: float

    @property
    def score(self):
        return float(self.curve.final_top1)

    @property
    def wall_time(self):
        return max(self.curve.total_seconds, 1e-9)

    @property
    def failed(self):
        return self.curve.failed

    @property
    def variant(self):
        return f"{self.kind}@{self.epochs}"

    def to_record(self, dataset_id, seed, timing="wall"):
        t = self.wall_time if timing == "wall" else self.work / MODEL_OPS_PER_SECOND
        return ScoreRecord(dataset_id, "probenet", self.variant, self.score, t, seed)


def probe_score(dataset, kind="regular", epochs=5, input_size=32, config=None, seed=0):
    """Difficulty score = test Top-1 of probe ``kind`` after ``epochs`` epochs.

    Images are resized to ``input_size`` x ``input_size`` (``None`` keeps the
    native size). A diverged run is returned with ``failed`` set; its curve
    stops at the failing epoch.
    """
    if input_size is not None:
        dataset = resize_dataset(dataset, input_size, input_size)
    if config is None:
        config = TrainConfig(epochs=epochs, seed=seed)
    elif config.epochs != epochs:
        config = TrainConfig(**{**config.__dict__, "epochs": epochs})
    spec = build_probe(kind, dataset.image_shape, dataset.num_classes)
    curve = train_probe(spec, dataset, config)
    work = spec.flops * (3 * dataset.n_train * epochs + dataset.n_test * epochs)
    return ProbeScore(kind, epochs, curve, spec, work)
